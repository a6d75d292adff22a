//! Models for unsampled variables of a non-increasing chain.
//!
//! Between two sampled anchors `l < k < r` the mean is interpolated linearly
//! by rank. For fixed anchor means `a >= b`, the interior means are read as
//! the order statistics of `r - l - 1` independent uniforms on `[b, a]`, so
//! the one at `k` is a scaled `Beta(k - l, r - k)` with closed-form variance.
//! The anchor means are themselves uncertain; sampling them from their models
//! and combining both sources by the law of total variance gives the overall
//! variance.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::constrained::EstimatorState;
use crate::error::{Error, Result};
use crate::estimator::NormalParams;
use crate::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainSegment {
    pub left: usize,
    pub right: usize,
    pub left_model: NormalParams,
    pub right_model: NormalParams,
    /// Position being interpolated, strictly between `left` and `right`.
    pub k: usize,
}

impl ChainSegment {
    pub fn new(
        left: usize,
        right: usize,
        left_model: NormalParams,
        right_model: NormalParams,
        k: usize,
    ) -> Result<Self> {
        if !(left < k && k < right) {
            return Err(Error::invalid(format!(
                "position {k} is not strictly between {left} and {right}"
            )));
        }
        left_model.validate()?;
        right_model.validate()?;
        Ok(Self {
            left,
            right,
            left_model,
            right_model,
            k,
        })
    }

    pub fn span(&self) -> usize {
        self.right - self.left
    }

    /// 1-based rank of `k` within the segment's `span + 1` positions.
    fn rank(&self) -> usize {
        self.k - self.left + 1
    }
}

#[inline]
pub(crate) fn linear_mean(left: usize, right: usize, at_left: f64, at_right: f64, k: usize) -> f64 {
    let t = (k - left) as f64 / (right - left) as f64;
    at_left + t * (at_right - at_left)
}

pub fn interpolate_mean(seg: &ChainSegment) -> f64 {
    linear_mean(seg.left, seg.right, seg.left_model.mean, seg.right_model.mean, seg.k)
}

/// `alpha*beta / ((alpha+beta)^2 (alpha+beta+1))` for the rank-`k` order
/// statistic on `span + 1` positions.
fn beta_factor(k: usize, span: usize) -> f64 {
    let alpha = (k - 1) as f64;
    let beta = (span + 1 - k) as f64;
    let s = alpha + beta;
    alpha * beta / (s * s * (s + 1.0))
}

/// Variance of the mean at rank `k` (`1 < k < span + 1`) when the interior
/// means are sorted uniforms between endpoint means `a` and `b`.
pub fn beta_order_variance(k: usize, span: usize, a: f64, b: f64) -> Result<f64> {
    if span < 2 {
        return Err(Error::invalid(format!("span must be >= 2, got {span}")));
    }
    if !(1 < k && k < span + 1) {
        return Err(Error::invalid(format!(
            "rank {k} is not interior to a span of {span}"
        )));
    }
    let w = a - b;
    Ok(w * w * beta_factor(k, span))
}

/// Moments of the sampled endpoint pairs `(hi, lo)`, with `d = lo - hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct EndpointMoments {
    mean_width2: f64,
    var_hi: f64,
    var_d: f64,
    cov_hi_d: f64,
}

impl EndpointMoments {
    fn sample(left: NormalParams, right: NormalParams, draws: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (sl, sr) = (left.sd(), right.sd());
        let pairs: Vec<(f64, f64)> = (0..draws)
            .map(|_| {
                let za: f64 = StandardNormal.sample(&mut rng);
                let zb: f64 = StandardNormal.sample(&mut rng);
                let a = left.mean + sl * za;
                let b = right.mean + sr * zb;
                // an inverted draw is swapped back into chain order
                let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
                (hi, lo - hi)
            })
            .collect();
        let m = draws as f64;
        let mean_hi = pairs.iter().map(|p| p.0).sum::<f64>() / m;
        let mean_d = pairs.iter().map(|p| p.1).sum::<f64>() / m;
        let (mut w2, mut vh, mut vd, mut c) = (0.0, 0.0, 0.0, 0.0);
        for &(hi, d) in &pairs {
            w2 += d * d;
            let (eh, ed) = (hi - mean_hi, d - mean_d);
            vh += eh * eh;
            vd += ed * ed;
            c += eh * ed;
        }
        Self {
            mean_width2: w2 / m,
            var_hi: vh / m,
            var_d: vd / m,
            cov_hi_d: c / m,
        }
    }

    /// Point masses: the widths are fixed and the linear means do not vary.
    fn exact(left: f64, right: f64) -> Self {
        let d = left.min(right) - left.max(right);
        Self {
            mean_width2: d * d,
            var_hi: 0.0,
            var_d: 0.0,
            cov_hi_d: 0.0,
        }
    }

    /// `E[Var(mu_k | a, b)] + Var(E[mu_k | a, b])` at rank `k`.
    fn variance_at(&self, k: usize, span: usize) -> f64 {
        let within = self.mean_width2 * beta_factor(k, span);
        let t = (k - 1) as f64 / span as f64;
        let between = self.var_hi + t * t * self.var_d + 2.0 * t * self.cov_hi_d;
        within + between.max(0.0)
    }
}

fn endpoint_moments(left: NormalParams, right: NormalParams, draws: usize, seed: u64) -> EndpointMoments {
    if left.variance == 0.0 && right.variance == 0.0 {
        EndpointMoments::exact(left.mean, right.mean)
    } else {
        EndpointMoments::sample(left, right, draws, seed)
    }
}

/// Overall variance at `seg.k` with endpoint means drawn `mc_draws` times from
/// the endpoint models.
pub fn interpolate_variance(seg: &ChainSegment, mc_draws: usize, seed: u64) -> Result<f64> {
    if mc_draws == 0 {
        return Err(Error::invalid("interpolation needs at least one draw"));
    }
    let m = endpoint_moments(seg.left_model, seg.right_model, mc_draws, seed);
    Ok(m.variance_at(seg.rank(), seg.span()))
}

/// Key: segment ends plus the bit patterns of both anchor models.
type SegmentKey = (usize, usize, [u64; 4]);

/// Memo of endpoint moments; a hit returns exactly what a recomputation with
/// the same key would.
#[derive(Debug, Default, Clone)]
pub(crate) struct SegmentCache {
    map: HashMap<SegmentKey, EndpointMoments>,
}

/// Models for every variable of a chain: sampled ones keep `(v, var)`,
/// interior gaps get interpolated models from the anchors `(v, var / |S|)`,
/// open ends copy the nearest anchor.
pub(crate) fn chain_models(
    means: &[f64],
    variances: &[Option<f64>],
    counts: &[usize],
    draws: usize,
    seed: u64,
    cache: &mut SegmentCache,
) -> Result<Vec<NormalParams>> {
    let anchors: Vec<usize> = (0..means.len()).filter(|&i| counts[i] > 0).collect();
    if anchors.is_empty() {
        return Err(Error::EmptyState);
    }
    let anchor_model = |i: usize| NormalParams {
        mean: means[i],
        variance: variances[i].unwrap_or(0.0) / counts[i] as f64,
    };
    let mut out: Vec<NormalParams> = (0..means.len())
        .map(|i| NormalParams {
            mean: means[i],
            variance: variances[i].unwrap_or(0.0),
        })
        .collect();
    let (first, last) = (anchors[0], anchors[anchors.len() - 1]);
    for slot in out.iter_mut().take(first) {
        *slot = anchor_model(first);
    }
    for slot in out.iter_mut().skip(last + 1) {
        *slot = anchor_model(last);
    }
    for pair in anchors.windows(2) {
        let (l, r) = (pair[0], pair[1]);
        if r == l + 1 {
            continue;
        }
        let (lm, rm) = (anchor_model(l), anchor_model(r));
        let key = (
            l,
            r,
            [lm.mean.to_bits(), lm.variance.to_bits(), rm.mean.to_bits(), rm.variance.to_bits()],
        );
        let moments = *cache
            .map
            .entry(key)
            .or_insert_with(|| endpoint_moments(lm, rm, draws, derive_seed(seed, &[l as u64, r as u64])));
        for (k, slot) in out.iter_mut().enumerate().take(r).skip(l + 1) {
            *slot = NormalParams {
                mean: linear_mean(l, r, lm.mean, rm.mean, k),
                variance: moments.variance_at(k - l + 1, r - l),
            };
        }
    }
    Ok(out)
}

/// Gives every unsampled variable of a refitted chain state an interpolated
/// model. Sampled variables are left as they are.
pub fn fill_chain(state: &EstimatorState, mc_draws: usize, seed: u64) -> Result<EstimatorState> {
    if !state.constraints().is_chain() {
        return Err(Error::UnsupportedConstraints);
    }
    if mc_draws == 0 {
        return Err(Error::invalid("interpolation needs at least one draw"));
    }
    let (Some(means), Some(vars)) = (state.constrained_means(), state.reestimated_variances()) else {
        return Err(Error::invalid("fill_chain needs a refitted state"));
    };
    let counts = state.sample_counts();
    let models = chain_models(means, vars, &counts, mc_draws, seed, &mut SegmentCache::default())?;
    let mut out = state.clone();
    for (i, model) in models.into_iter().enumerate() {
        if counts[i] == 0 {
            out.set_model(i, Some(model));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constrained::refit;
    use crate::model::{check_feasible, ConstraintSet};
    use rand::Rng;

    fn point(m: f64) -> NormalParams {
        NormalParams::new(m, 0.0).unwrap()
    }

    #[test]
    fn mean_examples() {
        let seg = ChainSegment::new(1, 5, point(8.0), point(4.0), 3).unwrap();
        assert_eq!(interpolate_mean(&seg), 6.0);
        let seg = ChainSegment { k: 4, ..seg };
        assert_eq!(interpolate_mean(&seg), 5.0);
        let flat = ChainSegment::new(0, 7, point(2.5), point(2.5), 5).unwrap();
        assert_eq!(interpolate_mean(&flat), 2.5);
        assert!(ChainSegment::new(1, 5, point(8.0), point(4.0), 5).is_err());
    }

    #[test]
    fn beta_variance_examples() {
        assert_eq!(beta_order_variance(3, 4, 8.0, 4.0).unwrap(), 0.8);
        assert!((beta_order_variance(2, 4, 8.0, 4.0).unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(beta_order_variance(3, 4, 5.0, 5.0).unwrap(), 0.0);
        assert!(beta_order_variance(1, 4, 8.0, 4.0).is_err());
        assert!(beta_order_variance(5, 4, 8.0, 4.0).is_err());
        assert!(beta_order_variance(2, 1, 8.0, 4.0).is_err());
    }

    #[test]
    fn beta_variance_matches_sorted_uniforms() {
        // n = 5 positions, rank 2: largest of 3 uniforms on [4, 8]
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 1_000_000;
        let xs: Vec<f64> = (0..draws)
            .map(|_| {
                let mut u: Vec<f64> = (0..3).map(|_| rng.random_range(4.0..8.0)).collect();
                u.sort_by(|a, b| b.total_cmp(a));
                u[0]
            })
            .collect();
        let m = xs.iter().sum::<f64>() / draws as f64;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / draws as f64;
        assert!((v - 0.6).abs() < 0.005, "{v}");
        assert!((m - 7.0).abs() < 0.005, "order-statistic mean matches the linear rank");
    }

    #[test]
    fn degenerate_endpoints_are_exact() {
        let seg = ChainSegment::new(1, 5, point(8.0), point(4.0), 3).unwrap();
        for draws in [1, 10, 1000] {
            assert_eq!(interpolate_variance(&seg, draws, 9).unwrap(), 0.8);
        }
        let same = ChainSegment::new(0, 3, point(1.5), point(1.5), 1).unwrap();
        assert_eq!(interpolate_variance(&same, 100, 0).unwrap(), 0.0);
        assert!(interpolate_variance(&seg, 0, 0).is_err());
    }

    #[test]
    fn noisy_endpoints_add_variance_and_are_seeded() {
        let seg = ChainSegment::new(
            1,
            5,
            NormalParams::new(8.0, 0.5).unwrap(),
            NormalParams::new(4.0, 0.5).unwrap(),
            3,
        )
        .unwrap();
        let a = interpolate_variance(&seg, 20_000, 4).unwrap();
        assert_eq!(a, interpolate_variance(&seg, 20_000, 4).unwrap());
        assert!(a > 0.8);
    }

    #[test]
    fn fill_chain_examples() {
        let st = EstimatorState::from_samples(
            ConstraintSet::chain(5),
            vec![vec![8.0], vec![], vec![], vec![], vec![4.0]],
        )
        .unwrap();
        let filled = fill_chain(&refit(&st).unwrap(), 100, 1).unwrap();
        let means: Vec<f64> = filled.variables().iter().map(|v| v.fitted().unwrap().mean).collect();
        assert_eq!(means, vec![8.0, 7.0, 6.0, 5.0, 4.0]);
        assert_eq!(filled.variable(2).fitted().unwrap().variance, 0.8);

        let full = refit(
            &EstimatorState::from_samples(ConstraintSet::chain(2), vec![vec![3.0, 4.0], vec![1.0]]).unwrap(),
        )
        .unwrap();
        assert_eq!(fill_chain(&full, 10, 0).unwrap(), full);

        let mid = refit(
            &EstimatorState::from_samples(ConstraintSet::chain(3), vec![vec![], vec![5.0, 7.0], vec![]]).unwrap(),
        )
        .unwrap();
        let filled = fill_chain(&mid, 10, 0).unwrap();
        let anchor = NormalParams::new(6.0, 0.5).unwrap();
        assert_eq!(filled.variable(0).fitted(), Some(anchor));
        assert_eq!(filled.variable(2).fitted(), Some(anchor));
        let means: Vec<f64> = filled.variables().iter().map(|v| v.fitted().unwrap().mean).collect();
        assert!(check_feasible(filled.constraints(), &means, 1e-9).unwrap());
    }

    #[test]
    fn fill_chain_rejects_general_constraints() {
        let c = ConstraintSet::unconstrained(2);
        let st = refit(&EstimatorState::from_samples(c, vec![vec![1.0], vec![]]).unwrap()).unwrap();
        assert!(matches!(fill_chain(&st, 10, 0), Err(Error::UnsupportedConstraints)));
        let unfitted = EstimatorState::from_samples(ConstraintSet::chain(2), vec![vec![1.0], vec![]]).unwrap();
        assert!(fill_chain(&unfitted, 10, 0).is_err());
    }
}
