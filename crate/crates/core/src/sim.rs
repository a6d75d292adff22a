//! Simulated crowds and policy benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::constrained::EstimatorState;
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::model::{check_feasible, ConstraintSet, LossSpec, FEASIBILITY_TOL};
use crate::selector::{run_budget, AnswerSource, SelectionConfig};

/// One answered question and the state of the estimate right after it.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    /// 1-based.
    pub step: usize,
    /// 0-based variable index.
    pub variable: usize,
    pub answer: f64,
    pub prediction: Vec<f64>,
    pub true_loss: Option<f64>,
    pub estimated_error: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimTrace {
    pub rows: Vec<TraceRow>,
}

impl SimTrace {
    /// First step whose true loss is exactly zero.
    pub fn first_zero_loss_step(&self) -> Option<usize> {
        self.rows.iter().find(|r| r.true_loss == Some(0.0)).map(|r| r.step)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.rows.last().and_then(|r| r.true_loss)
    }
}

/// True means and per-variable answer noise.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    means: Vec<f64>,
    worker_sd: Vec<f64>,
}

impl GroundTruth {
    pub fn new(means: Vec<f64>, worker_sd: Vec<f64>, constraints: &ConstraintSet) -> Result<Self> {
        if worker_sd.len() != means.len() {
            return Err(Error::invalid(format!(
                "{} means but {} noise levels",
                means.len(),
                worker_sd.len()
            )));
        }
        if means.iter().any(|m| !m.is_finite()) || worker_sd.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::invalid("ground truth must be finite with sd >= 0"));
        }
        if !check_feasible(constraints, &means, FEASIBILITY_TOL)? {
            return Err(Error::invalid("ground-truth means violate the constraints"));
        }
        Ok(Self { means, worker_sd })
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn worker_sd(&self) -> &[f64] {
        &self.worker_sd
    }

    pub fn n_vars(&self) -> usize {
        self.means.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TruthKind {
    Explicit(Vec<f64>),
    /// Evenly spaced from `from` (first) to `to` (last).
    LinearDecreasing { from: f64, to: f64 },
    /// `low + (high - low) / (1 + exp(steepness * (i - midpoint)))`, 1-based `i`.
    Logistic {
        high: f64,
        low: f64,
        midpoint: f64,
        steepness: f64,
    },
    /// `n` uniform draws on `[low, high)` sorted descending.
    RandomMonotone { low: f64, high: f64 },
}

pub fn make_ground_truth(
    kind: &TruthKind,
    n: usize,
    worker_sd: f64,
    constraints: &ConstraintSet,
    seed: u64,
) -> Result<GroundTruth> {
    if constraints.n_vars() != n {
        return Err(Error::invalid(format!(
            "constraints cover {} variables, truth asked for {n}",
            constraints.n_vars()
        )));
    }
    let means = match kind {
        TruthKind::Explicit(v) => {
            if v.len() != n {
                return Err(Error::invalid(format!("explicit truth has {} values, expected {n}", v.len())));
            }
            v.clone()
        }
        TruthKind::LinearDecreasing { from, to } => (0..n)
            .map(|i| {
                if n == 1 {
                    *from
                } else {
                    from + (to - from) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
        TruthKind::Logistic {
            high,
            low,
            midpoint,
            steepness,
        } => (1..=n)
            .map(|i| low + (high - low) / (1.0 + (steepness * (i as f64 - midpoint)).exp()))
            .collect(),
        TruthKind::RandomMonotone { low, high } => {
            if !(low < high) {
                return Err(Error::invalid("random_monotone needs low < high"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(*low..*high)).collect();
            v.sort_by(|a, b| b.total_cmp(a));
            v
        }
    };
    GroundTruth::new(means, vec![worker_sd; n], constraints)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Noise {
    Normal,
    /// Student t with 3 degrees of freedom, scaled to the same variance.
    /// Heavier tails than the estimator assumes.
    StudentT3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrowdModel {
    pub noise: Noise,
    /// Answers outside `[lo, hi]` are clamped to the range.
    pub clamp: Option<(f64, f64)>,
}

impl Default for CrowdModel {
    fn default() -> Self {
        Self {
            noise: Noise::Normal,
            clamp: None,
        }
    }
}

pub fn worker_answer(gt: &GroundTruth, variable: usize, crowd: &CrowdModel, rng: &mut impl Rng) -> Result<f64> {
    let (Some(&mu), Some(&sd)) = (gt.means.get(variable), gt.worker_sd.get(variable)) else {
        return Err(Error::invalid(format!(
            "variable {variable} out of range for {} variables",
            gt.n_vars()
        )));
    };
    let z: f64 = match crowd.noise {
        Noise::Normal => StandardNormal.sample(rng),
        Noise::StudentT3 => {
            let t: f64 = StudentT::new(3.0).expect("3 dof is valid").sample(rng);
            t / 3f64.sqrt()
        }
    };
    let x = mu + sd * z;
    Ok(match crowd.clamp {
        Some((lo, hi)) => x.clamp(lo, hi),
        None => x,
    })
}

/// Independent simulated workers answering from a ground truth.
#[derive(Debug, Clone)]
pub struct SimulatedCrowd {
    truth: GroundTruth,
    crowd: CrowdModel,
    rng: ChaCha8Rng,
}

impl SimulatedCrowd {
    pub fn new(truth: GroundTruth, crowd: CrowdModel, seed: u64) -> Self {
        Self {
            truth,
            crowd,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl AnswerSource for SimulatedCrowd {
    fn answer(&mut self, variable: usize, _step: usize) -> std::result::Result<f64, String> {
        worker_answer(&self.truth, variable, &self.crowd, &mut self.rng).map_err(|e| e.to_string())
    }

    fn truth(&self) -> Option<&[f64]> {
        Some(self.truth.means())
    }
}

/// Replays fixed answers per variable, in order; running dry is an error.
#[derive(Debug, Clone)]
pub struct TapeSource {
    answers: Vec<Vec<f64>>,
    cursor: Vec<usize>,
    truth: Option<Vec<f64>>,
}

impl TapeSource {
    pub fn new(answers: Vec<Vec<f64>>) -> Self {
        let cursor = vec![0; answers.len()];
        Self {
            answers,
            cursor,
            truth: None,
        }
    }

    pub fn with_truth(mut self, truth: Vec<f64>) -> Self {
        self.truth = Some(truth);
        self
    }
}

impl AnswerSource for TapeSource {
    fn answer(&mut self, variable: usize, step: usize) -> std::result::Result<f64, String> {
        let tape = self
            .answers
            .get(variable)
            .ok_or_else(|| format!("no tape for variable {variable}"))?;
        let at = self.cursor[variable];
        let x = *tape
            .get(at)
            .ok_or_else(|| format!("tape for variable {variable} exhausted at step {step}"))?;
        self.cursor[variable] += 1;
        Ok(x)
    }

    fn truth(&self) -> Option<&[f64]> {
        self.truth.as_deref()
    }
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub truth: GroundTruth,
    pub constraints: ConstraintSet,
    pub specs: Vec<LossSpec>,
    pub policies: Vec<SelectionConfig>,
    pub budget: usize,
    pub replicates: usize,
    pub seed: u64,
    pub crowd: CrowdModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicySummary {
    pub config: SelectionConfig,
    /// Mean true loss after each step, across replicates.
    pub mean_loss: Vec<f64>,
    /// Standard error of that mean.
    pub std_error: Vec<f64>,
    /// `losses[replicate][step]`.
    pub losses: Vec<Vec<f64>>,
    pub first_zero_steps: Vec<Option<usize>>,
    /// Replicate 0 in full.
    pub first_trace: SimTrace,
}

impl PolicySummary {
    pub fn final_losses(&self) -> Vec<f64> {
        self.losses.iter().map(|l| *l.last().unwrap_or(&f64::NAN)).collect()
    }

    pub fn mean_final_loss(&self) -> f64 {
        *self.mean_loss.last().unwrap_or(&f64::NAN)
    }

    /// Mean first zero-loss step, counting never-reached as `budget + 1`.
    pub fn mean_first_zero_step(&self, budget: usize) -> f64 {
        let n = self.first_zero_steps.len() as f64;
        self.first_zero_steps
            .iter()
            .map(|s| s.unwrap_or(budget + 1) as f64)
            .sum::<f64>()
            / n
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSummary {
    pub policies: Vec<PolicySummary>,
}

/// Seed of replicate `r`; every policy in a replicate faces the same crowd seed.
pub fn replicate_seed(seed: u64, replicate: usize) -> u64 {
    derive_seed(seed, &[replicate as u64])
}

pub fn run_experiment(exp: &Experiment) -> Result<ExperimentSummary> {
    if exp.replicates == 0 {
        return Err(Error::invalid("replicates must be >= 1"));
    }
    if exp.policies.is_empty() {
        return Err(Error::invalid("at least one policy is required"));
    }
    if exp.truth.n_vars() != exp.constraints.n_vars() {
        return Err(Error::invalid("ground truth and constraints disagree on n"));
    }
    let start = EstimatorState::new(exp.constraints.clone());

    let per_replicate: Vec<Vec<SimTrace>> = (0..exp.replicates)
        .into_par_iter()
        .map(|r| {
            let rs = replicate_seed(exp.seed, r);
            exp.policies
                .iter()
                .enumerate()
                .map(|(p, cfg)| {
                    let cfg = SelectionConfig {
                        seed: derive_seed(rs, &[1, p as u64]),
                        ..*cfg
                    };
                    let mut crowd = SimulatedCrowd::new(exp.truth.clone(), exp.crowd, derive_seed(rs, &[0]));
                    run_budget(&start, &exp.specs, &cfg, exp.budget, &mut crowd).map(|(_, t)| t)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let policies = exp
        .policies
        .iter()
        .enumerate()
        .map(|(p, cfg)| {
            let traces: Vec<&SimTrace> = per_replicate.iter().map(|t| &t[p]).collect();
            let losses: Vec<Vec<f64>> = traces
                .iter()
                .map(|t| t.rows.iter().map(|r| r.true_loss.unwrap_or(f64::NAN)).collect())
                .collect();
            let (mean_loss, std_error) = mean_and_se(&losses, exp.budget);
            PolicySummary {
                config: *cfg,
                mean_loss,
                std_error,
                first_zero_steps: traces.iter().map(|t| t.first_zero_loss_step()).collect(),
                first_trace: traces[0].clone(),
                losses,
            }
        })
        .collect();
    Ok(ExperimentSummary { policies })
}

fn mean_and_se(losses: &[Vec<f64>], steps: usize) -> (Vec<f64>, Vec<f64>) {
    let r = losses.len() as f64;
    (0..steps)
        .map(|s| {
            let mean = losses.iter().map(|l| l[s]).sum::<f64>() / r;
            let se = if losses.len() > 1 {
                let var = losses.iter().map(|l| (l[s] - mean) * (l[s] - mean)).sum::<f64>() / (r - 1.0);
                (var / r).sqrt()
            } else {
                0.0
            };
            (mean, se)
        })
        .unzip()
}

/// One-sided sign test: probability of at least `wins` successes out of
/// `wins + losses` fair coin flips. Ties are dropped by the caller.
pub fn sign_test_p_value(wins: usize, losses: usize) -> f64 {
    let n = (wins + losses) as u64;
    if n == 0 || wins == 0 {
        return 1.0;
    }
    let b = Binomial::new(0.5, n).expect("valid binomial");
    b.sf(wins as u64 - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selector::Policy;

    #[test]
    fn ground_truth_shapes() {
        let c = ConstraintSet::chain(10);
        let gt = make_ground_truth(&TruthKind::LinearDecreasing { from: 9.0, to: 3.0 }, 10, 1.0, &c, 0).unwrap();
        assert_eq!(gt.means()[0], 9.0);
        assert!((gt.means()[1] - 25.0 / 3.0).abs() < 1e-12);
        assert_eq!(gt.means()[9], 3.0);

        let gt = make_ground_truth(&TruthKind::RandomMonotone { low: 0.0, high: 10.0 }, 10, 1.0, &c, 4).unwrap();
        assert!(gt.means().windows(2).all(|w| w[0] >= w[1]));

        let logistic = TruthKind::Logistic {
            high: 9.0,
            low: 1.0,
            midpoint: 5.5,
            steepness: 1.5,
        };
        let gt = make_ground_truth(&logistic, 10, 1.0, &c, 0).unwrap();
        assert!(gt.means().windows(2).all(|w| w[0] > w[1]));
        assert!((gt.means()[4] + gt.means()[5] - 10.0).abs() < 1e-12);

        let c5 = ConstraintSet::chain(5);
        let ok = TruthKind::Explicit(vec![8.0, 7.0, 6.0, 5.0, 4.0]);
        assert!(make_ground_truth(&ok, 5, 1.0, &c5, 0).is_ok());
        let bad = TruthKind::Explicit(vec![8.0, 7.0, 9.0, 5.0, 4.0]);
        assert!(matches!(make_ground_truth(&bad, 5, 1.0, &c5, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn noiseless_and_clamped_answers() {
        let c = ConstraintSet::chain(2);
        let gt = GroundTruth::new(vec![5.0, 2.0], vec![0.0, 0.0], &c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(worker_answer(&gt, 1, &CrowdModel::default(), &mut rng).unwrap(), 2.0);
        assert!(worker_answer(&gt, 2, &CrowdModel::default(), &mut rng).is_err());

        let wide = GroundTruth::new(vec![5.0, 2.0], vec![30.0, 30.0], &c).unwrap();
        for noise in [Noise::Normal, Noise::StudentT3] {
            let crowd = CrowdModel { noise, clamp: Some((0.0, 10.0)) };
            for _ in 0..1000 {
                let x = worker_answer(&wide, 0, &crowd, &mut rng).unwrap();
                assert!((0.0..=10.0).contains(&x));
            }
        }
    }

    #[test]
    fn answers_center_on_the_truth() {
        let c = ConstraintSet::chain(1);
        let gt = GroundTruth::new(vec![4.0], vec![2.0], &c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 100_000;
        for noise in [Noise::Normal, Noise::StudentT3] {
            let crowd = CrowdModel { noise, clamp: None };
            let m = (0..n).map(|_| worker_answer(&gt, 0, &crowd, &mut rng).unwrap()).sum::<f64>() / n as f64;
            assert!((m - 4.0).abs() < 4.0 * 2.0 / (n as f64).sqrt(), "{noise:?}: {m}");
        }
    }

    #[test]
    fn sign_test_values() {
        assert_eq!(sign_test_p_value(0, 5), 1.0);
        assert!((sign_test_p_value(5, 0) - 1.0 / 32.0).abs() < 1e-12);
        assert!((sign_test_p_value(3, 2) - 0.5).abs() < 1e-12);
    }

    fn small_experiment(sd: f64, replicates: usize) -> Experiment {
        let c = ConstraintSet::chain(4);
        let truth = GroundTruth::new(vec![9.0, 7.0, 5.0, 3.0], vec![sd; 4], &c).unwrap();
        Experiment {
            truth,
            constraints: c,
            specs: vec![LossSpec::threshold(6.0); 4],
            policies: vec![SelectionConfig::new(Policy::RoundRobin), SelectionConfig::new(Policy::Constrained)],
            budget: 16,
            replicates,
            seed: 21,
            crowd: CrowdModel::default(),
        }
    }

    #[test]
    fn noiseless_experiment_reaches_zero_loss() {
        let s = run_experiment(&small_experiment(0.0, 1)).unwrap();
        for p in &s.policies {
            assert_eq!(p.mean_final_loss(), 0.0);
            assert!(p.first_zero_steps[0].is_some());
        }
    }

    #[test]
    fn experiments_are_deterministic() {
        let e = small_experiment(1.5, 4);
        let a = run_experiment(&e).unwrap();
        let b = run_experiment(&e).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.policies[0].mean_loss.len(), 16);
        assert!(run_experiment(&Experiment { replicates: 0, ..e }).is_err());
    }
}
