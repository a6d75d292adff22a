//! Per-variable normal fits and the modeled error of their means.
//!
//! For a variable with samples `S`, the fitted model is the normal MLE
//! `(mean, population variance)`. The expected error `E(theta, N)` is the
//! expected loss of the mean of `N` fresh draws from that model, measured
//! against the model's own mean. The expected error decrease `D(S)` averages
//! `E(theta, |S|) - E(theta', |S| + 1)` over a hypothetical next answer drawn
//! from the current model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::model::LossSpec;
use crate::quadrature::{gauss_hermite, half_range_hermite};

/// `theta = (mean, variance)` of a normal model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalParams {
    pub mean: f64,
    pub variance: f64,
}

impl NormalParams {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        let p = Self { mean, variance };
        p.validate()?;
        Ok(p)
    }

    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !self.mean.is_finite() || !self.variance.is_finite() || self.variance < 0.0 {
            return Err(Error::invalid(format!(
                "normal parameters must be finite with variance >= 0, got ({}, {})",
                self.mean, self.variance
            )));
        }
        Ok(())
    }
}

/// Seeded Monte Carlo replacement for the quadrature rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MonteCarlo {
    pub draws: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IntegrationConfig {
    /// Nodes for the expected-error integral of non-threshold losses.
    pub error_nodes: usize,
    /// Nodes for averaging over the hypothetical next answer.
    pub decrease_nodes: usize,
    /// When set, both integrals are estimated by sampling instead.
    pub monte_carlo: Option<MonteCarlo>,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        Self {
            error_nodes: 64,
            decrease_nodes: 32,
            monte_carlo: None,
        }
    }
}

impl IntegrationConfig {
    fn validate(&self) -> Result<()> {
        if self.error_nodes == 0 || self.decrease_nodes == 0 {
            return Err(Error::invalid("quadrature node counts must be positive"));
        }
        if matches!(self.monte_carlo, Some(mc) if mc.draws == 0) {
            return Err(Error::invalid("Monte Carlo draw count must be positive"));
        }
        Ok(())
    }
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

pub fn fit_mle(samples: &[f64]) -> Result<NormalParams> {
    fit_with_extra(samples, None)
}

/// MLE of `samples` plus an optional extra point, without allocating.
fn fit_with_extra(samples: &[f64], extra: Option<f64>) -> Result<NormalParams> {
    let n = samples.len() + usize::from(extra.is_some());
    if n == 0 {
        return Err(Error::EmptySamples);
    }
    let all = || samples.iter().copied().chain(extra);
    let mean = all().sum::<f64>() / n as f64;
    let variance = all().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n as f64;
    Ok(NormalParams { mean, variance })
}

pub fn expected_error(
    params: NormalParams,
    n_samples: usize,
    spec: &LossSpec,
    cfg: &IntegrationConfig,
) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::invalid("expected error needs n_samples >= 1"));
    }
    params.validate()?;
    spec.validate()?;
    cfg.validate()?;
    Ok(expected_error_unchecked(params, n_samples, spec, cfg))
}

pub(crate) fn expected_error_unchecked(
    params: NormalParams,
    n_samples: usize,
    spec: &LossSpec,
    cfg: &IntegrationConfig,
) -> f64 {
    if params.variance == 0.0 {
        return 0.0;
    }
    let mu = params.mean;
    let s = (params.variance / n_samples as f64).sqrt();
    match *spec {
        LossSpec::Threshold { tau } => {
            if mu == tau {
                0.0
            } else {
                normal_cdf(-(tau - mu).abs() / s)
            }
        }
        _ => match cfg.monte_carlo {
            Some(mc) => {
                let mut rng = ChaCha8Rng::seed_from_u64(mc.seed);
                let total: f64 = (0..mc.draws)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        spec.eval(mu, mu + s * z)
                    })
                    .sum();
                total / mc.draws as f64
            }
            // The loss is kinked at the truth, which is the centre of the
            // sampling distribution; folding at the centre and using the
            // half-range rule keeps both sides smooth.
            None => half_range_hermite(cfg.error_nodes)
                .integrate(|y| spec.eval(mu, mu + s * y) + spec.eval(mu, mu - s * y)),
        },
    }
}

/// `D(S, x)`: modeled error now minus modeled error after also observing `x`.
pub fn error_decrease(samples: &[f64], x: f64, spec: &LossSpec, cfg: &IntegrationConfig) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::invalid(format!("hypothetical sample must be finite, got {x}")));
    }
    let now = fit_mle(samples)?;
    spec.validate()?;
    cfg.validate()?;
    Ok(decrease_at(samples, now, x, spec, cfg))
}

fn decrease_at(samples: &[f64], now: NormalParams, x: f64, spec: &LossSpec, cfg: &IntegrationConfig) -> f64 {
    let n = samples.len();
    let next = fit_with_extra(samples, Some(x)).expect("non-empty by construction");
    expected_error_unchecked(now, n, spec, cfg) - expected_error_unchecked(next, n + 1, spec, cfg)
}

/// `D(S)`: `D(S, x)` averaged over `x ~ N(mean, variance)` of the current fit.
pub fn expected_error_decrease(samples: &[f64], spec: &LossSpec, cfg: &IntegrationConfig) -> Result<f64> {
    let now = fit_mle(samples)?;
    spec.validate()?;
    cfg.validate()?;
    let sd = now.sd();
    let value = match cfg.monte_carlo {
        Some(mc) => {
            let mut rng = ChaCha8Rng::seed_from_u64(mc.seed ^ 0x9e37_79b9_7f4a_7c15);
            let total: f64 = (0..mc.draws)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    decrease_at(samples, now, now.mean + sd * z, spec, cfg)
                })
                .sum();
            total / mc.draws as f64
        }
        None => gauss_hermite(cfg.decrease_nodes)
            .integrate(|z| decrease_at(samples, now, now.mean + sd * z, spec, cfg)),
    };
    Ok(value)
}
