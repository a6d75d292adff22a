//! Flat TOML experiment configuration.

use std::path::{Path, PathBuf};

use anyhow::Result;
use serde::{Deserialize, Serialize};

use ordcrowd::{
    ConstraintSet, CrowdModel, IntegrationConfig, LossSpec, MonteCarlo, Noise, Policy, SelectionConfig, TruthKind,
};

use crate::formats::{parse_constraints, usage};

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_vars: usize,
    /// `chain`, `none`, or a path to a rows CSV (relative to the config file).
    #[serde(default = "default_constraints")]
    pub constraints: String,

    pub truth: String,
    pub truth_values: Option<Vec<f64>>,
    pub truth_from: Option<f64>,
    pub truth_to: Option<f64>,
    pub truth_high: Option<f64>,
    pub truth_low: Option<f64>,
    pub truth_midpoint: Option<f64>,
    pub truth_steepness: Option<f64>,

    pub worker_sd: f64,
    #[serde(default = "default_noise")]
    pub noise: String,
    pub clamp: Option<[f64; 2]>,

    pub loss: String,
    pub tau: Option<f64>,

    pub policies: Vec<String>,
    pub budget: usize,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,

    #[serde(default = "default_hypothetical_draws")]
    pub hypothetical_draws: usize,
    #[serde(default = "default_min_samples")]
    pub min_samples_before_scoring: usize,
    #[serde(default = "default_interpolation_draws")]
    pub interpolation_draws: usize,
    #[serde(default = "default_error_nodes")]
    pub error_nodes: usize,
    #[serde(default = "default_decrease_nodes")]
    pub decrease_nodes: usize,
    /// Replaces quadrature for the expected decrease when set.
    pub monte_carlo_draws: Option<usize>,

    #[serde(default = "default_trace")]
    pub trace: PathBuf,
    #[serde(default = "default_summary")]
    pub summary: PathBuf,
}

fn default_constraints() -> String {
    "chain".into()
}
fn default_noise() -> String {
    "normal".into()
}
fn default_replicates() -> usize {
    1
}
fn default_hypothetical_draws() -> usize {
    SelectionConfig::new(Policy::Constrained).hypothetical_draws
}
fn default_min_samples() -> usize {
    SelectionConfig::new(Policy::Constrained).min_samples_before_scoring
}
fn default_interpolation_draws() -> usize {
    SelectionConfig::new(Policy::Constrained).interpolation_draws
}
fn default_error_nodes() -> usize {
    IntegrationConfig::default().error_nodes
}
fn default_decrease_nodes() -> usize {
    IntegrationConfig::default().decrease_nodes
}
fn default_trace() -> PathBuf {
    "trace.csv".into()
}
fn default_summary() -> PathBuf {
    "summary.json".into()
}

/// Everything the harness needs, validated.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub raw: ExperimentConfig,
    pub constraints: ConstraintSet,
    pub truth: TruthKind,
    pub crowd: CrowdModel,
    pub loss: LossSpec,
    pub policies: Vec<SelectionConfig>,
    pub trace: PathBuf,
    pub summary: PathBuf,
}

/// 1-based line of `key = ...`, if the key is present.
fn line_of(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        l.trim_start()
            .strip_prefix(key)
            .is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

fn line_at(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Resolved> {
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| usage!("{shown}: {e}"))?;
    let mut raw: ExperimentConfig = toml::from_str(&text).map_err(|e| {
        let line = e.span().map(|s| line_at(&text, s.start)).unwrap_or(1);
        usage!("{shown}:{line}: {}", e.message().trim())
    })?;
    if let Some(seed) = seed_override {
        raw.seed = seed;
    }
    let base = path.parent().unwrap_or(Path::new("."));
    resolve(raw, &text, &shown, base)
}

fn resolve(raw: ExperimentConfig, text: &str, shown: &str, base: &Path) -> Result<Resolved> {
    let at = |key: &str, msg: String| {
        let line = line_of(text, key).unwrap_or(1);
        usage!("{shown}:{line}: {msg}")
    };
    let n = raw.n_vars;
    if n == 0 {
        return Err(at("n_vars", "n_vars must be >= 1".into()));
    }
    if raw.budget == 0 {
        return Err(at("budget", "budget must be >= 1".into()));
    }
    if raw.replicates == 0 {
        return Err(at("replicates", "replicates must be >= 1".into()));
    }
    if !(raw.worker_sd.is_finite() && raw.worker_sd >= 0.0) {
        return Err(at("worker_sd", "worker_sd must be finite and >= 0".into()));
    }

    let constraints = match raw.constraints.as_str() {
        "chain" => ConstraintSet::chain(n),
        "none" => ConstraintSet::unconstrained(n),
        file => {
            let c = parse_constraints(&base.join(file).to_string_lossy())
                .map_err(|e| at("constraints", e.to_string()))?;
            if c.n_vars() != n {
                return Err(at(
                    "constraints",
                    format!("constraint rows have {} columns, n_vars is {n}", c.n_vars()),
                ));
            }
            c
        }
    };

    let truth = resolve_truth(&raw, &at)?;

    let noise = match raw.noise.as_str() {
        "normal" => Noise::Normal,
        "student_t3" => Noise::StudentT3,
        other => return Err(at("noise", format!("unknown noise `{other}` (normal, student_t3)"))),
    };
    let clamp = match raw.clamp {
        Some([lo, hi]) if !(lo < hi) => return Err(at("clamp", "clamp needs low < high".into())),
        c => c.map(|[lo, hi]| (lo, hi)),
    };

    let loss = match (raw.loss.as_str(), raw.tau) {
        ("threshold", Some(tau)) => LossSpec::threshold(tau),
        ("threshold", None) => return Err(at("loss", "threshold loss requires `tau`".into())),
        ("absolute" | "squared", Some(_)) => {
            return Err(at("tau", format!("`tau` is only valid with threshold loss, not {}", raw.loss)))
        }
        ("absolute", None) => LossSpec::Absolute,
        ("squared", None) => LossSpec::Squared,
        (other, _) => return Err(at("loss", format!("unknown loss `{other}` (threshold, absolute, squared)"))),
    };
    loss.validate().map_err(|e| at("tau", e.to_string()))?;

    if raw.policies.is_empty() {
        return Err(at("policies", "at least one policy is required".into()));
    }
    let integration = IntegrationConfig {
        error_nodes: raw.error_nodes,
        decrease_nodes: raw.decrease_nodes,
        monte_carlo: raw.monte_carlo_draws.map(|draws| MonteCarlo { draws, seed: raw.seed }),
    };
    if integration.error_nodes == 0 || integration.decrease_nodes == 0 || raw.monte_carlo_draws == Some(0) {
        return Err(at("error_nodes", "integration sizes must be >= 1".into()));
    }
    if raw.hypothetical_draws == 0 || raw.interpolation_draws == 0 {
        return Err(at("hypothetical_draws", "draw counts must be >= 1".into()));
    }
    let mut policies = Vec::new();
    for name in &raw.policies {
        let policy: Policy = name.parse().map_err(|e: ordcrowd::Error| at("policies", e.to_string()))?;
        if policies.iter().any(|p: &SelectionConfig| p.policy == policy) {
            return Err(at("policies", format!("policy `{name}` listed twice")));
        }
        let mut cfg = SelectionConfig::new(policy);
        cfg.hypothetical_draws = raw.hypothetical_draws;
        cfg.min_samples_before_scoring = raw.min_samples_before_scoring;
        cfg.interpolation_draws = raw.interpolation_draws;
        cfg.integration = integration;
        policies.push(cfg);
    }

    Ok(Resolved {
        trace: base.join(&raw.trace),
        summary: base.join(&raw.summary),
        constraints,
        truth,
        crowd: CrowdModel { noise, clamp },
        loss,
        policies,
        raw,
    })
}

fn resolve_truth(raw: &ExperimentConfig, at: &dyn Fn(&str, String) -> anyhow::Error) -> Result<TruthKind> {
    let given = [
        ("truth_values", raw.truth_values.is_some()),
        ("truth_from", raw.truth_from.is_some()),
        ("truth_to", raw.truth_to.is_some()),
        ("truth_high", raw.truth_high.is_some()),
        ("truth_low", raw.truth_low.is_some()),
        ("truth_midpoint", raw.truth_midpoint.is_some()),
        ("truth_steepness", raw.truth_steepness.is_some()),
    ];
    let wanted: &[&str] = match raw.truth.as_str() {
        "explicit" => &["truth_values"],
        "linear_decreasing" => &["truth_from", "truth_to"],
        "logistic" => &["truth_high", "truth_low", "truth_midpoint", "truth_steepness"],
        "random_monotone" => &["truth_low", "truth_high"],
        other => {
            return Err(at(
                "truth",
                format!("unknown truth `{other}` (explicit, linear_decreasing, logistic, random_monotone)"),
            ))
        }
    };
    for (key, present) in given {
        if present && !wanted.contains(&key) {
            return Err(at(key, format!("`{key}` does not apply to truth `{}`", raw.truth)));
        }
        if !present && wanted.contains(&key) {
            return Err(at("truth", format!("truth `{}` requires `{key}`", raw.truth)));
        }
    }
    let finite = |key: &str, x: Option<f64>| -> Result<f64> {
        let x = x.expect("presence checked");
        if x.is_finite() {
            Ok(x)
        } else {
            Err(at(key, format!("`{key}` must be finite")))
        }
    };
    Ok(match raw.truth.as_str() {
        "explicit" => TruthKind::Explicit(raw.truth_values.clone().expect("presence checked")),
        "linear_decreasing" => TruthKind::LinearDecreasing {
            from: finite("truth_from", raw.truth_from)?,
            to: finite("truth_to", raw.truth_to)?,
        },
        "logistic" => TruthKind::Logistic {
            high: finite("truth_high", raw.truth_high)?,
            low: finite("truth_low", raw.truth_low)?,
            midpoint: finite("truth_midpoint", raw.truth_midpoint)?,
            steepness: finite("truth_steepness", raw.truth_steepness)?,
        },
        _ => TruthKind::RandomMonotone {
            low: finite("truth_low", raw.truth_low)?,
            high: finite("truth_high", raw.truth_high)?,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_key_lines() {
        let text = "n_vars = 3\n  loss = \"threshold\"\nlosses = 2\n";
        assert_eq!(line_of(text, "loss"), Some(2));
        assert_eq!(line_of(text, "tau"), None);
        assert_eq!(line_at(text, 0), 1);
        assert_eq!(line_at(text, 12), 2);
    }
}
