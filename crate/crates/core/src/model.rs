//! Shared domain types: loss functions, linear inequality constraints and
//! per-variable sample state.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::estimator::NormalParams;

/// Default slack used when checking `E·v <= 0` on solver output.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Per-variable loss `L_mu(x)`, zero at the truth and non-decreasing in the
/// absolute error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossSpec {
    /// 1 when truth and prediction sit strictly on opposite sides of `tau`.
    Threshold { tau: f64 },
    Absolute,
    Squared,
}

impl LossSpec {
    pub fn threshold(tau: f64) -> Self {
        LossSpec::Threshold { tau }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LossSpec::Threshold { tau } if !tau.is_finite() => {
                Err(Error::invalid(format!("threshold must be finite, got {tau}")))
            }
            _ => Ok(()),
        }
    }

    /// Loss of `prediction` when the true value is `truth`, without input checks.
    #[inline]
    pub(crate) fn eval(&self, truth: f64, prediction: f64) -> f64 {
        match *self {
            LossSpec::Threshold { tau } => {
                if (truth < tau && tau < prediction) || (prediction < tau && tau < truth) {
                    1.0
                } else {
                    0.0
                }
            }
            LossSpec::Absolute => (prediction - truth).abs(),
            LossSpec::Squared => (prediction - truth) * (prediction - truth),
        }
    }
}

pub fn point_loss(spec: &LossSpec, truth: f64, prediction: f64) -> Result<f64> {
    spec.validate()?;
    if !truth.is_finite() || !prediction.is_finite() {
        return Err(Error::invalid(format!(
            "loss inputs must be finite (truth {truth}, prediction {prediction})"
        )));
    }
    Ok(spec.eval(truth, prediction))
}

pub fn total_loss(specs: &[LossSpec], truth: &[f64], prediction: &[f64]) -> Result<f64> {
    if specs.len() != truth.len() || truth.len() != prediction.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} specs, {} truths, {} predictions",
            specs.len(),
            truth.len(),
            prediction.len()
        )));
    }
    specs
        .iter()
        .zip(truth)
        .zip(prediction)
        .map(|((s, &t), &p)| point_loss(s, t, p))
        .sum()
}

/// A matrix `E` of linear inequality rows read as `E·mu <= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    n_vars: usize,
    rows: Arc<[Vec<f64>]>,
    chain: bool,
}

impl ConstraintSet {
    pub fn new(n_vars: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        for (r, row) in rows.iter().enumerate() {
            if row.len() != n_vars {
                return Err(Error::invalid(format!(
                    "constraint row {r} has {} coefficients, expected {n_vars}",
                    row.len()
                )));
            }
            if row.iter().any(|c| !c.is_finite()) {
                return Err(Error::invalid(format!("constraint row {r} is not finite")));
            }
        }
        Ok(Self::from_rows(n_vars, rows))
    }

    fn from_rows(n_vars: usize, rows: Vec<Vec<f64>>) -> Self {
        let chain = rows_form_chain(n_vars, &rows);
        Self {
            n_vars,
            rows: rows.into(),
            chain,
        }
    }

    /// No inequalities at all.
    pub fn unconstrained(n_vars: usize) -> Self {
        Self::from_rows(n_vars, Vec::new())
    }

    /// The total order `mu_1 >= mu_2 >= ... >= mu_n`, one row
    /// `mu_{i+1} - mu_i <= 0` per adjacent pair.
    pub fn chain(n_vars: usize) -> Self {
        let rows = (0..n_vars.saturating_sub(1))
            .map(|i| {
                let mut row = vec![0.0; n_vars];
                row[i] = -1.0;
                row[i + 1] = 1.0;
                row
            })
            .collect();
        Self::from_rows(n_vars, rows)
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// True when the rows are exactly the adjacent-pair chain rows (in any
    /// order, each up to a positive scale factor).
    pub fn is_chain(&self) -> bool {
        self.chain
    }
}

fn rows_form_chain(n: usize, rows: &[Vec<f64>]) -> bool {
    if n <= 1 {
        return rows.is_empty();
    }
    let mut seen = vec![false; n - 1];
    for row in rows {
        let nz: Vec<usize> = (0..n).filter(|&j| row[j] != 0.0).collect();
        match nz.as_slice() {
            &[i, j] if j == i + 1 && row[i] < 0.0 && row[j] == -row[i] => seen[i] = true,
            _ => return false,
        }
    }
    seen.into_iter().all(|s| s)
}

/// True iff every row satisfies `row·witness <= tol`.
pub fn check_feasible(c: &ConstraintSet, witness: &[f64], tol: f64) -> Result<bool> {
    if witness.len() != c.n_vars {
        return Err(Error::invalid(format!(
            "witness has length {}, constraints cover {} variables",
            witness.len(),
            c.n_vars
        )));
    }
    if !(tol >= 0.0) {
        return Err(Error::invalid(format!("tolerance must be >= 0, got {tol}")));
    }
    Ok(max_violation(c, witness) <= tol)
}

/// Largest positive `row·v`, or 0.
pub(crate) fn max_violation(c: &ConstraintSet, v: &[f64]) -> f64 {
    c.rows
        .iter()
        .map(|row| dot(row, v))
        .fold(0.0, f64::max)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Samples and the current fitted model of one variable `X_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableState {
    index: usize,
    samples: Vec<f64>,
    fitted: Option<NormalParams>,
}

impl VariableState {
    pub fn new(index: usize) -> Self {
        Self {
            index,
            samples: Vec::new(),
            fitted: None,
        }
    }

    pub fn with_samples(index: usize, samples: Vec<f64>) -> Result<Self> {
        let mut v = Self::new(index);
        for s in samples {
            v.push(s)?;
        }
        Ok(v)
    }

    /// Zero-based position of the variable.
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn fitted(&self) -> Option<NormalParams> {
        self.fitted
    }

    /// Appends an answer; any previous fit is dropped.
    pub fn push(&mut self, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::invalid(format!(
                "sample for variable {} is not finite: {value}",
                self.index
            )));
        }
        self.samples.push(value);
        self.fitted = None;
        Ok(())
    }

    pub(crate) fn set_fitted(&mut self, fitted: Option<NormalParams>) {
        self.fitted = fitted;
    }
}
