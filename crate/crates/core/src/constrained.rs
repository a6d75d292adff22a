//! Joint fit of all variables under `E·mu <= 0`.
//!
//! With every variance frozen at its per-variable sample variance, the
//! constrained log-likelihood in the means is, up to constants,
//! `-1/2 sum_i |S_i| / var_i * (mu_i - mean_i)^2`: each variable contributes
//! a Gaussian in its mean with curvature `|S_i| / var_i`. Maximizing it is the
//! weighted projection `min sum_i w_i (v_i - mean_i)^2` s.t. `E·v <= 0`.
//! Variances are then re-estimated around the projected means.

use crate::error::{Error, Result};
use crate::estimator::{fit_mle, NormalParams};
use crate::interpolate::linear_mean;
use crate::model::{ConstraintSet, VariableState};
use crate::qp::{hildreth, hildreth_homogeneous, pava_non_increasing, DualOptions};

/// Stand-in for a zero sample variance when forming weights.
pub const VAR_FLOOR: f64 = 1e-6;

/// KKT tolerance used by [`refit`].
pub const DEFAULT_QP_TOL: f64 = 1e-10;

const MAX_PROXIMAL_ROUNDS: usize = 20_000;

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    variables: Vec<VariableState>,
    constraints: ConstraintSet,
    constrained_means: Option<Vec<f64>>,
    reestimated_variances: Option<Vec<Option<f64>>>,
}

impl EstimatorState {
    pub fn new(constraints: ConstraintSet) -> Self {
        let variables = (0..constraints.n_vars()).map(VariableState::new).collect();
        Self {
            variables,
            constraints,
            constrained_means: None,
            reestimated_variances: None,
        }
    }

    /// One sample list per variable, in index order.
    pub fn from_samples(constraints: ConstraintSet, samples: Vec<Vec<f64>>) -> Result<Self> {
        if samples.len() != constraints.n_vars() {
            return Err(Error::invalid(format!(
                "{} sample lists for {} variables",
                samples.len(),
                constraints.n_vars()
            )));
        }
        let variables = samples
            .into_iter()
            .enumerate()
            .map(|(i, s)| VariableState::with_samples(i, s))
            .collect::<Result<_>>()?;
        Ok(Self {
            variables,
            constraints,
            constrained_means: None,
            reestimated_variances: None,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn variables(&self) -> &[VariableState] {
        &self.variables
    }

    pub fn variable(&self, i: usize) -> &VariableState {
        &self.variables[i]
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    pub fn constrained_means(&self) -> Option<&[f64]> {
        self.constrained_means.as_deref()
    }

    pub fn reestimated_variances(&self) -> Option<&[Option<f64>]> {
        self.reestimated_variances.as_deref()
    }

    pub fn sample_counts(&self) -> Vec<usize> {
        self.variables.iter().map(|v| v.len()).collect()
    }

    pub fn total_samples(&self) -> usize {
        self.variables.iter().map(|v| v.len()).sum()
    }

    /// Records an answer for variable `i`. All fitted values become stale and
    /// are cleared.
    pub fn add_sample(&mut self, i: usize, value: f64) -> Result<()> {
        let n = self.n_vars();
        let var = self
            .variables
            .get_mut(i)
            .ok_or_else(|| Error::invalid(format!("variable {i} out of range for {n} variables")))?;
        var.push(value)?;
        self.constrained_means = None;
        self.reestimated_variances = None;
        for v in &mut self.variables {
            v.set_fitted(None);
        }
        Ok(())
    }

    /// Independent per-variable MLE fits, ignoring the constraints.
    pub fn fit_independent(&self) -> EstimatorState {
        let mut out = self.clone();
        out.constrained_means = None;
        out.reestimated_variances = None;
        for v in &mut out.variables {
            let fit = fit_mle(v.samples()).ok();
            v.set_fitted(fit);
        }
        out
    }

    pub(crate) fn set_model(&mut self, i: usize, model: Option<NormalParams>) {
        self.variables[i].set_fitted(model);
    }
}

/// Weighted projection problem `min sum w_i (v_i - t_i)^2` s.t. `E·v <= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub weights: Vec<f64>,
    pub targets: Vec<f64>,
    pub constraints: ConstraintSet,
}

impl QpProblem {
    pub fn new(weights: Vec<f64>, targets: Vec<f64>, constraints: ConstraintSet) -> Result<Self> {
        let n = constraints.n_vars();
        if weights.len() != n || targets.len() != n {
            return Err(Error::invalid(format!(
                "QP has {} weights and {} targets for {n} variables",
                weights.len(),
                targets.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("QP weights must be finite and >= 0"));
        }
        if !weights.iter().any(|w| *w > 0.0) {
            return Err(Error::EmptyState);
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("QP targets must be finite"));
        }
        Ok(Self {
            weights,
            targets,
            constraints,
        })
    }

    pub fn objective(&self, v: &[f64]) -> f64 {
        crate::qp::objective(&self.weights, &self.targets, v)
    }
}

/// Sufficient statistics of one variable's samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Summary {
    pub count: usize,
    pub mean: f64,
    pub variance: f64,
}

impl Summary {
    pub(crate) const EMPTY: Summary = Summary {
        count: 0,
        mean: 0.0,
        variance: 0.0,
    };

    pub(crate) fn of(samples: &[f64]) -> Summary {
        match fit_mle(samples) {
            Ok(p) => Summary {
                count: samples.len(),
                mean: p.mean,
                variance: p.variance,
            },
            Err(_) => Summary::EMPTY,
        }
    }

    /// Welford update with one extra observation.
    pub(crate) fn with(self, x: f64) -> Summary {
        let n = self.count as f64 + 1.0;
        let d = x - self.mean;
        let mean = self.mean + d / n;
        let m2 = self.variance * self.count as f64 + d * (x - mean);
        Summary {
            count: self.count + 1,
            mean,
            variance: (m2 / n).max(0.0),
        }
    }

    pub(crate) fn weight(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else if self.variance > 0.0 {
            self.count as f64 / self.variance
        } else {
            self.count as f64 / VAR_FLOOR
        }
    }
}

pub(crate) fn qp_from_summaries(summaries: &[Summary], constraints: &ConstraintSet) -> Result<QpProblem> {
    if summaries.iter().all(|s| s.count == 0) {
        return Err(Error::EmptyState);
    }
    let weights = summaries.iter().map(Summary::weight).collect();
    let targets = summaries.iter().map(|s| s.mean).collect();
    QpProblem::new(weights, targets, constraints.clone())
}

pub fn build_qp(state: &EstimatorState) -> Result<QpProblem> {
    let summaries: Vec<Summary> = state.variables.iter().map(|v| Summary::of(v.samples())).collect();
    qp_from_summaries(&summaries, &state.constraints)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpRoute {
    /// PAVA when the constraints are a chain, the dual solver otherwise.
    Auto,
    Pava,
    Dual,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    pub tol: f64,
    pub max_sweeps: usize,
    pub route: QpRoute,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_QP_TOL,
            max_sweeps: 200_000,
            route: QpRoute::Auto,
        }
    }
}

pub fn solve_qp(p: &QpProblem, tol: f64) -> Result<Vec<f64>> {
    solve_qp_with(
        p,
        &QpOptions {
            tol,
            ..QpOptions::default()
        },
    )
}

pub fn solve_qp_with(p: &QpProblem, opts: &QpOptions) -> Result<Vec<f64>> {
    if !(opts.tol > 0.0) {
        return Err(Error::invalid(format!("QP tolerance must be > 0, got {}", opts.tol)));
    }
    let chain = p.constraints.is_chain();
    match opts.route {
        QpRoute::Pava if !chain => Err(Error::UnsupportedConstraints),
        QpRoute::Auto | QpRoute::Pava if chain => Ok(solve_chain(p)),
        _ => solve_dual(p, opts),
    }
}

fn positive_indices(p: &QpProblem) -> Vec<usize> {
    (0..p.weights.len()).filter(|&i| p.weights[i] > 0.0).collect()
}

fn solve_chain(p: &QpProblem) -> Vec<f64> {
    let idx = positive_indices(p);
    let t: Vec<f64> = idx.iter().map(|&i| p.targets[i]).collect();
    let w: Vec<f64> = idx.iter().map(|&i| p.weights[i]).collect();
    let fit = pava_non_increasing(&t, &w);
    let mut partial = vec![None; p.weights.len()];
    for (&i, v) in idx.iter().zip(fit) {
        partial[i] = Some(v);
    }
    complete_chain(&partial).expect("PAVA output is non-increasing")
}

fn solve_dual(p: &QpProblem, opts: &QpOptions) -> Result<Vec<f64>> {
    let dual = DualOptions {
        tol: opts.tol,
        max_sweeps: opts.max_sweeps,
    };
    let rows = p.constraints.rows();
    let idx = positive_indices(p);
    if idx.len() == p.weights.len() {
        return Ok(hildreth_homogeneous(&p.weights, &p.targets, rows, None, &dual)?.x);
    }

    // Zero-weight coordinates make the objective only semidefinite. Run a
    // proximal-point loop that adds rho/2 (x_j - c_j)^2 on those coordinates,
    // re-centring c on the previous iterate until it stops moving.
    let pos_w: f64 = idx.iter().map(|&i| p.weights[i]).sum();
    let centre = idx.iter().map(|&i| p.weights[i] * p.targets[i]).sum::<f64>() / pos_w;
    let rho = 1e-2 * pos_w / idx.len() as f64;
    let scale = 1.0 + p.targets.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    let mut d = p.weights.clone();
    let mut t = p.targets.clone();
    for (j, w) in p.weights.iter().enumerate() {
        if *w == 0.0 {
            d[j] = rho;
            t[j] = centre;
        }
    }
    let mut lambda: Option<Vec<f64>> = None;
    let mut x = t.clone();
    for _ in 0..MAX_PROXIMAL_ROUNDS {
        let sol = hildreth(&d, &t, rows, &vec![0.0; rows.len()], lambda.as_deref(), &dual)?;
        let mut moved = 0.0f64;
        for (j, w) in p.weights.iter().enumerate() {
            if *w == 0.0 {
                moved = moved.max((sol.x[j] - t[j]).abs());
                t[j] = sol.x[j];
            }
        }
        x = sol.x;
        lambda = Some(sol.lambda);
        if moved <= opts.tol * scale {
            let partial: Vec<Option<f64>> = (0..x.len())
                .map(|i| (p.weights[i] > 0.0).then_some(x[i]))
                .collect();
            return complete_zero_weight(&partial, &p.constraints);
        }
    }
    Err(Error::NonConvergence {
        iterations: MAX_PROXIMAL_ROUNDS,
        violation: crate::model::max_violation(&p.constraints, &x),
        best: x,
    })
}

/// Fills coordinates marked `None` so that the full vector is feasible.
///
/// Chains: gaps between known neighbours are filled linearly by rank and open
/// ends copy the nearest known value. Other constraint sets: the free
/// coordinates minimize their squared distance to the mean of the known
/// values, subject to the rows with the known coordinates fixed.
pub fn complete_zero_weight(partial: &[Option<f64>], constraints: &ConstraintSet) -> Result<Vec<f64>> {
    if partial.len() != constraints.n_vars() {
        return Err(Error::invalid(format!(
            "partial vector has length {}, constraints cover {} variables",
            partial.len(),
            constraints.n_vars()
        )));
    }
    if partial.iter().all(Option::is_some) {
        return Ok(partial.iter().map(|v| v.unwrap()).collect());
    }
    if partial.iter().all(Option::is_none) {
        return Err(Error::invalid("completion needs at least one known coordinate"));
    }
    if constraints.is_chain() {
        complete_chain(partial)
    } else {
        complete_general(partial, constraints)
    }
}

fn complete_chain(partial: &[Option<f64>]) -> Result<Vec<f64>> {
    let known: Vec<(usize, f64)> = partial
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|x| (i, x)))
        .collect();
    for pair in known.windows(2) {
        let ((i, a), (j, b)) = (pair[0], pair[1]);
        if b > a + crate::model::FEASIBILITY_TOL {
            return Err(Error::Infeasible(format!(
                "known values increase from position {i} ({a}) to {j} ({b})"
            )));
        }
    }
    let (first, last) = (known[0], known[known.len() - 1]);
    let mut out = Vec::with_capacity(partial.len());
    let mut next = 0;
    for (i, v) in partial.iter().enumerate() {
        if let Some(x) = v {
            out.push(*x);
            next += 1;
            continue;
        }
        let value = if i < first.0 {
            first.1
        } else if i > last.0 {
            last.1
        } else {
            let (l, vl) = known[next - 1];
            let (r, vr) = known[next];
            linear_mean(l, r, vl, vr, i)
        };
        out.push(value);
    }
    Ok(out)
}

fn complete_general(partial: &[Option<f64>], constraints: &ConstraintSet) -> Result<Vec<f64>> {
    let free: Vec<usize> = (0..partial.len()).filter(|&i| partial[i].is_none()).collect();
    let known: Vec<f64> = partial.iter().flatten().copied().collect();
    let centre = known.iter().sum::<f64>() / known.len() as f64;

    let mut rows = Vec::with_capacity(constraints.rows().len());
    let mut rhs = Vec::with_capacity(rows.capacity());
    for row in constraints.rows() {
        let fixed: f64 = partial
            .iter()
            .zip(row)
            .filter_map(|(v, a)| v.map(|x| a * x))
            .sum();
        rows.push(free.iter().map(|&j| row[j]).collect::<Vec<f64>>());
        rhs.push(-fixed);
    }
    let ones = vec![1.0; free.len()];
    let target = vec![centre; free.len()];
    let opts = DualOptions {
        tol: DEFAULT_QP_TOL,
        max_sweeps: 200_000,
    };
    let sol = match hildreth(&ones, &target, &rows, &rhs, None, &opts) {
        Ok(sol) => sol,
        Err(Error::NonConvergence { violation, .. }) => {
            return Err(Error::Infeasible(format!(
                "no feasible completion found (residual violation {violation:e})"
            )))
        }
        Err(e) => return Err(e),
    };
    let mut out: Vec<f64> = partial.iter().map(|v| v.unwrap_or(0.0)).collect();
    for (&j, x) in free.iter().zip(sol.x) {
        out[j] = x;
    }
    Ok(out)
}

/// `(1/|S_i|) sum (s - v_i)^2` for sampled variables, `None` otherwise.
pub fn reestimate_variances(state: &EstimatorState, v: &[f64]) -> Result<Vec<Option<f64>>> {
    if v.len() != state.n_vars() {
        return Err(Error::invalid(format!(
            "mean vector has length {}, state has {} variables",
            v.len(),
            state.n_vars()
        )));
    }
    Ok(state
        .variables
        .iter()
        .zip(v)
        .map(|(var, &m)| {
            let s = var.samples();
            (!s.is_empty()).then(|| s.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / s.len() as f64)
        })
        .collect())
}

/// Constrained means then re-estimated variances; the input is not modified.
pub fn refit(state: &EstimatorState) -> Result<EstimatorState> {
    let qp = build_qp(state)?;
    let v = solve_and_complete(&qp)?;
    let variances = reestimate_variances(state, &v)?;
    let mut out = state.clone();
    for (i, var) in variances.iter().enumerate() {
        out.set_model(i, var.map(|s2| NormalParams { mean: v[i], variance: s2 }));
    }
    out.constrained_means = Some(v);
    out.reestimated_variances = Some(variances);
    Ok(out)
}

pub(crate) fn solve_and_complete(qp: &QpProblem) -> Result<Vec<f64>> {
    let v = solve_qp(qp, DEFAULT_QP_TOL)?;
    let partial: Vec<Option<f64>> = v
        .iter()
        .zip(&qp.weights)
        .map(|(&x, &w)| (w > 0.0).then_some(x))
        .collect();
    complete_zero_weight(&partial, &qp.constraints)
}

/// Summary-level refit: constrained means and, for sampled variables, the
/// variance around them via `var + (mean - v)^2`.
pub(crate) fn refit_summaries(
    summaries: &[Summary],
    constraints: &ConstraintSet,
) -> Result<(Vec<f64>, Vec<Option<f64>>)> {
    let qp = qp_from_summaries(summaries, constraints)?;
    let v = solve_and_complete(&qp)?;
    let var = summaries
        .iter()
        .zip(&v)
        .map(|(s, &m)| (s.count > 0).then_some(s.variance + (s.mean - m) * (s.mean - m)))
        .collect();
    Ok((v, var))
}
