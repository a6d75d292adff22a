//! Diagonal-weight least squares under `A x <= b`.
//!
//! Two routes: weighted pool-adjacent-violators for the non-increasing chain,
//! and Hildreth's dual coordinate ascent for arbitrary rows.

use crate::error::{Error, Result};

/// Weighted least-squares fit that is non-increasing in index order.
/// All weights must be positive.
pub fn pava_non_increasing(targets: &[f64], weights: &[f64]) -> Vec<f64> {
    debug_assert_eq!(targets.len(), weights.len());
    // (weight, weighted sum, length)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(targets.len());
    for (&y, &w) in targets.iter().zip(weights) {
        let mut cur = (w, w * y, 1usize);
        while let Some(&(pw, ps, pl)) = blocks.last() {
            if ps / pw < cur.1 / cur.0 {
                blocks.pop();
                cur = (pw + cur.0, ps + cur.1, pl + cur.2);
            } else {
                break;
            }
        }
        blocks.push(cur);
    }
    let mut out = Vec::with_capacity(targets.len());
    for (w, s, len) in blocks {
        let m = s / w;
        out.extend(std::iter::repeat_n(m, len));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualOptions {
    /// Bound on constraint violation and on complementary slackness.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for DualOptions {
    fn default() -> Self {
        Self {
            tol: 1e-11,
            max_sweeps: 200_000,
        }
    }
}

/// Solution with its multipliers, so callers can warm-start.
#[derive(Debug, Clone)]
pub(crate) struct DualSolution {
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
}

/// Minimizes `1/2 sum d_i (x_i - t_i)^2` subject to `rows · x <= rhs` by
/// cyclic coordinate ascent on the dual (Hildreth). `d` must be positive.
/// Stops once the worst violation and the worst slack of an active row are
/// both below `tol`; stationarity and `lambda >= 0` hold by construction.
pub(crate) fn hildreth(
    d: &[f64],
    t: &[f64],
    rows: &[Vec<f64>],
    rhs: &[f64],
    warm: Option<&[f64]>,
    opts: &DualOptions,
) -> Result<DualSolution> {
    let m = rows.len();
    let inv_d: Vec<f64> = d.iter().map(|w| 1.0 / w).collect();
    let q: Vec<f64> = rows
        .iter()
        .map(|r| r.iter().zip(&inv_d).map(|(a, id)| a * a * id).sum())
        .collect();
    // sparse row supports keep sweeps cheap for chain-like rows
    let support: Vec<Vec<(usize, f64)>> = rows
        .iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .filter(|(_, a)| **a != 0.0)
                .map(|(j, &a)| (j, a))
                .collect()
        })
        .collect();

    for k in 0..m {
        if q[k] == 0.0 && rhs[k] < -opts.tol {
            return Err(Error::Infeasible(format!(
                "row {k} reads 0 <= {}",
                rhs[k]
            )));
        }
    }

    let mut lambda = match warm {
        Some(l) if l.len() == m => l.to_vec(),
        _ => vec![0.0; m],
    };
    let mut x = t.to_vec();
    for k in 0..m {
        if lambda[k] != 0.0 {
            for &(j, a) in &support[k] {
                x[j] -= lambda[k] * a * inv_d[j];
            }
        }
    }
    let row_dot = |k: usize, x: &[f64]| support[k].iter().map(|&(j, a)| a * x[j]).sum::<f64>();

    let mut violation = f64::INFINITY;
    for _ in 0..opts.max_sweeps {
        for k in 0..m {
            if q[k] == 0.0 {
                continue;
            }
            let g = row_dot(k, &x) - rhs[k];
            let new = (lambda[k] + g / q[k]).max(0.0);
            let delta = new - lambda[k];
            if delta != 0.0 {
                for &(j, a) in &support[k] {
                    x[j] -= delta * a * inv_d[j];
                }
                lambda[k] = new;
            }
        }
        violation = 0.0;
        let mut slack = 0.0f64;
        for k in 0..m {
            if q[k] == 0.0 {
                continue;
            }
            let g = row_dot(k, &x) - rhs[k];
            violation = violation.max(g);
            // scale-free complementarity: active rows must be tight
            if lambda[k] > 0.0 {
                slack = slack.max(g.abs());
            }
        }
        if violation <= opts.tol && slack <= opts.tol {
            return Ok(DualSolution { x, lambda });
        }
        if !x.iter().all(|v| v.is_finite()) {
            break;
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_sweeps,
        violation,
        best: x,
    })
}

/// Convenience wrapper for homogeneous rows (`rhs = 0`).
pub(crate) fn hildreth_homogeneous(
    d: &[f64],
    t: &[f64],
    rows: &[Vec<f64>],
    warm: Option<&[f64]>,
    opts: &DualOptions,
) -> Result<DualSolution> {
    let rhs = vec![0.0; rows.len()];
    hildreth(d, t, rows, &rhs, warm, opts)
}

/// Weighted squared distance `sum w_i (v_i - t_i)^2`.
pub fn objective(weights: &[f64], targets: &[f64], v: &[f64]) -> f64 {
    weights
        .iter()
        .zip(targets)
        .zip(v)
        .map(|((w, t), x)| w * (x - t) * (x - t))
        .sum()
}
