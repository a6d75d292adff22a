//! Gauss rules for expectations under the standard normal density.
//!
//! Nodes and weights come from the Golub–Welsch eigenvalue method applied to
//! the Jacobi matrix of the weight's orthogonal polynomials. The half-range
//! rule (weight `phi(y)` on `[0, inf)`) has no classical recurrence, so its
//! coefficients are generated by the discretized Stieltjes procedure over a
//! fine composite Gauss–Legendre grid.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights with `sum(w_i f(x_i)) ~ E[f]` under the rule's measure.
#[derive(Debug, Clone)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Builds the rule from Jacobi matrix coefficients (`diag`, `off`) and the
/// total mass of the measure.
fn golub_welsch(diag: &[f64], off: &[f64], mass: f64) -> GaussRule {
    let n = diag.len();
    let mut j = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        j[(i, i)] = diag[i];
        if i + 1 < n {
            j[(i, i + 1)] = off[i];
            j[(i + 1, i)] = off[i];
        }
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], mass * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (nodes, weights) = pairs.into_iter().unzip();
    GaussRule { nodes, weights }
}

/// Gauss–Legendre on `[-1, 1]`.
fn gauss_legendre(n: usize) -> GaussRule {
    let diag = vec![0.0; n];
    let off: Vec<f64> = (1..n)
        .map(|k| {
            let k = k as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        })
        .collect();
    golub_welsch(&diag, &off, 2.0)
}

fn build_full(n: usize) -> GaussRule {
    let diag = vec![0.0; n];
    let off: Vec<f64> = (1..n).map(|k| (k as f64).sqrt()).collect();
    let mut rule = golub_welsch(&diag, &off, 1.0);
    // symmetric by construction; enforce exactly so odd integrands vanish
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (rule.nodes[j] - rule.nodes[i]);
        let w = 0.5 * (rule.weights[i] + rule.weights[j]);
        rule.nodes[i] = -x;
        rule.nodes[j] = x;
        rule.weights[i] = w;
        rule.weights[j] = w;
    }
    if n % 2 == 1 {
        rule.nodes[n / 2] = 0.0;
    }
    rule
}

const HALF_RANGE_CUTOFF: f64 = 26.0;
const HALF_RANGE_PANELS: usize = 520;
const PANEL_POINTS: usize = 20;

fn build_half(n: usize) -> GaussRule {
    let gl = gauss_legendre(PANEL_POINTS);
    let h = HALF_RANGE_CUTOFF / HALF_RANGE_PANELS as f64;
    let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let mut xs = Vec::with_capacity(HALF_RANGE_PANELS * PANEL_POINTS);
    let mut ws = Vec::with_capacity(xs.capacity());
    for p in 0..HALF_RANGE_PANELS {
        let mid = (p as f64 + 0.5) * h;
        for (&t, &w) in gl.nodes.iter().zip(&gl.weights) {
            let y = mid + 0.5 * h * t;
            xs.push(y);
            ws.push(0.5 * h * w * norm * (-0.5 * y * y).exp());
        }
    }
    let mass: f64 = ws.iter().sum();

    // Stieltjes in orthonormal form: q_{k+1} = ((x - a_k) q_k - b_k q_{k-1}) / b_{k+1}
    let mut diag = Vec::with_capacity(n);
    let mut off = Vec::with_capacity(n.saturating_sub(1));
    let mut prev = vec![0.0; xs.len()];
    let mut cur = vec![1.0 / mass.sqrt(); xs.len()];
    let mut b_prev = 0.0;
    for k in 0..n {
        let a: f64 = xs
            .iter()
            .zip(&ws)
            .zip(&cur)
            .map(|((x, w), q)| w * x * q * q)
            .sum();
        diag.push(a);
        if k + 1 == n {
            break;
        }
        let mut next: Vec<f64> = (0..xs.len())
            .map(|i| (xs[i] - a) * cur[i] - b_prev * prev[i])
            .collect();
        let b = next
            .iter()
            .zip(&ws)
            .map(|(r, w)| w * r * r)
            .sum::<f64>()
            .sqrt();
        next.iter_mut().for_each(|r| *r /= b);
        off.push(b);
        b_prev = b;
        prev = std::mem::replace(&mut cur, next);
    }
    golub_welsch(&diag, &off, mass)
}

type Cache = Mutex<HashMap<(bool, usize), Arc<GaussRule>>>;

fn cached(half: bool, n: usize) -> Arc<GaussRule> {
    static CACHE: OnceLock<Cache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(rule) = cache.lock().unwrap().get(&(half, n)) {
        return Arc::clone(rule);
    }
    let rule = Arc::new(if half { build_half(n) } else { build_full(n) });
    cache
        .lock()
        .unwrap()
        .entry((half, n))
        .or_insert(rule)
        .clone()
}

/// `n`-point rule for `E[f(Z)]`, `Z ~ N(0, 1)`.
pub fn gauss_hermite(n: usize) -> Arc<GaussRule> {
    assert!(n >= 1, "quadrature needs at least one node");
    cached(false, n)
}

/// `n`-point rule for `∫_0^inf phi(y) f(y) dy`; total mass 1/2.
pub fn half_range_hermite(n: usize) -> Arc<GaussRule> {
    assert!(n >= 1, "quadrature needs at least one node");
    cached(true, n)
}
