//! Exact reference computations for small instances.
//!
//! These are independent of the Monte Carlo engine and are what the
//! statistical checks are measured against.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};

/// Largest walk grid the Markov solvers accept.
pub const MAX_GRID_STATES: usize = 100_000;
/// Largest event set the brute-force extension enumerator accepts.
pub const MAX_ENUMERATED_EVENTS: usize = 10;

/// Grid of the fixed-step walk: `p = k·d` for `k = 0..=n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkGrid {
    pub n: usize,
    pub start: usize,
}

impl WalkGrid {
    /// Requires `1/d` and `p0/d` to be integers (to 1e-9 relative).
    pub fn new(p0: f64, d: f64) -> Result<Self> {
        if !(d > 0.0 && d < 1.0) || !(0.0..=1.0).contains(&p0) {
            return Err(validation("need 0 < d < 1 and 0 ≤ p0 ≤ 1"));
        }
        let n_f = 1.0 / d;
        if n_f > MAX_GRID_STATES as f64 {
            return Err(Error::TooLarge(format!(
                "grid of {n_f:.0} states exceeds the limit of {MAX_GRID_STATES}"
            )));
        }
        let n = n_f.round();
        let k = (p0 / d).round();
        if (n - n_f).abs() > 1e-9 * n_f || (k - p0 / d).abs() > 1e-9 * n_f {
            return Err(validation(format!("1/d and p0/d must be integers (d = {d}, p0 = {p0})")));
        }
        Ok(WalkGrid { n: n as usize, start: k as usize })
    }
}

/// Solves `a_k x_{k-1} + b_k x_k + c_k x_{k+1} = r_k` (Thomas algorithm).
fn thomas(a: &[f64], b: &[f64], c: &[f64], r: &[f64]) -> Vec<f64> {
    let m = b.len();
    let mut cp = vec![0.0; m];
    let mut rp = vec![0.0; m];
    cp[0] = c[0] / b[0];
    rp[0] = r[0] / b[0];
    for i in 1..m {
        let den = b[i] - a[i] * cp[i - 1];
        cp[i] = c[i] / den;
        rp[i] = (r[i] - a[i] * rp[i - 1]) / den;
    }
    let mut x = vec![0.0; m];
    x[m - 1] = rp[m - 1];
    for i in (0..m - 1).rev() {
        x[i] = rp[i] - cp[i] * x[i + 1];
    }
    x
}

/// Exact absorption probability and mean duration of the ±d walk.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkovSolution {
    pub grid: WalkGrid,
    /// Probability of absorbing at `p = 1`.
    pub absorb_high: f64,
    /// Expected number of steps to absorption.
    pub expected_steps: f64,
}

/// Solves `P(k) = ½P(k+1) + ½P(k−1)`, `P(0) = 0`, `P(n) = 1` and
/// `E(k) = 1 + ½E(k+1) + ½E(k−1)`, `E(0) = E(n) = 0` on the walk grid.
pub fn markov_absorption(p0: f64, d: f64) -> Result<MarkovSolution> {
    let grid = WalkGrid::new(p0, d)?;
    if grid.start == 0 || grid.start == grid.n {
        let absorb_high = if grid.start == grid.n { 1.0 } else { 0.0 };
        return Ok(MarkovSolution { grid, absorb_high, expected_steps: 0.0 });
    }
    let m = grid.n - 1; // interior states 1..n-1
    let a = vec![-0.5; m];
    let b = vec![1.0; m];
    let c = vec![-0.5; m];
    let mut r = vec![0.0; m];
    r[m - 1] = 0.5; // P(n) = 1 moved to the right-hand side
    let p = thomas(&a, &b, &c, &r);
    let e = thomas(&a, &b, &c, &vec![1.0; m]);
    Ok(MarkovSolution { grid, absorb_high: p[grid.start - 1], expected_steps: e[grid.start - 1] })
}

/// Exact distribution of `p` after `n_steps` shifts of a fixed bifurcation,
/// with absorbing boundaries. Index `k` holds the probability of `p = k·d`.
pub fn walk_distribution(p0: f64, d: f64, n_steps: usize) -> Result<(WalkGrid, Vec<f64>)> {
    let grid = WalkGrid::new(p0, d)?;
    let mut dist = vec![0.0; grid.n + 1];
    dist[grid.start] = 1.0;
    let mut next = vec![0.0; grid.n + 1];
    for _ in 0..n_steps {
        next.iter_mut().for_each(|x| *x = 0.0);
        next[0] = dist[0];
        next[grid.n] += dist[grid.n];
        for k in 1..grid.n {
            next[k - 1] += 0.5 * dist[k];
            next[k + 1] += 0.5 * dist[k];
        }
        std::mem::swap(&mut dist, &mut next);
    }
    Ok((grid, dist))
}

/// Mean and variance of `f(p)` after `n_steps` shifts.
pub fn walk_expectation(p0: f64, d: f64, n_steps: usize, f: impl Fn(f64) -> f64) -> Result<(f64, f64)> {
    let (grid, dist) = walk_distribution(p0, d, n_steps)?;
    let mut mean = 0.0;
    let mut second = 0.0;
    for (k, w) in dist.iter().enumerate() {
        let v = f(k as f64 / grid.n as f64);
        mean += w * v;
        second += w * v * v;
    }
    Ok((mean, (second - mean * mean).max(0.0)))
}

/// Counts and lists all linear extensions of the relation `precedes` over
/// `n` events by exhaustive search.
pub fn enumerate_extensions(n: usize, precedes: impl Fn(usize, usize) -> bool) -> Result<Vec<Vec<usize>>> {
    if n > MAX_ENUMERATED_EVENTS {
        return Err(Error::TooLarge(format!(
            "{n} events; enumeration is limited to {MAX_ENUMERATED_EVENTS}"
        )));
    }
    fn go(
        n: usize,
        precedes: &dyn Fn(usize, usize) -> bool,
        prefix: &mut Vec<usize>,
        used: &mut [bool],
        out: &mut Vec<Vec<usize>>,
    ) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        for i in 0..n {
            if used[i] || (0..n).any(|j| !used[j] && j != i && precedes(j, i)) {
                continue;
            }
            used[i] = true;
            prefix.push(i);
            go(n, precedes, prefix, used, out);
            prefix.pop();
            used[i] = false;
        }
    }
    let mut out = Vec::new();
    go(n, &precedes, &mut Vec::with_capacity(n), &mut vec![false; n], &mut out);
    Ok(out)
}

/// Components of `α|x⟩|y⟩ + β|y⟩|x⟩` with particle 2 written in the basis
/// `u = γx + δy`, `v = δ*x − γ*y`, multiplied out by hand.
/// Order: `|x u⟩, |x v⟩, |y u⟩, |y v⟩`.
pub fn singlet_expansion(alpha: Complex64, beta: Complex64, gamma: Complex64, delta: Complex64) -> [Complex64; 4] {
    [alpha * delta.conj(), -alpha * gamma, beta * gamma.conj(), beta * delta]
}

/// Correlation loss `1 − |⟨u′|u⟩|²` of the amplified scheme for real
/// amplitudes, from the explicit component vectors of `|u⟩` and `|u′⟩`.
pub fn amplified_loss(alpha: f64, beta: f64, alpha_new: f64, beta_new: f64) -> f64 {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let u = [(alpha + beta) * h, (alpha - beta) * h];
    let u_new = [(alpha_new + beta_new) * h, (alpha_new - beta_new) * h];
    let overlap = u[0] * u_new[0] + u[1] * u_new[1];
    1.0 - overlap * overlap
}
