//! Reflected heat kernel on `[0,1]^D` by the method of images, and the scores
//! built from it.
//!
//! The `D`-dimensional kernel with an `ℓ∞` lattice cutoff factorises exactly
//! into a product of one-dimensional image sums, so everything here is
//! evaluated coordinate by coordinate in the log domain.

mod subspace;

pub use subspace::{score_subspace_oracle, support_nodes, OracleQuadrature};

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{image_coord, image_lattice};
use crate::targets::EmpiricalMeasure;

/// Atoms whose log-weight falls this far below the best are skipped
/// (`e^-46 ≈ 1e-20`).
pub const LOG_WEIGHT_CUTOFF: f64 = 46.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    /// Target truncation error of the image series.
    pub tol: f64,
    pub k_min: usize,
    pub k_max: usize,
    /// Evaluate in the log domain. Kept for the record; linear-domain
    /// evaluation is not implemented.
    pub log_domain: bool,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            k_min: 1,
            k_max: 64,
            log_domain: true,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::Config(format!("kernel tol must lie in (0,1), got {}", self.tol)));
        }
        if self.k_min > self.k_max {
            return Err(Error::Config("kernel k_min exceeds k_max".into()));
        }
        if !self.log_domain {
            return Err(Error::Unsupported("only log-domain kernel evaluation is available".into()));
        }
        Ok(())
    }
}

/// Lattice cutoff chosen for a time and tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cutoff {
    pub k: usize,
    /// The tolerance asked for a cutoff beyond `k_max`; `k` was clamped.
    pub saturated: bool,
}

/// Smallest truncation level `ρ >= 1` with `(4e)^D ρ^{D/2} e^{-ρ} < tol`.
pub fn truncation_level(dim: usize, tol: f64) -> f64 {
    let d = dim as f64;
    let log_c = d * (4.0f64.ln() + 1.0);
    let target = tol.ln();
    let mut rho = 1.0f64;
    while log_c + 0.5 * d * rho.ln() - rho >= target {
        rho += 1.0;
    }
    rho
}

/// Lattice radius `√(2t(D+2ρ))` covering the Brownian excursion at level `ρ`.
pub fn excursion_radius(t: f64, dim: usize, level: f64) -> f64 {
    (2.0 * t * (dim as f64 + 2.0 * level)).sqrt()
}

/// `ℓ∞` cutoff used by the truncated score `s_0^K`: all `z` with
/// `|z|_∞ <= √(2t(D+2K))`.
pub fn truncation_cutoff(t: f64, dim: usize, level: f64) -> usize {
    excursion_radius(t, dim, level).floor() as usize
}

/// Image cutoff for time `t`: the excursion radius at the tolerance level,
/// rounded up, at least one reflection, clamped to `[k_min, k_max]`.
/// Monotone non-increasing in `tol` and non-decreasing in `t`.
pub fn choose_cutoff(t: f64, dim: usize, cfg: &KernelConfig) -> Result<Cutoff> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("kernel time must be positive and finite, got {t}")));
    }
    if dim == 0 {
        return Err(Error::Domain("dimension must be >= 1".into()));
    }
    let level = truncation_level(dim, cfg.tol);
    let wanted = (excursion_radius(t, dim, level).ceil() as usize).max(1);
    let saturated = wanted > cfg.k_max;
    Ok(Cutoff {
        k: wanted.clamp(cfg.k_min, cfg.k_max),
        saturated,
    })
}

#[inline]
fn half_log_two_pi_t(t: f64) -> f64 {
    0.5 * (2.0 * PI * t).ln()
}

/// Log of the 1-D reflected transition density
/// `(2πt)^{-1/2} Σ_{|z|<=K} exp(-(R_z(x)+z-y)²/2t)`. Requires `t > 0`.
pub fn log_q1d(y: f64, x: f64, t: f64, k_cut: usize) -> f64 {
    let k = k_cut as i64;
    let inv = 0.5 / t;
    let mut best = f64::NEG_INFINITY;
    for z in -k..=k {
        let r = image_coord(z, x) - y;
        best = best.max(-r * r * inv);
    }
    let mut sum = 0.0;
    for z in -k..=k {
        let r = image_coord(z, x) - y;
        sum += (-r * r * inv - best).exp();
    }
    best + sum.ln() - half_log_two_pi_t(t)
}

/// Log density and its `x`-derivative for one coordinate.
#[inline]
pub fn log_q1d_with_grad(y: f64, x: f64, t: f64, k_cut: usize) -> (f64, f64) {
    let k = k_cut as i64;
    let inv = 0.5 / t;
    let mut best = f64::NEG_INFINITY;
    for z in -k..=k {
        let r = image_coord(z, x) - y;
        best = best.max(-r * r * inv);
    }
    let mut sum = 0.0;
    let mut acc = 0.0;
    for z in -k..=k {
        let r = image_coord(z, x) - y;
        let w = (-r * r * inv - best).exp();
        sum += w;
        // d/dx of the image coordinate is (-1)^z
        if z.rem_euclid(2) == 0 {
            acc += w * r;
        } else {
            acc -= w * r;
        }
    }
    (best + sum.ln() - half_log_two_pi_t(t), -acc / (sum * t))
}

fn check_pair(y: &[f64], x: &[f64], t: f64) -> Result<()> {
    if y.len() != x.len() || x.is_empty() {
        return Err(Error::Domain(format!("dimension mismatch: {} vs {}", y.len(), x.len())));
    }
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("kernel time must be positive and finite, got {t}")));
    }
    Ok(())
}

/// `log q_t(y, x)` on `[0,1]^D` with the cutoff from `choose_cutoff`.
pub fn log_q(y: &[f64], x: &[f64], t: f64, cfg: &KernelConfig) -> Result<f64> {
    check_pair(y, x, t)?;
    let k = choose_cutoff(t, x.len(), cfg)?.k;
    Ok(y.iter().zip(x).map(|(&yi, &xi)| log_q1d(yi, xi, t, k)).sum())
}

/// `log q_t(y, x)` as one sum over the `D`-dimensional lattice
/// `|z|_∞ <= k_cut` (reference for the product factorisation).
pub fn log_q_lattice(y: &[f64], x: &[f64], t: f64, k_cut: usize) -> Result<f64> {
    check_pair(y, x, t)?;
    let exps: Vec<f64> = image_lattice(x.len(), k_cut)?
        .iter()
        .map(|z| {
            -z.0.iter()
                .zip(x.iter().zip(y))
                .map(|(&zi, (&xi, &yi))| (image_coord(zi, xi) - yi).powi(2))
                .sum::<f64>()
                / (2.0 * t)
        })
        .collect();
    Ok(log_sum_exp(&exps) - x.len() as f64 * half_log_two_pi_t(t))
}

/// `∇_x log q_t(y, x)`.
pub fn grad_log_q(y: &[f64], x: &[f64], t: f64, cfg: &KernelConfig) -> Result<Vec<f64>> {
    check_pair(y, x, t)?;
    let k = choose_cutoff(t, x.len(), cfg)?.k;
    Ok(y.iter().zip(x).map(|(&yi, &xi)| log_q1d_with_grad(yi, xi, t, k).1).collect())
}

/// Writes `∇_x log q_t(y, x)` at a fixed cutoff into `out`.
#[inline]
pub(crate) fn grad_log_q_into(y: &[f64], x: &[f64], t: f64, k_cut: usize, out: &mut [f64]) {
    for ((o, &yi), &xi) in out.iter_mut().zip(y).zip(x) {
        *o = log_q1d_with_grad(yi, xi, t, k_cut).1;
    }
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|a| (a - m).exp()).sum::<f64>().ln()
}

/// A score value with the log density it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreEval {
    pub value: Vec<f64>,
    pub log_density: f64,
    pub cutoff_used: usize,
    /// The cutoff was clamped at `k_max`.
    pub saturated: bool,
}

/// Squared distance from `y` to the nearest image of `x` in one coordinate.
#[inline]
fn nearest_image_sq(y: f64, x: f64) -> f64 {
    let d = (x - y).abs().min(x + y).min(2.0 - x - y);
    d * d
}

/// Truncated score `s_0^K(x,t) = ∇p_t^K / p_t^K` and `log p_t^K(x)` of an
/// empirical measure, as a posterior-weighted average of `∇_x log q_t(y_j, x)`.
pub fn score_empirical(mu: &EmpiricalMeasure, x: &[f64], t: f64, cfg: &KernelConfig) -> Result<ScoreEval> {
    if x.len() != mu.dim() {
        return Err(Error::Domain(format!("point has dimension {}, target {}", x.len(), mu.dim())));
    }
    let cut = choose_cutoff(t, x.len(), cfg)?;
    let mut eval = score_empirical_at_cutoff(mu, x, t, cut.k);
    eval.saturated = cut.saturated;
    Ok(eval)
}

/// `score_empirical` with an explicit lattice cutoff. Requires `t > 0`.
pub fn score_empirical_at_cutoff(mu: &EmpiricalMeasure, x: &[f64], t: f64, k_cut: usize) -> ScoreEval {
    let dim = x.len();
    let inv = 0.5 / t;
    // Cheap bracket of each log-weight from the nearest image alone; the full
    // sum adds at most ln(2K+1) per coordinate.
    let slack = dim as f64 * ((2 * k_cut + 1) as f64).ln();
    let lower: Vec<f64> = mu
        .points
        .iter()
        .zip(&mu.weights)
        .map(|(y, &w)| {
            if w <= 0.0 {
                return f64::NEG_INFINITY;
            }
            w.ln() - y.iter().zip(x).map(|(&yi, &xi)| nearest_image_sq(yi, xi)).sum::<f64>() * inv
        })
        .collect();
    let best_lower = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let threshold = best_lower - LOG_WEIGHT_CUTOFF;

    let mut log_w = Vec::new();
    let mut grads = Vec::new();
    for ((y, &w), &lo) in mu.points.iter().zip(&mu.weights).zip(&lower) {
        if lo + slack < threshold {
            continue;
        }
        let mut lw = w.ln();
        for (&yi, &xi) in y.iter().zip(x) {
            let (lq, g) = log_q1d_with_grad(yi, xi, t, k_cut);
            lw += lq;
            grads.push(g);
        }
        log_w.push(lw);
    }
    let lse = log_sum_exp(&log_w);
    let mut value = vec![0.0; dim];
    for (j, &lw) in log_w.iter().enumerate() {
        let p = (lw - lse).exp();
        for (v, g) in value.iter_mut().zip(&grads[j * dim..(j + 1) * dim]) {
            *v += p * g;
        }
    }
    ScoreEval {
        value,
        log_density: lse,
        cutoff_used: k_cut,
        saturated: false,
    }
}
