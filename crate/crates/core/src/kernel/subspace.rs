//! Score of a subspace-supported density by quadrature over its support.
//!
//! For each image `x_z` split `x_z - v0` into a slice coordinate
//! `x* = A^T(x_z - v0)` and a normal part `x⊥`. The image contributes
//! `h1 = e^{-|x⊥|²/2t} f1(x*)` with `f1(x*) = ∫ q(u) e^{-|x*-u|²/2t} du`, and its
//! gradient weight is `h1 · (x⊥ + A(x* - m))/t` where `m` is the mean of `u`
//! under the same Gaussian-tilted density.

use crate::error::{Error, Result};
use crate::geometry::{image_coord, image_lattice, CubePoint};
use crate::quadrature::GaussLegendre;
use crate::targets::{EmpiricalMeasure, SubspaceDensity};

use super::{choose_cutoff, half_log_two_pi_t, log_sum_exp, KernelConfig, ScoreEval, LOG_WEIGHT_CUTOFF};

/// Quadrature layout for the support integrals.
#[derive(Debug, Clone)]
pub struct OracleQuadrature {
    pub nodes_per_panel: usize,
    /// Panels are at most `panel_scale · √t` wide.
    pub panel_scale: f64,
    /// Integration window half-width in units of `√t` around the nearest
    /// support point.
    pub window_scale: f64,
    /// More panels than this per axis marks the result as under-resolved.
    pub max_panels: usize,
    rule: GaussLegendre,
}

impl OracleQuadrature {
    pub fn new(nodes_per_panel: usize) -> Self {
        Self {
            nodes_per_panel,
            panel_scale: 8.0,
            window_scale: 10.0,
            max_panels: 256,
            rule: GaussLegendre::new(nodes_per_panel),
        }
    }
}

impl Default for OracleQuadrature {
    fn default() -> Self {
        Self::new(64)
    }
}

/// Quadrature nodes (slice coordinates) and log-weights covering the part of
/// the support that matters for a query at slice point `xs`.
struct Grid {
    points: Vec<Vec<f64>>,
    log_w: Vec<f64>,
    under_resolved: bool,
}

/// Nodes on `[lo, hi]`, split at `kink` when it is interior (the radial
/// profile is not differentiable at the support centre).
fn axis_nodes(lo: f64, hi: f64, kink: f64, t: f64, quad: &OracleQuadrature) -> (Vec<(f64, f64)>, bool) {
    if kink > lo && kink < hi {
        let (mut a, ua) = axis_nodes(lo, kink, f64::NAN, t, quad);
        let (b, ub) = axis_nodes(kink, hi, f64::NAN, t, quad);
        a.extend(b);
        return (a, ua || ub);
    }
    let width = hi - lo;
    let want = (width / (quad.panel_scale * t.sqrt())).ceil().max(1.0) as usize;
    let panels = want.min(quad.max_panels);
    let h = width / panels as f64;
    let mut out = Vec::with_capacity(panels * quad.nodes_per_panel);
    for k in 0..panels {
        let a = lo + k as f64 * h;
        out.extend(quad.rule.mapped(a, a + h));
    }
    (out, want > quad.max_panels)
}

fn build_grid(mu: &SubspaceDensity, xs: &[f64], t: f64, quad: &OracleQuadrature) -> Grid {
    let d = mu.intrinsic_dim();
    let r = mu.radius;
    let half = quad.window_scale * t.sqrt();
    // window around the support point nearest to xs
    let off: Vec<f64> = xs.iter().zip(&mu.center).map(|(a, c)| a - c).collect();
    let norm = off.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = if norm > r { r / norm } else { 1.0 };
    let mut axes = Vec::with_capacity(d);
    let mut under = false;
    for (k, o) in off.iter().enumerate() {
        let c = mu.center[k];
        let near = c + o * scale;
        let lo = (near - half).max(c - r);
        let hi = (near + half).min(c + r);
        let (nodes, u) = axis_nodes(lo, hi, c, t, quad);
        under |= u;
        axes.push(nodes);
    }
    let mut points = Vec::new();
    let mut log_w = Vec::new();
    match d {
        1 => {
            for &(u, w) in &axes[0] {
                let lq = mu.log_density(&[u]);
                if lq.is_finite() {
                    points.push(vec![u]);
                    log_w.push(w.ln() + lq);
                }
            }
        }
        _ => {
            for &(u0, w0) in &axes[0] {
                for &(u1, w1) in &axes[1] {
                    let lq = mu.log_density(&[u0, u1]);
                    if lq.is_finite() {
                        points.push(vec![u0, u1]);
                        log_w.push((w0 * w1).ln() + lq);
                    }
                }
            }
        }
    }
    Grid {
        points,
        log_w,
        under_resolved: under,
    }
}

/// Per-image pieces: log `h1` (without `(2πt)^{-D/2}`) and the normalised
/// gradient weight `(x⊥ + A(x* - m))/t`.
fn image_term(mu: &SubspaceDensity, xz: &[f64], t: f64, quad: &OracleQuadrature) -> (f64, Vec<f64>, bool) {
    let frame = &mu.frame;
    let d = mu.intrinsic_dim();
    let xs = frame.pull_back(xz);
    let perp = frame.normal_component(xz);
    let perp_sq: f64 = perp.iter().map(|v| v * v).sum();
    let grid = build_grid(mu, &xs, t, quad);
    if grid.points.is_empty() {
        return (f64::NEG_INFINITY, vec![0.0; xz.len()], grid.under_resolved);
    }
    let inv = 0.5 / t;
    let exps: Vec<f64> = grid
        .points
        .iter()
        .zip(&grid.log_w)
        .map(|(u, lw)| lw - u.iter().zip(&xs).map(|(a, b)| (a - b).powi(2)).sum::<f64>() * inv)
        .collect();
    let lse = log_sum_exp(&exps);
    let mut mean = vec![0.0; d];
    for (u, e) in grid.points.iter().zip(&exps) {
        let p = (e - lse).exp();
        for (m, ui) in mean.iter_mut().zip(u) {
            *m += p * ui;
        }
    }
    let diff: Vec<f64> = xs.iter().zip(&mean).map(|(a, b)| a - b).collect();
    let tangent = frame.push_forward(&diff);
    let g: Vec<f64> = perp
        .iter()
        .zip(tangent.iter().zip(&frame.shift))
        .map(|(p, (tg, v))| (p + tg - v) / t)
        .collect();
    (lse - perp_sq * inv, g, grid.under_resolved)
}

/// Truncated score `s_0^K` and `log p_t^K` of a subspace density, by
/// quadrature over its support. Needs `d <= 2`.
pub fn score_subspace_oracle(
    mu: &SubspaceDensity,
    x: &[f64],
    t: f64,
    cfg: &KernelConfig,
    quad: &OracleQuadrature,
) -> Result<ScoreEval> {
    let dim = mu.ambient_dim();
    if x.len() != dim {
        return Err(Error::Domain(format!("point has dimension {}, target {dim}", x.len())));
    }
    if mu.intrinsic_dim() > 2 {
        return Err(Error::Unsupported(format!(
            "support quadrature needs d <= 2, got d={}",
            mu.intrinsic_dim()
        )));
    }
    let cut = choose_cutoff(t, dim, cfg)?;
    let lattice = image_lattice(dim, cut.k)?;

    // Exact distance from each image to the support ball bounds its weight.
    let log_mass_cap = mu.p_max.ln() + ball_volume(mu.intrinsic_dim(), mu.radius).ln();
    let mut candidates: Vec<(f64, Vec<f64>, Vec<bool>)> = lattice
        .iter()
        .map(|z| {
            let xz: Vec<f64> = z.0.iter().zip(x).map(|(&zi, &xi)| image_coord(zi, xi)).collect();
            let odd: Vec<bool> = z.0.iter().map(|zi| zi.rem_euclid(2) == 1).collect();
            (support_dist_sq(mu, &xz), xz, odd)
        })
        .collect();
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0));

    let inv = 0.5 / t;
    let mut best = f64::NEG_INFINITY;
    let mut logs = Vec::new();
    let mut grads = Vec::new();
    let mut under = false;
    for (dist_sq, xz, odd) in &candidates {
        if log_mass_cap - dist_sq * inv < best - LOG_WEIGHT_CUTOFF {
            break;
        }
        let (lh, g, u) = image_term(mu, xz, t, quad);
        under |= u;
        if lh == f64::NEG_INFINITY {
            continue;
        }
        best = best.max(lh);
        logs.push(lh);
        // chain rule through x ↦ x_z flips odd coordinates
        grads.push(g.iter().zip(odd).map(|(gi, &o)| if o { -gi } else { *gi }).collect::<Vec<f64>>());
    }
    if logs.is_empty() {
        return Err(Error::Numerical("subspace density has no mass within reach of the query".into()));
    }
    let lse = log_sum_exp(&logs);
    let mut value = vec![0.0; dim];
    for (l, g) in logs.iter().zip(&grads) {
        let p = (l - lse).exp();
        for (v, gi) in value.iter_mut().zip(g) {
            *v -= p * gi;
        }
    }
    Ok(ScoreEval {
        value,
        log_density: lse - dim as f64 * half_log_two_pi_t(t),
        cutoff_used: cut.k,
        saturated: cut.saturated || under,
    })
}

/// The support discretised at time scale `t`: quadrature nodes over the whole
/// support, pushed into the cube and weighted by `q(u)·w`. Scoring this
/// measure with `score_empirical` reproduces the oracle while reusing the
/// per-coordinate image sums, which is much cheaper at large `t` than
/// summing over the full image lattice.
pub fn support_nodes(mu: &SubspaceDensity, t: f64, quad: &OracleQuadrature) -> Result<EmpiricalMeasure> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("time must be positive and finite, got {t}")));
    }
    if mu.intrinsic_dim() > 2 {
        return Err(Error::Unsupported(format!(
            "support quadrature needs d <= 2, got d={}",
            mu.intrinsic_dim()
        )));
    }
    let axes: Vec<Vec<(f64, f64)>> = mu
        .center
        .iter()
        .map(|&c| axis_nodes(c - mu.radius, c + mu.radius, c, t, quad).0)
        .collect();
    let mut nodes: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut push = |u: Vec<f64>, w: f64| {
        let q = mu.density(&u);
        if q > 0.0 && w > 0.0 {
            nodes.push((u, q * w));
        }
    };
    match axes.len() {
        1 => axes[0].iter().for_each(|&(u, w)| push(vec![u], w)),
        _ => {
            for &(u0, w0) in &axes[0] {
                for &(u1, w1) in &axes[1] {
                    push(vec![u0, u1], w0 * w1);
                }
            }
        }
    }
    let total: f64 = nodes.iter().map(|n| n.1).sum();
    if !(total > 0.0) {
        return Err(Error::Numerical("support quadrature found no mass".into()));
    }
    let points = nodes
        .iter()
        .map(|(u, _)| CubePoint::new(mu.frame.push_forward(u)))
        .collect::<Result<Vec<_>>>()?;
    let weights = nodes.iter().map(|n| n.1 / total).collect();
    EmpiricalMeasure::new(points, weights)
}

fn ball_volume(d: usize, r: f64) -> f64 {
    match d {
        1 => 2.0 * r,
        _ => std::f64::consts::PI * r * r,
    }
}

fn support_dist_sq(mu: &SubspaceDensity, xz: &[f64]) -> f64 {
    let xs = mu.frame.pull_back(xz);
    let perp: f64 = mu.frame.normal_component(xz).iter().map(|v| v * v).sum();
    let radial = xs.iter().zip(&mu.center).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt();
    perp + (radial - mu.radius).max(0.0).powi(2)
}
