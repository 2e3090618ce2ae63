//! Denoising score matching on a geometric time grid: one network per
//! interval `[t_i, t_{i+1})`, assembled into a piecewise estimator.

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{fold_in_place, CubePoint};
use crate::kernel::{choose_cutoff, grad_log_q_into, KernelConfig};
use crate::net::{NetSpec, ScoreModel, Workspace};
use crate::rng::{self, pair_index, Stream};
use crate::score::ScoreFunction;

/// `t_i = T_lo c^i`, `i = 0..=K`, with `t_K = T_hi` exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_lo: f64,
    pub t_hi: f64,
    pub c: f64,
    pub k_intervals: usize,
    pub times: Vec<f64>,
}

impl TimeGrid {
    /// Fewest intervals with ratio at most `c_max`; the ratio is then
    /// recomputed so the endpoints are hit exactly.
    pub fn new(t_lo: f64, t_hi: f64, c_max: f64) -> Result<Self> {
        if !(c_max > 1.0 && c_max <= 2.0) {
            return Err(Error::Config(format!("grid ratio must lie in (1, 2], got {c_max}")));
        }
        check_endpoints(t_lo, t_hi)?;
        let k = ((t_hi / t_lo).ln() / c_max.ln() - 1e-12).ceil().max(1.0) as usize;
        Self::with_intervals(t_lo, t_hi, k)
    }

    pub fn with_intervals(t_lo: f64, t_hi: f64, k: usize) -> Result<Self> {
        check_endpoints(t_lo, t_hi)?;
        if k == 0 {
            return Err(Error::Config("need at least one interval".into()));
        }
        let c = (t_hi / t_lo).powf(1.0 / k as f64);
        let mut times: Vec<f64> = (0..=k).map(|i| t_lo * c.powi(i as i32)).collect();
        times[0] = t_lo;
        times[k] = t_hi;
        Ok(Self {
            t_lo,
            t_hi,
            c,
            k_intervals: k,
            times,
        })
    }

    /// Bounds of interval `i` (0-based).
    pub fn interval(&self, i: usize) -> (f64, f64) {
        (self.times[i], self.times[i + 1])
    }

    /// Index of the interval `[t_i, t_{i+1})` containing `t`.
    pub fn interval_of(&self, t: f64) -> Option<usize> {
        if !(t >= self.t_lo && t < self.t_hi) {
            return None;
        }
        Some(self.times.partition_point(|&s| s <= t) - 1)
    }

    /// `interval_of`, with times outside the grid sent to the nearest end.
    pub fn interval_clamped(&self, t: f64) -> usize {
        if t < self.t_lo {
            0
        } else {
            self.interval_of(t).unwrap_or(self.k_intervals - 1)
        }
    }

    /// Theorem-scale preset: `T_lo = n^{-2(α+1)/(2α+d)}/D` and
    /// `T_hi = (8/π²) ln(8 D^{3/2} n^{(α+1)/(2α+d)}/π)`.
    pub fn theorem_preset(n: usize, dim: usize, intrinsic_dim: usize, alpha: u32, c_max: f64) -> Result<Self> {
        let (nf, df) = (n as f64, dim as f64);
        let rate = (alpha as f64 + 1.0) / (2.0 * alpha as f64 + intrinsic_dim as f64);
        let t_lo = nf.powf(-2.0 * rate) / df;
        let pi = std::f64::consts::PI;
        let t_hi = 8.0 / (pi * pi) * (8.0 * df.powf(1.5) / pi * nf.powf(rate)).ln();
        Self::new(t_lo, t_hi, c_max)
    }
}

fn check_endpoints(t_lo: f64, t_hi: f64) -> Result<()> {
    if !(t_lo > 0.0) || !(t_hi > t_lo) || !t_hi.is_finite() {
        return Err(Error::Config(format!("need 0 < T_lo < T_hi, got [{t_lo}, {t_hi}]")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub n_mc: usize,
    pub batch: usize,
    pub steps: usize,
    pub lr: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Overrides the clip scale of every network spec.
    pub clip_scale: f64,
    pub kernel: KernelConfig,
    /// Draw this many `(y, t, x_t)` triples once and train on them, instead
    /// of fresh noise each step.
    pub fixed_panel: Option<usize>,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_mc: 1,
            batch: 128,
            steps: 2000,
            lr: 1e-3,
            optimizer: Optimizer::default(),
            seed: 0,
            clip_scale: 4.0,
            kernel: KernelConfig::default(),
            fixed_panel: None,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_mc == 0 || self.batch == 0 {
            return Err(Error::Config("n_mc and batch must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.fixed_panel == Some(0) {
            return Err(Error::Config("fixed panel must be non-empty".into()));
        }
        self.kernel.validate()
    }
}

/// One Monte-Carlo draw `(t, x_t)` with `t ~ U[lo, hi)` and
/// `x_t = fold(y + √t Z)`.
fn draw<R: Rng + ?Sized>(y: &[f64], lo: f64, hi: f64, rng: &mut R, x: &mut Vec<f64>) -> f64 {
    let t = rng.random_range(lo..hi);
    let sd = t.sqrt();
    x.clear();
    x.extend(y.iter().map(|&c| c + sd * rng.sample::<f64, _>(StandardNormal)));
    fold_in_place(x);
    t
}

/// `(t_{i+1} - t_i) · |s(x_t, t) - ∇_x log q_t(y, x_t)|²`, averaged over
/// `cfg.n_mc` draws.
pub fn dsm_loss_sample<R: Rng + ?Sized>(
    s: &dyn ScoreFunction,
    y: &CubePoint,
    grid: &TimeGrid,
    i: usize,
    rng: &mut R,
    cfg: &TrainConfig,
) -> Result<f64> {
    if i >= grid.k_intervals {
        return Err(Error::Domain(format!("interval {i} outside grid of {}", grid.k_intervals)));
    }
    let (lo, hi) = grid.interval(i);
    let dim = y.dim();
    let mut x = Vec::with_capacity(dim);
    let mut sv = vec![0.0; dim];
    let mut g = vec![0.0; dim];
    let mut total = 0.0;
    for _ in 0..cfg.n_mc {
        let t = draw(y, lo, hi, rng, &mut x);
        let cut = choose_cutoff(t, dim, &cfg.kernel)?;
        if cut.saturated {
            return Err(Error::Numerical(format!("image cutoff saturated at t={t}")));
        }
        s.eval(&x, t, &mut sv)?;
        grad_log_q_into(y, &x, t, cut.k, &mut g);
        total += sv.iter().zip(&g).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    Ok((hi - lo) * total / cfg.n_mc as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub interval: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub wall_ms: u128,
}

#[derive(Debug, Clone)]
pub struct TrainedInterval {
    pub model: ScoreModel,
    /// Mean step loss over the last tenth of training.
    pub final_loss: Option<f64>,
    pub log: Vec<LogRow>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

/// Trains the network for interval `i` on `data`.
pub fn train_interval(data: &[CubePoint], grid: &TimeGrid, i: usize, spec: NetSpec, cfg: &TrainConfig) -> Result<TrainedInterval> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training data is empty".into()));
    }
    if i >= grid.k_intervals {
        return Err(Error::Config(format!("interval {i} outside grid of {}", grid.k_intervals)));
    }
    let dim = data[0].dim();
    if spec.dim() != dim {
        return Err(Error::Config(format!("network dimension {} does not match data {dim}", spec.dim())));
    }
    let (lo, hi) = grid.interval(i);
    let len = hi - lo;
    let mut spec = spec;
    spec.clip_scale = cfg.clip_scale;
    let mut model = ScoreModel::init(spec, cfg.seed)?;
    let np = model.params.len();
    let mut opt = Adam {
        m: vec![0.0; np],
        v: vec![0.0; np],
        step: 0,
    };

    // Pre-drawn (data index, t, x_t) triples for the fixed-panel variant.
    let panel: Option<Vec<(usize, f64, Vec<f64>)>> = cfg.fixed_panel.map(|size| {
        let mut r = rng::stream(cfg.seed, Stream::Train, pair_index(i as u64, u32::MAX as u64));
        (0..size)
            .map(|_| {
                let j = r.random_range(0..data.len());
                let mut x = Vec::with_capacity(dim);
                let t = draw(&data[j], lo, hi, &mut r, &mut x);
                (j, t, x)
            })
            .collect()
    });

    let start = Instant::now();
    let mut ws = Workspace::default();
    let mut grad = vec![0.0; np];
    let mut s = vec![0.0; dim];
    let mut g = vec![0.0; dim];
    let mut up = vec![0.0; dim];
    let mut x = Vec::with_capacity(dim);
    let mut log = Vec::new();
    let tail_from = cfg.steps - cfg.steps / 10;
    let (mut tail_sum, mut tail_n) = (0.0, 0usize);
    let per = 1.0 / (cfg.batch * cfg.n_mc) as f64;
    for step in 0..cfg.steps {
        let mut r = rng::stream(cfg.seed, Stream::Train, pair_index(i as u64, step as u64));
        grad.fill(0.0);
        let mut loss = 0.0;
        for _ in 0..cfg.batch * cfg.n_mc {
            let (j, t) = match &panel {
                Some(p) => {
                    let (j, t, px) = &p[r.random_range(0..p.len())];
                    x.clone_from(px);
                    (*j, *t)
                }
                None => {
                    let j = r.random_range(0..data.len());
                    let t = draw(&data[j], lo, hi, &mut r, &mut x);
                    (j, t)
                }
            };
            let cut = choose_cutoff(t, dim, &cfg.kernel)?;
            grad_log_q_into(&data[j], &x, t, cut.k, &mut g);
            model.forward_ws(&x, t, &mut ws, &mut s);
            for k in 0..dim {
                let d = s[k] - g[k];
                loss += len * d * d * per;
                up[k] = 2.0 * len * d * per;
            }
            model.backward_ws(&ws, &up, &mut grad);
        }
        let grad_norm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !loss.is_finite() || !grad_norm.is_finite() {
            let pnorm = model.params.iter().map(|v| v * v).sum::<f64>().sqrt();
            return Err(Error::Divergence {
                interval: i,
                step,
                diagnostic: format!("loss={loss}, grad_norm={grad_norm}, param_norm={pnorm}"),
            });
        }
        apply_update(&mut model.params, &grad, &mut opt, cfg);
        model.project_params();
        if step >= tail_from {
            tail_sum += loss;
            tail_n += 1;
        }
        if cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == cfg.steps) {
            log.push(LogRow {
                step,
                interval: i,
                loss,
                grad_norm,
                wall_ms: start.elapsed().as_millis(),
            });
        }
    }
    model.check_finite()?;
    Ok(TrainedInterval {
        model,
        final_loss: (tail_n > 0).then(|| tail_sum / tail_n as f64),
        log,
    })
}

fn apply_update(params: &mut [f64], grad: &[f64], opt: &mut Adam, cfg: &TrainConfig) {
    match cfg.optimizer {
        Optimizer::Sgd => {
            for (p, g) in params.iter_mut().zip(grad) {
                *p -= cfg.lr * g;
            }
        }
        Optimizer::Adam { beta1, beta2, eps } => {
            opt.step += 1;
            let c1 = 1.0 - beta1.powi(opt.step);
            let c2 = 1.0 - beta2.powi(opt.step);
            for ((p, g), (m, v)) in params.iter_mut().zip(grad).zip(opt.m.iter_mut().zip(opt.v.iter_mut())) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= cfg.lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
}

impl ScoreFunction for ScoreModel {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn eval(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        let mut ws = Workspace::default();
        self.forward_ws(x, t, &mut ws, out);
        Ok(())
    }
}

/// `ŝ(x,t) = Σ_i ŝ_i(x,t) 1[t_i <= t < t_{i+1}]`; times outside the grid use
/// the nearest end model.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseScore {
    pub grid: TimeGrid,
    pub models: Vec<ScoreModel>,
}

impl PiecewiseScore {
    pub fn new(grid: TimeGrid, models: Vec<ScoreModel>) -> Result<Self> {
        if models.len() != grid.k_intervals {
            return Err(Error::Config(format!(
                "{} models for {} intervals",
                models.len(),
                grid.k_intervals
            )));
        }
        let dim = models[0].spec.dim();
        for m in &models {
            m.check_finite()?;
            if m.spec.dim() != dim {
                return Err(Error::Config("models disagree on dimension".into()));
            }
        }
        Ok(Self { grid, models })
    }

    pub fn model_at(&self, t: f64) -> &ScoreModel {
        &self.models[self.grid.interval_clamped(t)]
    }
}

impl ScoreFunction for PiecewiseScore {
    fn dim(&self) -> usize {
        self.models[0].spec.dim()
    }

    fn eval(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        self.model_at(t).eval(x, t, out)
    }
}

/// Per-interval summary from `train_all`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSummary {
    pub index: usize,
    pub t_lo: f64,
    pub t_hi: f64,
    pub final_loss: Option<f64>,
}

pub struct TrainReport {
    pub score: PiecewiseScore,
    pub summaries: Vec<IntervalSummary>,
    pub logs: Vec<LogRow>,
}

/// Same architecture on every interval.
pub fn uniform_specs(dim: usize, depth: usize, width: usize, grid: &TimeGrid, n_data: usize, norm_bound: f64) -> Vec<NetSpec> {
    (0..grid.k_intervals)
        .map(|i| {
            let (lo, hi) = grid.interval(i);
            let mut s = NetSpec::new(dim, depth, width, i, lo, hi, n_data);
            s.norm_bound = norm_bound;
            s
        })
        .collect()
}

/// Trains every interval independently (in parallel).
pub fn train_all(data: &[CubePoint], grid: &TimeGrid, specs: &[NetSpec], cfg: &TrainConfig) -> Result<TrainReport> {
    if specs.len() != grid.k_intervals {
        return Err(Error::Config(format!(
            "{} network specs for {} intervals",
            specs.len(),
            grid.k_intervals
        )));
    }
    let results: Vec<Result<TrainedInterval>> = specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| train_interval(data, grid, i, spec.clone(), cfg))
        .collect();
    let mut models = Vec::with_capacity(specs.len());
    let mut summaries = Vec::with_capacity(specs.len());
    let mut logs = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        let trained = r?;
        let (lo, hi) = grid.interval(i);
        summaries.push(IntervalSummary {
            index: i,
            t_lo: lo,
            t_hi: hi,
            final_loss: trained.final_loss,
        });
        logs.extend(trained.log);
        models.push(trained.model);
    }
    Ok(TrainReport {
        score: PiecewiseScore::new(grid.clone(), models)?,
        summaries,
        logs,
    })
}

/// Monte-Carlo estimate of `E|ŝ(X_t,t) - s(X_t,t)|²` over `t ~ U[t_i, t_{i+1})`
/// and `X_t` started from the data.
pub fn interval_error(
    estimate: &dyn ScoreFunction,
    reference: &dyn ScoreFunction,
    data: &[CubePoint],
    grid: &TimeGrid,
    i: usize,
    n_eval: usize,
    seed: u64,
) -> Result<f64> {
    if data.is_empty() || n_eval == 0 {
        return Err(Error::Config("interval error needs data and at least one evaluation".into()));
    }
    let (lo, hi) = grid.interval(i);
    let dim = data[0].dim();
    let errs: Vec<Result<f64>> = (0..n_eval)
        .into_par_iter()
        .map(|k| {
            let mut r = rng::stream(seed, Stream::Evaluation, pair_index(i as u64, k as u64));
            let y = &data[r.random_range(0..data.len())];
            let mut x = Vec::with_capacity(dim);
            let t = draw(y, lo, hi, &mut r, &mut x);
            let mut a = vec![0.0; dim];
            let mut b = vec![0.0; dim];
            estimate.eval(&x, t, &mut a)?;
            reference.eval(&x, t, &mut b)?;
            Ok(a.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum())
        })
        .collect();
    let mut total = 0.0;
    for e in errs {
        total += e?;
    }
    Ok(total / n_eval as f64)
}

/// `Σ_i √(t_{i+1} ∧ 1) √err_i`.
pub fn weighted_error_sum(grid: &TimeGrid, errors: &[f64]) -> f64 {
    errors
        .iter()
        .enumerate()
        .map(|(i, e)| grid.times[i + 1].min(1.0).sqrt() * e.max(0.0).sqrt())
        .sum()
}
