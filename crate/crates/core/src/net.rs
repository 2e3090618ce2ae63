//! Per-interval score networks: a ReLU MLP on `((x - 1/2)/√(t_i ∧ 1), τ(t))`,
//! scaled by `1/√t`, then clipped radially to `C·√(ln n)/√(t_i ∧ 1)`.
//!
//! Both rescalings are fixed per interval, so the class is still that of an
//! MLP in `(x, τ)`; they keep weights of order one at small `t`.

use std::io::{BufRead, BufReader, Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    /// Layer widths: input `D+1`, hidden layers, output `D`.
    pub widths: Vec<usize>,
    /// Entry bound `B` (0 disables the projection).
    pub norm_bound: f64,
    pub clip_scale: f64,
    pub interval_index: usize,
    /// Training-set size entering the clip radius.
    pub n_data: usize,
    pub t_lo: f64,
    pub t_hi: f64,
}

impl NetSpec {
    /// `depth` hidden layers of `width` units for dimension `dim` on
    /// interval `[t_lo, t_hi)`.
    pub fn new(dim: usize, depth: usize, width: usize, interval_index: usize, t_lo: f64, t_hi: f64, n_data: usize) -> Self {
        let mut widths = vec![dim + 1];
        widths.extend(std::iter::repeat_n(width, depth));
        widths.push(dim);
        Self {
            widths,
            norm_bound: 0.0,
            clip_scale: 4.0,
            interval_index,
            n_data,
            t_lo,
            t_hi,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.widths;
        if w.len() < 3 {
            return Err(Error::Config("network needs at least one hidden layer".into()));
        }
        if w[0] != w[w.len() - 1] + 1 || w.contains(&0) {
            return Err(Error::Config(format!("inconsistent widths {w:?}: need [D+1, ..., D]")));
        }
        if !(self.t_lo > 0.0 && self.t_hi > self.t_lo) {
            return Err(Error::Config(format!("bad interval [{}, {})", self.t_lo, self.t_hi)));
        }
        if !(self.norm_bound >= 0.0) || !(self.clip_scale > 0.0) {
            return Err(Error::Config("norm bound must be >= 0 and clip scale > 0".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.widths[self.widths.len() - 1]
    }

    pub fn depth(&self) -> usize {
        self.widths.len() - 2
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// `C·√(max(ln n, 1))/√(t_hi ∧ 1)`.
    pub fn clip_radius(&self) -> f64 {
        let log_n = (self.n_data.max(1) as f64).ln().max(1.0);
        self.clip_scale * log_n.sqrt() / self.t_hi.min(1.0).sqrt()
    }

    /// Scale applied to `x - 1/2` before the first layer.
    pub fn input_scale(&self) -> f64 {
        1.0 / self.t_hi.min(1.0).sqrt()
    }

    /// `τ(t) = ln(t/t_lo)/ln(t_hi/t_lo)`, in `[0,1)` on the interval.
    pub fn time_feature(&self, t: f64) -> f64 {
        (t / self.t_lo).ln() / (self.t_hi / self.t_lo).ln()
    }
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    acts: Vec<Vec<f64>>,
    raw: Vec<f64>,
    scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    pub spec: NetSpec,
    /// Per layer: weights (row-major, out × in) then biases.
    pub params: Vec<f64>,
}

impl ScoreModel {
    pub fn zeros(spec: NetSpec) -> Result<Self> {
        spec.validate()?;
        let params = vec![0.0; spec.param_count()];
        Ok(Self { spec, params })
    }

    /// He-normal weights (for unscaled inputs), zero biases; the output layer is scaled down so
    /// the initial score is small.
    pub fn init(spec: NetSpec, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(spec)?;
        let mut r = rng::stream(seed, Stream::Init, model.spec.interval_index as u64);
        let layers = model.spec.widths.len() - 1;
        let mut off = 0;
        for l in 0..layers {
            let (n_in, n_out) = (model.spec.widths[l], model.spec.widths[l + 1]);
            let sd = (2.0 / n_in as f64).sqrt() * if l + 1 == layers { 0.1 } else { 1.0 };
            let k = model.spec.input_scale();
            for (idx, p) in model.params[off..off + n_in * n_out].iter_mut().enumerate() {
                // undo the input scaling so initial pre-activations are O(1)
                let col = if l == 0 && idx % n_in + 1 < n_in { k } else { 1.0 };
                *p = sd / col * r.sample::<f64, _>(StandardNormal);
            }
            off += n_in * n_out + n_out;
        }
        model.project_params();
        Ok(model)
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.params.iter().position(|p| !p.is_finite()) {
            Some(i) => Err(Error::CorruptedModel(format!(
                "interval {}: parameter {i} is {}",
                self.spec.interval_index, self.params[i]
            ))),
            None => Ok(()),
        }
    }

    /// Clamps every parameter into `[-B, B]` when `B > 0`.
    pub fn project_params(&mut self) {
        let b = self.spec.norm_bound;
        if b > 0.0 {
            for p in &mut self.params {
                *p = p.clamp(-b, b);
            }
        }
    }

    /// Clipped score at `(x, t)`.
    pub fn forward(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_finite()?;
        self.check_input(x, t)?;
        let mut ws = Workspace::default();
        let mut out = vec![0.0; self.spec.dim()];
        self.forward_ws(x, t, &mut ws, &mut out);
        Ok(out)
    }

    /// Gradient of `upstream · s(x,t)` with respect to the parameters.
    pub fn backward(&self, x: &[f64], t: f64, upstream: &[f64]) -> Result<Vec<f64>> {
        self.check_finite()?;
        self.check_input(x, t)?;
        if upstream.len() != self.spec.dim() {
            return Err(Error::Domain("upstream gradient has wrong length".into()));
        }
        let mut ws = Workspace::default();
        let mut out = vec![0.0; self.spec.dim()];
        self.forward_ws(x, t, &mut ws, &mut out);
        let mut grad = vec![0.0; self.params.len()];
        self.backward_ws(&ws, upstream, &mut grad);
        Ok(grad)
    }

    fn check_input(&self, x: &[f64], t: f64) -> Result<()> {
        if x.len() != self.spec.dim() {
            return Err(Error::Domain(format!("input has dimension {}, model {}", x.len(), self.spec.dim())));
        }
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::Domain(format!("time must be positive, got {t}")));
        }
        Ok(())
    }

    /// Unchecked forward pass writing the clipped output into `out` and
    /// keeping activations in `ws`.
    pub fn forward_ws(&self, x: &[f64], t: f64, ws: &mut Workspace, out: &mut [f64]) {
        let widths = &self.spec.widths;
        let layers = widths.len() - 1;
        ws.acts.resize(layers, Vec::new());
        let input = &mut ws.acts[0];
        input.clear();
        let k = self.spec.input_scale();
        input.extend(x.iter().map(|&c| (c - 0.5) * k));
        input.push(self.spec.time_feature(t));
        let mut off = 0;
        for l in 0..layers {
            let (n_in, n_out) = (widths[l], widths[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            let (prev, rest) = ws.acts.split_at_mut(l + 1);
            let a = &prev[l];
            let next = if l + 1 < layers { &mut rest[0] } else { &mut ws.raw };
            next.clear();
            for (row, &bias) in w.chunks_exact(n_in).zip(b) {
                let z = bias + row.iter().zip(a.iter()).map(|(p, q)| p * q).sum::<f64>();
                next.push(if l + 1 < layers { z.max(0.0) } else { z });
            }
        }
        ws.scale = 1.0 / t.sqrt();
        let r = self.spec.clip_radius();
        let norm = ws.raw.iter().map(|v| v * v).sum::<f64>().sqrt() * ws.scale;
        let shrink = if norm > r { r / norm } else { 1.0 };
        for (o, v) in out.iter_mut().zip(&ws.raw) {
            *o = v * ws.scale * shrink;
        }
    }

    /// Adds the gradient of `upstream · s` to `grad`, using the activations
    /// from the matching `forward_ws`.
    pub fn backward_ws(&self, ws: &Workspace, upstream: &[f64], grad: &mut [f64]) {
        let widths = &self.spec.widths;
        let layers = widths.len() - 1;
        // through the clip
        let v: Vec<f64> = ws.raw.iter().map(|c| c * ws.scale).collect();
        let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        let r = self.spec.clip_radius();
        let mut delta: Vec<f64> = if norm > r {
            let dot: f64 = v.iter().zip(upstream).map(|(a, g)| a * g).sum::<f64>() / norm;
            v.iter().zip(upstream).map(|(a, g)| (r / norm) * (g - a / norm * dot)).collect()
        } else {
            upstream.to_vec()
        };
        for d in delta.iter_mut() {
            *d *= ws.scale;
        }
        let offsets: Vec<usize> = widths
            .windows(2)
            .scan(0, |acc, w| {
                let o = *acc;
                *acc += w[0] * w[1] + w[1];
                Some(o)
            })
            .collect();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (widths[l], widths[l + 1]);
            let off = offsets[l];
            let a = &ws.acts[l];
            {
                let (gw, gb) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for (j, &dj) in delta.iter().enumerate() {
                    if dj == 0.0 {
                        continue;
                    }
                    gb[j] += dj;
                    for (g, &ai) in gw[j * n_in..(j + 1) * n_in].iter_mut().zip(a) {
                        *g += dj * ai;
                    }
                }
            }
            if l > 0 {
                let w = &self.params[off..off + n_in * n_out];
                let mut prev = vec![0.0; n_in];
                for (j, &dj) in delta.iter().enumerate() {
                    if dj == 0.0 {
                        continue;
                    }
                    for (p, &wji) in prev.iter_mut().zip(&w[j * n_in..(j + 1) * n_in]) {
                        *p += dj * wji;
                    }
                }
                // ReLU mask: the activation is positive exactly where it passed
                for (p, &ai) in prev.iter_mut().zip(a) {
                    if ai <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
    }

    /// Checkpoint: one JSON header line, then the parameters as
    /// little-endian `f64`.
    pub fn write_checkpoint<W: Write>(&self, mut out: W, header: &CheckpointMeta) -> Result<()> {
        let head = CheckpointHeader {
            spec: self.spec.clone(),
            param_count: self.params.len(),
            meta: header.clone(),
        };
        serde_json::to_writer(&mut out, &head)?;
        out.write_all(b"\n")?;
        for p in &self.params {
            out.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(input: R) -> Result<(Self, CheckpointMeta)> {
        let mut reader = BufReader::new(input);
        let mut line = Vec::new();
        reader.read_until(b'\n', &mut line)?;
        let head: CheckpointHeader =
            serde_json::from_slice(&line).map_err(|e| Error::CorruptedModel(format!("bad checkpoint header: {e}")))?;
        head.spec.validate()?;
        if head.param_count != head.spec.param_count() {
            return Err(Error::CorruptedModel("parameter count does not match the spec".into()));
        }
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes)?;
        if bytes.len() != 8 * head.param_count {
            return Err(Error::CorruptedModel(format!(
                "expected {} parameter bytes, found {}",
                8 * head.param_count,
                bytes.len()
            )));
        }
        let params = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let model = Self { spec: head.spec, params };
        model.check_finite()?;
        Ok((model, head.meta))
    }
}

/// Training record stored with a checkpoint.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub steps: usize,
    pub final_loss: Option<f64>,
    #[serde(default)]
    pub config_hash: String,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    spec: NetSpec,
    param_count: usize,
    meta: CheckpointMeta,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(depth: usize, width: usize) -> NetSpec {
        NetSpec::new(2, depth, width, 0, 0.05, 0.1, 1000)
    }

    #[test]
    fn zero_parameters_give_zero() {
        let m = ScoreModel::zeros(spec(2, 8)).unwrap();
        assert_eq!(m.forward(&[0.3, 0.4], 0.07).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn output_respects_the_clip() {
        let mut m = ScoreModel::init(spec(2, 8), 1).unwrap();
        for p in &mut m.params {
            *p *= 50.0;
        }
        let r = m.spec.clip_radius();
        let mut rng = rng::stream(2, Stream::Verify, 0);
        for _ in 0..1000 {
            let x = [rng.random::<f64>(), rng.random::<f64>()];
            let s = m.forward(&x, rng.random_range(0.01..1.0)).unwrap();
            assert!(s.iter().map(|v| v * v).sum::<f64>().sqrt() <= r * (1.0 + 1e-15));
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let m = ScoreModel::init(spec(2, 8), 3).unwrap();
        let g = m.backward(&[0.2, 0.2], 0.06, &[0.0, 0.0]).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_regime_matches_closed_form() {
        // biases large enough that every ReLU passes: the net is affine
        let mut sp = NetSpec::new(1, 1, 3, 0, 0.5, 1.0, 10);
        sp.clip_scale = 1e6;
        let mut m = ScoreModel::zeros(sp).unwrap();
        // layer 0: W0 (3x2), b0 (3); layer 1: W1 (1x3), b1 (1)
        m.params = vec![0.3, -0.2, 0.5, 0.1, -0.4, 0.7, 5.0, 5.0, 5.0, 0.6, -0.3, 0.8, 0.05];
        let (x, t, v) = (0.3, 0.64, 2.0);
        let s = m.forward(&[x], t).unwrap()[0];
        let g = m.backward(&[x], t, &[s - v]).unwrap();
        let scale = 1.0 / t.sqrt();
        let input = [x - 0.5, m.spec.time_feature(t)];
        let w0 = &m.params[0..6];
        let h: Vec<f64> = (0..3).map(|j| 5.0 + w0[2 * j] * input[0] + w0[2 * j + 1] * input[1]).collect();
        let w1 = &m.params[9..12];
        let r = scale * (s - v);
        let mut want = vec![0.0; 13];
        for j in 0..3 {
            want[2 * j] = r * w1[j] * input[0];
            want[2 * j + 1] = r * w1[j] * input[1];
            want[6 + j] = r * w1[j];
            want[9 + j] = r * h[j];
        }
        want[12] = r;
        for (a, b) in g.iter().zip(&want) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = rng::stream(4, Stream::Verify, 0);
        for k in 0..20 {
            let mut sp = spec(2, 8);
            // half of the cases exercise the clipped branch
            sp.clip_scale = if k % 2 == 0 { 1e3 } else { 0.02 };
            let m = ScoreModel::init(sp, k).unwrap();
            let x = [rng.random::<f64>(), rng.random::<f64>()];
            let t = rng.random_range(0.05..0.1);
            let up = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let g = m.backward(&x, t, &up).unwrap();
            let h = 1e-5;
            let mut err = 0.0;
            let mut norm = 0.0;
            for i in 0..m.params.len() {
                let mut p = m.clone();
                p.params[i] += h;
                let fp: f64 = p.forward(&x, t).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum();
                p.params[i] -= 2.0 * h;
                let fm: f64 = p.forward(&x, t).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum();
                let fd = (fp - fm) / (2.0 * h);
                err += (fd - g[i]).powi(2);
                norm += fd * fd;
            }
            assert!(err.sqrt() <= 1e-4 * norm.sqrt(), "config {k}: {} vs {}", err.sqrt(), norm.sqrt());
        }
    }

    #[test]
    fn projection_clamps_and_is_idempotent() {
        let mut sp = spec(1, 4);
        sp.norm_bound = 0.5;
        let mut m = ScoreModel::zeros(sp).unwrap();
        m.params[0] = 1.0;
        m.params[1] = -0.2;
        m.project_params();
        assert_eq!(m.params[0], 0.5);
        assert_eq!(m.params[1], -0.2);
        let once = m.clone();
        m.project_params();
        assert_eq!(m, once);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let m = ScoreModel::init(spec(3, 16), 7).unwrap();
        let meta = CheckpointMeta {
            seed: 7,
            steps: 12,
            final_loss: Some(0.125),
            config_hash: "abc".into(),
        };
        let mut buf = Vec::new();
        m.write_checkpoint(&mut buf, &meta).unwrap();
        let (back, meta2) = ScoreModel::read_checkpoint(&buf[..]).unwrap();
        assert_eq!(meta, meta2);
        assert_eq!(back.spec, m.spec);
        assert!(back.params.iter().zip(&m.params).all(|(a, b)| a.to_bits() == b.to_bits()));
        buf.pop();
        assert!(matches!(ScoreModel::read_checkpoint(&buf[..]), Err(Error::CorruptedModel(_))));
    }

    #[test]
    fn non_finite_parameters_are_rejected() {
        let mut m = ScoreModel::zeros(spec(1, 4)).unwrap();
        m.params[3] = f64::NAN;
        assert!(matches!(m.forward(&[0.5, 0.5], 0.07), Err(Error::CorruptedModel(_))));
    }
}
