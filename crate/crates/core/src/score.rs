//! Plug-in score functions for the sampler and for error estimates.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::kernel::{score_empirical, score_subspace_oracle, support_nodes, KernelConfig, OracleQuadrature};
use crate::targets::{EmpiricalMeasure, SubspaceDensity, TargetMeasure};

/// A vector field `s(x, t)` on the cube.
pub trait ScoreFunction: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()>;
}

/// The score of the uniform law.
#[derive(Debug, Clone)]
pub struct ZeroScore(pub usize);

impl ScoreFunction for ZeroScore {
    fn dim(&self) -> usize {
        self.0
    }

    fn eval(&self, _x: &[f64], _t: f64, out: &mut [f64]) -> Result<()> {
        out.fill(0.0);
        Ok(())
    }
}

/// Exact truncated score of a point cloud.
#[derive(Debug, Clone)]
pub struct EmpiricalScore {
    pub measure: EmpiricalMeasure,
    pub kernel: KernelConfig,
}

impl ScoreFunction for EmpiricalScore {
    fn dim(&self) -> usize {
        self.measure.dim()
    }

    fn eval(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        let s = score_empirical(&self.measure, x, t, &self.kernel)?;
        out.copy_from_slice(&s.value);
        Ok(())
    }
}

/// Above this many support nodes the windowed oracle is cheaper.
const MAX_SUPPORT_NODES: usize = 20_000;

/// Quadrature score of a subspace density. For each distinct `t` the support
/// is discretised once and reused; the sampler only visits a few hundred
/// distinct times.
#[derive(Debug, Clone)]
pub struct SubspaceScore {
    pub density: SubspaceDensity,
    pub kernel: KernelConfig,
    pub quad: OracleQuadrature,
    nodes: Arc<Mutex<HashMap<u64, Option<Arc<EmpiricalMeasure>>>>>,
}

impl SubspaceScore {
    pub fn new(density: SubspaceDensity, kernel: KernelConfig, quad: OracleQuadrature) -> Self {
        Self {
            density,
            kernel,
            quad,
            nodes: Arc::default(),
        }
    }

    fn nodes_at(&self, t: f64) -> Result<Option<Arc<EmpiricalMeasure>>> {
        let key = t.to_bits();
        if let Some(hit) = self.nodes.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let built = support_nodes(&self.density, t, &self.quad)?;
        let entry = (built.len() <= MAX_SUPPORT_NODES).then(|| Arc::new(built));
        let mut cache = self.nodes.lock().expect("cache lock");
        if cache.len() >= 4096 {
            cache.clear();
        }
        cache.insert(key, entry.clone());
        Ok(entry)
    }
}

impl ScoreFunction for SubspaceScore {
    fn dim(&self) -> usize {
        self.density.ambient_dim()
    }

    fn eval(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        let s = match self.nodes_at(t)? {
            Some(m) => score_empirical(&m, x, t, &self.kernel)?,
            None => score_subspace_oracle(&self.density, x, t, &self.kernel, &self.quad)?,
        };
        out.copy_from_slice(&s.value);
        Ok(())
    }
}

/// Exact score of a target, whichever kind it is.
pub fn exact_score(mu: &TargetMeasure, kernel: KernelConfig) -> Result<Box<dyn ScoreFunction>> {
    kernel.validate()?;
    Ok(match mu {
        TargetMeasure::Empirical(m) => Box::new(EmpiricalScore {
            measure: m.clone(),
            kernel,
        }),
        TargetMeasure::Subspace(s) => {
            if s.intrinsic_dim() > 2 {
                return Err(Error::Unsupported("exact score of a subspace target needs d <= 2".into()));
            }
            Box::new(SubspaceScore::new(s.clone(), kernel, OracleQuadrature::default()))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::make_subspace_target;

    #[test]
    fn cached_support_nodes_match_the_oracle() {
        let target = make_subspace_target(2, 1, 1, 3.0, 7).unwrap();
        let TargetMeasure::Subspace(mu) = &target else { unreachable!() };
        let fast = exact_score(&target, KernelConfig::default()).unwrap();
        let quad = OracleQuadrature::default();
        let base = mu.frame.push_forward(&mu.center);
        for t in [3e-4, 4e-3, 0.05, 0.7, 3.5] {
            for k in 0..8 {
                let x: Vec<f64> = base.iter().enumerate().map(|(i, b)| (b + 0.07 * (k as f64 - 3.5) * (i as f64 + 0.5)).clamp(0.0, 1.0)).collect();
                let want = score_subspace_oracle(mu, &x, t, &KernelConfig::default(), &quad).unwrap();
                let mut got = vec![0.0; 2];
                fast.eval(&x, t, &mut got).unwrap();
                let scale = 1.0 + want.value.iter().map(|v| v.abs()).sum::<f64>();
                for (a, b) in got.iter().zip(&want.value) {
                    assert!((a - b).abs() < 1e-6 * scale, "t={t} k={k}: {got:?} vs {:?}", want.value);
                }
            }
        }
    }
}
