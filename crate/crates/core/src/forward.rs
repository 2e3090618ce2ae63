//! Forward reflected Brownian motion via the folding construction
//! `X_t = f(Y + B_t)`, exact in law at every requested time.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{fold, fold_in_place, AmbientPoint, CubePoint};
use crate::rng::{self, Stream};
use crate::targets::{sample_target, TargetMeasure};

#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub times: Vec<f64>,
    pub positions: Vec<CubePoint>,
    /// The unfolded path `Y + B_t`.
    pub driver: Option<Vec<AmbientPoint>>,
}

impl PathSample {
    /// Path given directly, e.g. a synthetic one for local-time checks.
    pub fn new(times: Vec<f64>, positions: Vec<CubePoint>) -> Result<Self> {
        check_times(&times)?;
        if times.len() != positions.len() {
            return Err(Error::Domain("times and positions differ in length".into()));
        }
        Ok(Self {
            times,
            positions,
            driver: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.positions.first().map_or(0, |p| p.dim())
    }

    /// CSV with columns `time,x_1..x_D`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = std::iter::once("time".to_string())
            .chain((1..=self.dim()).map(|i| format!("x_{i}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for (t, p) in self.times.iter().zip(&self.positions) {
            write!(out, "{t}")?;
            for c in p.iter() {
                write!(out, ",{c}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::Domain("need at least one time".into()));
    }
    if !(times[0] >= 0.0) || times.iter().any(|t| !t.is_finite()) {
        return Err(Error::Domain("times must be finite and non-negative".into()));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain("times must be strictly increasing".into()));
    }
    Ok(())
}

/// One path started at `y0`, observed at `times`.
pub fn simulate_forward<R: Rng + ?Sized>(y0: &CubePoint, times: &[f64], rng: &mut R) -> Result<PathSample> {
    check_times(times)?;
    let mut z: Vec<f64> = y0.to_vec();
    let mut prev = 0.0;
    let mut driver = Vec::with_capacity(times.len());
    let mut positions = Vec::with_capacity(times.len());
    for &t in times {
        let sd = (t - prev).sqrt();
        if t > prev {
            for c in z.iter_mut() {
                *c += sd * rng.sample::<f64, _>(StandardNormal);
            }
        }
        prev = t;
        positions.push(fold(&z)?);
        driver.push(AmbientPoint::new(z.clone())?);
    }
    Ok(PathSample {
        times: times.to_vec(),
        positions,
        driver: Some(driver),
    })
}

/// `n` draws of `X_t` with `X_0 ~ μ`. Draw `k` uses its own stream, so the
/// result does not depend on the thread count.
pub fn sample_marginal(mu: &TargetMeasure, t: f64, n: usize, seed: u64) -> Result<Vec<CubePoint>> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("time must be finite and non-negative, got {t}")));
    }
    let mut data_rng = rng::stream(seed, Stream::Data, 0);
    let starts = sample_target(mu, n, &mut data_rng)?;
    Ok(starts
        .into_par_iter()
        .enumerate()
        .map(|(k, y)| {
            let mut r = rng::stream(seed, Stream::Forward, k as u64);
            diffuse(y, t, &mut r)
        })
        .collect())
}

/// `fold(y + √t Z)`.
pub fn diffuse<R: Rng + ?Sized>(y: CubePoint, t: f64, rng: &mut R) -> CubePoint {
    if t == 0.0 {
        return y;
    }
    let sd = t.sqrt();
    let mut v = y.into_inner();
    for c in v.iter_mut() {
        *c += sd * rng.sample::<f64, _>(StandardNormal);
    }
    fold_in_place(&mut v);
    CubePoint::from_folded(v)
}

/// Riemann estimate `(1/2ε) Σ Δt · #{coordinates within ε of {0,1}}` of the
/// boundary local time accumulated along the path (left-point rule).
pub fn occupation_local_time(path: &PathSample, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("occupation width must be positive, got {eps}")));
    }
    let mut total = 0.0;
    for (w, p) in path.times.windows(2).zip(&path.positions) {
        let near = p.iter().filter(|&&c| c < eps || c > 1.0 - eps).count();
        total += (w[1] - w[0]) * near as f64;
    }
    Ok(total / (2.0 * eps))
}
