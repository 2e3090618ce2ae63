//! Target measures on the cube: weighted point clouds and smooth densities
//! supported on a ball inside a `d`-dimensional affine slice of `[0,1]^D`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::geometry::CubePoint;
use crate::quadrature::GaussLegendre;
use crate::rng::{self, Stream};

/// Rejection sampling gives up when fewer than this fraction of proposals is
/// accepted.
pub const MIN_ACCEPTANCE: f64 = 1e-4;

/// Orthonormal frame `A` (`D x d`, row-major) and shift `v0` of the affine
/// slice `A u + v0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceFrame {
    pub ambient_dim: usize,
    pub intrinsic_dim: usize,
    /// `basis[i * d + k]` is entry `(i, k)` of `A`.
    pub basis: Vec<f64>,
    pub shift: Vec<f64>,
}

impl SubspaceFrame {
    /// Random frame from Gram–Schmidt on a Gaussian matrix, shifted to the
    /// cube centre.
    pub fn random(ambient_dim: usize, intrinsic_dim: usize, seed: u64) -> Result<Self> {
        if intrinsic_dim == 0 || intrinsic_dim > ambient_dim {
            return Err(Error::Config(format!(
                "need 1 <= d <= D, got d={intrinsic_dim}, D={ambient_dim}"
            )));
        }
        let (dd, d) = (ambient_dim, intrinsic_dim);
        let mut rng = rng::stream(seed, Stream::Frame, 0);
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
        while cols.len() < d {
            let mut v: Vec<f64> = (0..dd).map(|_| rng.sample(StandardNormal)).collect();
            // two passes of Gram-Schmidt
            for _ in 0..2 {
                for c in &cols {
                    let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                    v.iter_mut().zip(c).for_each(|(a, b)| *a -= dot * b);
                }
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-8 {
                v.iter_mut().for_each(|a| *a /= norm);
                cols.push(v);
            }
        }
        let mut basis = vec![0.0; dd * d];
        for (k, c) in cols.iter().enumerate() {
            for i in 0..dd {
                basis[i * d + k] = c[i];
            }
        }
        Ok(Self {
            ambient_dim: dd,
            intrinsic_dim: d,
            basis,
            shift: vec![0.5; dd],
        })
    }

    /// Frame given explicitly, checked for orthonormality.
    pub fn new(ambient_dim: usize, intrinsic_dim: usize, basis: Vec<f64>, shift: Vec<f64>) -> Result<Self> {
        let frame = Self {
            ambient_dim,
            intrinsic_dim,
            basis,
            shift,
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn validate(&self) -> Result<()> {
        let (dd, d) = (self.ambient_dim, self.intrinsic_dim);
        if d == 0 || d > dd || self.basis.len() != dd * d || self.shift.len() != dd {
            return Err(Error::Config("subspace frame has inconsistent shape".into()));
        }
        for a in 0..d {
            for b in 0..d {
                let dot: f64 = (0..dd).map(|i| self.basis[i * d + a] * self.basis[i * d + b]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-12 {
                    return Err(Error::Config(format!("frame columns not orthonormal (A^T A)[{a},{b}]={dot}")));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn entry(&self, i: usize, k: usize) -> f64 {
        self.basis[i * self.intrinsic_dim + k]
    }

    /// `A^T (x - v0)`.
    pub fn pull_back(&self, x: &[f64]) -> Vec<f64> {
        let d = self.intrinsic_dim;
        let mut u = vec![0.0; d];
        for (i, (&xi, &vi)) in x.iter().zip(&self.shift).enumerate() {
            let diff = xi - vi;
            for (k, uk) in u.iter_mut().enumerate() {
                *uk += self.basis[i * d + k] * diff;
            }
        }
        u
    }

    /// `A u + v0`.
    pub fn push_forward(&self, u: &[f64]) -> Vec<f64> {
        let d = self.intrinsic_dim;
        (0..self.ambient_dim)
            .map(|i| self.shift[i] + (0..d).map(|k| self.basis[i * d + k] * u[k]).sum::<f64>())
            .collect()
    }

    /// `(I - A A^T)(x - v0)`.
    pub fn normal_component(&self, x: &[f64]) -> Vec<f64> {
        let u = self.pull_back(x);
        let back = self.push_forward(&u);
        x.iter().zip(&back).map(|(a, b)| a - b).collect()
    }

    /// Euclidean norm of row `i` of `A`: the largest excursion of coordinate
    /// `i` over a unit ball in `u`.
    fn row_norm(&self, i: usize) -> f64 {
        let d = self.intrinsic_dim;
        (0..d).map(|k| self.basis[i * d + k].powi(2)).sum::<f64>().sqrt()
    }
}

/// Shape parameters of the subspace density
/// `q(u) ∝ (r - |u - c|)^(c0 - d) * (1 + bump * (1 - |u - c|^2 / r^2))` on the
/// ball `|u - c| <= r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceParams {
    pub alpha: u32,
    pub c0: f64,
    /// Ball radius in slice coordinates; `None` takes the largest radius that
    /// keeps the margin `rho_min` to the cube boundary.
    #[serde(default)]
    pub radius: Option<f64>,
    /// Ball centre in slice coordinates; `None` is the origin.
    #[serde(default)]
    pub center: Option<Vec<f64>>,
    #[serde(default = "default_bump")]
    pub bump: f64,
    #[serde(default = "default_rho_min")]
    pub rho_min: f64,
    /// Boundary-layer width; `None` is a quarter of the radius.
    #[serde(default)]
    pub eps_m: Option<f64>,
}

fn default_bump() -> f64 {
    0.5
}

fn default_rho_min() -> f64 {
    0.1
}

impl SubspaceParams {
    pub fn new(alpha: u32, c0: f64) -> Self {
        Self {
            alpha,
            c0,
            radius: None,
            center: None,
            bump: default_bump(),
            rho_min: default_rho_min(),
            eps_m: None,
        }
    }
}

/// Smooth density on a ball inside an affine slice of the cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceDensity {
    pub frame: SubspaceFrame,
    pub params: SubspaceParams,
    pub seed: u64,
    /// Resolved ball centre (slice coordinates).
    pub center: Vec<f64>,
    pub radius: f64,
    pub eps_m: f64,
    /// Log of the normalising constant of the unnormalised density.
    pub log_norm: f64,
    pub p_min: f64,
    pub p_max: f64,
    /// Boundary smoothness order `d(c0-d)/2 + d + 3 alpha + 2`; recorded, not verified.
    pub kappa: f64,
}

impl SubspaceDensity {
    /// Builds the density on a given frame. Requires `c0 >= d` and
    /// `alpha > d/2`.
    pub fn build(frame: SubspaceFrame, params: SubspaceParams, seed: u64) -> Result<Self> {
        frame.validate()?;
        let d = frame.intrinsic_dim;
        if 2 * params.alpha as usize <= d {
            return Err(Error::Config(format!("need integer alpha > d/2, got alpha={}", params.alpha)));
        }
        if !(params.c0 >= d as f64) {
            return Err(Error::Config(format!("need c0 >= d, got c0={}", params.c0)));
        }
        if !(params.bump > -1.0) || !params.bump.is_finite() {
            return Err(Error::Config("bump amplitude must exceed -1".into()));
        }
        if !(0.0..0.5).contains(&params.rho_min) {
            return Err(Error::Config(format!("rho_min must lie in [0, 0.5), got {}", params.rho_min)));
        }
        let center = params.center.clone().unwrap_or_else(|| vec![0.0; d]);
        if center.len() != d {
            return Err(Error::Config("support centre has wrong dimension".into()));
        }
        let mid = frame.push_forward(&center);
        // Largest radius keeping every coordinate within [rho_min, 1 - rho_min].
        let mut r_max = f64::INFINITY;
        for (i, &m) in mid.iter().enumerate() {
            let room = (m - params.rho_min).min(1.0 - params.rho_min - m);
            let rn = frame.row_norm(i);
            if room < 0.0 {
                r_max = -1.0;
                break;
            }
            if rn > 0.0 {
                r_max = r_max.min(room / rn);
            }
        }
        let radius = match params.radius {
            Some(r) => {
                if !(r > 0.0) {
                    return Err(Error::Config("support radius must be positive".into()));
                }
                if r > r_max + 1e-12 {
                    return Err(Error::Construction(format!(
                        "support of radius {r} does not fit inside the cube at margin {} (max {r_max:.6})",
                        params.rho_min
                    )));
                }
                r
            }
            None => {
                if !(r_max > 0.0) || !r_max.is_finite() {
                    return Err(Error::Construction("no room for a support ball at the requested margin".into()));
                }
                r_max
            }
        };
        let eps_m = params.eps_m.unwrap_or(radius / 4.0);
        if !(eps_m > 0.0 && eps_m < radius) {
            return Err(Error::Config("eps_m must lie in (0, radius)".into()));
        }
        let kappa = d as f64 * (params.c0 - d as f64) / 2.0 + d as f64 + 3.0 * params.alpha as f64 + 2.0;
        let mut out = Self {
            frame,
            params,
            seed,
            center,
            radius,
            eps_m,
            log_norm: 0.0,
            p_min: 0.0,
            p_max: 0.0,
            kappa,
        };
        let z = out.radial_mass(radius, 64, 16);
        out.log_norm = z.ln();
        out.p_max = out.profile(0.0) / z;
        out.p_min = out.profile(radius - eps_m / 2.0) / z;
        Ok(out)
    }

    pub fn ambient_dim(&self) -> usize {
        self.frame.ambient_dim
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.frame.intrinsic_dim
    }

    /// Unnormalised radial profile at distance `s` from the centre.
    #[inline]
    pub fn profile(&self, s: f64) -> f64 {
        let r = self.radius;
        if s > r {
            return 0.0;
        }
        let e = self.params.c0 - self.intrinsic_dim() as f64;
        (r - s).powf(e) * (1.0 + self.params.bump * (1.0 - (s / r).powi(2)))
    }

    /// `∫_{|u-c|<=s} profile` by Gauss–Legendre in the radial variable.
    fn radial_mass(&self, s: f64, nodes: usize, panels: usize) -> f64 {
        let d = self.intrinsic_dim() as f64;
        let sphere = 2.0 * std::f64::consts::PI.powf(d / 2.0) / gamma(d / 2.0);
        let gl = GaussLegendre::new(nodes);
        sphere * gl.integrate_composite(0.0, s.min(self.radius), panels, |rho| self.profile(rho) * rho.powf(d - 1.0))
    }

    /// Normalised density with respect to `d`-dimensional volume, in slice
    /// coordinates.
    pub fn density(&self, u: &[f64]) -> f64 {
        let s = dist(u, &self.center);
        if s > self.radius {
            0.0
        } else {
            self.profile(s) * (-self.log_norm).exp()
        }
    }

    /// Log density in slice coordinates (`-inf` off the support).
    pub fn log_density(&self, u: &[f64]) -> f64 {
        let p = self.density(u);
        if p > 0.0 {
            p.ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    /// Distribution function of the slice coordinate when `d = 1`.
    pub fn cdf_1d(&self, u: f64) -> Result<f64> {
        if self.intrinsic_dim() != 1 {
            return Err(Error::Unsupported("cdf_1d needs d = 1".into()));
        }
        let c = self.center[0];
        let r = self.radius;
        if u <= c - r {
            return Ok(0.0);
        }
        if u >= c + r {
            return Ok(1.0);
        }
        // radial symmetry: F(c + s) = 1/2 + mass(|v-c| <= s)/2
        let half = 0.5 * self.radial_mass((u - c).abs(), 64, 8) * (-self.log_norm).exp();
        Ok(if u >= c { 0.5 + half } else { 0.5 - half })
    }

    /// Draws slice coordinates by rejection against the peak of the profile.
    fn sample_slice<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let d = self.intrinsic_dim();
        let peak = self.profile(0.0);
        let max_tries = (10.0 / MIN_ACCEPTANCE) as usize;
        for _ in 0..max_tries {
            let u = uniform_in_ball(&self.center, self.radius, d, rng);
            let s = dist(&u, &self.center);
            if rng.random::<f64>() * peak < self.profile(s) {
                return Ok(u);
            }
        }
        Err(Error::Config(format!(
            "rejection sampler accepted nothing in {max_tries} proposals (envelope too loose)"
        )))
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn uniform_in_ball<R: Rng + ?Sized>(center: &[f64], radius: f64, d: usize, rng: &mut R) -> Vec<f64> {
    if d == 1 {
        return vec![center[0] + radius * rng.random_range(-1.0..1.0)];
    }
    let dir: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let scale = radius * rng.random::<f64>().powf(1.0 / d as f64) / n;
    center.iter().zip(&dir).map(|(c, v)| c + scale * v).collect()
}

/// Weighted point cloud in the cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    pub points: Vec<CubePoint>,
    pub weights: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(points: Vec<CubePoint>, weights: Vec<f64>) -> Result<Self> {
        let m = Self { points, weights };
        m.validate()?;
        Ok(m)
    }

    /// Equal weights on every point.
    pub fn uniform(points: Vec<CubePoint>) -> Result<Self> {
        let n = points.len();
        Self::new(points, vec![1.0 / n.max(1) as f64; n])
    }

    /// Equal-weight atoms at the given 1-D locations.
    pub fn atoms_1d(locations: &[f64]) -> Result<Self> {
        let pts = locations
            .iter()
            .map(|&x| CubePoint::new(vec![x]))
            .collect::<Result<Vec<_>>>()?;
        Self::uniform(pts)
    }

    /// Two equal atoms at 0.3 and 0.7: the default hard target.
    pub fn two_atom() -> Self {
        Self::atoms_1d(&[0.3, 0.7]).expect("valid atoms")
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::Config("empirical measure needs at least one point".into()));
        }
        if self.points.len() != self.weights.len() {
            return Err(Error::Config("points and weights differ in length".into()));
        }
        let dim = self.points[0].dim();
        if self.points.iter().any(|p| p.dim() != dim) {
            return Err(Error::Config("points have inconsistent dimensions".into()));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config("weights must be finite and non-negative".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("weights sum to {total}, not 1")));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Checks that every atom keeps distance `rho_min` from the cube boundary.
    pub fn check_margin(&self, rho_min: f64) -> Result<()> {
        match self.points.iter().find(|p| p.boundary_distance() < rho_min) {
            Some(p) => Err(Error::Construction(format!(
                "atom {:?} is closer than {rho_min} to the cube boundary",
                &**p
            ))),
            None => Ok(()),
        }
    }
}

/// A target distribution `μ` on `[0,1]^D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetMeasure {
    Empirical(EmpiricalMeasure),
    Subspace(SubspaceDensity),
}

impl TargetMeasure {
    pub fn dim(&self) -> usize {
        match self {
            TargetMeasure::Empirical(m) => m.dim(),
            TargetMeasure::Subspace(s) => s.ambient_dim(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: TargetMeasure = serde_json::from_str(text)?;
        match &t {
            TargetMeasure::Empirical(m) => m.validate()?,
            TargetMeasure::Subspace(s) => s.frame.validate()?,
        }
        Ok(t)
    }
}

/// Random subspace target with the default support geometry.
/// Requires `1 <= d <= D`, integer `alpha > d/2` and `c0 >= alpha + d`.
pub fn make_subspace_target(
    ambient_dim: usize,
    intrinsic_dim: usize,
    alpha: u32,
    c0: f64,
    seed: u64,
) -> Result<TargetMeasure> {
    if !(c0 >= alpha as f64 + intrinsic_dim as f64) {
        return Err(Error::Config(format!("need c0 >= alpha + d, got c0={c0}")));
    }
    let frame = SubspaceFrame::random(ambient_dim, intrinsic_dim, seed)?;
    let density = SubspaceDensity::build(frame, SubspaceParams::new(alpha, c0), seed)?;
    Ok(TargetMeasure::Subspace(density))
}

/// `n` i.i.d. draws from `μ`.
pub fn sample_target<R: Rng + ?Sized>(mu: &TargetMeasure, n: usize, rng: &mut R) -> Result<Vec<CubePoint>> {
    if n == 0 {
        return Err(Error::Domain("sample size must be >= 1".into()));
    }
    match mu {
        TargetMeasure::Empirical(m) => {
            let dist = WeightedIndex::new(&m.weights)
                .map_err(|e| Error::Config(format!("invalid weights: {e}")))?;
            Ok((0..n).map(|_| m.points[dist.sample(rng)].clone()).collect())
        }
        TargetMeasure::Subspace(s) => (0..n)
            .map(|_| {
                let u = s.sample_slice(rng)?;
                let x = s.frame.push_forward(&u);
                CubePoint::new(x.into_iter().map(|c| c.clamp(0.0, 1.0)).collect())
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_1d() -> SubspaceDensity {
        let frame = SubspaceFrame::new(1, 1, vec![1.0], vec![0.5]).unwrap();
        let mut p = SubspaceParams::new(1, 1.0);
        p.radius = Some(0.25);
        p.bump = 0.0;
        SubspaceDensity::build(frame, p, 0).unwrap()
    }

    #[test]
    fn flat_target_is_uniform_on_its_segment() {
        let s = flat_1d();
        assert!((s.density(&[0.0]) - 2.0).abs() < 1e-12);
        assert!((s.density(&[0.2]) - 2.0).abs() < 1e-12);
        assert_eq!(s.density(&[0.3]), 0.0);
        assert!((s.cdf_1d(0.0).unwrap() - 0.5).abs() < 1e-12);
        assert!((s.cdf_1d(-0.125).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn normalisation_matches_cartesian_quadrature() {
        // oracle: Gauss-Legendre over the segment at twice the resolution
        let TargetMeasure::Subspace(s) = make_subspace_target(1, 1, 1, 2.5, 11).unwrap() else {
            unreachable!()
        };
        let gl = GaussLegendre::new(128);
        let c = s.center[0];
        let total = gl.integrate_composite(c - s.radius, c + s.radius, 32, |u| s.density(&[u]));
        assert!((total - 1.0).abs() < 1e-6, "{total}");

        let TargetMeasure::Subspace(s2) = make_subspace_target(3, 2, 2, 4.0, 5).unwrap() else {
            unreachable!()
        };
        // polar oracle in the plane
        let gl = GaussLegendre::new(128);
        let total = 2.0 * std::f64::consts::PI
            * gl.integrate_composite(0.0, s2.radius, 32, |r| s2.density(&[r, 0.0]) * r);
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }

    #[test]
    fn two_dimensional_samples_lie_on_the_segment() {
        let mu = make_subspace_target(2, 1, 1, 3.0, 4).unwrap();
        let TargetMeasure::Subspace(s) = &mu else { unreachable!() };
        let mut rng = rng::stream(1, Stream::Data, 0);
        let pts = sample_target(&mu, 2000, &mut rng).unwrap();
        for p in &pts {
            let n = s.frame.normal_component(p);
            assert!(n.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1e-12);
            assert!(p.boundary_distance() >= s.params.rho_min - 1e-12);
            let u = s.frame.pull_back(p);
            let back = s.frame.push_forward(&u);
            for (a, b) in back.iter().zip(p.iter()) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn empirical_sampling() {
        let single = TargetMeasure::Empirical(EmpiricalMeasure::atoms_1d(&[0.4]).unwrap());
        let mut rng = rng::stream(2, Stream::Data, 0);
        let five = sample_target(&single, 5, &mut rng).unwrap();
        assert!(five.iter().all(|p| p[0] == 0.4));

        let two = TargetMeasure::Empirical(EmpiricalMeasure::atoms_1d(&[0.2, 0.8]).unwrap());
        let pts = sample_target(&two, 100_000, &mut rng).unwrap();
        let frac = pts.iter().filter(|p| p[0] == 0.2).count() as f64 / 1e5;
        assert!((frac - 0.5).abs() < 0.01, "{frac}");
        assert!(sample_target(&two, 0, &mut rng).is_err());
    }

    #[test]
    fn flat_sample_mean_matches_midpoint() {
        let s = flat_1d();
        let mu = TargetMeasure::Subspace(s.clone());
        let mut rng = rng::stream(3, Stream::Data, 0);
        let n = 20_000;
        let pts = sample_target(&mu, n, &mut rng).unwrap();
        let mean = pts.iter().map(|p| s.frame.pull_back(p)[0]).sum::<f64>() / n as f64;
        // uniform on [-0.25, 0.25]: sigma = 0.5/sqrt(12)
        let sigma = 0.5 / 12f64.sqrt();
        assert!(mean.abs() < 3.0 * sigma / (n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn construction_errors() {
        assert!(make_subspace_target(2, 3, 2, 5.0, 0).is_err());
        assert!(make_subspace_target(2, 2, 1, 5.0, 0).is_err()); // alpha <= d/2
        assert!(make_subspace_target(2, 1, 1, 1.5, 0).is_err()); // c0 < alpha + d
        let frame = SubspaceFrame::new(1, 1, vec![1.0], vec![0.5]).unwrap();
        let mut p = SubspaceParams::new(1, 2.0);
        p.radius = Some(0.45);
        assert!(matches!(SubspaceDensity::build(frame, p, 0), Err(Error::Construction(_))));
        assert!(SubspaceFrame::new(2, 1, vec![1.0, 1.0], vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let mu = make_subspace_target(3, 1, 1, 2.0, 9).unwrap();
        let back = TargetMeasure::from_json(&mu.to_json().unwrap()).unwrap();
        assert_eq!(mu, back);
        let e = TargetMeasure::Empirical(EmpiricalMeasure::two_atom());
        assert_eq!(TargetMeasure::from_json(&e.to_json().unwrap()).unwrap(), e);
    }

    #[test]
    fn density_bounds_are_consistent() {
        let TargetMeasure::Subspace(s) = make_subspace_target(2, 1, 1, 3.0, 1).unwrap() else {
            unreachable!()
        };
        assert!(s.p_min > 0.0 && s.p_min <= s.p_max);
        assert!((s.kappa - (1.0 + 1.0 + 3.0 + 2.0)).abs() < 1e-12);
        assert!(s.radius > 0.39);
    }
}
