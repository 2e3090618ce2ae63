//! Distances between sample sets, distances to the uniform law and simple
//! goodness-of-fit tests.

use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::geometry::CubePoint;
use crate::kernel::{choose_cutoff, log_q1d, KernelConfig};
use crate::quadrature::{simpson_weights, uniform_grid};
use crate::rng::{self, Stream};

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Exact 1-D Wasserstein-1 distance between two empirical measures.
pub fn w1_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Domain("w1 needs two non-empty samples".into()));
    }
    let (sa, sb) = (sorted(a), sorted(b));
    if sa.len() == sb.len() {
        return Ok(sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).sum::<f64>() / sa.len() as f64);
    }
    // ∫ |F_a - F_b| over the merged support
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut prev = sa[0].min(sb[0]);
    let mut total = 0.0;
    while i < sa.len() || j < sb.len() {
        let next = match (sa.get(i), sb.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - prev);
        while i < sa.len() && sa[i] == next {
            i += 1;
        }
        while j < sb.len() && sb[j] == next {
            j += 1;
        }
        prev = next;
    }
    Ok(total)
}

/// Mean of `w1_1d` over `n_proj` random unit directions.
pub fn sliced_w1(a: &[CubePoint], b: &[CubePoint], n_proj: usize, seed: u64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Domain("sliced w1 needs two non-empty samples".into()));
    }
    if n_proj == 0 {
        return Err(Error::Domain("need at least one projection".into()));
    }
    let dim = a[0].dim();
    if b[0].dim() != dim {
        return Err(Error::Domain("samples have different dimensions".into()));
    }
    let mut r = rng::stream(seed, Stream::Projection, 0);
    let mut total = 0.0;
    for _ in 0..n_proj {
        let mut theta: Vec<f64> = (0..dim).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
        let norm = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
        theta.iter_mut().for_each(|v| *v /= norm);
        let project = |pts: &[CubePoint]| -> Vec<f64> {
            pts.iter().map(|p| p.iter().zip(&theta).map(|(x, w)| x * w).sum()).collect()
        };
        total += w1_1d(&project(a), &project(b))?;
    }
    Ok(total / n_proj as f64)
}

/// Coordinate `k` of every point.
pub fn coordinate(points: &[CubePoint], k: usize) -> Vec<f64> {
    points.iter().map(|p| p[k]).collect()
}

/// W1 for `D = 1`, sliced W1 otherwise.
pub fn w1_auto(a: &[CubePoint], b: &[CubePoint], n_proj: usize, seed: u64) -> Result<f64> {
    if a.first().map(|p| p.dim()) == Some(1) {
        w1_1d(&coordinate(a, 0), &coordinate(b, 0))
    } else {
        sliced_w1(a, b, n_proj, seed)
    }
}

/// `∫ √(F(1-F))` of the empirical distribution function; `J/√n` bounds the
/// mean W1 between an `n`-sample and its law.
pub fn sqrt_cdf_functional(samples: &[f64]) -> f64 {
    let s = sorted(samples);
    let n = s.len() as f64;
    s.windows(2)
        .enumerate()
        .map(|(k, w)| {
            let f = (k + 1) as f64 / n;
            (f * (1.0 - f)).sqrt() * (w[1] - w[0])
        })
        .sum()
}

/// `½ ∫ |q_t(x0, y) - 1| dy` by Simpson with `nodes` points per axis.
/// Needs `D <= 2`.
pub fn tv_to_uniform(x0: &CubePoint, t: f64, nodes: usize) -> Result<f64> {
    let dim = x0.dim();
    if dim > 2 {
        return Err(Error::Unsupported(format!("tensor quadrature needs D <= 2, got {dim}")));
    }
    if nodes < 3 || nodes % 2 == 0 {
        return Err(Error::Config("Simpson needs an odd node count >= 3".into()));
    }
    let k = choose_cutoff(t, dim, &KernelConfig::default())?.k;
    let ys = uniform_grid(0.0, 1.0, nodes);
    let ws = simpson_weights(0.0, 1.0, nodes);
    let axis = |c: f64| -> Vec<f64> { ys.iter().map(|&y| log_q1d(y, c, t, k).exp()).collect() };
    let tv = if dim == 1 {
        let q = axis(x0[0]);
        q.iter().zip(&ws).map(|(v, w)| w * (v - 1.0).abs()).sum::<f64>()
    } else {
        let (q0, q1) = (axis(x0[0]), axis(x0[1]));
        let mut total = 0.0;
        for (a, wa) in q0.iter().zip(&ws) {
            let row: f64 = q1.iter().zip(&ws).map(|(b, wb)| wb * (a * b - 1.0).abs()).sum();
            total += wa * row;
        }
        total
    };
    Ok(0.5 * tv)
}

/// One-sample Kolmogorov–Smirnov statistic against a distribution function.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let s = sorted(samples);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let (sa, sb) = (sorted(a), sorted(b));
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < sa.len() && j < sb.len() {
        let x = sa[i].min(sb[j]);
        while i < sa.len() && sa[i] == x {
            i += 1;
        }
        while j < sb.len() && sb[j] == x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic KS critical value `√(-ln(α/2)/2) · √(1/n_eff)`.
pub fn ks_critical(n_eff: f64, alpha: f64) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt() / n_eff.sqrt()
}

/// Pearson χ² test of uniformity on `[0,1]` with `bins` equal bins; returns
/// the statistic and the p-value.
pub fn chi2_uniform(samples: &[f64], bins: usize) -> Result<(f64, f64)> {
    if bins < 2 || samples.is_empty() {
        return Err(Error::Domain("chi-squared test needs >= 2 bins and samples".into()));
    }
    let mut counts = vec![0usize; bins];
    for &x in samples {
        counts[((x * bins as f64) as usize).min(bins - 1)] += 1;
    }
    let expect = samples.len() as f64 / bins as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
    let dist = ChiSquared::new((bins - 1) as f64).map_err(|e| Error::Numerical(e.to_string()))?;
    Ok((stat, 1.0 - dist.cdf(stat)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[f64]) -> Vec<CubePoint> {
        v.iter().map(|&x| CubePoint::new(vec![x]).unwrap()).collect()
    }

    #[test]
    fn w1_examples() {
        assert_eq!(w1_1d(&[0.1, 0.5, 0.3], &[0.5, 0.3, 0.1]).unwrap(), 0.0);
        assert_eq!(w1_1d(&[0.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(w1_1d(&[0.0, 1.0], &[0.5, 0.5]).unwrap(), 0.5);
        // unequal sizes: {0,1} vs {0.5}
        assert!((w1_1d(&[0.0, 1.0], &[0.5]).unwrap() - 0.5).abs() < 1e-15);
        // {0} vs {0, 1, 1}: mass 2/3 moves distance 1
        assert!((w1_1d(&[0.0], &[0.0, 1.0, 1.0]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(w1_1d(&[], &[1.0]).is_err());
    }

    #[test]
    fn w1_is_a_metric_on_random_triples() {
        let mut r = rng::stream(0, Stream::Verify, 0);
        for _ in 0..100 {
            let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| r.random::<f64>()).collect() };
            let (a, b, c) = (draw(7), draw(11), draw(5));
            let ab = w1_1d(&a, &b).unwrap();
            assert_eq!(ab, w1_1d(&b, &a).unwrap());
            assert!(ab <= w1_1d(&a, &c).unwrap() + w1_1d(&c, &b).unwrap() + 1e-12);
        }
    }

    #[test]
    fn sliced_w1_in_one_dimension_is_exact() {
        let a = pts(&[0.1, 0.4, 0.9]);
        let b = pts(&[0.2, 0.2, 0.5]);
        let exact = w1_1d(&coordinate(&a, 0), &coordinate(&b, 0)).unwrap();
        assert!((sliced_w1(&a, &b, 16, 1).unwrap() - exact).abs() < 1e-15);
        assert_eq!(sliced_w1(&a, &a, 8, 1).unwrap(), 0.0);
    }

    #[test]
    fn sliced_w1_of_a_translation() {
        let mut r = rng::stream(1, Stream::Verify, 0);
        let v = [0.03, -0.04];
        let a: Vec<CubePoint> = (0..2000)
            .map(|_| CubePoint::new(vec![r.random_range(0.2..0.8), r.random_range(0.2..0.8)]).unwrap())
            .collect();
        let b: Vec<CubePoint> = a
            .iter()
            .map(|p| CubePoint::new(vec![p[0] + v[0], p[1] + v[1]]).unwrap())
            .collect();
        let s = sliced_w1(&a, &b, 512, 2).unwrap();
        // E|<θ, v>| = |v| E|θ_1| = |v| · 2/π in the plane
        let norm = 0.05;
        assert!(s <= norm + 1e-12);
        assert!((s - norm * 2.0 / std::f64::consts::PI).abs() < 0.003, "{s}");
    }

    #[test]
    fn tv_examples() {
        let mid = CubePoint::new(vec![0.5]).unwrap();
        assert!(tv_to_uniform(&mid, 10.0, 4097).unwrap() < 1e-8);
        let bound = 4.0 / std::f64::consts::PI * (-std::f64::consts::PI.powi(2) * 0.5 / 2.0).exp();
        let tv = tv_to_uniform(&mid, 0.5, 4097).unwrap();
        assert!(tv <= bound, "{tv}");
        let a = tv_to_uniform(&mid, 0.25, 4097).unwrap();
        let c = tv_to_uniform(&mid, 1.0, 4097).unwrap();
        assert!(a >= tv && tv >= c);
        assert!((0.0..=1.0).contains(&a));
        let corner = CubePoint::new(vec![0.0, 0.3]).unwrap();
        let d2 = tv_to_uniform(&corner, 0.5, 513).unwrap();
        assert!(d2 > 0.0 && d2 < 1.0);
        assert!(matches!(
            tv_to_uniform(&CubePoint::new(vec![0.5; 3]).unwrap(), 0.5, 513),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn goodness_of_fit_helpers() {
        let mut r = rng::stream(2, Stream::Verify, 0);
        let u: Vec<f64> = (0..10_000).map(|_| r.random::<f64>()).collect();
        assert!(ks_statistic(&u, |x| x) < ks_critical(1e4, 0.01));
        let (_, p) = chi2_uniform(&u, 10).unwrap();
        assert!(p > 0.01);
        let skew: Vec<f64> = u.iter().map(|x| x * x).collect();
        assert!(ks_statistic(&skew, |x| x) > ks_critical(1e4, 0.01));
        assert!(ks_two_sample(&u, &u) == 0.0);
        // two atoms at 0.3/0.7 have J = 0.4 · 0.5
        let atoms: Vec<f64> = (0..1000).map(|k| if k % 2 == 0 { 0.3 } else { 0.7 }).collect();
        assert!((sqrt_cdf_functional(&atoms) - 0.2).abs() < 1e-12);
    }
}
