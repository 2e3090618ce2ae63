//! Acceptance run: one PASS/FAIL line per criterion, with its time budget.
//! Exits non-zero if any criterion fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;
use reflected_diffusion::experiment::{run_sample, run_train, ExperimentConfig};
use reflected_diffusion::geometry::CubePoint;
use reflected_diffusion::kernel::{
    choose_cutoff, grad_log_q, log_q, log_q1d, score_empirical, score_subspace_oracle, KernelConfig, OracleQuadrature,
};
use reflected_diffusion::metrics::tv_to_uniform;
use reflected_diffusion::net::{NetSpec, ScoreModel};
use reflected_diffusion::quadrature::{simpson, GaussLegendre};
use reflected_diffusion::rng::{stream, Stream};
use reflected_diffusion::targets::{make_subspace_target, sample_target, EmpiricalMeasure, TargetMeasure};
use reflected_diffusion::verify::{run_suite, Suite, VerifyConfig};
use reflected_diffusion::Result;

type Outcome = Result<(bool, String)>;

struct Ctx {
    root: PathBuf,
    /// samples.csv from the first runs of criteria 9 and 10.
    first_csv: Vec<(String, PathBuf)>,
}

fn config(out: &Path, run_id: &str, sets: &[&str]) -> Result<ExperimentConfig> {
    let mut all: Vec<String> = sets.iter().map(|s| s.to_string()).collect();
    all.push(format!("run_id={run_id}"));
    all.push(format!("out_dir={}", serde_json::to_string(out).expect("path")));
    ExperimentConfig::from_json_with("{}", &all, Some(20_240_601))
}

fn c1() -> Outcome {
    let cfg = KernelConfig::default();
    let gl = GaussLegendre::new(32);
    let mut worst = 0.0f64;
    for t in [1e-4, 1e-2, 1.0, 10.0] {
        let k = choose_cutoff(t, 1, &cfg)?.k;
        for y in [0.0, 0.37, 1.0] {
            let total = gl.integrate_composite(0.0, 1.0, 400, |x| log_q1d(y, x, t, k).exp());
            worst = worst.max((total - 1.0).abs());
        }
    }
    Ok((worst <= 1e-8, format!("max |mass - 1| = {worst:.2e}")))
}

fn c2() -> Outcome {
    let cfg = KernelConfig::default();
    let mut worst = 0.0f64;
    for (s, t) in [(0.01f64, 0.02f64), (0.1, 0.4)] {
        let k = choose_cutoff(s.min(t), 1, &cfg)?.k.max(choose_cutoff(s + t, 1, &cfg)?.k);
        for (x, y) in [(0.2, 0.7), (0.0, 0.4), (0.9, 1.0), (0.5, 0.5)] {
            let lhs = simpson(0.0, 1.0, 2049, |m| (log_q1d(m, x, s, k) + log_q1d(y, m, t, k)).exp());
            let rhs = log_q1d(y, x, s + t, k).exp();
            worst = worst.max(((lhs - rhs) / rhs).abs());
        }
    }
    Ok((worst < 1e-6, format!("max relative error {worst:.2e}")))
}

fn c3() -> Outcome {
    let cfg = KernelConfig::default();
    // (i) against finite differences of its own log-density
    let mut r = stream(31, Stream::Verify, 0);
    let pts: Vec<CubePoint> = (0..5)
        .map(|_| CubePoint::new(vec![r.random(), r.random()]))
        .collect::<Result<_>>()?;
    let mu = EmpiricalMeasure::uniform(pts)?;
    let h = 1e-5;
    let mut fd_err = 0.0f64;
    for _ in 0..100 {
        let x: Vec<f64> = (0..2).map(|_| r.random_range(h..1.0 - h)).collect();
        let t = (r.random_range(0.05f64.ln()..0.0)).exp();
        let s = score_empirical(&mu, &x, t, &cfg)?;
        for i in 0..2 {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[i] += h;
            xm[i] -= h;
            let fd = (score_empirical(&mu, &xp, t, &cfg)?.log_density - score_empirical(&mu, &xm, t, &cfg)?.log_density) / (2.0 * h);
            fd_err = fd_err.max((fd - s.value[i]).abs());
        }
    }

    // (ii) subspace oracle against a 1e5-atom sample, within 3 standard errors
    // of the self-normalised estimator
    let target = make_subspace_target(2, 1, 1, 3.0, 7)?;
    let TargetMeasure::Subspace(sub) = &target else { unreachable!() };
    let mut dr = stream(32, Stream::Data, 0);
    let atoms = sample_target(&target, 100_000, &mut dr)?;
    let normal = [-sub.frame.entry(1, 0), sub.frame.entry(0, 0)];
    let quad = OracleQuadrature::default();
    let (mut worst_z, mut checked) = (0.0f64, 0);
    for t in [0.02, 0.1] {
        for k in 0..5 {
            let u = sub.center[0] + sub.radius * (k as f64 / 4.0 - 0.5) * 1.6;
            let base = sub.frame.push_forward(&[u]);
            let x: Vec<f64> = base.iter().zip(&normal).map(|(b, n)| (b + 0.05 * n).clamp(0.0, 1.0)).collect();
            let oracle = score_subspace_oracle(sub, &x, t, &cfg, &quad)?;
            let lw: Vec<f64> = atoms.iter().map(|y| log_q(y, &x, t, &cfg)).collect::<Result<_>>()?;
            let top = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = lw.iter().map(|l| (l - top).exp()).collect();
            let wsum: f64 = w.iter().sum();
            let grads: Vec<Vec<f64>> = atoms.iter().map(|y| grad_log_q(y, &x, t, &cfg)).collect::<Result<_>>()?;
            for i in 0..2 {
                let est: f64 = w.iter().zip(&grads).map(|(a, g)| a * g[i]).sum::<f64>() / wsum;
                let var: f64 = w.iter().zip(&grads).map(|(a, g)| (a * (g[i] - est)).powi(2)).sum::<f64>() / (wsum * wsum);
                let z = (est - oracle.value[i]).abs() / (var.sqrt() + 1e-9);
                worst_z = worst_z.max(z);
                checked += 1;
            }
        }
    }
    Ok((
        fd_err < 1e-5 && worst_z < 3.0,
        format!("finite-difference error {fd_err:.2e}; oracle vs empirical max |z| = {worst_z:.2} over {checked} components"),
    ))
}

fn c4() -> Outcome {
    let r = run_suite(Suite::Truncation, &VerifyConfig::default())?;
    let slope = r.slope.unwrap_or(f64::NAN);
    Ok((r.pass && slope <= -0.8, format!("slope {slope:.2}, fitted C {:.2e}", r.fitted_constant)))
}

fn c5() -> Outcome {
    let r = run_suite(Suite::EarlyStopping, &VerifyConfig::default())?;
    let rows: Vec<String> = (0..r.params.len())
        .map(|i| format!("t={:.0e}: {:.2e} <= {:.2e}", r.params[i], r.measured[i], r.bound[i] + r.tolerance[i]))
        .collect();
    Ok((r.pass, rows.join(", ")))
}

fn c6() -> Outcome {
    let mut ok = true;
    let mut worst = f64::NEG_INFINITY;
    for t in [0.25, 0.5, 1.0, 2.0] {
        let bound = 4.0 / std::f64::consts::PI * (-std::f64::consts::PI.powi(2) * t / 2.0).exp();
        for x0 in [0.0, 0.25, 0.5] {
            let tv = tv_to_uniform(&CubePoint::new(vec![x0])?, t, 4097)?;
            ok &= tv <= bound;
            worst = worst.max(tv / bound);
        }
    }
    Ok((ok, format!("max tv/bound = {worst:.3}")))
}

fn c7() -> Outcome {
    let cfg = VerifyConfig::default();
    let a = run_suite(Suite::ScoreGrowth, &cfg)?;
    let e = run_suite(Suite::TubeScore, &cfg)?;
    Ok((
        a.pass && e.pass,
        format!(
            "growth {} (C={:.3}), tube {} (C={:.3})",
            if a.pass { "ok" } else { "violated" },
            a.fitted_constant,
            if e.pass { "ok" } else { "violated" },
            e.fitted_constant
        ),
    ))
}

fn c8() -> Outcome {
    let mut r = stream(8, Stream::Verify, 0);
    let mut worst = 0.0f64;
    for k in 0..20u64 {
        let dim = 1 + (k % 3) as usize;
        let depth = 1 + ((k / 3) % 3) as usize;
        let mut spec = NetSpec::new(dim, depth, 6 + 2 * (k % 4) as usize, 0, 0.01, 0.02, 512);
        spec.clip_scale = if k % 2 == 0 { 1e3 } else { 0.02 };
        let m = ScoreModel::init(spec, k)?;
        let x: Vec<f64> = (0..dim).map(|_| r.random()).collect();
        let t = r.random_range(0.01..0.02);
        let up: Vec<f64> = (0..dim).map(|_| r.random_range(-1.0..1.0)).collect();
        let g = m.backward(&x, t, &up)?;
        let h = 1e-5;
        let (mut err, mut norm) = (0.0, 0.0);
        for i in 0..m.params.len() {
            let mut p = m.clone();
            p.params[i] += h;
            let fp: f64 = p.forward(&x, t)?.iter().zip(&up).map(|(a, b)| a * b).sum();
            p.params[i] -= 2.0 * h;
            let fm: f64 = p.forward(&x, t)?.iter().zip(&up).map(|(a, b)| a * b).sum();
            let fd = (fp - fm) / (2.0 * h);
            err += (fd - g[i]).powi(2);
            norm += fd * fd;
        }
        // a clipped 1-D output is flat, so its exact gradient is 0
        worst = worst.max(err.sqrt() / norm.sqrt().max(1e-6));
    }
    Ok((worst <= 1e-4, format!("max relative gradient error {worst:.2e}")))
}

const C9: &[&str] = &["grid.t_lo=1e-4", "grid.t_hi=4", "sample.score=\"exact\"", "sample.n_samples=10000", "sample.substeps=64"];

fn c9(ctx: &mut Ctx) -> Outcome {
    let cfg = config(&ctx.root.join("first"), "c9", C9)?;
    let m = run_sample(&cfg)?;
    ctx.first_csv.push(("c9".into(), cfg.run_dir().join("samples.csv")));
    Ok((m.measured_w1 < 0.03, format!("W1 {:.4} (< 0.03)", m.measured_w1)))
}

const C10: &[&str] = &[
    "target.kind=\"subspace\"",
    "target.ambient_dim=2",
    "target.intrinsic_dim=1",
    "target.alpha=1",
    "target.c0=3",
    "target.frame_seed=7",
    "n_data=4096",
    "grid.t_lo=0.000244140625",
    "grid.t_hi=4",
    "net.depth=3",
    "net.width=64",
    "train.steps=2000",
    "sample.n_samples=4096",
    "sample.substeps=16",
];

fn c10_config(root: &Path, id: &str, score: &str) -> Result<ExperimentConfig> {
    let mut sets = C10.to_vec();
    let s = format!("sample.score=\"{score}\"");
    sets.push(&s);
    config(root, id, &sets)
}

fn c10(ctx: &mut Ctx) -> Outcome {
    let root = ctx.root.join("first");
    let learned_cfg = c10_config(&root, "c10", "learned")?;
    let (train, _) = run_train(&learned_cfg)?;
    let learned = run_sample(&learned_cfg)?;
    ctx.first_csv.push(("c10".into(), learned_cfg.run_dir().join("samples.csv")));
    let exact = run_sample(&c10_config(&root, "c10-exact", "exact")?)?;
    let uniform = run_sample(&c10_config(&root, "c10-uniform", "uniform")?)?;
    let (l, e, u) = (learned.measured_w1, exact.measured_w1, uniform.measured_w1);
    Ok((
        l < 2.0 * e && l < u,
        format!("K={} intervals; sliced W1 learned {l:.4}, exact {e:.4} (limit {:.4}), uniform {u:.4}", train.k_intervals, 2.0 * e),
    ))
}

fn c11(ctx: &mut Ctx) -> Outcome {
    use reflected_diffusion::experiment::rate_study;
    let cfg = config(
        &ctx.root,
        "c11",
        &[
            "target.kind=\"subspace\"",
            "target.ambient_dim=1",
            "target.intrinsic_dim=1",
            "target.alpha=1",
            "target.c0=3",
            "grid.theorem_preset=true",
            "net.depth=2",
            "net.width=32",
            "train.steps=6000",
            "sample.n_samples=40000",
            "rate_study.n_values=[256,1024,4096]",
            "rate_study.seeds=[0,1]",
        ],
    )?;
    let s = rate_study(&cfg)?;
    let means: Vec<String> = s.mean_w1.iter().map(|m| m.map_or("-".into(), |v| format!("{v:.4}"))).collect();
    let slope = s.slope.unwrap_or(f64::NAN);
    let failed = s.rows.iter().filter(|r| r.error.is_some()).count();
    Ok((
        s.nonincreasing_within_noise && slope < 0.0 && failed == 0,
        format!("mean W1 over n=256,1024,4096: [{}]; slope {slope:.3}", means.join(", ")),
    ))
}

fn c12(ctx: &mut Ctx) -> Outcome {
    let root = ctx.root.join("second");
    let again9 = config(&root, "c9", C9)?;
    run_sample(&again9)?;
    let again10 = c10_config(&root, "c10", "learned")?;
    run_train(&again10)?;
    run_sample(&again10)?;
    let second = [again9.run_dir().join("samples.csv"), again10.run_dir().join("samples.csv")];
    if ctx.first_csv.len() != 2 {
        return Ok((false, "criteria 9 and 10 did not both produce samples".into()));
    }
    let mut notes = Vec::new();
    let mut ok = true;
    for ((name, a), b) in ctx.first_csv.iter().zip(&second) {
        let same = fs::read(a)? == fs::read(b)?;
        ok &= same;
        notes.push(format!("{name} {}", if same { "identical" } else { "DIFFERENT" }));
    }
    Ok((ok, notes.join(", ")))
}

fn main() -> ExitCode {
    let root = std::env::temp_dir().join(format!("rdiff-acceptance-{}", std::process::id()));
    let mut ctx = Ctx {
        root: root.clone(),
        first_csv: Vec::new(),
    };
    let plain: Vec<(u32, &str, u64, fn() -> Outcome)> = vec![
        (1, "kernel normalisation", 5, c1),
        (2, "Chapman-Kolmogorov", 10, c2),
        (3, "score consistency", 60, c3),
        (4, "truncation decay", 60, c4),
        (5, "early stopping", 30, c5),
        (6, "ergodicity", 10, c6),
        (7, "score growth", 120, c7),
        (8, "gradient correctness", 10, c8),
    ];
    let staged: Vec<(u32, &str, u64, fn(&mut Ctx) -> Outcome)> = vec![
        (9, "end-to-end, exact score", 120, c9),
        (10, "end-to-end, learned score", 1200, c10),
        (11, "rate study", 3600, c11),
        (12, "determinism", 1500, c12),
    ];
    let mut failures = 0;
    let mut report = |id: u32, name: &str, limit: u64, elapsed: Duration, out: Outcome| {
        let (ok, detail) = match out {
            Ok((ok, d)) => (ok, d),
            Err(e) => (false, format!("error: {e}")),
        };
        let in_time = elapsed <= Duration::from_secs(limit);
        let pass = ok && in_time;
        if !pass {
            failures += 1;
        }
        let timing = format!("{:.1}s of {limit}s{}", elapsed.as_secs_f64(), if in_time { "" } else { ", over budget" });
        println!("criterion {id:2} {:4} {name}: {detail} [{timing}]", if pass { "PASS" } else { "FAIL" });
    };
    for (id, name, limit, f) in plain {
        let st = Instant::now();
        let out = f();
        report(id, name, limit, st.elapsed(), out);
    }
    for (id, name, limit, f) in staged {
        let st = Instant::now();
        let out = f(&mut ctx);
        report(id, name, limit, st.elapsed(), out);
    }
    let _ = fs::remove_dir_all(&root);
    if failures == 0 {
        println!("acceptance: all 12 criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failures} of 12 criteria fail");
        ExitCode::FAILURE
    }
}
