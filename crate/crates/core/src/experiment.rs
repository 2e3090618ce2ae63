//! Experiment configuration, output layout and the end-to-end commands.
//!
//! A run lives in `<out_dir>/<run_id>/` with `config.json`, `checkpoints/`,
//! `samples.csv`, `metrics.json` and `reports/`. Every file written here
//! starts with (or embeds) a provenance record: config hash, seed and git
//! revision. Nothing time-dependent is written, so reruns are byte-identical.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::forward::simulate_forward;
use crate::geometry::CubePoint;
use crate::kernel::KernelConfig;
use crate::net::{CheckpointMeta, ScoreModel};
use crate::rng::{self, Stream};
use crate::sampler::{generate_with_reference, write_samples_csv, SampleConfig, SampleMetrics};
use crate::score::{exact_score, ScoreFunction, ZeroScore};
use crate::targets::{make_subspace_target, sample_target, EmpiricalMeasure, TargetMeasure};
use crate::train::{
    interval_error, train_all, uniform_specs, weighted_error_sum, IntervalSummary, LogRow, PiecewiseScore, TimeGrid,
    TrainConfig,
};
use crate::verify::{verify_bounds, write_reports_csv, BoundReport, Suite, VerifyConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    /// Equal atoms at 0.3 and 0.7.
    TwoAtom,
    Atoms {
        points: Vec<Vec<f64>>,
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
    Subspace {
        ambient_dim: usize,
        intrinsic_dim: usize,
        alpha: u32,
        c0: f64,
        #[serde(default)]
        frame_seed: u64,
    },
}

impl Default for TargetSpec {
    fn default() -> Self {
        TargetSpec::TwoAtom
    }
}

impl TargetSpec {
    pub fn build(&self) -> Result<TargetMeasure> {
        match self {
            TargetSpec::TwoAtom => Ok(TargetMeasure::Empirical(EmpiricalMeasure::two_atom())),
            TargetSpec::Atoms { points, weights } => {
                let pts = points
                    .iter()
                    .map(|p| CubePoint::new(p.clone()))
                    .collect::<Result<Vec<_>>>()?;
                let m = match weights {
                    Some(w) => EmpiricalMeasure::new(pts, w.clone())?,
                    None => EmpiricalMeasure::uniform(pts)?,
                };
                Ok(TargetMeasure::Empirical(m))
            }
            TargetSpec::Subspace {
                ambient_dim,
                intrinsic_dim,
                alpha,
                c0,
                frame_seed,
            } => make_subspace_target(*ambient_dim, *intrinsic_dim, *alpha, *c0, *frame_seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub t_lo: f64,
    pub t_hi: f64,
    /// Largest ratio between consecutive grid times.
    pub c: f64,
    /// Take `T_lo`, `T_hi` from the sample size instead (subspace targets).
    pub theorem_preset: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            t_lo: 1e-3,
            t_hi: 4.0,
            c: 2.0,
            theorem_preset: false,
        }
    }
}

impl GridSpec {
    pub fn build(&self, target: &TargetSpec, n: usize) -> Result<TimeGrid> {
        if !self.theorem_preset {
            return TimeGrid::new(self.t_lo, self.t_hi, self.c);
        }
        match target {
            TargetSpec::Subspace {
                ambient_dim,
                intrinsic_dim,
                alpha,
                ..
            } => TimeGrid::theorem_preset(n, *ambient_dim, *intrinsic_dim, *alpha, self.c),
            _ => Err(Error::Config("the theorem preset needs a subspace target".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSection {
    pub depth: usize,
    pub width: usize,
    /// Bound on each weight; 0 disables the projection.
    pub norm_bound: f64,
}

impl Default for NetSection {
    fn default() -> Self {
        Self {
            depth: 3,
            width: 64,
            norm_bound: 0.0,
        }
    }
}

/// Which score drives `sample`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    /// Checkpoints from a previous `train` in the same run directory.
    Learned,
    Exact,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSection {
    pub n_samples: usize,
    pub substeps: usize,
    pub n_proj: usize,
    pub score: ScoreSource,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self {
            n_samples: 4096,
            substeps: 16,
            n_proj: 128,
            score: ScoreSource::Learned,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub n_paths: usize,
    /// Observation times `t_max · j/(n_times-1)`, `j = 0..n_times`.
    pub n_times: usize,
    pub t_max: f64,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            n_paths: 16,
            n_times: 101,
            t_max: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    /// Suite names; empty means all.
    pub suites: Vec<String>,
    pub params: VerifyConfig,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            suites: Vec::new(),
            params: VerifyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateSection {
    pub n_values: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for RateSection {
    fn default() -> Self {
        Self {
            n_values: vec![256, 1024, 4096],
            seeds: vec![0, 1],
        }
    }
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_n_data() -> usize {
    4096
}

fn default_n_eval() -> usize {
    256
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    /// Master seed; every stream derives from it.
    pub seed: u64,
    /// Directory name under `out_dir`; defaults to a prefix of the config hash.
    #[serde(default)]
    pub run_id: Option<String>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    /// Thread cap; `None` leaves it to the runtime.
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub target: TargetSpec,
    #[serde(default = "default_n_data")]
    pub n_data: usize,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub net: NetSection,
    /// `train.seed` is replaced by the master seed.
    #[serde(default)]
    pub train: TrainConfig,
    /// Monte-Carlo points per interval for the score-error report.
    #[serde(default = "default_n_eval")]
    pub n_eval: usize,
    #[serde(default)]
    pub sample: SampleSection,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub rate_study: RateSection,
}

/// Sets `path` (dotted) in a JSON tree, creating objects on the way. The
/// value is parsed as JSON, falling back to a plain string.
pub fn set_dotted(root: &mut Value, path: &str, raw: &str) -> Result<()> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("bad override key {path:?}")));
    }
    let mut node = root;
    for k in &keys[..keys.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("{path}: {k} is not an object")))?;
        node = obj.entry(k.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    node.as_object_mut()
        .ok_or_else(|| Error::Config(format!("{path}: parent is not an object")))?
        .insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl ExperimentConfig {
    /// Parses a config from JSON text, applies `key=value` overrides and
    /// an optional seed, then validates.
    pub fn from_json_with(text: &str, sets: &[String], seed: Option<u64>) -> Result<Self> {
        let mut root: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
        if !root.is_object() {
            return Err(Error::Config("config must be a JSON object".into()));
        }
        for s in sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {s:?} is not key=value")))?;
            set_dotted(&mut root, k.trim(), v.trim())?;
        }
        if let Some(seed) = seed {
            set_dotted(&mut root, "seed", &seed.to_string())?;
        }
        if root.get("seed").is_none() {
            return Err(Error::Config("a seed is required (config key or --seed)".into()));
        }
        let mut cfg: Self = serde_json::from_value(root).map_err(|e| Error::Config(e.to_string()))?;
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, sets: &[String], seed: Option<u64>) -> Result<Self> {
        let text = match path {
            Some(p) => fs::read_to_string(p)?,
            None => "{}".to_string(),
        };
        Self::from_json_with(&text, sets, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.n_data == 0 || self.n_eval == 0 {
            return Err(Error::Config("n_data and n_eval must be positive".into()));
        }
        if self.net.depth == 0 || self.net.width == 0 {
            return Err(Error::Config("network depth and width must be positive".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be positive".into()));
        }
        if let Some(id) = &self.run_id {
            if id.is_empty() || id.contains(['/', '\\']) || id == "." || id == ".." {
                return Err(Error::Config(format!("bad run id {id:?}")));
            }
        }
        if self.simulate.n_times == 0 || !(self.simulate.t_max >= 0.0) {
            return Err(Error::Config("simulate needs n_times >= 1 and t_max >= 0".into()));
        }
        if self.rate_study.n_values.is_empty() || self.rate_study.seeds.is_empty() {
            return Err(Error::Config("rate study needs n values and seeds".into()));
        }
        self.suites()?;
        self.train.validate()?;
        self.verify.params.validate()?;
        self.target.build()?;
        if !self.grid.theorem_preset {
            self.grid.build(&self.target, self.n_data)?;
        }
        Ok(())
    }

    pub fn suites(&self) -> Result<Vec<Suite>> {
        if self.verify.suites.is_empty() {
            return Ok(Suite::ALL.to_vec());
        }
        self.verify.suites.iter().map(|s| Suite::from_name(s)).collect()
    }

    /// SHA-256 of the canonical JSON, ignoring where the output goes and how
    /// many threads run.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        c.workers = None;
        c.run_id = None;
        let bytes = serde_json::to_vec(&c).expect("config serialises");
        hex(&Sha256::digest(&bytes))
    }

    pub fn run_dir(&self) -> PathBuf {
        let id = self.run_id.clone().unwrap_or_else(|| self.config_hash()[..12].to_string());
        self.out_dir.join(id)
    }
}

/// Stamped on every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub git_rev: String,
}

impl Provenance {
    pub fn of(cfg: &ExperimentConfig) -> Self {
        Self {
            config_hash: cfg.config_hash(),
            seed: cfg.seed,
            git_rev: git_rev(),
        }
    }

    /// Comment line heading each CSV file.
    pub fn csv_line(&self) -> String {
        format!("# config_hash={} seed={} git_rev={}", self.config_hash, self.seed, self.git_rev)
    }
}

/// `RDIFF_GIT_REV` if set, else `git rev-parse HEAD`, else `unknown`.
pub fn git_rev() -> String {
    if let Ok(v) = std::env::var("RDIFF_GIT_REV") {
        return v;
    }
    std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    provenance: &'a Provenance,
    #[serde(flatten)]
    body: &'a T,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json<T: Serialize>(path: &Path, prov: &Provenance, body: &T) -> Result<()> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, &Stamped { provenance: prov, body })?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

/// Run directory with the resolved config written into it.
pub fn prepare_run(cfg: &ExperimentConfig) -> Result<(PathBuf, Provenance)> {
    let dir = cfg.run_dir();
    fs::create_dir_all(&dir)?;
    let prov = Provenance::of(cfg);
    write_json(&dir.join("config.json"), &prov, &serde_json::json!({ "config": cfg }))?;
    Ok((dir, prov))
}

fn training_data(mu: &TargetMeasure, n: usize, seed: u64) -> Result<Vec<CubePoint>> {
    let mut r = rng::stream(seed, Stream::Data, 0);
    sample_target(mu, n, &mut r)
}

/// Forward paths from target draws, one row per (path, time).
pub fn run_simulate(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let (dir, prov) = prepare_run(cfg)?;
    let mu = cfg.target.build()?;
    let sim = &cfg.simulate;
    let times: Vec<f64> = if sim.n_times == 1 {
        vec![0.0]
    } else {
        (0..sim.n_times).map(|j| sim.t_max * j as f64 / (sim.n_times - 1) as f64).collect()
    };
    let starts = training_data(&mu, sim.n_paths, cfg.seed)?;
    let path = dir.join("paths.csv");
    let mut f = create(&path)?;
    writeln!(f, "{}", prov.csv_line())?;
    let header: Vec<String> = (1..=mu.dim()).map(|i| format!("x_{i}")).collect();
    writeln!(f, "path,time,{}", header.join(","))?;
    for (k, y0) in starts.iter().enumerate() {
        let mut r = rng::stream(cfg.seed, Stream::Forward, k as u64);
        let p = simulate_forward(y0, &times, &mut r)?;
        for (t, x) in p.times.iter().zip(&p.positions) {
            let row: Vec<String> = x.iter().map(|c| c.to_string()).collect();
            writeln!(f, "{k},{t},{}", row.join(","))?;
        }
    }
    f.flush()?;
    Ok(path)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub k_intervals: usize,
    pub times: Vec<f64>,
    pub summaries: Vec<IntervalSummary>,
    /// `E|ŝ - s|²` per interval against the exact score, when it is available.
    pub interval_errors: Option<Vec<f64>>,
    /// `Σ_i √(t_{i+1} ∧ 1) √err_i`.
    pub weighted_error: Option<f64>,
}

fn checkpoint_path(dir: &Path, i: usize) -> PathBuf {
    dir.join("checkpoints").join(format!("interval_{i:03}.ckpt"))
}

/// Trains every interval, writes one checkpoint per interval, the step log
/// and `reports/train.json`. On divergence the checkpoints already written
/// by earlier runs stay in place.
pub fn run_train(cfg: &ExperimentConfig) -> Result<(TrainOutcome, PiecewiseScore)> {
    let (dir, prov) = prepare_run(cfg)?;
    let mu = cfg.target.build()?;
    let data = training_data(&mu, cfg.n_data, cfg.seed)?;
    let grid = cfg.grid.build(&cfg.target, cfg.n_data)?;
    let specs = uniform_specs(mu.dim(), cfg.net.depth, cfg.net.width, &grid, cfg.n_data, cfg.net.norm_bound);
    let report = train_all(&data, &grid, &specs, &cfg.train)?;

    for (i, (m, s)) in report.score.models.iter().zip(&report.summaries).enumerate() {
        let meta = CheckpointMeta {
            seed: cfg.seed,
            steps: cfg.train.steps,
            final_loss: s.final_loss,
            config_hash: prov.config_hash.clone(),
        };
        let mut f = create(&checkpoint_path(&dir, i))?;
        m.write_checkpoint(&mut f, &meta)?;
        f.flush()?;
    }
    write_train_log(&dir.join("reports").join("train_log.csv"), &prov, &report.logs)?;

    let errors = match exact_score(&mu, cfg.train.kernel.clone()) {
        Ok(exact) => Some(
            (0..grid.k_intervals)
                .map(|i| interval_error(&report.score, exact.as_ref(), &data, &grid, i, cfg.n_eval, cfg.seed))
                .collect::<Result<Vec<f64>>>()?,
        ),
        Err(Error::Unsupported(_)) => None,
        Err(e) => return Err(e),
    };
    let outcome = TrainOutcome {
        k_intervals: grid.k_intervals,
        times: grid.times.clone(),
        summaries: report.summaries.clone(),
        weighted_error: errors.as_ref().map(|e| weighted_error_sum(&grid, e)),
        interval_errors: errors,
    };
    write_json(&dir.join("reports").join("train.json"), &prov, &outcome)?;
    Ok((outcome, report.score))
}

fn write_train_log(path: &Path, prov: &Provenance, rows: &[LogRow]) -> Result<()> {
    let mut f = create(path)?;
    writeln!(f, "{}", prov.csv_line())?;
    // wall time is left out so reruns compare equal
    writeln!(f, "interval,step,loss,grad_norm")?;
    for r in rows {
        writeln!(f, "{},{},{},{}", r.interval, r.step, r.loss, r.grad_norm)?;
    }
    f.flush()?;
    Ok(())
}

/// Reads the checkpoints written by `run_train` for this config.
pub fn load_learned(cfg: &ExperimentConfig) -> Result<PiecewiseScore> {
    let dir = cfg.run_dir();
    let grid = cfg.grid.build(&cfg.target, cfg.n_data)?;
    let mut models: Vec<ScoreModel> = Vec::with_capacity(grid.k_intervals);
    for i in 0..grid.k_intervals {
        let path = checkpoint_path(&dir, i);
        let f = File::open(&path).map_err(|e| {
            Error::Io(std::io::Error::new(e.kind(), format!("{}: {e} (run `train` first)", path.display())))
        })?;
        let (m, _) = ScoreModel::read_checkpoint(std::io::BufReader::new(f))?;
        models.push(m);
    }
    PiecewiseScore::new(grid, models)
}

fn sample_config(cfg: &ExperimentConfig, grid: &TimeGrid, seed: u64) -> SampleConfig {
    let mut s = SampleConfig::new(cfg.sample.n_samples, cfg.sample.substeps, grid.t_lo, grid.t_hi, seed);
    s.c = grid.c;
    s.n_proj = cfg.sample.n_proj;
    s
}

/// Draws samples with the configured score and writes `samples.csv` and
/// `metrics.json`.
pub fn run_sample(cfg: &ExperimentConfig) -> Result<SampleMetrics> {
    let (dir, prov) = prepare_run(cfg)?;
    let mu = cfg.target.build()?;
    let grid = cfg.grid.build(&cfg.target, cfg.n_data)?;
    let score: Box<dyn ScoreFunction> = match cfg.sample.score {
        ScoreSource::Learned => Box::new(load_learned(cfg)?),
        ScoreSource::Exact => exact_score(&mu, KernelConfig::default())?,
        ScoreSource::Uniform => Box::new(ZeroScore(mu.dim())),
    };
    let scfg = sample_config(cfg, &grid, cfg.seed);
    let (samples, metrics) = generate_with_reference(&scfg, score.as_ref(), &mu)?;
    let mut f = create(&dir.join("samples.csv"))?;
    writeln!(f, "{}", prov.csv_line())?;
    write_samples_csv(&mut f, &samples)?;
    f.flush()?;
    write_json(&dir.join("metrics.json"), &prov, &metrics)?;
    Ok(metrics)
}

#[derive(Serialize)]
struct ReportList<'a> {
    reports: &'a [BoundReport],
}

/// Runs the selected bound suites into `reports/bounds.{json,csv}`.
pub fn run_verify(cfg: &ExperimentConfig) -> Result<Vec<BoundReport>> {
    let (dir, prov) = prepare_run(cfg)?;
    let mut params = cfg.verify.params.clone();
    params.seed = cfg.seed;
    let reports = verify_bounds(&cfg.suites()?, &params)?;
    write_json(&dir.join("reports").join("bounds.json"), &prov, &ReportList { reports: &reports })?;
    let mut f = create(&dir.join("reports").join("bounds.csv"))?;
    writeln!(f, "{}", prov.csv_line())?;
    write_reports_csv(&mut f, &reports)?;
    f.flush()?;
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub n: usize,
    pub seed: u64,
    pub w1: Option<f64>,
    /// Set when this `(n, seed)` failed; the study goes on without it.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateStudy {
    pub rows: Vec<RateRow>,
    /// Mean W1 per `n` over successful seeds.
    pub mean_w1: Vec<Option<f64>>,
    /// Seed-to-seed standard deviation per `n`.
    pub seed_sd: Vec<Option<f64>>,
    /// Least-squares slope of `ln W1` on `ln n` over all successful rows.
    pub slope: Option<f64>,
    /// 95% Student-t interval for the slope.
    pub slope_ci: Option<(f64, f64)>,
    /// Each mean exceeds the previous one by at most twice the seed noise.
    pub nonincreasing_within_noise: bool,
}

fn one_rate_point(cfg: &ExperimentConfig, mu: &TargetMeasure, n: usize, k: usize, seed: u64) -> Result<f64> {
    let mut r = rng::stream(seed, Stream::Data, 1 + k as u64);
    let data = sample_target(mu, n, &mut r)?;
    let grid = cfg.grid.build(&cfg.target, n)?;
    let specs = uniform_specs(mu.dim(), cfg.net.depth, cfg.net.width, &grid, n, cfg.net.norm_bound);
    let tcfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let report = train_all(&data, &grid, &specs, &tcfg)?;
    let (_, m) = generate_with_reference(&sample_config(cfg, &grid, seed), &report.score, mu)?;
    Ok(m.measured_w1)
}

/// Trains and samples once per `(n, seed)` with fresh data, then fits the
/// log-log slope. Failures are recorded per row.
pub fn rate_study(cfg: &ExperimentConfig) -> Result<RateStudy> {
    let mu = cfg.target.build()?;
    let rs = &cfg.rate_study;
    let mut rows = Vec::new();
    for (k, &n) in rs.n_values.iter().enumerate() {
        for &seed in &rs.seeds {
            let (w1, error) = match one_rate_point(cfg, &mu, n, k, seed) {
                Ok(w) => (Some(w), None),
                Err(e) => (None, Some(e.to_string())),
            };
            rows.push(RateRow { n, seed, w1, error });
        }
    }
    let mut mean_w1 = Vec::new();
    let mut seed_sd = Vec::new();
    for &n in &rs.n_values {
        let v: Vec<f64> = rows.iter().filter(|r| r.n == n).filter_map(|r| r.w1).collect();
        if v.is_empty() {
            mean_w1.push(None);
            seed_sd.push(None);
            continue;
        }
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let sd = if v.len() > 1 {
            (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
        } else {
            0.0
        };
        mean_w1.push(Some(m));
        seed_sd.push(Some(sd));
    }
    let ok: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.w1.filter(|w| *w > 0.0).map(|w| ((r.n as f64).ln(), w.ln())))
        .collect();
    let (slope, slope_ci) = fit_slope(&ok);
    let mut monotone = true;
    for k in 1..mean_w1.len() {
        if let (Some(a), Some(b)) = (mean_w1[k - 1], mean_w1[k]) {
            let noise = seed_sd[k - 1].unwrap_or(0.0).max(seed_sd[k].unwrap_or(0.0));
            monotone &= b <= a + 2.0 * noise;
        } else {
            monotone = false;
        }
    }
    Ok(RateStudy {
        rows,
        mean_w1,
        seed_sd,
        slope,
        slope_ci,
        nonincreasing_within_noise: monotone,
    })
}

fn fit_slope(pts: &[(f64, f64)]) -> (Option<f64>, Option<(f64, f64)>) {
    let m = pts.len();
    if m < 2 {
        return (None, None);
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m as f64;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return (None, None);
    }
    let b = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx;
    if m < 3 {
        return (Some(b), None);
    }
    let rss: f64 = pts.iter().map(|p| (p.1 - my - b * (p.0 - mx)).powi(2)).sum();
    let se = (rss / (m - 2) as f64 / sxx).sqrt();
    let q = StudentsT::new(0.0, 1.0, (m - 2) as f64).map(|d| d.inverse_cdf(0.975)).unwrap_or(f64::NAN);
    (Some(b), Some((b - q * se, b + q * se)))
}

/// `rate_study` plus `reports/rate.{json,csv}`.
pub fn run_rate_study(cfg: &ExperimentConfig) -> Result<RateStudy> {
    let (dir, prov) = prepare_run(cfg)?;
    let study = rate_study(cfg)?;
    write_json(&dir.join("reports").join("rate.json"), &prov, &study)?;
    let mut f = create(&dir.join("reports").join("rate.csv"))?;
    writeln!(f, "{}", prov.csv_line())?;
    writeln!(f, "n,seed,w1,error")?;
    for r in &study.rows {
        let w = r.w1.map(|v| v.to_string()).unwrap_or_default();
        let e = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
        writeln!(f, "{},{},{w},{e}", r.n, r.seed)?;
    }
    f.flush()?;
    Ok(study)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(extra: &[&str]) -> ExperimentConfig {
        let sets: Vec<String> = extra.iter().map(|s| s.to_string()).collect();
        ExperimentConfig::from_json_with("{}", &sets, Some(3)).unwrap()
    }

    #[test]
    fn seed_is_mandatory() {
        let e = ExperimentConfig::from_json_with("{}", &[], None).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert_eq!(ExperimentConfig::from_json_with(r#"{"seed": 9}"#, &[], None).unwrap().seed, 9);
    }

    #[test]
    fn dotted_overrides_reach_nested_keys() {
        let c = cfg(&["train.steps=7", "grid.t_lo=0.01", "target.kind=subspace", "target.ambient_dim=2", "target.intrinsic_dim=1", "target.alpha=1", "target.c0=3", "run_id=abc"]);
        assert_eq!(c.train.steps, 7);
        assert_eq!(c.grid.t_lo, 0.01);
        assert_eq!(c.train.seed, 3);
        assert!(matches!(c.target, TargetSpec::Subspace { ambient_dim: 2, .. }));
        assert!(c.run_dir().ends_with("abc"));
    }

    #[test]
    fn unknown_keys_and_versions_are_rejected() {
        for bad in [&["trian.steps=1"][..], &["schema_version=2"], &["grid.t_lo=-1"], &["verify.suites=[\"x\"]"], &["noequals"]] {
            let sets: Vec<String> = bad.iter().map(|s| s.to_string()).collect();
            let e = ExperimentConfig::from_json_with("{}", &sets, Some(0)).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{bad:?}: {e}");
        }
    }

    #[test]
    fn hash_ignores_output_location_only() {
        let a = cfg(&[]);
        let b = cfg(&["out_dir=\"elsewhere\"", "workers=2"]);
        let c = cfg(&["n_data=100"]);
        assert_eq!(a.config_hash(), b.config_hash());
        assert_ne!(a.config_hash(), c.config_hash());
        assert_eq!(a.config_hash().len(), 64);
    }

    #[test]
    fn slope_interval_covers_an_exact_line() {
        let pts: Vec<(f64, f64)> = [1.0, 2.0, 3.0, 4.0].iter().map(|&x| (x, 1.0 - 0.5 * x)).collect();
        let (b, ci) = fit_slope(&pts);
        assert!((b.unwrap() + 0.5).abs() < 1e-12);
        let (lo, hi) = ci.unwrap();
        assert!(lo <= -0.5 && hi >= -0.5 && hi - lo < 1e-9);
    }
}
