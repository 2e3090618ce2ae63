//! `rdiff`: command-line driver for reflected-diffusion experiments.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure
//! (including a failed bound check), 4 I/O.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use reflected_diffusion::experiment::{self, ExperimentConfig};
use reflected_diffusion::Error;

#[derive(Parser)]
#[command(name = "rdiff", version, about = "Reflected-diffusion generative modelling on the unit cube")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Forward paths from target draws.
    Simulate(Common),
    /// Train one score network per time interval.
    Train(Common),
    /// Run the reversed diffusion and score the samples.
    Sample(Common),
    /// Run the bound-verification suites.
    Verify(Common),
    /// Train and sample over several training-set sizes.
    RateStudy(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Output root (overrides `out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dotted-path override, e.g. `--set train.steps=500`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Worker threads.
    #[arg(long)]
    workers: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let mut sets = self.sets.clone();
        if let Some(out) = &self.out {
            let json = serde_json::to_string(out).map_err(Error::from)?;
            sets.push(format!("out_dir={json}"));
        }
        if let Some(w) = self.workers {
            sets.push(format!("workers={w}"));
        }
        ExperimentConfig::load(self.config.as_deref(), &sets, self.seed)
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let common = match &cli.command {
        Command::Simulate(c) | Command::Train(c) | Command::Sample(c) | Command::Verify(c) | Command::RateStudy(c) => c,
    };
    let cfg = common.load()?;
    if let Some(n) = cfg.workers {
        // fails only if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let dir = cfg.run_dir();
    match cli.command {
        Command::Simulate(_) => {
            let path = experiment::run_simulate(&cfg)?;
            println!("wrote {}", path.display());
        }
        Command::Train(_) => {
            let (out, _) = experiment::run_train(&cfg)?;
            for s in &out.summaries {
                let loss = s.final_loss.map_or("-".into(), |l| format!("{l:.6}"));
                println!("interval {:3} [{:.3e}, {:.3e}) loss {loss}", s.index, s.t_lo, s.t_hi);
            }
            if let Some(w) = out.weighted_error {
                println!("weighted score error {w:.6}");
            }
            println!("checkpoints in {}", dir.join("checkpoints").display());
        }
        Command::Sample(_) => {
            let m = experiment::run_sample(&cfg)?;
            println!(
                "W1 {:.6}  (early stopping {:.3e}, initialisation {:.3e}, residual {:.3e})",
                m.measured_w1, m.early_stopping_bound, m.initialisation_bound, m.residual
            );
            println!("samples in {}", dir.join("samples.csv").display());
        }
        Command::Verify(_) => {
            let reports = experiment::run_verify(&cfg)?;
            let mut all = true;
            for r in &reports {
                all &= r.pass;
                println!("{:16} {} C={:.4e}", r.name, if r.pass { "PASS" } else { "FAIL" }, r.fitted_constant);
            }
            println!("reports in {}", dir.join("reports").display());
            if !all {
                return Err(Error::Numerical("at least one bound failed".into()));
            }
        }
        Command::RateStudy(_) => {
            let s = experiment::run_rate_study(&cfg)?;
            for r in &s.rows {
                match (&r.w1, &r.error) {
                    (Some(w), _) => println!("n={:6} seed={} W1 {w:.6}", r.n, r.seed),
                    (None, Some(e)) => println!("n={:6} seed={} failed: {e}", r.n, r.seed),
                    _ => {}
                }
            }
            match (s.slope, s.slope_ci) {
                (Some(b), Some((lo, hi))) => println!("slope {b:.3} (95% CI {lo:.3} .. {hi:.3})"),
                (Some(b), None) => println!("slope {b:.3}"),
                _ => println!("slope unavailable"),
            }
            println!("reports in {}", dir.join("reports").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
