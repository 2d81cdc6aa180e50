//! `ykrl`: collect excitation data, train, verify and export runs.
//!
//! Exit codes: 0 on success, 2 when the configuration or the data is not
//! usable (including a non-exciting input), 3 when a verification suite
//! fails, 1 for anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ykrl::config::RunConfig;
use ykrl::verify::{run_all, VerifySettings};
use ykrl::{run, Error};

#[derive(Parser)]
#[command(name = "ykrl", version, about = "Stable Youla-Kucera reinforcement learning on a two-tank plant")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the excitation experiment and write the trajectory and PE report.
    Collect(Common),
    /// Train every seed from the collected trajectory.
    Train(Common),
    /// Run the oracle suites and print a pass/fail report.
    Verify(Common),
    /// Derive plot-ready CSVs from a finished run directory.
    Export {
        /// Run directory; defaults to the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated seed list, e.g. `1,2`.
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    #[arg(long)]
    episodes: Option<usize>,
    /// Train the unconstrained feedforward actor.
    #[arg(long)]
    baseline: bool,
    /// Disable measurement noise.
    #[arg(long)]
    no_noise: bool,
    /// Output (run) directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = load_config(self.config.as_ref())?;
        if let Some(seeds) = &self.seed {
            cfg.seeds = seeds.clone();
        }
        if let Some(n) = self.episodes {
            cfg.episodes = n;
        }
        if self.baseline {
            cfg.baseline = true;
        }
        if self.no_noise {
            cfg.noise = false;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig, Error> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

enum Failure {
    Error(Error),
    Verification,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self::Error(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::NotPersistentlyExciting { .. } | Error::Format { .. } => 2,
        _ => 1,
    }
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Collect(args) => {
            let cfg = args.resolve()?;
            let report = run::collect(&cfg)?;
            print!("{}", report.to_text());
            println!("trajectory {}", report.trajectory.display());
        }
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let summaries = run::train(&cfg)?;
            for s in &summaries {
                let last = s.rewards.last().copied().unwrap_or(f64::NAN);
                let cert = s.certificate_worst.map_or("n/a".to_string(), |v| format!("{v:e}"));
                println!(
                    "seed {} episodes {} last_reward {last:.4} eval_reward {:.4} aborted {} certificate_worst {cert}",
                    s.seed,
                    s.rewards.len(),
                    s.evaluation.cumulative_reward,
                    s.aborted.len(),
                );
            }
            println!("run {}", cfg.out_dir.display());
        }
        Command::Verify(args) => {
            let cfg = args.resolve()?;
            let settings = VerifySettings {
                seed: cfg.seeds[0],
                ..VerifySettings::default()
            };
            let reports = run_all(&settings)?;
            let mut text = String::new();
            for r in &reports {
                text.push_str(&format!("{r}\n"));
            }
            print!("{text}");
            if let Some(out) = &args.out {
                std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
                let path = out.join("verify_report.txt");
                std::fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
            }
            if !reports.iter().all(|r| r.passed()) {
                return Err(Failure::Verification);
            }
        }
        Command::Export { out, config } => {
            let root = match out {
                Some(dir) => dir,
                None => load_config(config.as_ref())?.out_dir,
            };
            if !root.is_dir() {
                return Err(Error::Config(format!("no run directory at {}", root.display())).into());
            }
            let summary = run::export(&root)?;
            println!(
                "exported {} episodes for seeds {:?} into {}",
                summary.episodes,
                summary.seeds,
                root.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification) => {
            eprintln!("error: verification failed");
            ExitCode::from(3)
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
