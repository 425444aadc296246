use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fairdiff_core::conditioning::BalancingLevel;
use fairdiff_core::pipeline::{self, RunConfig};
use fairdiff_core::Error;
use log::info;

#[derive(Parser, Debug)]
#[command(name = "fairdiff", version, about = "Fairness-guided diffusion for mixed-type tables")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Balancing level, 0 (empirical) to 10 (uniform).
    #[arg(long, global = true)]
    level: Option<u8>,
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override any config key, e.g. `--set guidance.lambda=2`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Split the data, fit preprocessing and write the manifest.
    Prepare,
    /// Train the denoiser and write a checkpoint and loss curve.
    Train,
    /// Sample a synthetic table at the configured balancing level.
    Sample,
    /// Score a synthetic table against the real splits.
    Evaluate {
        /// Synthetic CSV to score (default: the sampled table).
        #[arg(long)]
        synthetic: Option<PathBuf>,
    },
    /// Sample and evaluate over balancing levels and seeds.
    Sweep,
}

fn overrides(c: &Common) -> Result<Vec<(String, String)>, Error> {
    let mut out = Vec::new();
    for s in &c.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{s}`")))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(seed) = c.seed {
        out.push(("seed".into(), seed.to_string()));
    }
    if let Some(level) = c.level {
        BalancingLevel::new(level)?;
        out.push(("sampling.level".into(), level.to_string()));
    }
    if let Some(jobs) = c.jobs {
        out.push(("jobs".into(), jobs.to_string()));
    }
    if let Some(dir) = &c.out {
        let abs = std::env::current_dir()?.join(dir);
        out.push(("paths.out".into(), serde_json::to_string(&abs.to_string_lossy())?));
    }
    Ok(out)
}

fn run(cli: &Cli) -> Result<(), Error> {
    let path = cli
        .common
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let cfg = RunConfig::load(path, &overrides(&cli.common)?)?;
    match &cli.command {
        Command::Prepare => {
            let m = pipeline::prepare(&cfg)?;
            info!("manifest {}", m.manifest_id);
        }
        Command::Train => {
            let ckpt = pipeline::train_model(&cfg)?;
            info!("checkpoint {} after {} epochs", ckpt.config_hash, ckpt.trained_epochs);
        }
        Command::Sample => {
            let path = pipeline::sample(&cfg)?;
            info!("wrote {}", path.display());
        }
        Command::Evaluate { synthetic } => {
            let r = pipeline::evaluate(&cfg, synthetic.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&r)?);
        }
        Command::Sweep => {
            let rows = pipeline::sweep(&cfg)?;
            print!("{}", fairdiff_core::eval::sweep_csv(&rows));
        }
    }
    Ok(())
}

/// One JSON object on one line so callers can parse failures.
fn report_error(kind: &str, message: &str) {
    let line = serde_json::json!({ "error": kind, "message": message.replace('\n', " ") });
    eprintln!("{line}");
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FAIRDIFF_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report_error("usage", e.to_string().lines().next().unwrap_or("invalid arguments"));
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(e.kind(), &e.to_string());
            ExitCode::from(if e.kind() == "config" { 2 } else { 1 })
        }
    }
}
