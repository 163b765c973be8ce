use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pertrender::commands::{bench, gradcheck, pose_opt, render};
use pertrender::memory::TrackingAllocator;
use pertrender::{Config, Error};

#[global_allocator]
static ALLOC: TrackingAllocator = TrackingAllocator;

/// Perturbed differentiable rendering experiments.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override a config key, e.g. `--set smoothing.sigma=0.05`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Hard render and a sweep of soft renders (PNG + NPY).
    Render,
    /// Pose optimization trials per perturbation magnitude (CSV + JSON).
    PoseOpt {
        /// Also write solved fractions for a range of thresholds.
        #[arg(long)]
        sweep: bool,
    },
    /// Oracle and finite-difference checks; exit code 1 on any failure.
    Gradcheck {
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Forward/backward timing and peak memory per mode.
    Bench,
}

const DEFAULT_SWEEP: [f64; 9] = [1.0, 2.0, 5.0, 10.0, 15.0, 20.0, 30.0, 45.0, 90.0];

fn load(common: &Common) -> Result<Config, Error> {
    let mut config = match &common.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    for o in &common.overrides {
        config.set(o)?;
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.out = out.clone();
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<bool, Error> {
    let mut config = load(&cli.common)?;
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("threads: {e}")))?;
    }
    std::fs::create_dir_all(&config.out).map_err(|e| Error::Io {
        path: config.out.clone(),
        source: e,
    })?;
    if let Command::PoseOpt { sweep: true } = cli.command {
        if config.task.sweep_thresholds_deg.is_empty() {
            config.task.sweep_thresholds_deg = DEFAULT_SWEEP.to_vec();
        }
    }
    let echo = config.out.join("config.toml");
    std::fs::write(&echo, config.to_toml()).map_err(|e| Error::Io { path: echo, source: e })?;
    match cli.command {
        Command::Render => {
            for row in render::run(&config)? {
                println!("{:<8} sigma={:<6} gamma={:<6} edge_pixels={}", row.name, row.sigma, row.gamma, row.edge_pixels);
            }
        }
        Command::PoseOpt { .. } => {
            for r in pose_opt::run(&config)? {
                println!(
                    "{:>5.1} deg: solved {:5.1}% mean error {:6.2} +- {:.2} deg over {} trials",
                    r.magnitude_deg,
                    100.0 * r.solved_fraction(),
                    r.mean_final_error(),
                    r.std_final_error(),
                    r.trials.len()
                );
            }
        }
        Command::Gradcheck { inject_fault } => {
            let checks = gradcheck::run(&config, inject_fault)?;
            for c in &checks {
                let verdict = if c.pass { "ok" } else { "FAIL" };
                println!("{verdict:<4} {:<40} {:.3e} (tolerance {:.1e})", c.name, c.value, c.tolerance);
            }
            return Ok(checks.iter().all(|c| c.pass));
        }
        Command::Bench => {
            for r in bench::run(&config)? {
                let opt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.2}"));
                println!(
                    "{:<6} M={:<3} forward {:8.2} ms  backward {:>8} ms  mem {:>8} MB",
                    r.mode,
                    r.samples,
                    r.forward_ms,
                    opt(r.backward_ms),
                    opt(r.mem_mb)
                );
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
