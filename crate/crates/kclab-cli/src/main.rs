//! `kclab <task> --config path [--seed n] [--out dir] [--jobs k]`
//!
//! Exit codes: 0 ok, 2 configuration error (nothing written), 3 task error.

mod config;
mod tasks;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use config::Task;

#[derive(Debug, Parser)]
#[command(name = "kclab", version, about = "Run a kclab experiment from a JSON config")]
struct Args {
    task: Task,
    #[arg(long)]
    config: PathBuf,
    /// Overrides params.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory (default kclab-out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    jobs: Option<usize>,
}

fn config_error(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("kclab: ConfigError: {msg}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let mut cfg = match config::load(&args.config).and_then(config::parse) {
        Ok(c) => c,
        Err(e) => return config_error(e),
    };
    if let Some(seed) = args.seed {
        cfg.params.seed = seed;
    }
    let setup = match config::validate(&cfg, args.task) {
        Ok(s) => s,
        Err(e) => return config_error(e),
    };
    if let Some(k) = args.jobs {
        if k == 0 {
            return config_error("--jobs must be at least 1");
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            return config_error(e);
        }
    }
    let out = args.out.or(cfg.out.clone()).unwrap_or_else(|| PathBuf::from("kclab-out"));
    if let Err(e) = std::fs::create_dir_all(&out) {
        eprintln!("kclab {}: Io: {e}", args.task.name());
        return ExitCode::from(3);
    }
    match tasks::run(args.task, &cfg, &setup, &out) {
        Ok(m) => {
            let shown: Vec<String> = m.iter().map(|(k, v)| format!("{k}={v:.6e}")).collect();
            println!("kclab {}: ok {} -> {}", args.task.name(), shown.join(" "), out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("kclab {}: {}: {e}", args.task.name(), e.name());
            ExitCode::from(3)
        }
    }
}
