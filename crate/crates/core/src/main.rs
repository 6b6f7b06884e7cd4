use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, ValueEnum};

use grushin_lab::cli::{execute, parse_config, RunConfig, EXIT_ERROR};
use grushin_lab::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Sub {
    Kernel,
    Mc,
    Picard,
    Fd,
    Sweep,
    Audit,
}

impl Sub {
    fn name(self) -> &'static str {
        match self {
            Sub::Kernel => "kernel",
            Sub::Mc => "mc",
            Sub::Picard => "picard",
            Sub::Fd => "fd",
            Sub::Sweep => "sweep",
            Sub::Audit => "audit",
        }
    }
}

/// Heat kernel, Monte Carlo, mild solutions and blowup experiments for the
/// Grushin-type semilinear heat equation.
#[derive(Debug, Parser)]
#[command(name = "grushin-lab", version)]
struct Args {
    /// Subcommand; must match `cmd` in the config.
    subcommand: Sub,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(args: &Args) -> Result<(RunConfig, Vec<u8>)> {
    let raw = std::fs::read(&args.config).map_err(|e| LabError::Io(format!("{}: {e}", args.config.display())))?;
    let text = std::str::from_utf8(&raw).map_err(|_| LabError::Config("config is not UTF-8".into()))?;
    let cfg = parse_config(text, args.seed, args.out.clone())?;
    if cfg.command.name() != args.subcommand.name() {
        return Err(LabError::Config(format!(
            "subcommand `{}` does not match config cmd `{}`",
            args.subcommand.name(),
            cfg.command.name()
        )));
    }
    eprintln!("planned runs: {}", cfg.planned_runs());
    Ok((cfg, raw))
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            let code = if e.use_stderr() { EXIT_ERROR } else { 0 };
            return ExitCode::from(code as u8);
        }
    };
    if let Some(n) = std::env::var("GRUSHIN_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let start = Instant::now();
    let outcome = load(&args).and_then(|(cfg, raw)| execute(&cfg, &raw));
    match outcome {
        Ok(o) => {
            let s = &o.summary;
            println!("{}: passed={} input_hash={}", s.subcommand, s.passed, s.input_hash);
            for w in &s.warnings {
                eprintln!("warning: {w}");
            }
            eprintln!("wall time: {:.3} s", start.elapsed().as_secs_f64());
            ExitCode::from(o.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
