use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use fp_audit_cli::{run, CliError, Command, ExperimentConfig, RunOptions};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Validate,
    AttackSweep,
    PosteriorCheck,
    Tails,
    HeavyTailed,
    PhaseDiagram,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Validate => Command::Validate,
            Cmd::AttackSweep => Command::AttackSweep,
            Cmd::PosteriorCheck => Command::PosteriorCheck,
            Cmd::Tails => Command::Tails,
            Cmd::HeavyTailed => Command::HeavyTailed,
            Cmd::PhaseDiagram => Command::PhaseDiagram,
        }
    }
}

/// Fingerprinting-attack experiments. Exit status: 0 all checks pass, 1 a check failed, 2 usage, config or I/O error.
#[derive(Debug, Parser)]
#[command(name = "fp-audit", version)]
struct Args {
    command: Cmd,
    /// JSON experiment config; its `command` field must match.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available cores. Results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory; overrides `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write SVG charts.
    #[arg(long)]
    svg: bool,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("fp-audit: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(args: &Args) -> Result<bool, CliError> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let want = Command::from(args.command);
    if cfg.command != want {
        return Err(CliError::Config(format!(
            "config {} is for `{}`, not `{}`",
            args.config.display(),
            cfg.command.name(),
            want.name()
        )));
    }
    let opts = RunOptions {
        seed: args.seed,
        workers: args.workers,
        out: args.out.clone(),
        svg: args.svg,
        config_path: Some(args.config.display().to_string()),
    };
    let outcome = run(&cfg, &opts)?;
    for line in &outcome.lines {
        println!("{line}");
    }
    for f in &outcome.files {
        println!("wrote {}", f.display());
    }
    Ok(outcome.pass)
}
