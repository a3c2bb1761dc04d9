use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kpplab_cli::config::{self, parse_assignment};
use kpplab_cli::error::{EXIT_ASSERTION, EXIT_PASS};
use kpplab_cli::{emit_plot_data, run_experiment, CliError, Kind, PlotKind};

/// Monte Carlo runs of the noisy KPP equation and its particle approximation.
#[derive(Parser)]
#[command(name = "kpplab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single-equation trajectories.
    Simulate(RunArgs),
    /// Coupled solutions with declared orders.
    Couple(RunArgs),
    /// Particle family runs or particle/grid comparisons.
    Particle(RunArgs),
    /// Front-speed table over a θ-list.
    Speed(RunArgs),
    /// Travelling-wave samples.
    Wave(RunArgs),
    /// Duality identities.
    Duality(RunArgs),
    /// Extinction probability over a θ-grid.
    Sweep(RunArgs),
    /// Plot data from a finished run.
    Plot {
        /// Path to the run's manifest.json.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        kind: PlotKind,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Flat TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Extra `key=value` override; repeatable.
    #[arg(long = "set", value_parser = parse_assignment)]
    set: Vec<(String, String)>,
}

fn execute(cmd: Command) -> Result<i32, CliError> {
    let (kind, args) = match cmd {
        Command::Plot { manifest, kind } => {
            let m = emit_plot_data(&manifest, kind)?;
            println!("wrote plot data; manifest now lists {} artifacts", m.artifacts.len());
            return Ok(EXIT_PASS);
        }
        Command::Simulate(a) => (Kind::Simulate, a),
        Command::Couple(a) => (Kind::Couple, a),
        Command::Particle(a) => (Kind::Particle, a),
        Command::Speed(a) => (Kind::Speed, a),
        Command::Wave(a) => (Kind::Wave, a),
        Command::Duality(a) => (Kind::Duality, a),
        Command::Sweep(a) => (Kind::Sweep, a),
    };
    let env = config::env_overrides(std::env::vars());
    let mut cli = args.set;
    if let Some(s) = args.seed {
        cli.push(("seed".into(), s.to_string()));
    }
    if let Some(o) = args.out {
        cli.push(("out".into(), toml::Value::String(o.display().to_string()).to_string()));
    }
    if let Some(j) = args.jobs {
        cli.push(("jobs".into(), j.to_string()));
    }
    let cfg = config::load(args.config.as_deref(), &env, &cli)?;
    if cfg.kind.is_some_and(|k| k != kind) {
        return Err(CliError::Usage(format!("kind: config says {:?} but the subcommand is {}", cfg.kind.unwrap(), kind.name())));
    }
    let cfg = config::ExperimentConfig { kind: Some(kind), ..cfg };
    let manifest = run_experiment(&cfg)?;
    for a in &manifest.assertions {
        println!("{} {}: {}", if a.passed { "ok  " } else { "FAIL" }, a.name, a.detail);
    }
    println!("{} artifacts in {} ({:.1} s)", manifest.artifacts.len(), cfg.out.display(), manifest.wall_clock_seconds);
    Ok(if manifest.passed() { EXIT_PASS } else { EXIT_ASSERTION })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("kpplab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
