//! Scenario runner for the spherical kinematic car.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use spherecar::scenario::{self, emit_outputs, load_config, LoadedScenario, RunOutput};

#[derive(Parser)]
#[command(
    name = "spherecar",
    about = "Simulation and invariant tracking control of a kinematic car on a sphere",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Scenario configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for CSV and summary files.
    #[arg(long, default_value = ".", global = true)]
    out: PathBuf,

    /// Override the configured random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the configured integrator step.
    #[arg(long, global = true)]
    step: Option<f64>,

    /// Suppress warnings and progress output.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Open-loop replay of the reference inputs from the initial state.
    Simulate,
    /// Closed-loop invariant tracking with full state feedback.
    Track,
    /// Observer convergence along a known-input trajectory.
    Observe,
    /// Certainty-equivalence experiment: controller fed by the observer
    /// estimate (no stability guarantee).
    OutputFeedback,
    /// Pole placement utility: print the observer gains for the
    /// configured poles.
    Gains,
    /// Print the reference curve with the states and inputs recovered
    /// from the flat output.
    Flatness,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load(cli: &Cli) -> spherecar::Result<LoadedScenario> {
    let path = cli.config.as_ref().ok_or_else(|| spherecar::Error::ConfigValidation {
        field: "--config".into(),
        reason: "a configuration file is required".into(),
    })?;
    let mut loaded = load_config(path)?;
    if let Some(seed) = cli.seed {
        loaded.config.run.seed = seed;
    }
    if let Some(step) = cli.step {
        if step.is_nan() || step <= 0.0 {
            return Err(spherecar::Error::ConfigValidation {
                field: "--step".into(),
                reason: format!("step must be positive (got {step})"),
            });
        }
        loaded.config.integrator.step = step;
    }
    if !cli.quiet {
        for w in &loaded.warnings {
            eprintln!("warning: {w}");
        }
    }
    Ok(loaded)
}

/// Print to stdout, treating a closed pipe as a normal exit.
fn emit_stdout(text: &str) -> ExitCode {
    use std::io::Write;
    let mut out = std::io::stdout();
    let _ = out.write_all(text.as_bytes());
    let _ = out.flush();
    ExitCode::SUCCESS
}

fn run(cli: &Cli) -> spherecar::Result<ExitCode> {
    let loaded = load(cli)?;
    let output: RunOutput = match cli.command {
        Command::Simulate => scenario::run_open_loop(&loaded)?,
        Command::Track => scenario::run_tracking(&loaded)?,
        Command::Observe => scenario::run_observer(&loaded)?,
        Command::OutputFeedback => scenario::run_output_feedback(&loaded)?,
        Command::Gains => {
            let mut report = scenario::gains_report(&loaded)?;
            report.push('\n');
            return Ok(emit_stdout(&report));
        }
        Command::Flatness => {
            return Ok(emit_stdout(&scenario::flatness_table(&loaded)?));
        }
    };
    let (csv, summary) = emit_outputs(&output, &loaded, &cli.out)?;
    if !cli.quiet {
        eprintln!(
            "{}: {} ({} steps) -> {}, {}",
            output.summary.mode,
            output.summary.status,
            output.summary.steps,
            csv.display(),
            summary.display()
        );
        if let Some(msg) = &output.summary.error {
            eprintln!("terminated: {msg}");
        }
    }
    Ok(ExitCode::from(output.summary.exit_code() as u8))
}
