use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qfp_sim::{init_threads, load_config, run, CliError, ExperimentKind, Overrides};

/// Simulates the frequency-bin quantum processor experiments and writes plot-ready tables.
///
/// Worker threads default to the core count; set QFP_THREADS to override.
#[derive(Debug, Parser)]
#[command(name = "qfp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Splitting ratio, success probability and fidelity versus the WS phase step.
    Beamsplitter(Args),
    /// Single-qubit gate synthesis and scattering-matrix reconstruction.
    Gate(Args),
    /// Output spectra for single-bin and superposition inputs.
    Spectrum(Args),
    /// Two-photon quantum walk JSIs and source-phase retrieval.
    Qwalk(Args),
    /// Bell-state tomography and interference fringe.
    Tomography(Args),
    /// Dither alignment scan and heater phase calibration.
    Calibrate(Args),
}

#[derive(Debug, clap::Args)]
struct Args {
    /// JSON run config; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Use mean counts instead of Poisson samples.
    #[arg(long)]
    expected_value: bool,
}

fn execute(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    let (kind, args) = match cli.command {
        Command::Beamsplitter(a) => (ExperimentKind::Beamsplitter, a),
        Command::Gate(a) => (ExperimentKind::Gate, a),
        Command::Spectrum(a) => (ExperimentKind::Spectrum, a),
        Command::Qwalk(a) => (ExperimentKind::Qwalk, a),
        Command::Tomography(a) => (ExperimentKind::Tomography, a),
        Command::Calibrate(a) => (ExperimentKind::Calibrate, a),
    };
    init_threads()?;
    let overrides = Overrides {
        seed: args.seed,
        expected_value: args.expected_value,
        out: args.out,
    };
    let cfg = load_config(kind, args.config.as_deref(), &overrides)?;
    run(&cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("qfp: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
