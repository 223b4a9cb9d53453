//! `audioseq` command-line entry point.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use audioseq::kv::KeyValues;
use clap::{Parser, Subcommand};

use commands::{BenchArgs, EvalArgs, GradCheckArgs, ParamReportArgs, SynthArgs, TrainArgs};
use settings::{Precision, Settings, UsageError};

#[derive(Parser)]
#[command(
    name = "audioseq",
    version,
    about = "Train, evaluate and profile audio sequence classifiers"
)]
struct Cli {
    /// Flat `key = value` run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    precision: Option<Precision>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a classifier on a manifest, with a held-out split, one fold or full cross-validation.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a manifest.
    Eval(EvalArgs),
    /// Per-layer and total parameter counts for every variant and frontend.
    ParamReport(ParamReportArgs),
    /// Time and peak activation memory against sequence length.
    BenchScaling(BenchArgs),
    /// Compare analytic gradients with central finite differences.
    GradCheck(GradCheckArgs),
    /// Write a synthetic tone corpus and its manifest.
    SynthData(SynthArgs),
}

impl Cli {
    fn flags(&self) -> KeyValues {
        let mut kv = match &self.command {
            Command::Train(a) => a.flags(),
            Command::ParamReport(a) => a.flags(),
            Command::BenchScaling(a) => a.flags(),
            Command::Eval(a) => a.flags(),
            Command::GradCheck(_) | Command::SynthData(_) => KeyValues::new(),
        };
        settings::set_opt(&mut kv, "seed", self.seed);
        settings::set_opt(&mut kv, "out", self.out.as_ref().map(|p| p.display()));
        settings::set_opt(
            &mut kv,
            "precision",
            self.precision.map(|p| match p {
                Precision::F32 => "f32",
                Precision::F64 => "f64",
            }),
        );
        kv
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let settings = Settings::load(cli.config.as_deref(), &cli.flags())?;
    match &cli.command {
        Command::Train(a) => commands::train(&settings, a),
        Command::Eval(a) => commands::eval(&settings, a),
        Command::ParamReport(a) => commands::param_report(&settings, a),
        Command::BenchScaling(a) => commands::bench_scaling(&settings, a),
        Command::GradCheck(a) => commands::grad_check(&settings, a),
        Command::SynthData(a) => commands::synth_data(&settings, a),
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let usage = e.downcast_ref::<UsageError>().is_some()
        || matches!(
            e.downcast_ref::<audioseq::Error>(),
            Some(audioseq::Error::Config(_))
        );
    if usage {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
