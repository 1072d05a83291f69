//! `tofspec`: simulate, calibrate and reconstruct dispersive time-of-flight
//! spectrometer measurements.

mod analyze;
mod calibrate;
mod config;
mod error;
mod reconstruct;
mod simulate;
mod source;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{parse_count, RunConfig, RunFile, RunKind};
use crate::error::{CmdResult, UsageExt};

#[derive(Debug, Parser)]
#[command(name = "tofspec", version = version_static(), about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a simulated time-tag file and its manifest.
    Simulate(SimulateArgs),
    /// Fit dispersion, offset and response; write a calibration file.
    Calibrate(calibrate::CalibrateArgs),
    /// Turn a tag file into a corrected spectrum or joint spectrum.
    Reconstruct(reconstruct::ReconstructArgs),
    /// Summaries of tag files and spectrum tables.
    #[command(subcommand)]
    Analyze(analyze::AnalyzeCommand),
    /// List the shipped instrument presets.
    Presets,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Run configuration (TOML); flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    kind: Option<RunKind>,
    /// Instrument preset, e.g. trsps1 or trsps2-slow.
    #[arg(long)]
    preset: Option<String>,
    /// Idler-channel preset for pair runs (defaults to --preset).
    #[arg(long)]
    idler_preset: Option<String>,
    /// Source shorthand, e.g. `doublepulse:T=11ps` or `pair:fwhm_i=8nm`.
    #[arg(long)]
    source: Option<String>,
    /// Clock cycles, e.g. 2.4e7.
    #[arg(long, value_parser = parse_count)]
    cycles: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    herald_efficiency: Option<f64>,
    #[arg(long)]
    pair_rate: Option<f64>,
    /// Output tag file, or directory for a calibration set
    /// [default: run-seed<N>.ttag, pair-seed<N>.ttag, calibration-seed<N>].
    #[arg(long, short)]
    out: Option<PathBuf>,
}

impl SimulateArgs {
    fn resolve(&self) -> CmdResult<RunConfig> {
        let mut file = match &self.config {
            Some(p) => {
                if !p.is_file() {
                    usage_bail!("config file {} not found", p.display());
                }
                RunFile::load(p).usage()?
            }
            None => RunFile::default(),
        };
        let text = |s: &String| toml::Value::String(s.clone());
        file.kind = self.kind.or(file.kind);
        file.seed = self.seed.or(file.seed);
        if self.cycles.is_some() {
            file.cycles = self.cycles;
            file.duration_s = None;
        }
        file.herald_efficiency = self.herald_efficiency.or(file.herald_efficiency);
        file.pair_rate = self.pair_rate.or(file.pair_rate);
        file.instrument = self.preset.as_ref().map(text).or(file.instrument);
        file.idler_instrument = self.idler_preset.as_ref().map(text).or(file.idler_instrument);
        file.source = self.source.as_ref().map(text).or(file.source);
        file.output = self.out.clone().or(file.output);
        RunConfig::resolve(file).usage()
    }
}

/// Crate version with the git description of the build tree.
pub fn version() -> String {
    version_static().to_string()
}

fn version_static() -> &'static str {
    concat!(env!("CARGO_PKG_VERSION"), " (", env!("TOFSPEC_GIT_DESCRIBE"), ")")
}

/// Write `table` to `out` and the summary to standard output, or the table
/// to standard output and the summary to standard error.
pub fn emit(out: Option<&Path>, table: &str, summary: &str) -> CmdResult {
    match out {
        Some(path) => {
            fs::write(path, table).with_context(|| format!("writing {}", path.display()))?;
            println!("{summary}");
        }
        None => {
            print!("{table}");
            eprintln!("{summary}");
        }
    }
    Ok(())
}

fn dispatch(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Simulate(args) => simulate::run(&args.resolve()?),
        Command::Calibrate(args) => calibrate::run(&args),
        Command::Reconstruct(args) => reconstruct::run(&args),
        Command::Analyze(cmd) => analyze::run(&cmd),
        Command::Presets => {
            for name in tofspec_core::preset_names() {
                let cfg = tofspec_core::preset(name)?;
                println!(
                    "{name}: D = {} ps/nm, jitter {} ps, H = {}, TDC {} ps",
                    cfg.gdd_ps_per_nm,
                    cfg.jitter_fwhm_ps,
                    cfg.efficiency_curve.total_h(),
                    cfg.tdc_resolution_ps
                );
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("tofspec: {failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}
