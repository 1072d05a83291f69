//! `tofspec analyze`: summary tables for tag files and reconstructed spectra.

use std::fs;
use std::path::PathBuf;

use anyhow::{anyhow, Context};
use clap::{Args, Subcommand};
use serde::Serialize;
use tofspec_core::timetag::{read_tags, BinSpec, TRIGGER_CHANNEL};
use tofspec_core::{build_histogram_with, measure_fwhm, ReconstructedSpectrum};

use crate::error::{CmdResult, UsageExt};
use crate::reconstruct::{fringe_fit, FringeArgs};
use crate::{emit, usage_bail, Format};

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Channel counts and the start-stop delay histogram of a tag file.
    Tags(TagsArgs),
    /// Width, centre and fringe parameters of a reconstructed spectrum table.
    Spectrum(SpectrumArgs),
}

#[derive(Debug, Args)]
pub struct TagsArgs {
    pub tags: PathBuf,
    /// Stop channel of the histogram.
    #[arg(long, default_value_t = 1)]
    pub channel: u8,
    #[arg(long, default_value_t = 32)]
    pub bin_ps: u64,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    /// Spectrum table written by `reconstruct --format csv`.
    pub table: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub fringe: FringeArgs,
}

pub fn run(cmd: &AnalyzeCommand) -> CmdResult {
    match cmd {
        AnalyzeCommand::Tags(a) => tags(a),
        AnalyzeCommand::Spectrum(a) => spectrum(a),
    }
}

fn tags(args: &TagsArgs) -> CmdResult {
    if !args.tags.is_file() {
        usage_bail!("tag file {} not found", args.tags.display());
    }
    if args.channel == TRIGGER_CHANNEL {
        usage_bail!("channel 0 is the trigger; choose a stop channel");
    }
    let stream = read_tags(&args.tags).with_context(|| args.tags.display().to_string())?;
    let bins = BinSpec::for_clock(stream.clock_period_ps(), args.bin_ps).usage()?;
    let hist = build_histogram_with(&stream, args.channel, &bins)?;

    #[derive(Serialize)]
    struct Row {
        delay_ps: f64,
        counts: u64,
    }
    #[derive(Serialize)]
    struct Doc {
        clock_period_ps: u64,
        records: usize,
        channel_counts: Vec<usize>,
        dropped: u64,
        rows: Vec<Row>,
    }
    let channel_counts: Vec<usize> = (0..stream.channel_count())
        .map(|c| stream.count_channel(c as u8))
        .collect();
    let rows: Vec<Row> = hist
        .centers()
        .zip(&hist.counts)
        .map(|(d, &c)| Row { delay_ps: d, counts: c })
        .collect();
    let table = match args.format {
        Format::Json => serde_json::to_string_pretty(&Doc {
            clock_period_ps: stream.clock_period_ps(),
            records: stream.len(),
            channel_counts: channel_counts.clone(),
            dropped: hist.dropped.total(),
            rows,
        })
        .expect("plain numbers serialise"),
        Format::Csv => {
            let mut s = String::from("delay_ps,counts\n");
            for r in rows {
                s.push_str(&format!("{},{}\n", r.delay_ps, r.counts));
            }
            s
        }
    };
    let counts: Vec<String> = channel_counts
        .iter()
        .enumerate()
        .map(|(c, n)| format!("ch{c}={n}"))
        .collect();
    let summary = format!(
        "records={} {} histogram_total={} dropped={}",
        stream.len(),
        counts.join(" "),
        hist.total(),
        hist.dropped.total()
    );
    emit(args.out.as_deref(), &table, &summary)
}

/// Read the `lambda_nm,raw,corrected,sigma,masked` table back.
fn read_spectrum(path: &PathBuf) -> CmdResult<ReconstructedSpectrum> {
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<(f64, u64, f64, f64, bool)> = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("lambda_nm") {
            continue;
        }
        let bad = || {
            anyhow!(
                "{}:{}: expected lambda_nm,raw,corrected,sigma,masked",
                path.display(),
                k + 1
            )
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad()).usage();
        }
        let row = (|| -> Option<_> {
            Some((
                f[0].parse().ok()?,
                f[1].parse().ok()?,
                f[2].parse().ok()?,
                f[3].parse().ok()?,
                f[4] == "1",
            ))
        })()
        .ok_or_else(bad)
        .usage()?;
        rows.push(row);
    }
    let lambda: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let corrected: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let mut spec = ReconstructedSpectrum::from_values(&lambda, &corrected)
        .with_context(|| path.display().to_string())
        .usage()?;
    for (k, &(_, raw, corr, sigma, masked)) in rows.iter().enumerate() {
        spec.raw_counts[k] = raw;
        spec.stat_sigma[k] = sigma;
        spec.masked[k] = masked;
        spec.correction[k] = if raw > 0 { corr / raw as f64 } else { 1.0 };
    }
    Ok(spec)
}

fn spectrum(args: &SpectrumArgs) -> CmdResult {
    if !args.table.is_file() {
        usage_bail!("spectrum table {} not found", args.table.display());
    }
    let spec = read_spectrum(&args.table)?;
    let mut metrics: Vec<(&str, f64)> = vec![
        ("bins", spec.len() as f64),
        ("raw_total", spec.raw_total() as f64),
        ("unmasked_corrected_total", spec.unmasked_corrected_total()),
        ("mean_nm", spec.mean_wavelength()),
    ];
    if let Ok(w) = measure_fwhm(&spec) {
        metrics.push(("fwhm_nm", w));
    }
    if args.fringe.wanted() {
        let fit = fringe_fit(&spec, &args.fringe)?;
        metrics.extend([
            ("period_nm", fit.period_nm),
            ("sigma_period_nm", fit.sigma_period_nm),
            ("visibility", fit.visibility),
            ("sigma_visibility", fit.sigma_visibility),
            ("phase_rad", fit.phase_rad),
            ("phase_reference_nm", fit.phase_reference_nm),
            ("envelope_center_nm", fit.envelope.center.nm()),
            ("envelope_fwhm_nm", fit.envelope.fwhm_nm),
            ("contrast_transfer", fit.contrast_transfer),
            ("chi2r", fit.goodness),
        ]);
    }
    let table = match args.format {
        Format::Csv => {
            let mut s = String::from("metric,value\n");
            for (k, v) in &metrics {
                s.push_str(&format!("{k},{v}\n"));
            }
            s
        }
        Format::Json => {
            let map: serde_json::Map<String, serde_json::Value> = metrics
                .iter()
                .map(|(k, v)| (k.to_string(), serde_json::json!(v)))
                .collect();
            serde_json::to_string_pretty(&map).expect("plain numbers serialise")
        }
    };
    let summary: Vec<String> = metrics.iter().map(|(k, v)| format!("{k}={v}")).collect();
    emit(args.out.as_deref(), &table, &summary.join(" "))
}
