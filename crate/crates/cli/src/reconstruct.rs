//! `tofspec reconstruct`: calibrated spectra and joint spectra from tags.

use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, ValueEnum};
use tofspec_core::timetag::{read_tags, IDLER_CHANNEL, SIGNAL_CHANNEL};
use tofspec_core::{
    axis_bins, build_histogram_par, coincidence_pairs_par, fit_fringes, measure_fwhm, reconstruct_jsi,
    reconstruct_spectrum, CalibrationResult, Error, FringeFit, FringeOptions, ReconstructedSpectrum,
};

use crate::error::{CmdResult, UsageExt};
use crate::{emit, usage_bail, Format};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Spectrum,
    Jsi,
}

/// Fringe-fit switches shared with `analyze`.
#[derive(Debug, Args)]
pub struct FringeArgs {
    /// Fit a fringed Gaussian and report period, visibility and phase.
    #[arg(long)]
    pub fringes: bool,
    /// Hold the fringe period fixed, nm (implies --fringes).
    #[arg(long)]
    pub fringe_period_nm: Option<f64>,
    /// Instrument resolution FWHM, nm; reported visibility is corrected for it.
    #[arg(long)]
    pub resolution_nm: Option<f64>,
}

impl FringeArgs {
    pub fn wanted(&self) -> bool {
        self.fringes || self.fringe_period_nm.is_some()
    }

    pub fn options(&self) -> FringeOptions {
        FringeOptions {
            fixed_period_nm: self.fringe_period_nm,
            resolution_fwhm_nm: self.resolution_nm,
        }
    }
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// Time-tag file.
    pub tags: PathBuf,
    /// Calibration of the signal channel.
    #[arg(long, short)]
    pub calibration: PathBuf,
    /// Calibration of the idler channel (jsi mode; defaults to --calibration).
    #[arg(long)]
    pub idler_calibration: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Mode::Spectrum)]
    pub mode: Mode,
    /// Delay bin width, ps.
    #[arg(long, default_value_t = 32)]
    pub bin_ps: u64,
    /// Idler delay bin width in jsi mode, ps (defaults to --bin-ps).
    #[arg(long)]
    pub idler_bin_ps: Option<u64>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Table output; standard output when absent.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub fringe: FringeArgs,
}

fn load_calibration(path: &PathBuf) -> CmdResult<CalibrationResult> {
    if !path.is_file() {
        usage_bail!("calibration file {} not found", path.display());
    }
    Ok(CalibrationResult::load(path).with_context(|| path.display().to_string())?)
}

pub fn run(args: &ReconstructArgs) -> CmdResult {
    if !args.tags.is_file() {
        usage_bail!("tag file {} not found", args.tags.display());
    }
    if args.bin_ps == 0 || args.idler_bin_ps == Some(0) {
        usage_bail!("bin widths must be positive");
    }
    if args.mode == Mode::Jsi && args.fringe.wanted() {
        usage_bail!("fringe fitting applies to spectrum mode");
    }
    let cal = load_calibration(&args.calibration)?;
    let stream = read_tags(&args.tags).with_context(|| args.tags.display().to_string())?;
    let n_chunks = rayon::current_num_threads() * 4;
    let has_idler = stream.count_channel(IDLER_CHANNEL) > 0;

    match args.mode {
        Mode::Spectrum => {
            if has_idler {
                eprintln!(
                    "warning: {} holds pair data; spectrum mode uses channel 1 only",
                    args.tags.display()
                );
            }
            let bins = axis_bins(&cal, args.bin_ps).usage()?;
            let hist = build_histogram_par(&stream, SIGNAL_CHANNEL, &bins, n_chunks)?;
            let spec = reconstruct_spectrum(&hist, &cal)?;
            let table = match args.format {
                Format::Csv => spec.to_csv(),
                Format::Json => spec.to_json(),
            };
            let summary = spectrum_summary(&spec, &args.fringe)?;
            emit(args.out.as_deref(), &table, &summary)
        }
        Mode::Jsi => {
            if !has_idler {
                usage_bail!(
                    "{} has no idler tags (channel 2); jsi mode needs a pair file",
                    args.tags.display()
                );
            }
            let cal_b = match &args.idler_calibration {
                Some(p) => load_calibration(p)?,
                None => cal.clone(),
            };
            let widths = (args.bin_ps, args.idler_bin_ps.unwrap_or(args.bin_ps));
            let pairs = coincidence_pairs_par(&stream, SIGNAL_CHANNEL, IDLER_CHANNEL, n_chunks)?;
            let jsi = reconstruct_jsi(&pairs, &cal, &cal_b, widths)?;
            let table = match args.format {
                Format::Csv => jsi.to_csv(),
                Format::Json => jsi.to_json(),
            };
            let (na, nb) = jsi.shape();
            let summary = format!(
                "coincidences={} gridded={} unmasked={:.0} dropped={} shape={na}x{nb} signal_fwhm_nm={} idler_fwhm_nm={}",
                pairs.len(),
                jsi.raw_total(),
                jsi.unmasked_corrected_total(),
                jsi.dropped,
                fwhm_text(&jsi.signal_marginal()),
                fwhm_text(&jsi.idler_marginal()),
            );
            emit(args.out.as_deref(), &table, &summary)
        }
    }
}

pub fn fwhm_text(spec: &ReconstructedSpectrum) -> String {
    match measure_fwhm(spec) {
        Ok(w) => format!("{w:.4}"),
        Err(Error::Multimodal { .. }) => "multimodal".into(),
        Err(_) => "none".into(),
    }
}

/// One-line `key=value` summary of a spectrum and, when asked, its fringes.
pub fn spectrum_summary(spec: &ReconstructedSpectrum, fringe: &FringeArgs) -> CmdResult<String> {
    let mut line = format!(
        "counts={} unmasked={:.0} mean_nm={:.4} fwhm_nm={}",
        spec.raw_total(),
        spec.unmasked_corrected_total(),
        spec.mean_wavelength(),
        fwhm_text(spec)
    );
    if fringe.wanted() {
        let fit = fringe_fit(spec, fringe)?;
        line.push_str(&format!(
            " period_nm={:.4} visibility={:.4} sigma_visibility={:.4} phase_rad={:.3} chi2r={:.3} converged={}",
            fit.period_nm, fit.visibility, fit.sigma_visibility, fit.phase_rad, fit.goodness, fit.converged
        ));
    }
    Ok(line)
}

/// A fit that runs out of iterations still reports its best parameters.
pub fn fringe_fit(spec: &ReconstructedSpectrum, fringe: &FringeArgs) -> CmdResult<FringeFit> {
    match fit_fringes(spec, &fringe.options()) {
        Ok(fit) => Ok(fit),
        Err(Error::FitNotConverged { best, iterations }) => {
            eprintln!("warning: fringe fit stopped after {iterations} iterations");
            Ok(*best)
        }
        Err(e) => Err(e.into()),
    }
}
