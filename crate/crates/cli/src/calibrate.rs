//! `tofspec calibrate`: dispersion, offset and response from measured inputs.

use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use tofspec_core::calibrate::counts_vs_wavelength;
use tofspec_core::timetag::{read_tags, BinSpec, SIGNAL_CHANNEL};
use tofspec_core::{
    build_histogram_with, estimate_efficiency, find_offset, fit_gdd, parse_delay_points, CalibrationResult, Tabulation,
    WavelengthNm,
};

use crate::error::{CmdResult, UsageExt};
use crate::usage_bail;

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Delay table, rows of `lambda_nm,delay_ps[,sigma_ps]`.
    #[arg(long)]
    pub delays: PathBuf,
    /// Tag file of a narrowband line at `--line-nm`.
    #[arg(long)]
    pub narrowband: PathBuf,
    /// Wavelength of the narrowband line, nm.
    #[arg(long)]
    pub line_nm: f64,
    /// Tag file of the broadband reference source.
    #[arg(long)]
    pub broadband: PathBuf,
    /// Known spectrum of the broadband reference, two columns (nm, density).
    #[arg(long)]
    pub reference: PathBuf,
    /// Total heralding efficiency H of the channel.
    #[arg(long = "heralding-efficiency", short = 'H')]
    pub heralding_efficiency: f64,
    /// Polynomial degree of the delay fit (2 reports residual curvature).
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub degree: u8,
    /// Reference wavelength of the mapping, nm.
    #[arg(long, default_value_t = 830.0)]
    pub lambda0: f64,
    /// Histogram bin for the narrowband line, ps.
    #[arg(long, default_value_t = 8)]
    pub bin_ps: u64,
    /// Histogram bin for the broadband reference, ps.
    #[arg(long, default_value_t = 81)]
    pub reference_bin_ps: u64,
    /// Calibration file to write.
    #[arg(long, short)]
    pub out: PathBuf,
}

fn require(path: &Path, what: &str) -> CmdResult {
    if !path.is_file() {
        usage_bail!("{what} {} not found", path.display());
    }
    Ok(())
}

pub fn run(args: &CalibrateArgs) -> CmdResult {
    require(&args.delays, "delay table")?;
    require(&args.narrowband, "narrowband tag file")?;
    require(&args.broadband, "broadband tag file")?;
    require(&args.reference, "reference spectrum")?;
    let lambda0 = WavelengthNm::new(args.lambda0).usage()?;
    let line = WavelengthNm::new(args.line_nm).usage()?;
    if !(0.0..=1.0).contains(&args.heralding_efficiency) {
        usage_bail!(
            "heralding efficiency must lie in [0, 1], got {}",
            args.heralding_efficiency
        );
    }
    if args.bin_ps == 0 || args.reference_bin_ps == 0 {
        usage_bail!("bin widths must be positive");
    }

    let text = fs::read_to_string(&args.delays)?;
    let points = parse_delay_points(&text).with_context(|| args.delays.display().to_string())?;
    let gdd = fit_gdd(&points, args.degree as usize, lambda0).with_context(|| args.delays.display().to_string())?;

    let narrow = read_tags(&args.narrowband).with_context(|| args.narrowband.display().to_string())?;
    let bins = BinSpec::for_clock(narrow.clock_period_ps(), args.bin_ps)?;
    let hist = build_histogram_with(&narrow, SIGNAL_CHANNEL, &bins)?;
    let offset =
        find_offset(&hist, line, gdd.gdd_ps_per_nm, lambda0).with_context(|| args.narrowband.display().to_string())?;

    let reference = Tabulation::parse(BufReader::new(File::open(&args.reference)?))
        .with_context(|| args.reference.display().to_string())?;
    let broad = read_tags(&args.broadband).with_context(|| args.broadband.display().to_string())?;
    let bins = BinSpec::for_clock(broad.clock_period_ps(), args.reference_bin_ps)?;
    let hist = build_histogram_with(&broad, SIGNAL_CHANNEL, &bins)?;
    let counts = counts_vs_wavelength(&hist, gdd.gdd_ps_per_nm, offset.delta_tau_ps, lambda0)?;
    let efficiency = estimate_efficiency(&counts, &reference, args.heralding_efficiency)
        .with_context(|| format!("{} against {}", args.broadband.display(), args.reference.display()))?;

    let cal = CalibrationResult::from_parts(&gdd, &offset, efficiency, lambda0);
    cal.save(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;

    println!("D = {:.3} +/- {:.3} ps/nm", gdd.gdd_ps_per_nm, gdd.sigma_gdd);
    println!(
        "delta_tau = {:.2} +/- {:.2} ps ({:?})",
        offset.delta_tau_ps, offset.sigma_ps, offset.method
    );
    println!(
        "residual_rms = {:.3} ps over {} points",
        gdd.residual_rms_ps,
        points.len()
    );
    if let Some(c2) = gdd.quadratic_ps_per_nm2 {
        let (lo, hi) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
            (a.min(p.lambda.nm()), b.max(p.lambda.nm()))
        });
        let reach = (lo - args.lambda0).abs().max((hi - args.lambda0).abs());
        println!(
            "quadratic = {c2:.4} ps/nm^2 (|c2| * reach^2 = {:.2} ps)",
            c2.abs() * reach * reach
        );
    }
    let (a, b) = cal.efficiency.support();
    println!("efficiency: H = {} over [{a:.2}, {b:.2}] nm", cal.efficiency.total_h());
    println!("wrote {} (sha256 {})", args.out.display(), cal.fingerprint());
    Ok(())
}
