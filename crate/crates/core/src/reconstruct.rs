//! Efficiency-corrected spectra and joint spectra from calibrated delay
//! histograms, plus fringe and linewidth readout.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::calibrate::CalibrationResult;
use crate::error::{invalid, Error, Result};
use crate::fit::{levenberg_marquardt, weighted_linear};
use crate::spectral::GaussianLine;
use crate::timetag::{BinSpec, CoincidencePair, Histogram, JointHistogram};
use crate::units::{fwhm_to_sigma, sigma_to_fwhm, WavelengthNm};

/// Bins whose mean efficiency is below this fraction of the peak are masked.
pub const MASK_FRACTION: f64 = 0.05;

/// Iteration cap for the fringe fit.
pub const FRINGE_MAX_ITER: usize = 500;

/// A single-channel spectrum, bins in ascending wavelength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructedSpectrum {
    pub lambda_bins: Vec<WavelengthNm>,
    pub corrected_counts: Vec<f64>,
    pub raw_counts: Vec<u64>,
    pub stat_sigma: Vec<f64>,
    pub masked: Vec<bool>,
    /// Multiplier taking raw to corrected counts in each unmasked bin.
    pub correction: Vec<f64>,
    pub bin_width_nm: f64,
    pub calibration_hash: String,
}

/// Time-bin geometry of one axis translated to wavelength.
struct Axis {
    /// Time-bin index for each output bin, ascending in wavelength.
    order: Vec<usize>,
    lambda: Vec<WavelengthNm>,
    eta: Vec<f64>,
    masked: Vec<bool>,
    width_nm: f64,
}

impl Axis {
    fn new(bins: &BinSpec, calib: &CalibrationResult) -> Result<Self> {
        let d = calib.gdd_ps_per_nm;
        let w = bins.width_ps as f64;
        let eff = &calib.efficiency;
        let mut rows = Vec::with_capacity(bins.n_bins);
        for k in 0..bins.n_bins {
            let l = calib.time_to_wavelength(bins.center(k))?;
            let a = calib.lambda0.nm() + (bins.lower_edge(k) - calib.delta_tau_ps) / d;
            let b = a + w / d;
            rows.push((k, l, eff.mean_between(a.min(b), a.max(b))));
        }
        if d < 0.0 {
            rows.reverse();
        }
        let (lo, hi) = eff.support();
        let (first, last) = (rows.first(), rows.last());
        let overlaps = match (first, last) {
            (Some(f), Some(l)) => {
                let half = 0.5 * w / d.abs();
                f.1.nm() - half < hi && l.1.nm() + half > lo
            }
            _ => false,
        };
        if !overlaps {
            return Err(Error::DisjointRanges(format!(
                "histogram does not overlap the calibrated response on [{lo}, {hi}] nm"
            )));
        }
        let threshold = MASK_FRACTION * eff.peak();
        Ok(Self {
            order: rows.iter().map(|r| r.0).collect(),
            lambda: rows.iter().map(|r| r.1).collect(),
            masked: rows.iter().map(|r| !(r.2 >= threshold && r.2 > 0.0)).collect(),
            eta: rows.iter().map(|r| r.2).collect(),
            width_nm: w / d.abs(),
        })
    }
}

/// Per-bin multipliers `s / η` with the single global `s` chosen so the
/// unmasked corrected total equals the unmasked raw total.
fn conserving_factors(raw: &[u64], eta: &[f64], masked: &[bool]) -> Vec<f64> {
    let live = || (0..raw.len()).filter(|&k| !masked[k]);
    let uniform = live()
        .map(|k| eta[k])
        .collect::<Vec<_>>()
        .windows(2)
        .all(|p| p[0] == p[1]);
    if uniform {
        return masked.iter().map(|&m| if m { 0.0 } else { 1.0 }).collect();
    }
    let raw_total: f64 = live().map(|k| raw[k] as f64).sum();
    let divided: f64 = live().map(|k| raw[k] as f64 / eta[k]).sum();
    let scale = if divided > 0.0 {
        raw_total / divided
    } else {
        // No counts: any scale conserves; keep corrections of order one.
        let mean_inv = live().map(|k| 1.0 / eta[k]).sum::<f64>() / live().count().max(1) as f64;
        1.0 / mean_inv
    };
    (0..raw.len())
        .map(|k| if masked[k] { 0.0 } else { scale / eta[k] })
        .collect()
}

/// Divide a delay histogram by the calibrated response: `S(λ) ∝ N(τ(λ)) / η(λ)`.
///
/// The efficiency of each bin is averaged over the wavelength span the bin
/// covers, so a bin half outside the grating window gets half the response.
pub fn reconstruct_spectrum(hist: &Histogram, calib: &CalibrationResult) -> Result<ReconstructedSpectrum> {
    let axis = Axis::new(&hist.bins, calib)?;
    let raw: Vec<u64> = axis.order.iter().map(|&k| hist.counts[k]).collect();
    let correction = conserving_factors(&raw, &axis.eta, &axis.masked);
    let corrected = raw.iter().zip(&correction).map(|(&r, &c)| r as f64 * c).collect();
    let stat_sigma = raw
        .iter()
        .zip(&correction)
        .map(|(&r, &c)| (r as f64).sqrt() * c)
        .collect();
    Ok(ReconstructedSpectrum {
        lambda_bins: axis.lambda,
        corrected_counts: corrected,
        raw_counts: raw,
        stat_sigma,
        masked: axis.masked,
        correction,
        bin_width_nm: axis.width_nm,
        calibration_hash: calib.fingerprint(),
    })
}

impl ReconstructedSpectrum {
    /// Uncorrected spectrum from tabulated values on a uniform grid, e.g. a
    /// model curve to be fitted. Raw counts are the rounded values.
    pub fn from_values(lambda_nm: &[f64], values: &[f64]) -> Result<Self> {
        if lambda_nm.len() != values.len() || lambda_nm.len() < 2 {
            return Err(invalid("need at least two wavelength/value pairs of equal length"));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(invalid("spectrum values must be finite and nonnegative"));
        }
        let lambda_bins = lambda_nm
            .iter()
            .map(|&l| WavelengthNm::new(l))
            .collect::<Result<Vec<_>>>()?;
        if lambda_nm.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("wavelengths must increase"));
        }
        let n = values.len();
        Ok(Self {
            lambda_bins,
            corrected_counts: values.to_vec(),
            raw_counts: values.iter().map(|v| v.round() as u64).collect(),
            stat_sigma: values.iter().map(|v| v.sqrt()).collect(),
            masked: vec![false; n],
            correction: vec![1.0; n],
            bin_width_nm: (lambda_nm[n - 1] - lambda_nm[0]) / (n - 1) as f64,
            calibration_hash: String::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.lambda_bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda_bins.is_empty()
    }

    pub fn raw_total(&self) -> u64 {
        self.raw_counts.iter().sum()
    }

    pub fn unmasked_raw_total(&self) -> f64 {
        self.live().map(|k| self.raw_counts[k] as f64).sum()
    }

    pub fn unmasked_corrected_total(&self) -> f64 {
        self.live().map(|k| self.corrected_counts[k]).sum()
    }

    fn live(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&k| !self.masked[k])
    }

    /// Count-weighted mean wavelength of the unmasked bins.
    pub fn mean_wavelength(&self) -> f64 {
        let total = self.unmasked_corrected_total();
        if total > 0.0 {
            self.live()
                .map(|k| self.lambda_bins[k].nm() * self.corrected_counts[k])
                .sum::<f64>()
                / total
        } else {
            let (a, b) = (self.lambda_bins[0].nm(), self.lambda_bins[self.len() - 1].nm());
            0.5 * (a + b)
        }
    }

    /// Columns `lambda_nm,raw,corrected,sigma,masked`.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# calibration_sha256 = {}", self.calibration_hash);
        let _ = writeln!(s, "lambda_nm,raw,corrected,sigma,masked");
        for k in 0..self.len() {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                self.lambda_bins[k].nm(),
                self.raw_counts[k],
                self.corrected_counts[k],
                self.stat_sigma[k],
                u8::from(self.masked[k])
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Row {
            lambda_nm: f64,
            raw: u64,
            corrected: f64,
            sigma: f64,
            masked: bool,
        }
        #[derive(Serialize)]
        struct Doc<'a> {
            calibration_sha256: &'a str,
            bin_width_nm: f64,
            rows: Vec<Row>,
        }
        let rows = (0..self.len())
            .map(|k| Row {
                lambda_nm: self.lambda_bins[k].nm(),
                raw: self.raw_counts[k],
                corrected: self.corrected_counts[k],
                sigma: self.stat_sigma[k],
                masked: self.masked[k],
            })
            .collect();
        let doc = Doc {
            calibration_sha256: &self.calibration_hash,
            bin_width_nm: self.bin_width_nm,
            rows,
        };
        serde_json::to_string_pretty(&doc).expect("plain numbers serialise")
    }
}

/// Two-channel joint spectrum. Grids are row-major, signal along rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsiGrid {
    pub signal_bins: Vec<WavelengthNm>,
    pub idler_bins: Vec<WavelengthNm>,
    pub corrected_counts: Vec<f64>,
    pub raw: Vec<u64>,
    pub signal_masked: Vec<bool>,
    pub idler_masked: Vec<bool>,
    pub signal_correction: Vec<f64>,
    pub idler_correction: Vec<f64>,
    pub signal_bin_width_nm: f64,
    pub idler_bin_width_nm: f64,
    pub calibration_hashes: (String, String),
    /// Pairs that fell outside the grid.
    pub dropped: u64,
}

/// Delay bins of width `width_ps` covering the wavelength support of the
/// calibrated response. The origin is a multiple of the width.
pub fn axis_bins(calib: &CalibrationResult, width_ps: u64) -> Result<BinSpec> {
    if width_ps == 0 {
        return Err(invalid("bin width must be positive"));
    }
    let (lo, hi) = calib.efficiency.support();
    let (t0, t1) = (calib.wavelength_to_time(lo), calib.wavelength_to_time(hi));
    let (t0, t1) = (t0.min(t1), t0.max(t1));
    let w = width_ps as i64;
    let origin = (t0.floor() as i64).div_euclid(w) * w;
    let n = ((t1 - origin as f64) / width_ps as f64).ceil().max(1.0) as usize;
    BinSpec::new(width_ps, origin, n)
}

/// Grid coincidence delays onto wavelength axes covering both calibrated
/// windows and correct by `η_a(λ_s) η_b(λ_i)`.
pub fn reconstruct_jsi(
    pairs: &[CoincidencePair],
    calib_a: &CalibrationResult,
    calib_b: &CalibrationResult,
    bin_widths_ps: (u64, u64),
) -> Result<JsiGrid> {
    let bins_a = axis_bins(calib_a, bin_widths_ps.0)?;
    let bins_b = axis_bins(calib_b, bin_widths_ps.1)?;
    reconstruct_jsi_with(pairs, calib_a, calib_b, bins_a, bins_b)
}

pub fn reconstruct_jsi_with(
    pairs: &[CoincidencePair],
    calib_a: &CalibrationResult,
    calib_b: &CalibrationResult,
    bins_a: BinSpec,
    bins_b: BinSpec,
) -> Result<JsiGrid> {
    let n_chunks = rayon::current_num_threads().max(1) * 4;
    let joint = JointHistogram::from_pairs_par(pairs, bins_a, bins_b, n_chunks);
    jsi_from_joint(&joint, calib_a, calib_b)
}

pub fn jsi_from_joint(
    joint: &JointHistogram,
    calib_a: &CalibrationResult,
    calib_b: &CalibrationResult,
) -> Result<JsiGrid> {
    let ax = Axis::new(&joint.bins_a, calib_a)?;
    let ay = Axis::new(&joint.bins_b, calib_b)?;
    let (na, nb) = (ax.order.len(), ay.order.len());
    let mut raw = Vec::with_capacity(na * nb);
    let mut eta = Vec::with_capacity(na * nb);
    let mut masked = Vec::with_capacity(na * nb);
    for (i, &ti) in ax.order.iter().enumerate() {
        for (j, &tj) in ay.order.iter().enumerate() {
            raw.push(joint.get(ti, tj));
            eta.push(ax.eta[i] * ay.eta[j]);
            masked.push(ax.masked[i] || ay.masked[j]);
        }
    }
    let factors = conserving_factors(&raw, &eta, &masked);
    // Split the 2D factor into per-axis parts for marginal error propagation.
    let live_a: Vec<f64> = ax
        .eta
        .iter()
        .zip(&ax.masked)
        .map(|(&e, &m)| if m { 0.0 } else { 1.0 / e })
        .collect();
    let live_b: Vec<f64> = ay
        .eta
        .iter()
        .zip(&ay.masked)
        .map(|(&e, &m)| if m { 0.0 } else { 1.0 / e })
        .collect();
    let scale = (0..na * nb)
        .find(|&k| !masked[k])
        .map_or(0.0, |k| factors[k] / (live_a[k / nb] * live_b[k % nb]));
    Ok(JsiGrid {
        signal_bins: ax.lambda,
        idler_bins: ay.lambda,
        corrected_counts: raw.iter().zip(&factors).map(|(&r, &f)| r as f64 * f).collect(),
        raw,
        signal_masked: ax.masked,
        idler_masked: ay.masked,
        signal_correction: live_a.iter().map(|a| a * scale.sqrt()).collect(),
        idler_correction: live_b.iter().map(|b| b * scale.sqrt()).collect(),
        signal_bin_width_nm: ax.width_nm,
        idler_bin_width_nm: ay.width_nm,
        calibration_hashes: (calib_a.fingerprint(), calib_b.fingerprint()),
        dropped: joint.dropped,
    })
}

impl JsiGrid {
    pub fn shape(&self) -> (usize, usize) {
        (self.signal_bins.len(), self.idler_bins.len())
    }

    pub fn masked(&self, i: usize, j: usize) -> bool {
        self.signal_masked[i] || self.idler_masked[j]
    }

    pub fn corrected(&self, i: usize, j: usize) -> f64 {
        self.corrected_counts[i * self.idler_bins.len() + j]
    }

    pub fn raw_at(&self, i: usize, j: usize) -> u64 {
        self.raw[i * self.idler_bins.len() + j]
    }

    pub fn raw_total(&self) -> u64 {
        self.raw.iter().sum()
    }

    pub fn unmasked_raw_total(&self) -> f64 {
        self.cells().map(|(i, j)| self.raw_at(i, j) as f64).sum()
    }

    pub fn unmasked_corrected_total(&self) -> f64 {
        self.cells().map(|(i, j)| self.corrected(i, j)).sum()
    }

    fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let (na, nb) = self.shape();
        (0..na)
            .flat_map(move |i| (0..nb).map(move |j| (i, j)))
            .filter(|&(i, j)| !self.masked(i, j))
    }

    /// Signal-axis spectrum summed over unmasked idler bins.
    pub fn signal_marginal(&self) -> ReconstructedSpectrum {
        self.marginal(true)
    }

    /// Idler-axis spectrum summed over unmasked signal bins.
    pub fn idler_marginal(&self) -> ReconstructedSpectrum {
        self.marginal(false)
    }

    fn marginal(&self, signal: bool) -> ReconstructedSpectrum {
        let (na, nb) = self.shape();
        let (n, m) = if signal { (na, nb) } else { (nb, na) };
        let at = |k: usize, l: usize| if signal { (k, l) } else { (l, k) };
        let mut raw = vec![0u64; n];
        let mut corrected = vec![0.0; n];
        let mut var = vec![0.0; n];
        for k in 0..n {
            for l in 0..m {
                let (i, j) = at(k, l);
                if self.masked(i, j) {
                    continue;
                }
                let r = self.raw_at(i, j);
                let c = self.corrected(i, j);
                raw[k] += r;
                corrected[k] += c;
                if r > 0 {
                    var[k] += c * c / r as f64;
                }
            }
        }
        let masked = if signal {
            self.signal_masked.clone()
        } else {
            self.idler_masked.clone()
        };
        let correction = (0..n)
            .map(|k| if raw[k] > 0 { corrected[k] / raw[k] as f64 } else { 0.0 })
            .collect();
        ReconstructedSpectrum {
            lambda_bins: if signal {
                self.signal_bins.clone()
            } else {
                self.idler_bins.clone()
            },
            corrected_counts: corrected,
            raw_counts: raw,
            stat_sigma: var.iter().map(|v| v.sqrt()).collect(),
            masked,
            correction,
            bin_width_nm: if signal {
                self.signal_bin_width_nm
            } else {
                self.idler_bin_width_nm
            },
            calibration_hash: if signal {
                self.calibration_hashes.0.clone()
            } else {
                self.calibration_hashes.1.clone()
            },
        }
    }

    /// Columns `lambda_s,lambda_i,raw,corrected`; masked cells omitted.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# signal_calibration_sha256 = {}", self.calibration_hashes.0);
        let _ = writeln!(s, "# idler_calibration_sha256 = {}", self.calibration_hashes.1);
        let _ = writeln!(s, "lambda_s,lambda_i,raw,corrected");
        for (i, j) in self.cells() {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                self.signal_bins[i].nm(),
                self.idler_bins[j].nm(),
                self.raw_at(i, j),
                self.corrected(i, j)
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Doc<'a> {
            signal_calibration_sha256: &'a str,
            idler_calibration_sha256: &'a str,
            lambda_s: Vec<f64>,
            lambda_i: Vec<f64>,
            signal_masked: &'a [bool],
            idler_masked: &'a [bool],
            raw: Vec<&'a [u64]>,
            corrected: Vec<&'a [f64]>,
        }
        let nb = self.idler_bins.len().max(1);
        let doc = Doc {
            signal_calibration_sha256: &self.calibration_hashes.0,
            idler_calibration_sha256: &self.calibration_hashes.1,
            lambda_s: self.signal_bins.iter().map(|l| l.nm()).collect(),
            lambda_i: self.idler_bins.iter().map(|l| l.nm()).collect(),
            signal_masked: &self.signal_masked,
            idler_masked: &self.idler_masked,
            raw: self.raw.chunks(nb).collect(),
            corrected: self.corrected_counts.chunks(nb).collect(),
        };
        serde_json::to_string_pretty(&doc).expect("plain numbers serialise")
    }
}

/// Full width at half maximum of the unmasked bins, with linear
/// interpolation between the bins that straddle half maximum.
pub fn measure_fwhm(spec: &ReconstructedSpectrum) -> Result<f64> {
    let pts: Vec<(f64, f64)> = spec
        .live()
        .map(|k| (spec.lambda_bins[k].nm(), spec.corrected_counts[k]))
        .collect();
    let peak = pts.iter().map(|p| p.1).fold(0.0, f64::max);
    if pts.len() < 3 || !(peak > 0.0) {
        return Err(invalid("spectrum has no signal to measure"));
    }
    let half = 0.5 * peak;
    let mut crossings = Vec::new();
    for w in pts.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if (y0 < half) != (y1 < half) {
            crossings.push(x0 + (half - y0) * (x1 - x0) / (y1 - y0));
        }
    }
    match crossings.len() {
        2 => Ok(crossings[1] - crossings[0]),
        n if n > 2 => Err(Error::Multimodal { crossings }),
        _ => Err(invalid("spectrum does not fall below half maximum on both sides")),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FringeOptions {
    /// Hold the period at this value instead of fitting it.
    pub fixed_period_nm: Option<f64>,
    /// Instrument resolution. When given, the fitted visibility is that of the
    /// source before blurring by the resolution and the bin width.
    pub resolution_fwhm_nm: Option<f64>,
}

/// Gaussian envelope times `1 + V cos(2π(λ - λref)/period + φ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringeFit {
    pub period_nm: f64,
    pub visibility: f64,
    pub phase_rad: f64,
    pub envelope: GaussianLine,
    /// Envelope peak height in corrected counts per bin.
    pub amplitude: f64,
    /// Reduced chi-square.
    pub goodness: f64,
    /// Wavelength at which the phase is quoted.
    pub phase_reference_nm: f64,
    /// Visibility reduction applied by the resolution and binning.
    pub contrast_transfer: f64,
    pub sigma_visibility: f64,
    pub sigma_period_nm: f64,
    pub converged: bool,
    pub iterations: usize,
}

fn contrast_transfer(period: f64, resolution_fwhm: Option<f64>, bin_width: f64) -> f64 {
    let Some(res) = resolution_fwhm else {
        return 1.0;
    };
    let s = fwhm_to_sigma(res);
    let blur = (-2.0 * PI * PI * s * s / (period * period)).exp();
    let x = PI * bin_width / period;
    let sinc = if x.abs() < 1e-12 { 1.0 } else { x.sin() / x };
    blur * sinc
}

fn wrap_phase(phi: f64) -> f64 {
    let r = (phi + PI).rem_euclid(2.0 * PI) - PI;
    if r <= -PI {
        r + 2.0 * PI
    } else {
        r
    }
}

/// Least-squares fit of a Gaussian envelope modulated by a cosine.
///
/// With a fixed period only the envelope, visibility and phase float. With a
/// free period the start value comes from the strongest Fourier component of
/// the envelope-normalised spectrum.
pub fn fit_fringes(spec: &ReconstructedSpectrum, options: &FringeOptions) -> Result<FringeFit> {
    let live: Vec<usize> = spec.live().collect();
    if live.len() < 8 {
        return Err(invalid("too few unmasked bins for a fringe fit"));
    }
    let x: Vec<f64> = live.iter().map(|&k| spec.lambda_bins[k].nm()).collect();
    let y: Vec<f64> = live.iter().map(|&k| spec.corrected_counts[k]).collect();
    let scale: Vec<f64> = live.iter().map(|&k| spec.correction[k].max(1e-300)).collect();
    let bw = spec.bin_width_nm;
    if let Some(p) = options.fixed_period_nm {
        if !(p > 0.0 && p.is_finite()) {
            return Err(invalid(format!("fringe period must be positive, got {p}")));
        }
        if p < 4.0 * bw {
            return Err(invalid(format!("period {p} nm spans fewer than 4 bins of {bw} nm")));
        }
    }
    let lref = spec.mean_wavelength();
    let tiny = y.iter().copied().fold(0.0, f64::max) * 1e-9 + 1e-300;

    // Envelope alone.
    let gauss = |l: f64, p: &[f64]| p[0] * (-0.5 * ((l - p[1]) / p[2]).powi(2)).exp();
    let total: f64 = y.iter().sum();
    let rms = (x.iter().zip(&y).map(|(l, c)| c * (l - lref).powi(2)).sum::<f64>() / total.max(tiny)).sqrt();
    let w0: Vec<f64> = y.iter().zip(&scale).map(|(&c, &s)| 1.0 / (c.max(s) * s)).collect();
    let env = levenberg_marquardt(
        gauss,
        &x,
        &y,
        &w0,
        &[y.iter().copied().fold(0.0, f64::max), lref, rms.max(bw)],
        &[1e-6 * total.max(1.0), 1e-4 * bw, 1e-4 * bw],
        FRINGE_MAX_ITER,
        |p| p[2] = p[2].abs().max(0.1 * bw),
    );
    let env_p = env.params;

    let period0 = match options.fixed_period_nm {
        Some(p) => p,
        None => dominant_period(&x, &y, &env_p, bw)?,
    };
    if period0 < 4.0 * bw {
        return Err(invalid(format!(
            "period {period0} nm spans fewer than 4 bins of {bw} nm"
        )));
    }
    let (v0, phi0) = linear_phase(&x, &y, &w0, &env_p, lref, period0)?;

    let free = options.fixed_period_nm.is_none();
    let res = options.resolution_fwhm_nm;
    let model = move |l: f64, p: &[f64]| {
        let period = if free { p[5] } else { period0 };
        let t = contrast_transfer(period, res, bw);
        p[0] * (-0.5 * ((l - p[1]) / p[2]).powi(2)).exp()
            * (1.0 + p[3] * t * (2.0 * PI * (l - lref) / period + p[4]).cos())
    };
    let t0 = contrast_transfer(period0, res, bw);
    let mut p0 = vec![env_p[0], env_p[1], env_p[2], (v0 / t0).min(1.0), phi0];
    let mut steps = vec![1e-6 * env_p[0].abs().max(1.0), 1e-4 * bw, 1e-4 * bw, 1e-6, 1e-6];
    if free {
        p0.push(period0);
        steps.push(1e-6 * period0);
    }
    let project = move |p: &mut [f64]| {
        p[2] = p[2].abs().max(0.1 * bw);
        if p[3] < 0.0 {
            p[3] = -p[3];
            p[4] += PI;
        }
        p[3] = p[3].min(1.0);
        p[4] = wrap_phase(p[4]);
        if free {
            p[5] = p[5].max(2.0 * bw);
        }
    };

    // Start with data-based weights, then refit with weights from the model
    // so low-count bins do not pull the fit down.
    let mut weights = w0;
    let mut out = levenberg_marquardt(model, &x, &y, &weights, &p0, &steps, FRINGE_MAX_ITER, project);
    let mut iterations = out.iterations;
    for _ in 0..2 {
        weights = x
            .iter()
            .zip(&scale)
            .map(|(&l, &s)| 1.0 / (model(l, &out.params).max(tiny).max(s * 1e-3) * s))
            .collect();
        out = levenberg_marquardt(model, &x, &y, &weights, &out.params, &steps, FRINGE_MAX_ITER, project);
        iterations += out.iterations;
    }

    let p = &out.params;
    let period = if free { p[5] } else { period0 };
    let dof = (x.len() as f64 - p.len() as f64).max(1.0);
    let cov = out.covariance.as_ref();
    let sd = |i: usize| cov.map_or(f64::NAN, |c| c[(i, i)].max(0.0).sqrt());
    let fit = FringeFit {
        period_nm: period,
        visibility: p[3],
        phase_rad: p[4],
        envelope: GaussianLine {
            center: WavelengthNm::new(p[1])?,
            fwhm_nm: sigma_to_fwhm(p[2].abs()),
        },
        amplitude: p[0],
        goodness: out.chi2 / dof,
        phase_reference_nm: lref,
        contrast_transfer: contrast_transfer(period, res, bw),
        sigma_visibility: sd(3),
        sigma_period_nm: if free { sd(5) } else { 0.0 },
        converged: out.converged,
        iterations,
    };
    if !fit.converged {
        return Err(Error::FitNotConverged {
            iterations,
            best: Box::new(fit),
        });
    }
    Ok(fit)
}

/// Best linear estimate of visibility and phase at a given period.
fn linear_phase(x: &[f64], y: &[f64], w: &[f64], env: &[f64], lref: f64, period: f64) -> Result<(f64, f64)> {
    let e: Vec<f64> = x
        .iter()
        .map(|&l| env[0] * (-0.5 * ((l - env[1]) / env[2]).powi(2)).exp())
        .collect();
    let design = DMatrix::from_fn(x.len(), 2, |i, j| {
        let arg = 2.0 * PI * (x[i] - lref) / period;
        e[i] * if j == 0 { arg.cos() } else { arg.sin() }
    });
    let target: Vec<f64> = y.iter().zip(&e).map(|(a, b)| a - b).collect();
    let fit = weighted_linear(&design, &target, w)?;
    let (a, b) = (fit.coef[0], fit.coef[1]);
    Ok((a.hypot(b), (-b).atan2(a)))
}

/// Period of the strongest oscillation in `y / envelope - 1`.
fn dominant_period(x: &[f64], y: &[f64], env: &[f64], bw: f64) -> Result<f64> {
    let mut r: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(&l, &c)| {
            let e = env[0] * (-0.5 * ((l - env[1]) / env[2]).powi(2)).exp();
            if e > 0.1 * env[0] {
                c / e - 1.0
            } else {
                0.0
            }
        })
        .collect();
    let mean = r.iter().sum::<f64>() / r.len() as f64;
    r.iter_mut().for_each(|v| *v -= mean);
    let n = (r.len() * 8).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = r.iter().map(|&v| Complex::new(v, 0.0)).collect();
    buf.resize(n, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    // Ignore the lowest frequencies, which carry envelope mismatch, and
    // anything faster than four bins per period.
    let span = x[x.len() - 1] - x[0];
    let kmin = ((n as f64 * bw / span) * 2.0).ceil() as usize + 1;
    let kmax = n / 4;
    let best = (kmin.min(kmax)..=kmax)
        .max_by(|&a, &b| buf[a].norm_sqr().total_cmp(&buf[b].norm_sqr()))
        .ok_or_else(|| invalid("spectrum too short to locate fringes"))?;
    Ok(n as f64 * bw / best as f64)
}
