//! Instrument calibration: dispersion from delay-versus-wavelength data, the
//! trigger offset from a narrowband reference peak, and the spectral
//! efficiency from an attenuated broadband reference.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::fit::{levenberg_marquardt, weighted_linear};
use crate::instrument::{invert_time, EfficiencyCurve, InstrumentConfig};
use crate::table::Tabulation;
use crate::timetag::Histogram;
use crate::units::{WavelengthNm, FWHM_PER_SIGMA};

/// Half-width, in bins, of the window fitted around the histogram maximum.
pub const PEAK_WINDOW_BINS: usize = 3;

/// Reference-spectrum level, relative to its peak, below which the
/// efficiency ratio is not formed.
pub const REFERENCE_MASK_FRACTION: f64 = 0.01;

pub const CALIBRATION_FORMAT_VERSION: u32 = 1;

/// One delay measurement of a narrowband pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayPoint {
    pub lambda: WavelengthNm,
    pub delay_ps: f64,
    /// One-sigma delay uncertainty; `None` gives the point unit weight.
    pub sigma_ps: Option<f64>,
}

impl DelayPoint {
    pub fn new(lambda_nm: f64, delay_ps: f64, sigma_ps: Option<f64>) -> Result<Self> {
        if let Some(s) = sigma_ps {
            if !(s > 0.0 && s.is_finite()) {
                return Err(invalid(format!("delay uncertainty must be positive, got {s}")));
            }
        }
        if !delay_ps.is_finite() {
            return Err(invalid("delay must be finite"));
        }
        Ok(Self {
            lambda: WavelengthNm::new(lambda_nm)?,
            delay_ps,
            sigma_ps,
        })
    }
}

/// Read `lambda_nm,delay_ps[,sigma_ps]` rows. Header and `#` lines allowed.
pub fn parse_delay_points(text: &str) -> Result<Vec<DelayPoint>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        let nums: Option<Vec<f64>> = fields.iter().map(|f| f.parse().ok()).collect();
        match nums {
            Some(v) if v.len() == 2 || v.len() == 3 => {
                let p = DelayPoint::new(v[0], v[1], v.get(2).copied()).map_err(|e| Error::Parse {
                    line: idx + 1,
                    reason: e.to_string(),
                })?;
                out.push(p);
            }
            None if out.is_empty() => {}
            _ => {
                return Err(Error::Parse {
                    line: idx + 1,
                    reason: format!("expected lambda_nm,delay_ps[,sigma_ps], got {line:?}"),
                })
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GddFit {
    pub gdd_ps_per_nm: f64,
    /// Fitted delay at `lambda0`.
    pub intercept_ps: f64,
    /// Second-order coefficient, present for degree-2 fits.
    pub quadratic_ps_per_nm2: Option<f64>,
    pub residual_rms_ps: f64,
    pub sigma_gdd: f64,
}

/// Weighted polynomial fit of delay against `λ - λ₀`. The GDD is the linear
/// coefficient. Degree 2 is a diagnostic for residual curvature.
pub fn fit_gdd(points: &[DelayPoint], degree: usize, lambda0: WavelengthNm) -> Result<GddFit> {
    if !(1..=2).contains(&degree) {
        return Err(invalid(format!("polynomial degree must be 1 or 2, got {degree}")));
    }
    let n = points.len();
    let ncoef = degree + 1;
    if n < ncoef {
        return Err(Error::RankDeficient(format!(
            "{n} points cannot fix {ncoef} coefficients"
        )));
    }
    let l0 = lambda0.nm();
    let design = DMatrix::from_fn(n, ncoef, |i, j| (points[i].lambda.nm() - l0).powi(j as i32));
    let y: Vec<f64> = points.iter().map(|p| p.delay_ps).collect();
    let absolute_sigmas = points.iter().all(|p| p.sigma_ps.is_some());
    let w: Vec<f64> = points
        .iter()
        .map(|p| {
            if absolute_sigmas {
                1.0 / p.sigma_ps.unwrap().powi(2)
            } else {
                1.0
            }
        })
        .collect();
    let fit = weighted_linear(&design, &y, &w)?;
    let rss: f64 = fit.residuals.iter().map(|r| r * r).sum();
    let residual_rms_ps = (rss / n as f64).sqrt();
    let var_gdd = if absolute_sigmas {
        fit.covariance[(1, 1)]
    } else if n > ncoef {
        fit.covariance[(1, 1)] * rss / (n - ncoef) as f64
    } else {
        0.0
    };
    Ok(GddFit {
        gdd_ps_per_nm: fit.coef[1],
        intercept_ps: fit.coef[0],
        quadratic_ps_per_nm2: (degree == 2).then(|| fit.coef[2]),
        residual_rms_ps,
        sigma_gdd: var_gdd.max(0.0).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PeakMethod {
    GaussianFit,
    Centroid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetEstimate {
    pub delta_tau_ps: f64,
    pub sigma_ps: f64,
    /// Fitted delay of the reference peak.
    pub peak_time_ps: f64,
    pub method: PeakMethod,
}

/// Trigger offset from a narrowband reference histogram: the peak delay is
/// attributed to `reference_lambda` and the dispersion term removed.
pub fn find_offset(
    hist: &Histogram,
    reference_lambda: WavelengthNm,
    gdd_ps_per_nm: f64,
    lambda0: WavelengthNm,
) -> Result<OffsetEstimate> {
    let counts = &hist.counts;
    if hist.total() == 0 {
        return Err(Error::NoCalibrationPeak("histogram is empty".into()));
    }
    let (kmax, &max) = counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .expect("nonempty");
    let mut sorted = counts.clone();
    sorted.sort_unstable();
    let median = sorted[sorted.len() / 2];
    if max <= 2 * median {
        return Err(Error::NoCalibrationPeak(format!(
            "maximum {max} is not above twice the median {median}"
        )));
    }

    let w = hist.bins.width_ps as f64;
    let lo = kmax.saturating_sub(PEAK_WINDOW_BINS);
    let hi = (kmax + PEAK_WINDOW_BINS).min(counts.len() - 1);
    // Local coordinates relative to the centre of the maximum bin.
    let x: Vec<f64> = (lo..=hi).map(|k| (k as f64 - kmax as f64) * w).collect();
    let y: Vec<f64> = counts[lo..=hi].iter().map(|&c| c as f64).collect();
    let centre = hist.bins.center(kmax);

    let (local, sigma, method) = gaussian_peak(&x, &y, w)
        .map(|(mu, s)| (mu, s, PeakMethod::GaussianFit))
        .unwrap_or_else(|| {
            let (mu, s) = centroid(&x, &y, w);
            (mu, s, PeakMethod::Centroid)
        });
    let peak_time_ps = centre + local;
    Ok(OffsetEstimate {
        delta_tau_ps: peak_time_ps - gdd_ps_per_nm * (reference_lambda.nm() - lambda0.nm()),
        sigma_ps: sigma,
        peak_time_ps,
        method,
    })
}

fn centroid(x: &[f64], y: &[f64], w: f64) -> (f64, f64) {
    let n: f64 = y.iter().sum();
    let mean = x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / n;
    let var = x.iter().zip(y).map(|(a, b)| b * (a - mean).powi(2)).sum::<f64>() / n;
    // A single occupied bin still carries its own width.
    let spread = var.max(w * w / 12.0).sqrt();
    (mean, spread / n.sqrt())
}

/// Least-squares Gaussian fit; `None` when the window holds fewer than three
/// occupied bins or the fit wanders off the window.
fn gaussian_peak(x: &[f64], y: &[f64], w: f64) -> Option<(f64, f64)> {
    if y.iter().filter(|&&c| c > 0.0).count() < 3 {
        return None;
    }
    let amp = y.iter().copied().fold(0.0, f64::max);
    let (mu0, _) = centroid(x, y, w);
    let n: f64 = y.iter().sum();
    let rms = (x.iter().zip(y).map(|(a, b)| b * (a - mu0).powi(2)).sum::<f64>() / n).sqrt();
    let weights: Vec<f64> = y.iter().map(|&c| 1.0 / c.max(1.0)).collect();
    let model = |xi: f64, p: &[f64]| p[0] * (-0.5 * ((xi - p[1]) / p[2]).powi(2)).exp();
    let out = levenberg_marquardt(
        model,
        x,
        y,
        &weights,
        &[amp, mu0, rms.max(0.5 * w)],
        &[1e-4 * amp.max(1.0), 1e-4 * w, 1e-4 * w],
        200,
        |p| p[2] = p[2].abs().max(1e-3 * w),
    );
    let (mu, s) = (out.params[1], out.params[2]);
    let span = (x[0] - 0.5 * w, x[x.len() - 1] + 0.5 * w);
    if !out.converged || !(mu > span.0 && mu < span.1) || !(s.is_finite() && out.params[0] > 0.0) {
        return None;
    }
    let dof = (x.len() as f64 - 3.0).max(1.0);
    let scale = (out.chi2 / dof).max(1.0);
    let var = out.covariance.map_or(f64::NAN, |c| c[(1, 1)] * scale);
    Some((mu, var.max(0.0).sqrt()))
}

/// Counts per histogram bin tabulated against the bin-centre wavelength.
pub fn counts_vs_wavelength(
    hist: &Histogram,
    gdd_ps_per_nm: f64,
    delta_tau_ps: f64,
    lambda0: WavelengthNm,
) -> Result<Tabulation> {
    let mut rows = Vec::with_capacity(hist.counts.len());
    for (k, &c) in hist.counts.iter().enumerate() {
        if let Ok(l) = invert_time(gdd_ps_per_nm, lambda0.nm(), delta_tau_ps, hist.bins.center(k)) {
            rows.push((l.nm(), c as f64));
        }
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (grid, values) = rows.into_iter().unzip();
    Tabulation::new(grid, values)
}

/// Spectral response `η = N_S / (A I_in)` on the count grid, with `A` fixed by
/// `∫η = total_h`. Points where the reference falls below 1 % of its peak
/// are set to zero and excluded from the normalisation.
pub fn estimate_efficiency(counts: &Tabulation, reference: &Tabulation, total_h: f64) -> Result<EfficiencyCurve> {
    let ref_peak = reference.peak();
    if !(ref_peak > 0.0) {
        return Err(invalid("reference spectrum has no positive values"));
    }
    let threshold = REFERENCE_MASK_FRACTION * ref_peak;
    let (lo, hi) = (reference.first(), reference.last());
    let (grid, ratio): (Vec<f64>, Vec<f64>) = counts
        .grid
        .iter()
        .zip(&counts.values)
        .filter(|(&l, _)| l >= lo && l <= hi)
        .map(|(&l, &n)| {
            let i_in = reference.eval(l);
            (l, if i_in >= threshold { n / i_in } else { 0.0 })
        })
        .unzip();
    if grid.len() < 2 {
        return Err(Error::DisjointRanges(format!(
            "counts cover [{}, {}] nm, reference covers [{lo}, {hi}] nm",
            counts.first(),
            counts.last()
        )));
    }
    if !ratio.iter().any(|&r| r > 0.0) {
        return Err(Error::DisjointRanges(
            "no counts where the reference is above threshold".into(),
        ));
    }
    EfficiencyCurve::normalized(grid, ratio, total_h)
}

/// Everything needed to turn delays back into wavelengths and correct for
/// the channel response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub lambda0: WavelengthNm,
    pub gdd_ps_per_nm: f64,
    pub intercept_ps: f64,
    pub quadratic_ps_per_nm2: Option<f64>,
    pub delta_tau_ps: f64,
    pub efficiency: EfficiencyCurve,
    pub fit_residual_rms_ps: f64,
    pub sigma_gdd: f64,
    pub sigma_delta_tau: f64,
}

impl CalibrationResult {
    pub fn from_parts(
        gdd: &GddFit,
        offset: &OffsetEstimate,
        efficiency: EfficiencyCurve,
        lambda0: WavelengthNm,
    ) -> Self {
        Self {
            lambda0,
            gdd_ps_per_nm: gdd.gdd_ps_per_nm,
            intercept_ps: gdd.intercept_ps,
            quadratic_ps_per_nm2: gdd.quadratic_ps_per_nm2,
            delta_tau_ps: offset.delta_tau_ps,
            efficiency,
            fit_residual_rms_ps: gdd.residual_rms_ps,
            sigma_gdd: gdd.sigma_gdd,
            sigma_delta_tau: offset.sigma_ps,
        }
    }

    /// Calibration of a simulated instrument as its own readout would
    /// measure it. Delays are rounded to TDC levels and histogram bins start
    /// on a level, so bin centres sit half a level late; the offset carries
    /// that shift. The efficiency is the configured response blurred by the
    /// jitter and the level spacing, as a reference measurement records it.
    pub fn from_instrument(cfg: &InstrumentConfig) -> Result<Self> {
        let q = cfg.tdc_resolution_ps as f64;
        let timing_fwhm = (cfg.jitter_fwhm_ps.powi(2) + (FWHM_PER_SIGMA * q).powi(2) / 12.0).sqrt();
        let delta_tau = cfg.delta_tau_ps + 0.5 * q;
        Ok(Self {
            lambda0: cfg.lambda0_nm,
            gdd_ps_per_nm: cfg.gdd_ps_per_nm,
            intercept_ps: delta_tau,
            quadratic_ps_per_nm2: None,
            delta_tau_ps: delta_tau,
            efficiency: cfg
                .effective_efficiency()?
                .blurred(timing_fwhm / cfg.gdd_ps_per_nm.abs())?,
            fit_residual_rms_ps: 0.0,
            sigma_gdd: 0.0,
            sigma_delta_tau: 0.0,
        })
    }

    pub fn time_to_wavelength(&self, tau_ps: f64) -> Result<WavelengthNm> {
        invert_time(self.gdd_ps_per_nm, self.lambda0.nm(), self.delta_tau_ps, tau_ps)
    }

    pub fn wavelength_to_time(&self, lambda_nm: f64) -> f64 {
        self.gdd_ps_per_nm * (lambda_nm - self.lambda0.nm()) + self.delta_tau_ps
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# tofspec calibration");
        let _ = writeln!(s, "version = {CALIBRATION_FORMAT_VERSION}");
        let _ = writeln!(s, "lambda0_nm = {}", self.lambda0.nm());
        let _ = writeln!(s, "gdd_ps_per_nm = {}", self.gdd_ps_per_nm);
        let _ = writeln!(s, "intercept_ps = {}", self.intercept_ps);
        match self.quadratic_ps_per_nm2 {
            Some(q) => {
                let _ = writeln!(s, "quadratic_ps_per_nm2 = {q}");
            }
            None => {
                let _ = writeln!(s, "quadratic_ps_per_nm2 = none");
            }
        }
        let _ = writeln!(s, "delta_tau_ps = {}", self.delta_tau_ps);
        let _ = writeln!(s, "fit_residual_rms_ps = {}", self.fit_residual_rms_ps);
        let _ = writeln!(s, "sigma_gdd_ps_per_nm = {}", self.sigma_gdd);
        let _ = writeln!(s, "sigma_delta_tau_ps = {}", self.sigma_delta_tau);
        let _ = writeln!(s, "total_h = {}", self.efficiency.total_h());
        let _ = writeln!(s, "[efficiency]");
        let _ = writeln!(s, "lambda_nm eta");
        for (l, e) in self.efficiency.grid().iter().zip(self.efficiency.eta()) {
            let _ = writeln!(s, "{l} {e}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut keys = std::collections::HashMap::new();
        let mut lines = text.lines().enumerate();
        let mut saw_table = false;
        for (idx, raw) in lines.by_ref() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line == "[efficiency]" {
                saw_table = true;
                break;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: idx + 1,
                reason: format!("expected key = value, got {line:?}"),
            })?;
            keys.insert(k.trim().to_string(), (idx + 1, v.trim().to_string()));
        }
        if !saw_table {
            return Err(Error::Parse {
                line: 0,
                reason: "missing [efficiency] table".into(),
            });
        }
        let get = |k: &str| -> Result<f64> {
            let (line, v) = keys.get(k).ok_or_else(|| Error::Parse {
                line: 0,
                reason: format!("missing key {k}"),
            })?;
            v.parse().map_err(|_| Error::Parse {
                line: *line,
                reason: format!("bad number for {k}: {v:?}"),
            })
        };
        let version = get("version")?;
        if version != CALIBRATION_FORMAT_VERSION as f64 {
            return Err(Error::Parse {
                line: 0,
                reason: format!("unsupported calibration version {version}"),
            });
        }
        let quadratic = match keys.get("quadratic_ps_per_nm2") {
            Some((_, v)) if v == "none" => None,
            Some(_) => Some(get("quadratic_ps_per_nm2")?),
            None => None,
        };
        let mut grid = Vec::new();
        let mut eta = Vec::new();
        for (idx, raw) in lines {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("lambda_nm") {
                continue;
            }
            let mut it = line.split_whitespace().map(str::parse::<f64>);
            match (it.next(), it.next()) {
                (Some(Ok(l)), Some(Ok(e))) => {
                    grid.push(l);
                    eta.push(e);
                }
                _ => {
                    return Err(Error::Parse {
                        line: idx + 1,
                        reason: format!("bad efficiency row {line:?}"),
                    })
                }
            }
        }
        Ok(Self {
            lambda0: WavelengthNm::new(get("lambda0_nm")?)?,
            gdd_ps_per_nm: get("gdd_ps_per_nm")?,
            intercept_ps: get("intercept_ps")?,
            quadratic_ps_per_nm2: quadratic,
            delta_tau_ps: get("delta_tau_ps")?,
            efficiency: EfficiencyCurve::new(grid, eta, get("total_h")?)?,
            fit_residual_rms_ps: get("fit_residual_rms_ps")?,
            sigma_gdd: get("sigma_gdd_ps_per_nm")?,
            sigma_delta_tau: get("sigma_delta_tau_ps")?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }

    /// SHA-256 of the serialised form, for provenance headers.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timetag::{BinSpec, DropTally};

    fn l0() -> WavelengthNm {
        WavelengthNm::new(830.0).unwrap()
    }

    fn line_points(slope: f64, intercept: f64, lambdas: &[f64]) -> Vec<DelayPoint> {
        lambdas
            .iter()
            .map(|&l| DelayPoint::new(l, intercept + slope * (l - 830.0), None).unwrap())
            .collect()
    }

    fn hist(width: u64, origin: i64, counts: Vec<u64>) -> Histogram {
        Histogram {
            bins: BinSpec::new(width, origin, counts.len()).unwrap(),
            counts,
            dropped: DropTally::default(),
        }
    }

    #[test]
    fn noiseless_fit_is_exact() {
        let lambdas: Vec<f64> = (0..11).map(|k| 825.0 + k as f64).collect();
        let fit = fit_gdd(&line_points(938.0, 250.0, &lambdas), 1, l0()).unwrap();
        assert!((fit.gdd_ps_per_nm - 938.0).abs() < 1e-9);
        assert!((fit.intercept_ps - 250.0).abs() < 1e-9);
        assert!(fit.residual_rms_ps < 1e-9);
        assert!(fit.quadratic_ps_per_nm2.is_none());
    }

    #[test]
    fn two_points_interpolate() {
        let fit = fit_gdd(&line_points(958.0, -40.0, &[826.0, 834.0]), 1, l0()).unwrap();
        assert!((fit.gdd_ps_per_nm - 958.0).abs() < 1e-9);
        assert!(fit.residual_rms_ps < 1e-9);
        assert_eq!(fit.sigma_gdd, 0.0);
    }

    #[test]
    fn quadratic_reported() {
        let pts: Vec<DelayPoint> = (0..11)
            .map(|k| {
                let x = k as f64 - 5.0;
                DelayPoint::new(830.0 + x, 938.0 * x + 0.5 * x * x, None).unwrap()
            })
            .collect();
        let fit = fit_gdd(&pts, 2, l0()).unwrap();
        assert!((fit.quadratic_ps_per_nm2.unwrap() - 0.5).abs() < 1e-9);
        assert!((fit.gdd_ps_per_nm - 938.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_designs() {
        let same = line_points(938.0, 0.0, &[830.0, 830.0, 830.0]);
        assert!(matches!(fit_gdd(&same, 1, l0()), Err(Error::RankDeficient(_))));
        assert!(matches!(fit_gdd(&same[..1], 1, l0()), Err(Error::RankDeficient(_))));
        assert!(fit_gdd(&same, 3, l0()).is_err());
    }

    #[test]
    fn weights_are_used() {
        // An outlier with a huge sigma should barely move the fit.
        let mut pts: Vec<DelayPoint> = (0..5)
            .map(|k| DelayPoint::new(826.0 + 2.0 * k as f64, 938.0 * (2.0 * k as f64 - 4.0), Some(1.0)).unwrap())
            .collect();
        pts.push(DelayPoint::new(830.5, 5000.0, Some(1e6)).unwrap());
        let fit = fit_gdd(&pts, 1, l0()).unwrap();
        assert!((fit.gdd_ps_per_nm - 938.0).abs() < 1e-3);
        assert!(fit.sigma_gdd > 0.0);
    }

    #[test]
    fn delay_csv() {
        let pts = parse_delay_points("lambda_nm,delay_ps,sigma_ps\n825,-4690,5\n835 4690 5\n").unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[1].sigma_ps, Some(5.0));
        assert!(parse_delay_points("825,1\nbad,row\n").is_err());
        assert!(parse_delay_points("825,1,-2\n").is_err());
    }

    #[test]
    fn spike_gives_exact_offset() {
        // Bin 10 centred at 4750 ps.
        let mut counts = vec![0u64; 40];
        counts[10] = 500;
        let h = hist(32, 4750 - 16 - 320, counts);
        assert_eq!(h.bins.center(10), 4750.0);
        let est = find_offset(&h, WavelengthNm::new(835.0).unwrap(), 950.0, l0()).unwrap();
        assert_eq!(est.delta_tau_ps, 0.0);
        assert_eq!(est.method, PeakMethod::Centroid);
    }

    #[test]
    fn straddling_peak_sits_on_boundary() {
        let mut counts = vec![0u64; 30];
        counts[14] = 400;
        counts[15] = 400;
        let h = hist(32, 0, counts);
        let est = find_offset(&h, l0(), 950.0, l0()).unwrap();
        let boundary = 15.0 * 32.0;
        assert!((est.peak_time_ps - boundary).abs() <= 8.0, "{est:?}");
    }

    #[test]
    fn gaussian_peak_fit() {
        let true_center = 3000.0 + 7.3;
        let counts: Vec<u64> = (0..200)
            .map(|k| {
                let t = (k as f64 + 0.5) * 32.0;
                (10_000.0 * (-0.5 * ((t - true_center) / 60.0).powi(2)).exp()).round() as u64
            })
            .collect();
        let est = find_offset(&hist(32, 0, counts), l0(), 938.0, l0()).unwrap();
        assert_eq!(est.method, PeakMethod::GaussianFit);
        assert!((est.peak_time_ps - true_center).abs() < 0.5, "{est:?}");
    }

    #[test]
    fn flat_or_empty_histogram_has_no_peak() {
        assert!(matches!(
            find_offset(&hist(32, 0, vec![0; 20]), l0(), 938.0, l0()),
            Err(Error::NoCalibrationPeak(_))
        ));
        let mut flat = vec![10u64; 20];
        flat[4] = 19;
        assert!(matches!(
            find_offset(&hist(32, 0, flat), l0(), 938.0, l0()),
            Err(Error::NoCalibrationPeak(_))
        ));
    }

    #[test]
    fn offset_translation_equivariance() {
        let counts: Vec<u64> = (0..100)
            .map(|k| (1000.0 * (-0.5 * ((k as f64 - 41.3) / 2.2).powi(2)).exp()) as u64)
            .collect();
        let a = find_offset(&hist(32, 0, counts.clone()), l0(), 938.0, l0()).unwrap();
        for shift in [-1234i64, 17, 99_999] {
            let b = find_offset(&hist(32, shift, counts.clone()), l0(), 938.0, l0()).unwrap();
            assert!((b.delta_tau_ps - a.delta_tau_ps - shift as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn proportional_inputs_give_flat_efficiency() {
        let grid: Vec<f64> = (0..101).map(|k| 825.0 + 0.1 * k as f64).collect();
        let reference: Vec<f64> = grid.iter().map(|l| 1.0 + 0.02 * (l - 825.0)).collect();
        let counts: Vec<f64> = reference.iter().map(|r| 37.0 * r).collect();
        let eff = estimate_efficiency(
            &Tabulation::new(grid.clone(), counts).unwrap(),
            &Tabulation::new(grid, reference).unwrap(),
            0.1,
        )
        .unwrap();
        assert!((eff.integral() - 0.1).abs() < 1e-12);
        let first = eff.eta()[0];
        assert!(eff.eta().iter().all(|&e| (e - first).abs() < 1e-12 * first.max(1.0)));
    }

    #[test]
    fn efficiency_masks_weak_reference() {
        let grid: Vec<f64> = (0..21).map(|k| 820.0 + k as f64).collect();
        let reference: Vec<f64> = grid
            .iter()
            .map(|&l| if (825.0..=835.0).contains(&l) { 1.0 } else { 0.001 })
            .collect();
        let counts: Vec<f64> = vec![5.0; 21];
        let eff = estimate_efficiency(
            &Tabulation::new(grid.clone(), counts).unwrap(),
            &Tabulation::new(grid, reference).unwrap(),
            0.04,
        )
        .unwrap();
        assert_eq!(eff.eval(822.0), 0.0);
        assert!(eff.eval(830.0) > 0.0);
        assert!((eff.integral() - 0.04).abs() < 1e-9);
    }

    #[test]
    fn efficiency_disjoint_supports() {
        let a = Tabulation::new(vec![800.0, 801.0], vec![1.0, 1.0]).unwrap();
        let b = Tabulation::new(vec![830.0, 831.0], vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            estimate_efficiency(&a, &b, 0.1),
            Err(Error::DisjointRanges(_))
        ));
    }

    #[test]
    fn calibration_text_round_trip() {
        let cfg = crate::instrument::preset("trsps1").unwrap();
        let mut cal = CalibrationResult::from_instrument(&cfg).unwrap();
        cal.quadratic_ps_per_nm2 = Some(-0.125);
        cal.sigma_gdd = 0.3;
        let back = CalibrationResult::from_text(&cal.to_text()).unwrap();
        assert_eq!(back, cal);
        assert_eq!(back.fingerprint(), cal.fingerprint());
        assert!(CalibrationResult::from_text(&cal.to_text().replace("version = 1", "version = 2")).is_err());
        assert!(CalibrationResult::from_text("version = 1\n").is_err());
    }
}
