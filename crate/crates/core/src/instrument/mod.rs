//! One dispersive spectrometer channel: a chirped grating that maps
//! wavelength linearly onto delay, followed by a timing detector.
//!
//! Sign convention: a positive `gdd_ps_per_nm` makes longer wavelengths
//! arrive later, `τ(λ) = D (λ - λ₀) + δτ`.

mod presets;
mod simulate;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use presets::{preset, preset_names, DetectorPreset, OTHER_TRANSMISSION};
pub use simulate::{simulate_pair_run, simulate_run, simulate_run_detailed, Detection, SimulatedRun, CHUNK_CYCLES};

use crate::error::{invalid, Error, Result};
use crate::table::Tabulation;
use crate::units::WavelengthNm;

/// Relative tolerance allowed between an efficiency curve's integral and its
/// declared total.
const EFFICIENCY_INTEGRAL_TOL: f64 = 1e-6;

/// Wavelength-resolved detection response `η(λ)` (per nm), normalised so
/// that its integral is the total heralding efficiency `H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEfficiency", into = "RawEfficiency")]
pub struct EfficiencyCurve {
    table: Tabulation,
    total_h: f64,
}

#[derive(Serialize, Deserialize)]
struct RawEfficiency {
    grid: Vec<f64>,
    eta: Vec<f64>,
    total_h: f64,
}

impl TryFrom<RawEfficiency> for EfficiencyCurve {
    type Error = Error;

    fn try_from(raw: RawEfficiency) -> Result<Self> {
        Self::new(raw.grid, raw.eta, raw.total_h)
    }
}

impl From<EfficiencyCurve> for RawEfficiency {
    fn from(c: EfficiencyCurve) -> Self {
        Self {
            grid: c.table.grid,
            eta: c.table.values,
            total_h: c.total_h,
        }
    }
}

impl EfficiencyCurve {
    /// Checks `η ≥ 0`, `H ∈ [0, 1]` and `∫η = H` within 1e-6.
    pub fn new(grid: Vec<f64>, eta: Vec<f64>, total_h: f64) -> Result<Self> {
        let table = Tabulation::new(grid, eta)?;
        if table.values.iter().any(|&v| v < 0.0) {
            return Err(invalid("efficiency must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&total_h) {
            return Err(invalid(format!("total heralding efficiency {total_h} outside [0, 1]")));
        }
        let integral = table.integral();
        if (integral - total_h).abs() > EFFICIENCY_INTEGRAL_TOL {
            return Err(invalid(format!(
                "efficiency integrates to {integral}, declared total is {total_h}"
            )));
        }
        Ok(Self { table, total_h })
    }

    /// Rescale arbitrary nonnegative samples so they integrate to `total_h`.
    pub fn normalized(grid: Vec<f64>, mut eta: Vec<f64>, total_h: f64) -> Result<Self> {
        let area = Tabulation::new(grid.clone(), eta.clone())?.integral();
        if !(area > 0.0) {
            return Err(invalid("efficiency shape has zero area"));
        }
        eta.iter_mut().for_each(|v| *v *= total_h / area);
        Self::new(grid, eta, total_h)
    }

    /// Uniform response across `[lo, hi]`, zero outside.
    pub fn flat(lo: f64, hi: f64, total_h: f64) -> Result<Self> {
        if !(hi > lo) {
            return Err(invalid("flat efficiency needs lo < hi"));
        }
        let level = total_h / (hi - lo);
        Self::new(vec![lo, hi], vec![level, level], total_h)
    }

    pub fn grid(&self) -> &[f64] {
        &self.table.grid
    }

    pub fn eta(&self) -> &[f64] {
        &self.table.values
    }

    pub fn total_h(&self) -> f64 {
        self.total_h
    }

    pub fn table(&self) -> &Tabulation {
        &self.table
    }

    #[inline]
    pub fn eval(&self, lambda: f64) -> f64 {
        self.table.eval(lambda)
    }

    pub fn peak(&self) -> f64 {
        self.table.peak()
    }

    pub fn integral(&self) -> f64 {
        self.table.integral()
    }

    /// Average response over a wavelength interval.
    pub fn mean_between(&self, a: f64, b: f64) -> f64 {
        self.table.mean_between(a, b)
    }

    /// The response as recorded through a Gaussian blur of `fwhm_nm`, which
    /// is what a broadband reference measurement behind a jittery detector
    /// reveals. The total efficiency is unchanged.
    pub fn blurred(&self, fwhm_nm: f64) -> Result<Self> {
        if !(fwhm_nm > 0.0 && fwhm_nm.is_finite()) {
            return Ok(self.clone());
        }
        let sigma = crate::units::fwhm_to_sigma(fwhm_nm);
        let reach = 6.0 * sigma;
        let (g0, g1) = (self.grid()[0] - reach, self.grid()[self.grid().len() - 1] + reach);
        let h = sigma / 16.0;
        let n = ((g1 - g0) / h).ceil() as usize + 1;
        let fine: Vec<f64> = (0..n)
            .map(|i| {
                let x = g0 + i as f64 * h;
                self.mean_between(x - 0.5 * h, x + 0.5 * h)
            })
            .collect();
        let half = (reach / h).ceil() as isize;
        let mut kernel: Vec<f64> = (-half..=half)
            .map(|j| (-0.5 * (j as f64 * h / sigma).powi(2)).exp())
            .collect();
        let norm: f64 = kernel.iter().sum();
        kernel.iter_mut().for_each(|k| *k /= norm);
        let mut out: Vec<usize> = (0..n).step_by(4).collect();
        if out.last() != Some(&(n - 1)) {
            out.push(n - 1);
        }
        let grid = out.iter().map(|&i| g0 + i as f64 * h).collect();
        let eta = out
            .iter()
            .map(|&i| {
                kernel
                    .iter()
                    .enumerate()
                    .filter_map(|(j, k)| {
                        let idx = i as isize + j as isize - half;
                        (0..n as isize).contains(&idx).then(|| k * fine[idx as usize])
                    })
                    .sum()
            })
            .collect();
        Self::normalized(grid, eta, self.total_h)
    }

    /// Wavelength span on which the response is nonzero.
    pub fn support(&self) -> (f64, f64) {
        let g = &self.table.grid;
        let v = &self.table.values;
        let first = v.iter().position(|&e| e > 0.0);
        let last = v.iter().rposition(|&e| e > 0.0);
        match (first, last) {
            (Some(a), Some(b)) => (g[a.saturating_sub(1)], g[(b + 1).min(g.len() - 1)]),
            _ => (g[0], g[g.len() - 1]),
        }
    }
}

/// Back-reflection from a fibre splice, seen as an additive Gaussian bump on
/// the response. Amplitude is relative to the in-window mean response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpliceArtifact {
    pub center_nm: f64,
    pub relative_amplitude: f64,
    #[serde(default = "SpliceArtifact::default_fwhm")]
    pub fwhm_nm: f64,
}

impl SpliceArtifact {
    fn default_fwhm() -> f64 {
        0.1
    }
}

/// All physical parameters of one spectrometer channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentConfig {
    /// Group-delay dispersion `D`, ps/nm.
    pub gdd_ps_per_nm: f64,
    pub lambda0_nm: WavelengthNm,
    /// Delay of the centre wavelength after the trigger, ps.
    pub delta_tau_ps: f64,
    /// Grating reflection window `[min, max]`, nm.
    pub window_nm: (f64, f64),
    pub reflectivity: f64,
    pub efficiency_curve: EfficiencyCurve,
    /// Total system timing spread (detector, TDC and trigger), FWHM ps.
    pub jitter_fwhm_ps: f64,
    #[serde(default)]
    pub dark_rate_hz: f64,
    /// Non-paralyzable detector dead time.
    #[serde(default)]
    pub dead_time_ps: u64,
    pub clock_period_ps: u64,
    pub histogram_bin_ps: u64,
    #[serde(default)]
    pub splice_artifact: Option<SpliceArtifact>,
    /// TDC quantisation step for trigger-relative delays.
    #[serde(default = "default_tdc_resolution")]
    pub tdc_resolution_ps: u64,
}

fn default_tdc_resolution() -> u64 {
    1
}

impl InstrumentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.gdd_ps_per_nm.is_finite() && self.gdd_ps_per_nm != 0.0) {
            return bad(format!("GDD must be finite and nonzero, got {}", self.gdd_ps_per_nm));
        }
        let (lo, hi) = self.window_nm;
        let l0 = self.lambda0_nm.nm();
        if !(lo < l0 && l0 < hi) {
            return bad(format!("window [{lo}, {hi}] nm must contain lambda0 = {l0} nm"));
        }
        if !self.delta_tau_ps.is_finite() {
            return bad("delta_tau must be finite".into());
        }
        if !(0.0..=1.0).contains(&self.reflectivity) {
            return bad(format!("reflectivity {} outside [0, 1]", self.reflectivity));
        }
        if !(self.jitter_fwhm_ps >= 0.0 && self.jitter_fwhm_ps.is_finite()) {
            return bad(format!("jitter must be nonnegative, got {}", self.jitter_fwhm_ps));
        }
        if !(self.dark_rate_hz >= 0.0 && self.dark_rate_hz.is_finite()) {
            return bad(format!("dark rate must be nonnegative, got {}", self.dark_rate_hz));
        }
        if self.clock_period_ps == 0 {
            return bad("clock period must be positive".into());
        }
        if self.histogram_bin_ps == 0 {
            return bad("histogram bin must be positive".into());
        }
        if self.tdc_resolution_ps == 0 {
            return bad("TDC resolution must be positive".into());
        }
        if let Some(s) = &self.splice_artifact {
            if !(s.relative_amplitude >= 0.0 && s.fwhm_nm > 0.0 && s.center_nm > 0.0) {
                return bad(format!("invalid splice artifact {s:?}"));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("instrument config is always representable")
    }

    pub fn window_width_nm(&self) -> f64 {
        self.window_nm.1 - self.window_nm.0
    }

    /// Trigger-relative arrival time of wavelength `lambda_nm`, ps.
    #[inline]
    pub fn map_wavelength_to_time(&self, lambda_nm: f64) -> f64 {
        self.gdd_ps_per_nm * (lambda_nm - self.lambda0_nm.nm()) + self.delta_tau_ps
    }

    /// Wavelength whose arrival time is `tau_ps`.
    pub fn invert_time_to_wavelength(&self, tau_ps: f64) -> Result<WavelengthNm> {
        invert_time(self.gdd_ps_per_nm, self.lambda0_nm.nm(), self.delta_tau_ps, tau_ps)
    }

    /// Spectral resolution `Δt / |D|`, nm FWHM.
    pub fn resolution_nm(&self) -> f64 {
        self.jitter_fwhm_ps / self.gdd_ps_per_nm.abs()
    }

    /// Response including the splice artifact, renormalised to the same
    /// total efficiency.
    pub fn effective_efficiency(&self) -> Result<EfficiencyCurve> {
        let Some(splice) = self.splice_artifact else {
            return Ok(self.efficiency_curve.clone());
        };
        let base = &self.efficiency_curve;
        let step = 0.005;
        let half = 5.0 * splice.fwhm_nm;
        let (g0, g1) = (base.grid()[0], *base.grid().last().unwrap());
        let lo = g0.min(splice.center_nm - half);
        let hi = g1.max(splice.center_nm + half);
        let n = ((hi - lo) / step).ceil() as usize + 1;
        let level = base.total_h() / self.window_width_nm();
        let sigma = crate::units::fwhm_to_sigma(splice.fwhm_nm);
        let grid: Vec<f64> = (0..n).map(|k| lo + k as f64 * step).collect();
        let eta = grid
            .iter()
            .map(|&l| {
                let z = (l - splice.center_nm) / sigma;
                base.eval(l) + splice.relative_amplitude * level * (-0.5 * z * z).exp()
            })
            .collect();
        EfficiencyCurve::normalized(grid, eta, base.total_h())
    }
}

pub(crate) fn invert_time(gdd: f64, lambda0: f64, delta_tau: f64, tau_ps: f64) -> Result<WavelengthNm> {
    if gdd == 0.0 || !gdd.is_finite() {
        return Err(invalid("cannot invert a zero-dispersion instrument"));
    }
    WavelengthNm::new(lambda0 + (tau_ps - delta_tau) / gdd)
}
