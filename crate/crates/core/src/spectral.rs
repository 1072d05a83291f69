//! Spectral probability densities of the light sources and their samplers.
//!
//! All densities are per nanometre of vacuum wavelength. Spectral interference
//! of a double pulse with delay `T` is modelled as a cosine that is periodic in
//! wavelength with period `λ²/(cT)`, which holds while the analysed band is
//! narrow compared with the centre wavelength.

use std::f64::consts::PI;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::table::Tabulation;
use crate::units::{fwhm_to_sigma, WavelengthNm, SPEED_OF_LIGHT_NM_PER_PS};

/// Inverse-CDF tabulation step, nm.
pub const SAMPLER_STEP_NM: f64 = 1e-3;

/// Half-width of the tabulated support of a Gaussian, in standard deviations.
const GAUSSIAN_SUPPORT_SIGMAS: f64 = 10.0;

/// Normalised Gaussian spectral line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianLine {
    pub center: WavelengthNm,
    pub fwhm_nm: f64,
}

impl GaussianLine {
    pub fn new(center_nm: f64, fwhm_nm: f64) -> Result<Self> {
        let line = Self {
            center: WavelengthNm::new(center_nm)?,
            fwhm_nm,
        };
        line.validate()?;
        Ok(line)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fwhm_nm.is_finite() && self.fwhm_nm > 0.0) {
            return Err(invalid(format!("line FWHM must be positive, got {} nm", self.fwhm_nm)));
        }
        Ok(())
    }

    pub fn sigma_nm(&self) -> f64 {
        fwhm_to_sigma(self.fwhm_nm)
    }

    pub fn density(&self, lambda: f64) -> f64 {
        let s = self.sigma_nm();
        let z = (lambda - self.center.nm()) / s;
        (-0.5 * z * z).exp() / (s * (2.0 * PI).sqrt())
    }

    fn support(&self) -> (f64, f64) {
        let half = (GAUSSIAN_SUPPORT_SIGMAS * self.sigma_nm()).max(2.0 * SAMPLER_STEP_NM);
        (self.center.nm() - half, self.center.nm() + half)
    }
}

/// A single photon split into two time-delayed copies, giving a Gaussian
/// spectrum modulated by `1 + V cos(2π(λ - λc)/period + φ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoublePulse {
    pub envelope: GaussianLine,
    pub delay_ps: f64,
    pub visibility: f64,
    #[serde(default)]
    pub phase_rad: f64,
}

impl DoublePulse {
    pub fn new(envelope: GaussianLine, delay_ps: f64, visibility: f64, phase_rad: f64) -> Result<Self> {
        let dp = Self {
            envelope,
            delay_ps,
            visibility,
            phase_rad,
        };
        dp.validate()?;
        Ok(dp)
    }

    pub fn validate(&self) -> Result<()> {
        self.envelope.validate()?;
        fringe_period(self.delay_ps, self.envelope.center)?;
        if !(0.0..=1.0).contains(&self.visibility) {
            return Err(invalid(format!(
                "visibility must lie in [0, 1], got {}",
                self.visibility
            )));
        }
        if !self.phase_rad.is_finite() {
            return Err(invalid("fringe phase must be finite"));
        }
        Ok(())
    }

    pub fn period_nm(&self) -> f64 {
        let c = self.envelope.center.nm();
        c * c / (SPEED_OF_LIGHT_NM_PER_PS * self.delay_ps)
    }

    pub fn fringe_params(&self) -> FringeParams {
        FringeParams {
            period_nm: self.period_nm(),
            visibility: self.visibility,
            phase_rad: self.phase_rad,
            envelope_center: self.envelope.center,
            envelope_fwhm_nm: self.envelope.fwhm_nm,
        }
    }

    /// Integral of the unnormalised modulated envelope; the Gaussian integral
    /// of the cosine term is `exp(-k²σ²/2) cos φ`.
    fn norm(&self) -> f64 {
        let k = 2.0 * PI / self.period_nm();
        let s = self.envelope.sigma_nm();
        1.0 + self.visibility * (-0.5 * k * k * s * s).exp() * self.phase_rad.cos()
    }

    pub fn density(&self, lambda: f64) -> f64 {
        let arg = 2.0 * PI * (lambda - self.envelope.center.nm()) / self.period_nm() + self.phase_rad;
        self.envelope.density(lambda) * (1.0 + self.visibility * arg.cos()) / self.norm()
    }
}

/// Parameters of a spectral interference pattern.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringeParams {
    pub period_nm: f64,
    pub visibility: f64,
    pub phase_rad: f64,
    pub envelope_center: WavelengthNm,
    pub envelope_fwhm_nm: f64,
}

impl FringeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.period_nm > 0.0) {
            return Err(invalid("fringe period must be positive"));
        }
        if !(0.0..=1.0).contains(&self.visibility) {
            return Err(invalid("fringe visibility must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Arbitrary measured spectrum, normalised to unit area on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTabulated", into = "RawTabulated")]
pub struct TabulatedSpectrum {
    table: Tabulation,
}

#[derive(Serialize, Deserialize)]
struct RawTabulated {
    grid: Vec<f64>,
    density: Vec<f64>,
}

impl TryFrom<RawTabulated> for TabulatedSpectrum {
    type Error = Error;

    fn try_from(raw: RawTabulated) -> Result<Self> {
        Self::new(raw.grid, raw.density)
    }
}

impl From<TabulatedSpectrum> for RawTabulated {
    fn from(t: TabulatedSpectrum) -> Self {
        Self {
            grid: t.table.grid,
            density: t.table.values,
        }
    }
}

impl TabulatedSpectrum {
    pub fn new(grid: Vec<f64>, density: Vec<f64>) -> Result<Self> {
        Self::from_table(Tabulation::new(grid, density)?)
    }

    pub fn from_table(mut table: Tabulation) -> Result<Self> {
        if table.values.iter().any(|&v| v < 0.0) {
            return Err(invalid("tabulated density must be nonnegative"));
        }
        if let Some(&g) = table.grid.iter().find(|&&g| g <= 0.0) {
            return Err(invalid(format!("tabulated wavelength {g} nm is not positive")));
        }
        let area = if table.len() == 1 { 0.0 } else { table.integral() };
        if !(area > 0.0) {
            return Err(invalid("tabulated density has zero area"));
        }
        table.values.iter_mut().for_each(|v| *v /= area);
        Ok(Self { table })
    }

    /// Load a two-column `(wavelength_nm, density)` text file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path)?;
        Self::from_table(Tabulation::parse(BufReader::new(file))?)
    }

    pub fn table(&self) -> &Tabulation {
        &self.table
    }

    pub fn density(&self, lambda: f64) -> f64 {
        self.table.eval(lambda)
    }
}

/// Bivariate Gaussian joint spectral intensity of a photon pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairGaussian {
    pub signal: GaussianLine,
    pub idler: GaussianLine,
    #[serde(default)]
    pub correlation: f64,
}

impl PairGaussian {
    pub fn new(signal: GaussianLine, idler: GaussianLine, correlation: f64) -> Result<Self> {
        let pair = Self {
            signal,
            idler,
            correlation,
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn validate(&self) -> Result<()> {
        self.signal.validate()?;
        self.idler.validate()?;
        if !(self.correlation.abs() < 1.0) {
            return Err(invalid(format!(
                "pair correlation must satisfy |rho| < 1, got {}",
                self.correlation
            )));
        }
        Ok(())
    }

    pub fn joint_density(&self, lambda_s: f64, lambda_i: f64) -> f64 {
        let (ss, si) = (self.signal.sigma_nm(), self.idler.sigma_nm());
        let zs = (lambda_s - self.signal.center.nm()) / ss;
        let zi = (lambda_i - self.idler.center.nm()) / si;
        let r = self.correlation;
        let q = (zs * zs - 2.0 * r * zs * zi + zi * zi) / (1.0 - r * r);
        (-0.5 * q).exp() / (2.0 * PI * ss * si * (1.0 - r * r).sqrt())
    }

    /// Draw one `(signal, idler)` wavelength pair.
    pub fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(WavelengthNm, WavelengthNm)> {
        self.validate()?;
        let (s, i) = self.draw(rng);
        Ok((WavelengthNm::new(s)?, WavelengthNm::new(i)?))
    }

    #[inline]
    pub(crate) fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let r = self.correlation;
        let s = self.signal.center.nm() + self.signal.sigma_nm() * z1;
        let i = self.idler.center.nm() + self.idler.sigma_nm() * (r * z1 + (1.0 - r * r).sqrt() * z2);
        (s, i)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpectralSource {
    GaussianLine(GaussianLine),
    DoublePulse(DoublePulse),
    Tabulated(TabulatedSpectrum),
    PairGaussian(PairGaussian),
}

impl SpectralSource {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::GaussianLine(g) => g.validate(),
            Self::DoublePulse(d) => d.validate(),
            Self::Tabulated(_) => Ok(()),
            Self::PairGaussian(p) => p.validate(),
        }
    }

    pub fn is_pair(&self) -> bool {
        matches!(self, Self::PairGaussian(_))
    }

    /// Spectral density per nm at `lambda`. For a photon pair this is the
    /// signal marginal, i.e. the spectrum of the heralded signal photon.
    pub fn eval_density(&self, lambda: f64) -> f64 {
        match self {
            Self::GaussianLine(g) => g.density(lambda),
            Self::DoublePulse(d) => d.density(lambda),
            Self::Tabulated(t) => t.density(lambda),
            Self::PairGaussian(p) => p.signal.density(lambda),
        }
    }

    /// Wavelength interval that carries all of the density.
    pub fn support(&self) -> (f64, f64) {
        match self {
            Self::GaussianLine(g) => g.support(),
            Self::DoublePulse(d) => d.envelope.support(),
            Self::Tabulated(t) => (t.table.first(), t.table.last()),
            Self::PairGaussian(p) => p.signal.support(),
        }
    }

    pub fn sampler(&self) -> Result<WavelengthSampler> {
        if self.is_pair() {
            return Err(Error::TwoDimensionalSource);
        }
        self.validate()?;
        WavelengthSampler::tabulate(self)
    }

    /// One-off draw. Building the sampler dominates the cost, so loops should
    /// call [`SpectralSource::sampler`] once instead.
    pub fn sample_wavelength<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<WavelengthNm> {
        WavelengthNm::new(self.sampler()?.sample(rng))
    }
}

/// Interval spacing of spectral interference fringes for a two-pulse delay.
pub fn fringe_period(delay_ps: f64, center: WavelengthNm) -> Result<f64> {
    if !(delay_ps.is_finite() && delay_ps > 0.0) {
        return Err(invalid(format!(
            "interferometer delay must be positive, got {delay_ps} ps"
        )));
    }
    let c = center.nm();
    Ok(c * c / (SPEED_OF_LIGHT_NM_PER_PS * delay_ps))
}

/// Inverse-CDF sampler over a uniform 1 pm grid with linear interpolation of
/// the cumulative distribution.
#[derive(Debug, Clone)]
pub struct WavelengthSampler {
    start: f64,
    step: f64,
    cdf: Vec<f64>,
}

impl WavelengthSampler {
    fn tabulate(source: &SpectralSource) -> Result<Self> {
        let (lo, hi) = source.support();
        let step = SAMPLER_STEP_NM;
        let n = ((hi - lo) / step).ceil() as usize + 1;
        let mut cdf = Vec::with_capacity(n);
        let mut acc = 0.0;
        let mut prev = source.eval_density(lo);
        cdf.push(0.0);
        for k in 1..n {
            let d = source.eval_density(lo + k as f64 * step);
            acc += 0.5 * (prev + d) * step;
            cdf.push(acc);
            prev = d;
        }
        if !(acc > 0.0) {
            // A line narrower than the grid can fall between nodes; put its
            // mass on the nearest node.
            let center = 0.5 * (lo + hi);
            let k = (((center - lo) / step).round() as usize).clamp(1, n - 1);
            cdf.iter_mut().skip(k).for_each(|c| *c = 1.0);
        }
        Ok(Self { start: lo, step, cdf })
    }

    pub fn support(&self) -> (f64, f64) {
        (self.start, self.start + self.step * (self.cdf.len() - 1) as f64)
    }

    /// Model CDF implied by the tabulation.
    pub fn cdf(&self, lambda: f64) -> f64 {
        let total = self.cdf[self.cdf.len() - 1];
        let x = (lambda - self.start) / self.step;
        if x <= 0.0 {
            return 0.0;
        }
        let k = x.floor() as usize;
        if k + 1 >= self.cdf.len() {
            return 1.0;
        }
        let t = x - k as f64;
        (self.cdf[k] + t * (self.cdf[k + 1] - self.cdf[k])) / total
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let total = self.cdf[self.cdf.len() - 1];
        let target = rng.random::<f64>() * total;
        let i = self.cdf.partition_point(|&c| c <= target).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let frac = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.0 };
        self.start + ((i - 1) as f64 + frac) * self.step
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn line(c: f64, w: f64) -> GaussianLine {
        GaussianLine::new(c, w).unwrap()
    }

    fn double_pulse(v: f64, phase: f64) -> DoublePulse {
        DoublePulse::new(line(830.0, 2.0), 11.0, v, phase).unwrap()
    }

    fn trapezoid(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
        let h = (hi - lo) / n as f64;
        let inner: f64 = (1..n).map(|k| f(lo + k as f64 * h)).sum();
        h * (inner + 0.5 * (f(lo) + f(hi)))
    }

    #[test]
    fn gaussian_peak_value() {
        let g = SpectralSource::GaussianLine(line(830.0, 2.0));
        let expected = 1.0 / (2.0 * (PI / (4.0 * 2f64.ln())).sqrt());
        assert!((g.eval_density(830.0) - expected).abs() < 1e-14);
        assert!((expected - 0.469_718_639_349_825_66).abs() < 1e-15);
    }

    #[test]
    fn fringe_period_values() {
        let c830 = WavelengthNm::new(830.0).unwrap();
        let p = fringe_period(11.0, c830).unwrap();
        // 830² / (299792.458 * 11), evaluated independently.
        assert!((p - 0.208_902_095_620_006_33).abs() < 1e-12);
        assert!((fringe_period(22.0, c830).unwrap() - p / 2.0).abs() < 1e-15);
        let q = fringe_period(11.0, WavelengthNm::new(415.0).unwrap()).unwrap();
        assert!((q - p / 4.0).abs() < 1e-15);
        assert!(fringe_period(0.0, c830).is_err());
        assert!(fringe_period(-1.0, c830).is_err());
        assert!((double_pulse(0.3, 0.0).period_nm() - p).abs() < 1e-15);
    }

    #[test]
    fn fringe_period_identity() {
        for &(t, l) in &[(11.0, 830.0), (3.7, 701.0), (250.0, 999.0)] {
            let p = fringe_period(t, WavelengthNm::new(l).unwrap()).unwrap();
            let lhs = p * t * SPEED_OF_LIGHT_NM_PER_PS;
            assert!(((lhs - l * l) / (l * l)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_visibility_is_envelope() {
        let env = line(830.0, 2.0);
        let dp = DoublePulse::new(env, 11.0, 0.0, 1.3).unwrap();
        for k in 0..200 {
            let l = 826.0 + k as f64 * 0.04;
            assert_eq!(dp.density(l), env.density(l));
        }
    }

    #[test]
    fn one_dimensional_sources_are_normalised() {
        let tab = TabulatedSpectrum::new(vec![828.0, 829.0, 831.0, 832.0], vec![0.0, 3.0, 1.0, 0.0]).unwrap();
        let sources = [
            SpectralSource::GaussianLine(line(830.0, 2.0)),
            SpectralSource::GaussianLine(line(830.0, 0.05)),
            SpectralSource::DoublePulse(double_pulse(0.24, 0.0)),
            SpectralSource::DoublePulse(double_pulse(1.0, 2.0)),
            // Long delay so the envelope-averaged cosine is not negligible.
            SpectralSource::DoublePulse(DoublePulse::new(line(830.0, 2.0), 0.4, 0.8, 0.0).unwrap()),
            SpectralSource::Tabulated(tab),
        ];
        for s in &sources {
            let (lo, hi) = s.support();
            let area = trapezoid(|l| s.eval_density(l), lo, hi, 400_000);
            assert!((area - 1.0).abs() < 1e-6, "{s:?}: area {area}");
        }
    }

    #[test]
    fn densities_nonnegative() {
        let s = SpectralSource::DoublePulse(double_pulse(1.0, 0.7));
        assert!((0..5000).all(|k| s.eval_density(825.0 + k as f64 * 0.002) >= 0.0));
    }

    #[test]
    fn pair_marginals_and_joint_normalised() {
        let p = PairGaussian::new(line(830.0, 2.0), line(830.0, 8.0), -0.5).unwrap();
        let marginal_s = trapezoid(|l| p.signal.density(l), 815.0, 845.0, 30_000);
        assert!((marginal_s - 1.0).abs() < 1e-6);
        // Integrating the joint over the idler recovers the signal marginal.
        let m = trapezoid(|li| p.joint_density(830.7, li), 780.0, 880.0, 40_000);
        assert!((m - p.signal.density(830.7)).abs() < 1e-9);
    }

    #[test]
    fn pair_rejects_unit_correlation() {
        assert!(PairGaussian::new(line(830.0, 2.0), line(830.0, 8.0), 1.0).is_err());
        assert!(PairGaussian::new(line(830.0, 2.0), line(830.0, 8.0), -1.2).is_err());
    }

    #[test]
    fn sampler_refuses_pairs() {
        let p = SpectralSource::PairGaussian(PairGaussian::new(line(830.0, 2.0), line(830.0, 8.0), 0.0).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            p.sample_wavelength(&mut rng),
            Err(Error::TwoDimensionalSource)
        ));
    }

    #[test]
    fn delta_like_tabulation_draws_at_line() {
        let grid: Vec<f64> = (0..21).map(|k| 829.0 + k as f64 * 0.1).collect();
        let density: Vec<f64> = grid
            .iter()
            .map(|&g| if (g - 830.0).abs() < 1e-9 { 1.0 } else { 0.0 })
            .collect();
        let s = SpectralSource::Tabulated(TabulatedSpectrum::new(grid, density).unwrap());
        let sampler = s.sampler().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10_000 {
            let l = sampler.sample(&mut rng);
            assert!((l - 830.0).abs() <= 0.1 + 1e-9, "{l}");
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let s = SpectralSource::DoublePulse(double_pulse(0.5, 0.0));
        let sampler = s.sampler().unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..100).map(|_| sampler.sample(&mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        assert_ne!(draw(9), draw(10));
    }

    #[test]
    fn tabulated_validation() {
        assert!(TabulatedSpectrum::new(vec![830.0, 831.0], vec![-1.0, 1.0]).is_err());
        assert!(TabulatedSpectrum::new(vec![830.0, 831.0], vec![0.0, 0.0]).is_err());
        assert!(TabulatedSpectrum::new(vec![831.0, 830.0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn source_config_round_trips_through_toml() {
        let s = SpectralSource::DoublePulse(double_pulse(0.24, 0.5));
        let text = toml::to_string(&s).unwrap();
        let back: SpectralSource = toml::from_str(&text).unwrap();
        assert_eq!(back, s);
    }
}
