use super::{EfficiencyCurve, InstrumentConfig};
use crate::error::{Error, Result};
use crate::units::WavelengthNm;

/// Transmission of everything in the optical path except the grating
/// reflection: circulator double pass plus splice mode mismatch (about 7 dB).
pub const OTHER_TRANSMISSION: f64 = 0.2;

const PRESETS: &[(&str, &str)] = &[
    ("trsps1", include_str!("../../presets/trsps1.toml")),
    ("trsps2", include_str!("../../presets/trsps2.toml")),
    ("trsps1-slow", include_str!("../../presets/trsps1-slow.toml")),
    ("trsps2-slow", include_str!("../../presets/trsps2-slow.toml")),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

/// Shipped instrument preset, looked up case-insensitively.
pub fn preset(name: &str) -> Result<InstrumentConfig> {
    let key = name.to_ascii_lowercase();
    let (_, text) = PRESETS
        .iter()
        .find(|(n, _)| *n == key)
        .ok_or_else(|| Error::Config(format!("unknown instrument preset {name:?}")))?;
    InstrumentConfig::from_toml_str(text)
}

/// Timing detector characteristics.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorPreset {
    pub name: &'static str,
    pub jitter_fwhm_ps: f64,
    pub quantum_efficiency: f64,
    pub tdc_resolution_ps: u64,
}

impl DetectorPreset {
    /// Fast, low-efficiency SPAD read out by a fine TDC.
    pub const FAST: Self = Self {
        name: "fast",
        jitter_fwhm_ps: 52.0,
        quantum_efficiency: 0.10,
        tdc_resolution_ps: 1,
    };

    /// Efficient, slow SPCM read out by an 81 ps TDC.
    pub const SLOW: Self = Self {
        name: "slow",
        jitter_fwhm_ps: 200.0,
        quantum_efficiency: 0.4,
        tdc_resolution_ps: 81,
    };

    /// Channel built around this detector with a flat 825–835 nm grating
    /// window centred on 830 nm.
    pub fn instrument(&self, gdd_ps_per_nm: f64) -> Result<InstrumentConfig> {
        let reflectivity = 0.5;
        let total_h = reflectivity * OTHER_TRANSMISSION * self.quantum_efficiency;
        let cfg = InstrumentConfig {
            gdd_ps_per_nm,
            lambda0_nm: WavelengthNm::new(830.0)?,
            delta_tau_ps: 6250.0,
            window_nm: (825.0, 835.0),
            reflectivity,
            efficiency_curve: EfficiencyCurve::flat(825.0, 835.0, total_h)?,
            jitter_fwhm_ps: self.jitter_fwhm_ps,
            dark_rate_hz: 0.0,
            dead_time_ps: 0,
            clock_period_ps: 12_500,
            histogram_bin_ps: if self.tdc_resolution_ps > 1 {
                self.tdc_resolution_ps
            } else {
                32
            },
            splice_artifact: None,
            tdc_resolution_ps: self.tdc_resolution_ps,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
