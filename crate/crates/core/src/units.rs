//! Physical constants and the wavelength newtype shared across the crate.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Speed of light in vacuum, nm per ps.
pub const SPEED_OF_LIGHT_NM_PER_PS: f64 = 2.997_924_58e5;

/// Ratio FWHM / sigma of a Gaussian, `2 sqrt(2 ln 2)`.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

pub fn fwhm_to_sigma(fwhm: f64) -> f64 {
    fwhm / FWHM_PER_SIGMA
}

pub fn sigma_to_fwhm(sigma: f64) -> f64 {
    sigma * FWHM_PER_SIGMA
}

/// A vacuum wavelength in nanometres. Always finite and positive.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct WavelengthNm(f64);

impl WavelengthNm {
    pub fn new(nm: f64) -> Result<Self> {
        if nm.is_finite() && nm > 0.0 {
            Ok(Self(nm))
        } else {
            Err(invalid(format!("wavelength must be finite and positive, got {nm} nm")))
        }
    }

    #[inline]
    pub fn nm(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for WavelengthNm {
    type Error = crate::Error;

    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<WavelengthNm> for f64 {
    fn from(value: WavelengthNm) -> f64 {
        value.0
    }
}

impl fmt::Display for WavelengthNm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} nm", self.0)
    }
}
