//! Time-of-flight single-photon spectrometry: spectral source models, a
//! Monte-Carlo model of a dispersive instrument with timing detectors,
//! time-tag processing, calibration and efficiency-corrected reconstruction.

// Domain checks are written `!(x > 0.0)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibrate;
pub mod error;
mod fit;
pub mod instrument;
pub mod reconstruct;
pub mod spectral;
pub mod table;
pub mod timetag;
pub mod units;

pub use calibrate::{
    counts_vs_wavelength, estimate_efficiency, find_offset, fit_gdd, parse_delay_points, CalibrationResult, DelayPoint,
    GddFit, OffsetEstimate, PeakMethod,
};
pub use error::{Error, Result};
pub use instrument::{
    preset, preset_names, simulate_pair_run, simulate_run, simulate_run_detailed, DetectorPreset, EfficiencyCurve,
    InstrumentConfig, SimulatedRun, SpliceArtifact,
};
pub use reconstruct::{
    axis_bins, fit_fringes, measure_fwhm, reconstruct_jsi, reconstruct_jsi_with, reconstruct_spectrum, FringeFit,
    FringeOptions, JsiGrid, ReconstructedSpectrum,
};
pub use spectral::{
    fringe_period, DoublePulse, GaussianLine, PairGaussian, SpectralSource, TabulatedSpectrum, WavelengthSampler,
};
pub use table::Tabulation;
pub use timetag::{
    build_histogram, build_histogram_par, build_histogram_with, coincidence_pairs, coincidence_pairs_par, read_tags,
    write_tags, BinSpec, CoincidencePair, Histogram, JointHistogram, TagStream, TimeTag,
};
pub use units::WavelengthNm;
