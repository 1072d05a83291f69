//! Run configuration: a TOML file, command-line overrides, or both.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use tofspec_core::instrument::preset;
use tofspec_core::{InstrumentConfig, SpectralSource};

use crate::source::parse_source;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum RunKind {
    /// Heralded single-channel run.
    #[default]
    Run,
    /// Photon pairs on signal and idler channels.
    Pair,
    /// Narrowband lines, an offset line and a broadband reference.
    CalibrationSet,
}

/// Configuration as written by the user. Every field may also come from a
/// command-line flag; flags win.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    pub kind: Option<RunKind>,
    pub seed: Option<u64>,
    /// Number of clock cycles; `2.4e7` style accepted.
    pub cycles: Option<f64>,
    /// Alternative to `cycles`, in seconds of acquisition.
    pub duration_s: Option<f64>,
    pub herald_efficiency: Option<f64>,
    pub pair_rate: Option<f64>,
    /// Shorthand string or a table with a `kind` key.
    pub source: Option<toml::Value>,
    /// Preset name, `{ preset = "..." }`, or a full instrument table.
    pub instrument: Option<toml::Value>,
    pub idler_instrument: Option<toml::Value>,
    /// Tag file, or the directory for a calibration set. Defaults to
    /// `run-seed<N>.ttag`, `pair-seed<N>.ttag` or `calibration-seed<N>`.
    pub output: Option<PathBuf>,
    pub calibration: Option<CalibrationFile>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationFile {
    pub lines_nm: Option<Vec<f64>>,
    pub offset_line_nm: Option<f64>,
    pub broadband_fwhm_nm: Option<f64>,
    pub broadband_cycles: Option<f64>,
}

impl RunFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Fully resolved run, echoed into the manifest.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub kind: RunKind,
    pub seed: u64,
    pub cycles: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub herald_efficiency: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pair_rate: Option<f64>,
    pub output: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub idler_preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<SpectralSource>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationSetup>,
    pub instrument: InstrumentConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub idler_instrument: Option<InstrumentConfig>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationSetup {
    pub lines_nm: Vec<f64>,
    pub offset_line_nm: f64,
    pub broadband_fwhm_nm: f64,
    pub broadband_cycles: u64,
}

impl RunConfig {
    pub fn resolve(file: RunFile) -> Result<Self> {
        let kind = file.kind.unwrap_or_default();
        let seed = file
            .seed
            .ok_or_else(|| anyhow!("a seed is mandatory (--seed or `seed = ...`)"))?;
        let (preset, instrument) = channel(file.instrument.as_ref(), "instrument")?
            .ok_or_else(|| anyhow!("no instrument given (--preset or `instrument = ...`)"))?;
        let cycles = match (file.cycles, file.duration_s) {
            (Some(c), None) => count(c, "cycles")?,
            (None, Some(d)) => {
                if !(d >= 0.0 && d.is_finite()) {
                    bail!("duration_s must be nonnegative, got {d}");
                }
                count((d * 1e12 / instrument.clock_period_ps as f64).round(), "duration_s")?
            }
            (Some(_), Some(_)) => bail!("give either cycles or duration_s, not both"),
            (None, None) => bail!("no cycle count given (--cycles, `cycles` or `duration_s`)"),
        };
        let output = file.output.unwrap_or_else(|| match kind {
            RunKind::Run => format!("run-seed{seed}.ttag").into(),
            RunKind::Pair => format!("pair-seed{seed}.ttag").into(),
            RunKind::CalibrationSet => format!("calibration-seed{seed}").into(),
        });
        let source = file.source.as_ref().map(source).transpose()?;
        let idler = channel(file.idler_instrument.as_ref(), "idler_instrument")?;

        let mut cfg = Self {
            kind,
            seed,
            cycles,
            herald_efficiency: None,
            pair_rate: None,
            output,
            preset,
            idler_preset: None,
            source,
            calibration: None,
            instrument,
            idler_instrument: None,
        };
        match kind {
            RunKind::Run => {
                match &cfg.source {
                    None => bail!("a run needs a source (--source or `source = ...`)"),
                    Some(s) if s.is_pair() => bail!("pair sources need kind = \"pair\""),
                    Some(_) => {}
                }
                cfg.herald_efficiency = Some(probability(file.herald_efficiency.unwrap_or(1.0), "herald_efficiency")?);
            }
            RunKind::Pair => {
                if !matches!(cfg.source, Some(SpectralSource::PairGaussian(_))) {
                    bail!("a pair run needs a pair source, e.g. --source pair:fwhm_i=8nm");
                }
                cfg.pair_rate = Some(probability(file.pair_rate.unwrap_or(0.1), "pair_rate")?);
                let (p, c) = idler.unwrap_or_else(|| (cfg.preset.clone(), cfg.instrument.clone()));
                cfg.idler_preset = p;
                cfg.idler_instrument = Some(c);
            }
            RunKind::CalibrationSet => {
                if cfg.source.is_some() {
                    bail!("a calibration set generates its own sources; drop `source`");
                }
                cfg.herald_efficiency = Some(probability(file.herald_efficiency.unwrap_or(1.0), "herald_efficiency")?);
                cfg.calibration = Some(calibration(file.calibration.unwrap_or_default(), &cfg)?);
            }
        }
        Ok(cfg)
    }
}

fn calibration(file: CalibrationFile, cfg: &RunConfig) -> Result<CalibrationSetup> {
    let (lo, hi) = cfg.instrument.window_nm;
    let lines_nm = file.lines_nm.unwrap_or_else(|| {
        (0..11)
            .map(|k| lo + 0.05 * (hi - lo) + 0.09 * (hi - lo) * k as f64)
            .collect()
    });
    if lines_nm.len() < 2 {
        bail!("a calibration set needs at least two lines");
    }
    let l0 = cfg.instrument.lambda0_nm.nm();
    let broadband_cycles = match file.broadband_cycles {
        Some(c) => count(c, "broadband_cycles")?,
        None => cfg.cycles.saturating_mul(20),
    };
    Ok(CalibrationSetup {
        lines_nm,
        offset_line_nm: file.offset_line_nm.unwrap_or(l0 + 0.2 * (hi - lo)),
        broadband_fwhm_nm: file.broadband_fwhm_nm.unwrap_or(3.0 * (hi - lo)),
        broadband_cycles,
    })
}

/// Parse a cycle count written as an integer or in exponent form.
pub fn count(value: f64, what: &str) -> Result<u64> {
    if !(value >= 0.0 && value.is_finite() && value.fract() == 0.0 && value <= 2f64.powi(53)) {
        bail!("{what} must be a nonnegative whole number, got {value}");
    }
    Ok(value as u64)
}

pub fn parse_count(text: &str) -> Result<f64> {
    text.trim()
        .parse::<f64>()
        .map_err(|_| anyhow!("{text:?} is not a number"))
}

fn probability(p: f64, what: &str) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        bail!("{what} must lie in [0, 1], got {p}");
    }
    Ok(p)
}

fn source(value: &toml::Value) -> Result<SpectralSource> {
    let src = match value {
        toml::Value::String(s) => parse_source(s)?,
        other => other.clone().try_into::<SpectralSource>().context("source table")?,
    };
    src.validate()?;
    Ok(src)
}

fn channel(value: Option<&toml::Value>, what: &str) -> Result<Option<(Option<String>, InstrumentConfig)>> {
    let Some(value) = value else {
        return Ok(None);
    };
    let name = match value {
        toml::Value::String(s) => Some(s.clone()),
        toml::Value::Table(t) if t.len() == 1 && t.contains_key("preset") => Some(
            t["preset"]
                .as_str()
                .ok_or_else(|| anyhow!("{what}.preset must be a string"))?
                .to_string(),
        ),
        _ => None,
    };
    if let Some(name) = name {
        return Ok(Some((Some(name.clone()), preset(&name)?)));
    }
    let cfg: InstrumentConfig = value.clone().try_into().with_context(|| format!("{what} table"))?;
    cfg.validate()?;
    Ok(Some((None, cfg)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(text: &str) -> RunFile {
        toml::from_str(text).unwrap()
    }

    #[test]
    fn minimal_run() {
        let cfg = RunConfig::resolve(file(
            "seed = 7\ncycles = 2.4e7\ninstrument = \"trsps1\"\nsource = \"doublepulse:T=11ps\"",
        ))
        .unwrap();
        assert_eq!(cfg.cycles, 24_000_000);
        assert_eq!(cfg.preset.as_deref(), Some("trsps1"));
        assert_eq!(cfg.herald_efficiency, Some(1.0));
        assert_eq!(cfg.output, PathBuf::from("run-seed7.ttag"));
    }

    #[test]
    fn seed_is_mandatory() {
        let err = RunConfig::resolve(file(
            "cycles = 10\ninstrument = \"trsps1\"\nsource = \"gaussian\"\noutput = \"a\"",
        ))
        .unwrap_err();
        assert!(err.to_string().contains("seed"));
    }

    #[test]
    fn duration_becomes_cycles() {
        let cfg = RunConfig::resolve(file(
            "seed = 1\nduration_s = 1e-3\ninstrument = { preset = \"trsps1\" }\nsource = \"gaussian\"\noutput = \"a\"",
        ))
        .unwrap();
        assert_eq!(cfg.cycles, 80_000);
    }

    #[test]
    fn source_table_and_inline_instrument() {
        let mut run = file(
            "seed = 1\ncycles = 5\nkind = \"pair\"\noutput = \"p\"\n[source]\nkind = \"pair_gaussian\"\n\
             signal = { center = 830.0, fwhm_nm = 2.0 }\nidler = { center = 830.0, fwhm_nm = 8.0 }",
        );
        run.instrument = Some(toml::Value::try_from(preset("trsps2-slow").unwrap()).unwrap());
        let cfg = RunConfig::resolve(run).unwrap();
        assert_eq!(cfg.preset, None);
        assert_eq!(cfg.idler_instrument.as_ref(), Some(&cfg.instrument));
        assert_eq!(cfg.pair_rate, Some(0.1));
    }

    #[test]
    fn rejects_fractional_cycles_and_unknown_keys() {
        assert!(count(1.5, "cycles").is_err());
        assert!(toml::from_str::<RunFile>("seeds = 3").is_err());
    }

    #[test]
    fn calibration_set_defaults() {
        let cfg = RunConfig::resolve(file(
            "seed = 1\ncycles = 100\nkind = \"calibration-set\"\ninstrument = \"trsps1\"\noutput = \"dir\"",
        ))
        .unwrap();
        let setup = cfg.calibration.unwrap();
        assert_eq!(setup.lines_nm.len(), 11);
        assert!((setup.lines_nm[0] - 825.5).abs() < 1e-9 && (setup.lines_nm[10] - 834.5).abs() < 1e-9);
        assert_eq!(setup.offset_line_nm, 832.0);
        assert_eq!(setup.broadband_cycles, 2000);
    }
}
