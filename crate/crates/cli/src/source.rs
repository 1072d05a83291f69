//! Compact source descriptions such as `doublepulse:T=11ps,V=0.5`.

use std::collections::BTreeMap;

use anyhow::{anyhow, bail, Context, Result};
use tofspec_core::{DoublePulse, GaussianLine, PairGaussian, SpectralSource, TabulatedSpectrum};

const USAGE: &str = "expected KIND[:key=value,...] with KIND one of \
     gaussian (center, fwhm), doublepulse (T, V, phase, center, fwhm), \
     pair (center_s, fwhm_s, center_i, fwhm_i, rho) or tabulated (file)";

/// Parse a shorthand source. Numeric values may carry their unit (`nm`,
/// `ps`, `rad`); a unit that does not belong to the key is rejected.
pub fn parse_source(text: &str) -> Result<SpectralSource> {
    let (kind, rest) = text.split_once(':').unwrap_or((text, ""));
    let mut args = Args::parse(rest)?;
    let source = match kind.trim().to_ascii_lowercase().as_str() {
        "gaussian" | "line" => SpectralSource::GaussianLine(args.line("center", "fwhm", 2.0)?),
        "doublepulse" | "double_pulse" | "double-pulse" => {
            let envelope = args.line("center", "fwhm", 2.0)?;
            let delay = args
                .num("t", "ps")?
                .ok_or_else(|| anyhow!("doublepulse needs T, the pulse separation"))?;
            let visibility = args.num("v", "")?.unwrap_or(1.0);
            let phase = args.num("phase", "rad")?.unwrap_or(0.0);
            SpectralSource::DoublePulse(DoublePulse::new(envelope, delay, visibility, phase)?)
        }
        "pair" => {
            let signal = args.line("center_s", "fwhm_s", 2.0)?;
            let idler = args.line("center_i", "fwhm_i", 2.0)?;
            let rho = args.num("rho", "")?.unwrap_or(0.0);
            SpectralSource::PairGaussian(PairGaussian::new(signal, idler, rho)?)
        }
        "tabulated" => {
            let file = args.take("file").ok_or_else(|| anyhow!("tabulated needs file=PATH"))?;
            SpectralSource::Tabulated(TabulatedSpectrum::load(&file).with_context(|| format!("reading {file}"))?)
        }
        other => bail!("unknown source kind {other:?}; {USAGE}"),
    };
    if let Some(key) = args.0.keys().next() {
        bail!("unknown key {key:?} for source {kind:?}; {USAGE}");
    }
    Ok(source)
}

struct Args(BTreeMap<String, String>);

impl Args {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| anyhow!("{item:?} is not key=value; {USAGE}"))?;
            if map
                .insert(k.trim().to_ascii_lowercase(), v.trim().to_string())
                .is_some()
            {
                bail!("key {k:?} given twice");
            }
        }
        Ok(Self(map))
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.0.remove(key)
    }

    fn num(&mut self, key: &str, unit: &str) -> Result<Option<f64>> {
        let Some(raw) = self.take(key) else {
            return Ok(None);
        };
        let digits = raw.trim_end_matches(|c: char| c.is_ascii_alphabetic());
        let suffix = &raw[digits.len()..];
        if !suffix.is_empty() && !suffix.eq_ignore_ascii_case(unit) {
            let want = if unit.is_empty() { "no unit" } else { unit };
            bail!("{key}={raw}: unit {suffix:?} not accepted ({want})");
        }
        digits
            .parse()
            .map(Some)
            .map_err(|_| anyhow!("{key}={raw} is not a number"))
    }

    fn line(&mut self, center: &str, fwhm: &str, default_fwhm: f64) -> Result<GaussianLine> {
        let c = self.num(center, "nm")?.unwrap_or(830.0);
        let w = self.num(fwhm, "nm")?.unwrap_or(default_fwhm);
        Ok(GaussianLine::new(c, w)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn double_pulse_with_units() {
        let SpectralSource::DoublePulse(d) = parse_source("doublepulse:T=11ps").unwrap() else {
            panic!("wrong kind");
        };
        assert_eq!(d.delay_ps, 11.0);
        assert_eq!(d.visibility, 1.0);
        assert_eq!(d.envelope.center.nm(), 830.0);
    }

    #[test]
    fn gaussian_defaults_and_keys() {
        let SpectralSource::GaussianLine(g) = parse_source("gaussian:center=831nm,fwhm=0.5").unwrap() else {
            panic!("wrong kind");
        };
        assert_eq!((g.center.nm(), g.fwhm_nm), (831.0, 0.5));
    }

    #[test]
    fn pair_source() {
        let SpectralSource::PairGaussian(p) = parse_source("pair:fwhm_i=8nm,rho=-0.3").unwrap() else {
            panic!("wrong kind");
        };
        assert_eq!((p.signal.fwhm_nm, p.idler.fwhm_nm, p.correlation), (2.0, 8.0, -0.3));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(parse_source("doublepulse:T=11nm").is_err());
        assert!(parse_source("doublepulse").is_err());
        assert!(parse_source("gaussian:width=2").is_err());
        assert!(parse_source("laser").is_err());
        assert!(parse_source("gaussian:fwhm=-1").is_err());
    }
}
