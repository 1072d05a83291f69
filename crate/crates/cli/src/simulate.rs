//! `tofspec simulate`: synthetic tag files and their manifests.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use tofspec_core::timetag::{write_tags, SIGNAL_CHANNEL};
use tofspec_core::{
    build_histogram, find_offset, simulate_pair_run, simulate_run, GaussianLine, SpectralSource, Tabulation,
    WavelengthNm,
};

use crate::config::{CalibrationSetup, RunConfig, RunKind};
use crate::error::CmdResult;
use crate::version;

/// Sidecar written next to every simulated output.
#[derive(Serialize)]
struct Manifest<'a> {
    tofspec_version: String,
    outputs: Vec<String>,
    run: &'a RunConfig,
}

pub fn run(cfg: &RunConfig) -> CmdResult {
    let outputs = match cfg.kind {
        RunKind::Run => {
            let source = cfg.source.as_ref().expect("resolved run has a source");
            let herald = cfg.herald_efficiency.expect("resolved run has a herald efficiency");
            let stream = simulate_run(source, herald, &cfg.instrument, cfg.cycles, cfg.seed)?;
            write(&cfg.output, &stream)?;
            eprintln!(
                "simulated {} cycles: {} tags -> {}",
                cfg.cycles,
                stream.len(),
                cfg.output.display()
            );
            vec![cfg.output.clone()]
        }
        RunKind::Pair => {
            let Some(SpectralSource::PairGaussian(pair)) = &cfg.source else {
                unreachable!("resolved pair run has a pair source");
            };
            let idler = cfg
                .idler_instrument
                .as_ref()
                .expect("resolved pair run has an idler channel");
            let rate = cfg.pair_rate.expect("resolved pair run has a pair rate");
            let run = simulate_pair_run(pair, rate, &cfg.instrument, idler, cfg.cycles, cfg.seed)?;
            write(&cfg.output, &run.stream)?;
            eprintln!(
                "simulated {} cycles: {} tags -> {}",
                cfg.cycles,
                run.stream.len(),
                cfg.output.display()
            );
            vec![cfg.output.clone()]
        }
        RunKind::CalibrationSet => calibration_set(cfg, cfg.calibration.as_ref().expect("resolved setup"))?,
    };
    let manifest = Manifest {
        tofspec_version: version(),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        run: cfg,
    };
    let text = toml::to_string(&manifest).context("serialising manifest")?;
    let path = manifest_path(cfg);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn manifest_path(cfg: &RunConfig) -> PathBuf {
    match cfg.kind {
        RunKind::CalibrationSet => cfg.output.join("manifest.toml"),
        _ => {
            let mut name = cfg.output.as_os_str().to_owned();
            name.push(".manifest.toml");
            PathBuf::from(name)
        }
    }
}

fn write(path: &Path, stream: &tofspec_core::TagStream) -> CmdResult {
    write_tags(path, stream).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Independent seed for the `k`-th measurement of a set.
fn sub_seed(seed: u64, k: u64) -> u64 {
    let mut z = seed ^ (k.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Delay table from narrowband lines, an offset line, and a broadband
/// reference with its known spectrum.
fn calibration_set(cfg: &RunConfig, setup: &CalibrationSetup) -> CmdResult<Vec<PathBuf>> {
    let dir = &cfg.output;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let inst = &cfg.instrument;
    let herald = cfg.herald_efficiency.expect("resolved setup has a herald efficiency");
    let narrow =
        |l: f64| -> CmdResult<SpectralSource> { Ok(SpectralSource::GaussianLine(GaussianLine::new(l, 1e-6)?)) };

    let mut delays = String::from("lambda_nm,delay_ps,sigma_ps\n");
    for (k, &l) in setup.lines_nm.iter().enumerate() {
        let stream = simulate_run(&narrow(l)?, herald, inst, cfg.cycles, sub_seed(cfg.seed, k as u64))?;
        let hist = build_histogram(&stream, SIGNAL_CHANNEL, inst.histogram_bin_ps)?;
        let peak = find_offset(&hist, WavelengthNm::new(l)?, 0.0, inst.lambda0_nm)
            .with_context(|| format!("line at {l} nm"))?;
        delays.push_str(&format!("{l},{},{}\n", peak.peak_time_ps, peak.sigma_ps.max(0.01)));
    }
    let delays_path = dir.join("delays.csv");
    fs::write(&delays_path, delays)?;

    let n = setup.lines_nm.len() as u64;
    let offset = simulate_run(
        &narrow(setup.offset_line_nm)?,
        herald,
        inst,
        cfg.cycles,
        sub_seed(cfg.seed, n),
    )?;
    let narrow_path = dir.join("narrowband.ttag");
    write(&narrow_path, &offset)?;

    let l0 = inst.lambda0_nm.nm();
    let line = GaussianLine::new(l0, setup.broadband_fwhm_nm)?;
    let source = SpectralSource::GaussianLine(line);
    let broad = simulate_run(&source, herald, inst, setup.broadband_cycles, sub_seed(cfg.seed, n + 1))?;
    let broad_path = dir.join("broadband.ttag");
    write(&broad_path, &broad)?;

    let (lo, hi) = source.support();
    let steps = ((hi - lo) / 0.05).ceil() as usize;
    let grid: Vec<f64> = (0..=steps).map(|k| lo + 0.05 * k as f64).collect();
    let values = grid.iter().map(|&g| line.density(g)).collect();
    let reference_path = dir.join("reference.csv");
    fs::write(
        &reference_path,
        Tabulation::new(grid, values)?.to_text("lambda_nm density"),
    )?;

    eprintln!(
        "calibration set: {} lines, offset line {} nm, broadband reference {} nm FWHM -> {}",
        setup.lines_nm.len(),
        setup.offset_line_nm,
        setup.broadband_fwhm_nm,
        dir.display()
    );
    Ok(vec![delays_path, narrow_path, broad_path, reference_path])
}
