//! End-to-end acceptance checks. Runs as a plain binary so every criterion
//! prints its own PASS/FAIL line; exits nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::function::erf::erf;

use tofspec_core::instrument::preset;
use tofspec_core::reconstruct::jsi_from_joint;
use tofspec_core::timetag::{read_tags_from, write_tags_to, IDLER_CHANNEL, SIGNAL_CHANNEL};
use tofspec_core::units::fwhm_to_sigma;
use tofspec_core::Error;
use tofspec_core::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn chunks() -> usize {
    rayon::current_num_threads().max(1) * 4
}

fn spectrum_of(stream: &TagStream, cfg: &InstrumentConfig, width_ps: u64) -> ReconstructedSpectrum {
    let bins = BinSpec::for_clock(cfg.clock_period_ps, width_ps).unwrap();
    let hist = build_histogram_par(stream, SIGNAL_CHANNEL, &bins, chunks()).unwrap();
    let calib = CalibrationResult::from_instrument(cfg).unwrap();
    reconstruct_spectrum(&hist, &calib).unwrap()
}

fn monochromatic() -> SpectralSource {
    SpectralSource::GaussianLine(GaussianLine::new(830.0, 1e-6).unwrap())
}

/// Monochromatic line, 52 ps jitter, 950 ps/nm: 0.055 nm FWHM within 10 %.
fn resolution_fast() -> Outcome {
    let start = Instant::now();
    let mut cfg = preset("trsps1").unwrap();
    cfg.gdd_ps_per_nm = 950.0;
    cfg.jitter_fwhm_ps = 52.0;
    // Flat acceptance of 0.01 per herald: 10^7 heralds give 10^5 detections.
    let stream = simulate_run(&monochromatic(), 1.0, &cfg, 10_000_000, 101).unwrap();
    let spec = spectrum_of(&stream, &cfg, 8);
    let fwhm = measure_fwhm(&spec).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let events = spec.raw_total();
    let pass = (fwhm - 0.055).abs() <= 0.0055 && secs < 10.0 && (95_000..=105_000).contains(&events);
    outcome(
        pass,
        format!("FWHM {fwhm:.4} nm from {events} events (target 0.055 nm +/- 10%), {secs:.2} s (limit 10 s)"),
    )
}

/// 200 ps jitter, 958 ps/nm, 81 ps TDC: 0.21 nm FWHM within 10 %.
fn resolution_slow() -> Outcome {
    let cfg = preset("trsps2-slow").unwrap();
    assert_eq!(
        (cfg.jitter_fwhm_ps, cfg.gdd_ps_per_nm, cfg.tdc_resolution_ps),
        (200.0, 958.0, 81)
    );
    // Acceptance 0.04 per herald.
    let stream = simulate_run(&monochromatic(), 1.0, &cfg, 2_500_000, 102).unwrap();
    let quantized = stream
        .tags()
        .windows(2)
        .filter(|w| w[1].channel == SIGNAL_CHANNEL && w[0].channel == 0)
        .all(|w| (w[1].timestamp - w[0].timestamp) % 81 == 0);
    let spec = spectrum_of(&stream, &cfg, 81);
    let fwhm = measure_fwhm(&spec).unwrap();
    let pass = (fwhm - 0.21).abs() <= 0.021 && quantized;
    outcome(
        pass,
        format!(
            "FWHM {fwhm:.4} nm from {} events (target 0.21 nm +/- 10%), delays on 81 ps grid: {quantized}",
            spec.raw_total()
        ),
    )
}

/// 11 noisy delay points, slope 938 ps/nm, sigma 5 ps, 100 seeds.
fn gdd_calibration() -> Outcome {
    let truth = 938.0;
    let l0 = WavelengthNm::new(830.0).unwrap();
    let noise = Normal::new(0.0, 5.0).unwrap();
    let mut slopes = Vec::new();
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + seed);
        let points: Vec<DelayPoint> = (0..11)
            .map(|k| {
                let l = 825.0 + k as f64;
                DelayPoint::new(l, 6250.0 + truth * (l - 830.0) + noise.sample(&mut rng), Some(5.0)).unwrap()
            })
            .collect();
        slopes.push(fit_gdd(&points, 1, l0).unwrap().gdd_ps_per_nm);
    }
    let mean = slopes.iter().sum::<f64>() / slopes.len() as f64;
    let mean_abs_rel = slopes.iter().map(|s| ((s - truth) / truth).abs()).sum::<f64>() / slopes.len() as f64;
    let rel = ((mean - truth) / truth).abs();
    let pass = rel < 0.005 && mean_abs_rel < 0.005;
    outcome(
        pass,
        format!(
            "mean slope {mean:.3} ps/nm (error {:.4}%), mean per-seed error {:.4}% (limit 0.5%)",
            100.0 * rel,
            100.0 * mean_abs_rel
        ),
    )
}

/// Double pulse, T = 11 ps, 3000 detections: period 0.209 nm within 5 %,
/// fixed and free fits agree, visibility within 0.05 of the set value.
fn fringe_experiment() -> Outcome {
    let set_v = 0.24;
    let cfg = preset("trsps1").unwrap();
    let envelope = GaussianLine::new(830.0, 2.0).unwrap();
    let source = SpectralSource::DoublePulse(DoublePulse::new(envelope, 11.0, set_v, 0.0).unwrap());
    // Acceptance 0.01 per herald: 3 x 10^5 heralds give about 3000 detections.
    let stream = simulate_run(&source, 1.0, &cfg, 300_000, 104).unwrap();
    let spec = spectrum_of(&stream, &cfg, cfg.histogram_bin_ps);
    let period = fringe_period(11.0, envelope.center).unwrap();
    let res = Some(cfg.resolution_nm());
    let fixed = fit_fringes(
        &spec,
        &FringeOptions {
            fixed_period_nm: Some(period),
            resolution_fwhm_nm: res,
        },
    );
    let free = fit_fringes(
        &spec,
        &FringeOptions {
            fixed_period_nm: None,
            resolution_fwhm_nm: res,
        },
    );
    let (fixed, free) = match (fixed, free) {
        (Ok(a), Ok(b)) => (a, b),
        (a, b) => return outcome(false, format!("fit failed: fixed {:?}, free {:?}", a.err(), b.err())),
    };
    let period_ok = (free.period_nm - 0.209).abs() <= 0.05 * 0.209;
    let agree = (free.period_nm - period).abs() <= 0.05 * period && (free.visibility - fixed.visibility).abs() <= 0.05;
    let v_ok = (fixed.visibility - set_v).abs() <= 0.05;
    outcome(
        period_ok && agree && v_ok,
        format!(
            "{} events; free period {:.4} nm (target 0.209 +/- 5%), fixed period {period:.4} nm; V fixed {:.3} +/- {:.3}, V free {:.3}, set {set_v}",
            spec.raw_total(),
            free.period_nm,
            fixed.visibility,
            fixed.sigma_visibility,
            free.visibility
        ),
    )
}

/// Photon pairs through the slow presets: signal marginal width and idler
/// truncation by the grating window.
fn jsi_experiment() -> Outcome {
    let cfg_s = preset("trsps2-slow").unwrap();
    let cfg_i = preset("trsps2-slow").unwrap();
    let source = PairGaussian::new(
        GaussianLine::new(830.0, 2.0).unwrap(),
        GaussianLine::new(830.0, 8.0).unwrap(),
        0.0,
    )
    .unwrap();
    // Coincidence probability per pair: 0.04 x 0.04 x P(idler in window).
    let sigma_i = fwhm_to_sigma(8.0);
    let in_window = erf(5.0 / (sigma_i * 2f64.sqrt()));
    let per_pair = 0.04 * 0.04 * in_window;
    let pair_rate = 0.1;
    let cycles = (28_000.0 / (per_pair * pair_rate)).round() as u64;
    let run = simulate_pair_run(&source, pair_rate, &cfg_s, &cfg_i, cycles, 105).unwrap();
    let pairs = coincidence_pairs_par(&run.stream, SIGNAL_CHANNEL, IDLER_CHANNEL, chunks()).unwrap();
    let cal_s = CalibrationResult::from_instrument(&cfg_s).unwrap();
    let cal_i = CalibrationResult::from_instrument(&cfg_i).unwrap();
    let grid = reconstruct_jsi(&pairs, &cal_s, &cal_i, (162, 162)).unwrap();
    let signal = grid.signal_marginal();
    let target = (2.0f64.powi(2) + cfg_s.resolution_nm().powi(2)).sqrt();
    let fwhm = measure_fwhm(&signal).unwrap();
    let idler = grid.idler_marginal();
    let live: Vec<usize> = (0..idler.len()).filter(|&k| !idler.masked[k]).collect();
    let peak = live.iter().map(|&k| idler.corrected_counts[k]).fold(0.0, f64::max);
    let bw = idler.bin_width_nm;
    // Bins that contain the window edges.
    let at = |edge: f64| {
        live.iter()
            .copied()
            .find(|&k| (idler.lambda_bins[k].nm() - edge).abs() <= 0.5 * bw)
            .map_or(0.0, |k| idler.corrected_counts[k] / peak)
    };
    let edges = (at(825.0), at(835.0));
    let (lo, hi) = (
        idler.lambda_bins[live[0]].nm(),
        idler.lambda_bins[live[live.len() - 1]].nm(),
    );
    let truncated = lo > 825.0 - 2.0 * bw && hi < 835.0 + 2.0 * bw;
    let pass = (fwhm - target).abs() <= 0.1 * target && edges.0 > 0.2 && edges.1 > 0.2 && truncated;
    outcome(
        pass,
        format!(
            "{} coincidences; signal FWHM {fwhm:.3} nm (target {target:.3} +/- 10%); idler unmasked {lo:.2}..{hi:.2} nm, 825/835 nm bins at {:.2} and {:.2} of peak (need > 0.20)",
            pairs.len(),
            edges.0,
            edges.1
        ),
    )
}

fn random_efficiency(rng: &mut ChaCha8Rng) -> EfficiencyCurve {
    let n = rng.random_range(2..30);
    let lo = rng.random_range(820.0..828.0);
    let hi = rng.random_range(832.0..840.0);
    let grid: Vec<f64> = (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect();
    let eta: Vec<f64> = grid.iter().map(|_| rng.random_range(0.0..1.0)).collect();
    let eta = if eta.iter().all(|&e| e == 0.0) {
        vec![1.0; n]
    } else {
        eta
    };
    EfficiencyCurve::normalized(grid, eta, rng.random_range(0.001..1.0)).unwrap()
}

/// Unmasked corrected totals equal raw totals within 0.5 counts.
fn count_conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let base = CalibrationResult::from_instrument(&preset("trsps1").unwrap()).unwrap();
    let mut worst: f64 = 0.0;
    let mut runs = 0;
    let mut disjoint = 0;
    for _ in 0..1000 {
        let mut cal = base.clone();
        cal.efficiency = random_efficiency(&mut rng);
        cal.gdd_ps_per_nm = rng.random_range(500.0..1500.0) * if rng.random_bool(0.2) { -1.0 } else { 1.0 };
        let width = rng.random_range(1..200u64);
        let n = rng.random_range(10..2000usize);
        let origin = rng.random_range(0..6000i64);
        let counts: Vec<u64> = (0..n)
            .map(|_| {
                if rng.random_bool(0.3) {
                    0
                } else {
                    rng.random_range(0..100_000)
                }
            })
            .collect();
        let hist = Histogram {
            bins: BinSpec::new(width, origin, n).unwrap(),
            counts,
            dropped: Default::default(),
        };
        match reconstruct_spectrum(&hist, &cal) {
            Ok(spec) => {
                worst = worst.max((spec.unmasked_corrected_total() - spec.unmasked_raw_total()).abs());
                runs += 1;
            }
            // Histogram entirely outside the calibrated window.
            Err(Error::DisjointRanges(_)) => disjoint += 1,
            Err(e) => return outcome(false, format!("unexpected reconstruction error: {e}")),
        }
    }
    let mut runs_2d = 0;
    for _ in 0..1000 {
        let mut ca = base.clone();
        let mut cb = base.clone();
        ca.efficiency = random_efficiency(&mut rng);
        cb.efficiency = random_efficiency(&mut rng);
        let pairs: Vec<CoincidencePair> = (0..rng.random_range(0..3000))
            .map(|_| CoincidencePair {
                tau_a: rng.random_range(0..12_500),
                tau_b: rng.random_range(0..12_500),
            })
            .collect();
        let grid = reconstruct_jsi(&pairs, &ca, &cb, (rng.random_range(20..400), rng.random_range(20..400))).unwrap();
        worst = worst.max((grid.unmasked_corrected_total() - grid.unmasked_raw_total()).abs());
        runs_2d += 1;
    }
    outcome(
        worst <= 0.5 && runs >= 900,
        format!("{runs} spectra ({disjoint} rejected as outside the window) and {runs_2d} joint spectra, worst |corrected - raw| = {worst:.3e} counts (limit 0.5)"),
    )
}

/// Chunked processing and file round trips are bit-for-bit identical.
fn oracle_equivalence() -> Outcome {
    let cfg = preset("trsps1").unwrap();
    let source = SpectralSource::GaussianLine(GaussianLine::new(830.0, 2.0).unwrap());
    let single = simulate_run(&source, 1.0, &cfg, 10_000_000, 107).unwrap();

    let mut pair_cfg = preset("trsps1").unwrap();
    pair_cfg.efficiency_curve = EfficiencyCurve::flat(825.0, 835.0, 1.0).unwrap();
    let pair_source = PairGaussian::new(
        GaussianLine::new(830.0, 2.0).unwrap(),
        GaussianLine::new(830.0, 4.0).unwrap(),
        -0.5,
    )
    .unwrap();
    let pairs_run = simulate_pair_run(&pair_source, 1.0, &pair_cfg, &pair_cfg, 3_500_000, 207).unwrap();
    let paired = pairs_run.stream;

    let mut failures = Vec::new();
    let bins = BinSpec::for_clock(cfg.clock_period_ps, 8).unwrap();
    let reference = build_histogram_with(&single, SIGNAL_CHANNEL, &bins).unwrap();
    let ref_bytes = serde_json::to_vec(&reference).unwrap();
    for n in [2, 7, 64, 1000] {
        let par = build_histogram_par(&single, SIGNAL_CHANNEL, &bins, n).unwrap();
        if serde_json::to_vec(&par).unwrap() != ref_bytes {
            failures.push(format!("histogram with {n} chunks"));
        }
    }

    let seq_pairs = coincidence_pairs(&paired, SIGNAL_CHANNEL, IDLER_CHANNEL).unwrap();
    let cal = CalibrationResult::from_instrument(&pair_cfg).unwrap();
    let (ba, bb) = (axis_bins(&cal, 32).unwrap(), axis_bins(&cal, 40).unwrap());
    let joint = JointHistogram::from_pairs(&seq_pairs, ba, bb);
    let joint_bytes = serde_json::to_vec(&joint).unwrap();
    let jsi_bytes = jsi_from_joint(&joint, &cal, &cal).unwrap().to_csv();
    for n in [2, 7, 64, 1000] {
        let par_pairs = coincidence_pairs_par(&paired, SIGNAL_CHANNEL, IDLER_CHANNEL, n).unwrap();
        if par_pairs != seq_pairs {
            failures.push(format!("pairing with {n} chunks"));
        }
        let par = JointHistogram::from_pairs_par(&par_pairs, ba, bb, n);
        if serde_json::to_vec(&par).unwrap() != joint_bytes {
            failures.push(format!("joint gridding with {n} chunks"));
        }
    }
    if reconstruct_jsi_with(&seq_pairs, &cal, &cal, ba, bb).unwrap().to_csv() != jsi_bytes {
        failures.push("parallel joint reconstruction".into());
    }

    for (name, stream) in [("single-channel", &single), ("pair", &paired)] {
        let mut first = Vec::new();
        write_tags_to(&mut first, stream).unwrap();
        let back = read_tags_from(first.as_slice()).unwrap();
        let mut second = Vec::new();
        write_tags_to(&mut second, &back).unwrap();
        if &back != stream || first != second {
            failures.push(format!("{name} file round trip"));
        }
    }
    outcome(
        failures.is_empty() && single.len() >= 10_000_000 && paired.len() >= 10_000_000,
        format!(
            "streams of {} and {} tags, {} joint pairs; mismatches: {}",
            single.len(),
            paired.len(),
            seq_pairs.len(),
            if failures.is_empty() {
                "none".to_string()
            } else {
                failures.join(", ")
            }
        ),
    )
}

/// Reduced chi-square of reconstructed against resolution-convolved truth
/// for Gaussian sources under a sloped efficiency curve.
fn statistical_soundness() -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;
    for (i, (fwhm, seed)) in [(1.0, 108u64), (2.0, 208), (4.0, 308)].into_iter().enumerate() {
        let mut cfg = preset("trsps1").unwrap();
        cfg.efficiency_curve = EfficiencyCurve::normalized(vec![825.0, 835.0], vec![0.3, 1.0], 0.01).unwrap();
        let center = 829.0 + i as f64;
        let source = SpectralSource::GaussianLine(GaussianLine::new(center, fwhm).unwrap());
        let stream = simulate_run(&source, 1.0, &cfg, 10_000_000, seed).unwrap();
        let spec = spectrum_of(&stream, &cfg, 16);
        let sigma = (fwhm_to_sigma(fwhm).powi(2)
            + fwhm_to_sigma(cfg.resolution_nm()).powi(2)
            + (cfg.tdc_resolution_ps as f64 / cfg.gdd_ps_per_nm).powi(2) / 12.0)
            .sqrt();
        let half = 0.5 * spec.bin_width_nm;
        let cdf = |x: f64| 0.5 * (1.0 + erf((x - center) / (sigma * 2f64.sqrt())));
        let live: Vec<usize> = (0..spec.len())
            .filter(|&k| !spec.masked[k])
            .filter(|&k| {
                let l = spec.lambda_bins[k].nm();
                cdf(l + half) - cdf(l - half) > 5e-5
            })
            .collect();
        let shape: Vec<f64> = live
            .iter()
            .map(|&k| {
                let l = spec.lambda_bins[k].nm();
                cdf(l + half) - cdf(l - half)
            })
            .collect();
        let observed: f64 = live.iter().map(|&k| spec.corrected_counts[k]).sum();
        let scale = observed / shape.iter().sum::<f64>();
        let chi2: f64 = live
            .iter()
            .zip(&shape)
            .map(|(&k, &p)| {
                let expect = scale * p;
                (spec.corrected_counts[k] - expect).powi(2) / (spec.correction[k] * expect)
            })
            .sum();
        let reduced = chi2 / (live.len() as f64 - 1.0);
        let ok = (0.7..=1.3).contains(&reduced) && live.len() >= 50;
        pass &= ok;
        details.push(format!("FWHM {fwhm} nm: {:.3} over {} bins", reduced, live.len()));
    }
    outcome(
        pass,
        format!("reduced chi-square {} (need 0.7..1.3, >= 50 bins)", details.join("; ")),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("resolution reproduction", resolution_fast),
        ("slow-detector resolution", resolution_slow),
        ("GDD calibration", gdd_calibration),
        ("fringe experiment", fringe_experiment),
        ("JSI experiment", jsi_experiment),
        ("count conservation", count_conservation),
        ("oracle equivalence", oracle_equivalence),
        ("statistical soundness", statistical_soundness),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        let o = run();
        failed += usize::from(!o.pass);
        println!(
            "acceptance {} {name}: {} ({}; {:.1} s)",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
