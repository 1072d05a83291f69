//! Monte-Carlo generation of clock-referenced detection streams.
//!
//! Cycles are processed in fixed-size chunks. Chunk `k` draws from its own
//! ChaCha stream `(seed, k)`, so the output does not depend on how chunks are
//! scheduled across threads. Rare events are reached by geometric skipping
//! rather than visiting every cycle.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Geometric, StandardNormal};
use rayon::prelude::*;

use super::{EfficiencyCurve, InstrumentConfig};
use crate::error::{invalid, Error, Result};
use crate::spectral::{PairGaussian, SpectralSource, WavelengthSampler};
use crate::timetag::{TagStream, TimeTag, IDLER_CHANNEL, SIGNAL_CHANNEL, TRIGGER_CHANNEL};
use crate::units::fwhm_to_sigma;

/// Cycles per independently seeded chunk.
pub const CHUNK_CYCLES: u64 = 1 << 20;

/// Slack allowed above unit acceptance for rounding in the curve integral.
const ACCEPTANCE_SLACK: f64 = 1e-9;

/// Ground truth for one recorded photon detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub cycle: u64,
    pub channel: u8,
    pub lambda_nm: f64,
    pub timestamp: u64,
}

#[derive(Debug, Clone)]
pub struct SimulatedRun {
    pub stream: TagStream,
    /// Photon detections that survived into the stream (dark counts excluded).
    pub truth: Vec<Detection>,
}

/// Per-channel detection model shared by all chunks.
struct Channel<'a> {
    cfg: &'a InstrumentConfig,
    efficiency: EfficiencyCurve,
    window_width: f64,
    sigma_ps: f64,
    dark_per_ps: f64,
}

impl<'a> Channel<'a> {
    fn new(cfg: &'a InstrumentConfig) -> Result<Self> {
        cfg.validate()?;
        let efficiency = cfg.effective_efficiency()?;
        let window_width = cfg.window_width_nm();
        let max_acceptance = efficiency.peak() * window_width;
        if max_acceptance > 1.0 + ACCEPTANCE_SLACK {
            return Err(Error::Config(format!(
                "detection probability eta * window width reaches {max_acceptance:.4} > 1"
            )));
        }
        Ok(Self {
            cfg,
            efficiency,
            window_width,
            sigma_ps: fwhm_to_sigma(cfg.jitter_fwhm_ps),
            dark_per_ps: cfg.dark_rate_hz * 1e-12,
        })
    }

    /// Probability that a photon of this wavelength is detected.
    #[inline]
    fn acceptance(&self, lambda: f64) -> f64 {
        (self.efficiency.eval(lambda) * self.window_width).min(1.0)
    }

    /// Trigger-relative delay after jitter and TDC quantisation.
    #[inline]
    fn delay<R: Rng>(&self, lambda: f64, rng: &mut R) -> i64 {
        let mut t = self.cfg.map_wavelength_to_time(lambda);
        if self.sigma_ps > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            t += self.sigma_ps * z;
        }
        self.quantize(t)
    }

    #[inline]
    fn quantize(&self, t: f64) -> i64 {
        let q = self.cfg.tdc_resolution_ps;
        if q <= 1 {
            t.round() as i64
        } else {
            (t / q as f64).round() as i64 * q as i64
        }
    }

    /// Dark counts over a cycle range as a Poisson process.
    fn dark_counts<R: Rng>(&self, channel: u8, cycles: (u64, u64), rng: &mut R, out: &mut Vec<Candidate>) {
        if self.dark_per_ps <= 0.0 {
            return;
        }
        let period = self.cfg.clock_period_ps;
        let exp = Exp::new(self.dark_per_ps).expect("positive rate");
        let end = (cycles.1 * period) as f64;
        let mut t = (cycles.0 * period) as f64;
        loop {
            t += exp.sample(rng);
            if t >= end {
                break;
            }
            let cycle = (t / period as f64) as u64;
            let offset = self.quantize(t - (cycle * period) as f64);
            out.push(Candidate::new(cycle, channel, offset, period, f64::NAN));
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    cycle: u64,
    channel: u8,
    /// Absolute time; negative times (before the run) are discarded later.
    time: i64,
    /// NaN for dark counts and triggers.
    lambda: f64,
}

impl Candidate {
    fn new(cycle: u64, channel: u8, offset: i64, period: u64, lambda: f64) -> Self {
        Self {
            cycle,
            channel,
            time: (cycle * period) as i64 + offset,
            lambda,
        }
    }
}

fn chunk_rng(seed: u64, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk);
    rng
}

/// Cycle indices that fire with probability `p`, visited by geometric skips.
fn firing_cycles<R: Rng>(p: f64, range: (u64, u64), rng: &mut R, mut f: impl FnMut(u64, &mut R)) {
    if p <= 0.0 {
        return;
    }
    let geo = Geometric::new(p).expect("p in (0, 1]");
    let mut c = range.0;
    loop {
        let skip = geo.sample(rng);
        c = match c.checked_add(skip) {
            Some(c) if c < range.1 => c,
            _ => break,
        };
        f(c, rng);
        c += 1;
    }
}

fn chunk_ranges(n_cycles: u64) -> Vec<(u64, (u64, u64))> {
    (0..n_cycles.div_ceil(CHUNK_CYCLES))
        .map(|k| (k, (k * CHUNK_CYCLES, ((k + 1) * CHUNK_CYCLES).min(n_cycles))))
        .collect()
}

/// Keep the earliest detection per (cycle, channel).
fn earliest_per_cycle(cands: &mut Vec<Candidate>) {
    cands.sort_by_key(|c| (c.cycle, c.channel, c.time));
    cands.dedup_by_key(|c| (c.cycle, c.channel));
}

/// Time-order, drop pre-run tags and apply non-paralyzable dead time.
fn finish(mut cands: Vec<Candidate>, clock_period: u64, dead_time: &[(u8, u64)]) -> Result<SimulatedRun> {
    cands.retain(|c| c.time >= 0);
    cands.sort_by_key(|c| (c.time, c.channel, c.cycle));
    let mut last: [Option<i64>; 256] = [None; 256];
    let mut tags = Vec::with_capacity(cands.len());
    let mut truth = Vec::new();
    for c in cands {
        let slot = &mut last[c.channel as usize];
        if c.channel != TRIGGER_CHANNEL {
            let dead = dead_time.iter().find(|(ch, _)| *ch == c.channel).map_or(0, |d| d.1) as i64;
            if let Some(prev) = *slot {
                if c.time <= prev || c.time < prev + dead {
                    continue;
                }
            }
        } else if *slot == Some(c.time) {
            continue;
        }
        *slot = Some(c.time);
        let ts = c.time as u64;
        tags.push(TimeTag::new(c.channel, ts));
        if !c.lambda.is_nan() {
            truth.push(Detection {
                cycle: c.cycle,
                channel: c.channel,
                lambda_nm: c.lambda,
                timestamp: ts,
            });
        }
    }
    Ok(SimulatedRun {
        stream: TagStream::new(clock_period, tags)?,
        truth,
    })
}

/// Heralded single-channel run. Each cycle fires a herald with probability
/// `herald_efficiency`; the herald starts the TDC and is written on the
/// trigger channel. A heralded photon is detected with probability
/// `η(λ) × window width`, so a photon spread uniformly across the window is
/// detected with probability `H = ∫η`.
pub fn simulate_run(
    source: &SpectralSource,
    herald_efficiency: f64,
    cfg: &InstrumentConfig,
    n_cycles: u64,
    seed: u64,
) -> Result<TagStream> {
    simulate_run_detailed(source, herald_efficiency, cfg, n_cycles, seed).map(|r| r.stream)
}

pub fn simulate_run_detailed(
    source: &SpectralSource,
    herald_efficiency: f64,
    cfg: &InstrumentConfig,
    n_cycles: u64,
    seed: u64,
) -> Result<SimulatedRun> {
    if !(0.0..=1.0).contains(&herald_efficiency) {
        return Err(invalid(format!("herald efficiency {herald_efficiency} outside [0, 1]")));
    }
    let sampler: WavelengthSampler = source.sampler()?;
    let channel = Channel::new(cfg)?;
    let period = cfg.clock_period_ps;

    let chunks: Vec<Vec<Candidate>> = chunk_ranges(n_cycles)
        .into_par_iter()
        .map(|(k, range)| {
            let mut rng = chunk_rng(seed, k);
            let mut signals = Vec::new();
            let mut heralds = Vec::new();
            firing_cycles(herald_efficiency, range, &mut rng, |cycle, rng| {
                heralds.push(Candidate::new(cycle, TRIGGER_CHANNEL, 0, period, f64::NAN));
                let lambda = sampler.sample(rng);
                if rng.random::<f64>() < channel.acceptance(lambda) {
                    let delay = channel.delay(lambda, rng);
                    signals.push(Candidate::new(cycle, SIGNAL_CHANNEL, delay, period, lambda));
                }
            });
            channel.dark_counts(SIGNAL_CHANNEL, range, &mut rng, &mut signals);
            earliest_per_cycle(&mut signals);
            heralds.extend(signals);
            heralds
        })
        .collect();

    finish(chunks.concat(), period, &[(SIGNAL_CHANNEL, cfg.dead_time_ps)])
}

/// Two-channel photon-pair run. Each cycle creates a pair with probability
/// `pair_rate`; signal and idler are detected independently on channels 1
/// and 2. A clock trigger is written for every cycle containing at least one
/// detection, which is all that start–stop processing can use.
pub fn simulate_pair_run(
    source: &PairGaussian,
    pair_rate: f64,
    cfg_signal: &InstrumentConfig,
    cfg_idler: &InstrumentConfig,
    n_cycles: u64,
    seed: u64,
) -> Result<SimulatedRun> {
    source.validate()?;
    if !(0.0..=1.0).contains(&pair_rate) {
        return Err(invalid(format!("pair rate {pair_rate} outside [0, 1]")));
    }
    if cfg_signal.clock_period_ps != cfg_idler.clock_period_ps {
        return Err(Error::Config(format!(
            "channels disagree on the clock period ({} vs {} ps)",
            cfg_signal.clock_period_ps, cfg_idler.clock_period_ps
        )));
    }
    let sig = Channel::new(cfg_signal)?;
    let idl = Channel::new(cfg_idler)?;
    let period = cfg_signal.clock_period_ps;

    let chunks: Vec<Vec<Candidate>> = chunk_ranges(n_cycles)
        .into_par_iter()
        .map(|(k, range)| {
            let mut rng = chunk_rng(seed, k);
            let mut hits = Vec::new();
            firing_cycles(pair_rate, range, &mut rng, |cycle, rng| {
                let (ls, li) = source.draw(rng);
                if rng.random::<f64>() < sig.acceptance(ls) {
                    let d = sig.delay(ls, rng);
                    hits.push(Candidate::new(cycle, SIGNAL_CHANNEL, d, period, ls));
                }
                if rng.random::<f64>() < idl.acceptance(li) {
                    let d = idl.delay(li, rng);
                    hits.push(Candidate::new(cycle, IDLER_CHANNEL, d, period, li));
                }
            });
            sig.dark_counts(SIGNAL_CHANNEL, range, &mut rng, &mut hits);
            idl.dark_counts(IDLER_CHANNEL, range, &mut rng, &mut hits);
            earliest_per_cycle(&mut hits);
            let mut triggers: Vec<Candidate> = hits
                .iter()
                .map(|h| Candidate::new(h.cycle, TRIGGER_CHANNEL, 0, period, f64::NAN))
                .collect();
            triggers.dedup_by_key(|c| c.cycle);
            triggers.extend(hits);
            triggers
        })
        .collect();

    finish(
        chunks.concat(),
        period,
        &[
            (SIGNAL_CHANNEL, cfg_signal.dead_time_ps),
            (IDLER_CHANNEL, cfg_idler.dead_time_ps),
        ],
    )
}
