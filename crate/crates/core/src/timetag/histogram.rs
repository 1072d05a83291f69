use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CoincidencePair, TagStream, TimeTag, TRIGGER_CHANNEL};
use crate::error::{invalid, Error, Result};

/// Uniform binning of trigger-relative delays: bin `k` covers
/// `[origin + k*width, origin + (k+1)*width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinSpec {
    pub width_ps: u64,
    pub origin_ps: i64,
    pub n_bins: usize,
}

impl BinSpec {
    pub fn new(width_ps: u64, origin_ps: i64, n_bins: usize) -> Result<Self> {
        if width_ps == 0 {
            return Err(invalid("bin width must be positive"));
        }
        Ok(Self {
            width_ps,
            origin_ps,
            n_bins,
        })
    }

    /// Bins from zero covering one clock period.
    pub fn for_clock(clock_period_ps: u64, width_ps: u64) -> Result<Self> {
        if width_ps == 0 {
            return Err(invalid("bin width must be positive"));
        }
        Self::new(width_ps, 0, clock_period_ps.div_ceil(width_ps) as usize)
    }

    #[inline]
    pub fn index(&self, tau_ps: i64) -> Option<usize> {
        let d = tau_ps.checked_sub(self.origin_ps)?;
        if d < 0 {
            return None;
        }
        let k = (d as u64 / self.width_ps) as usize;
        (k < self.n_bins).then_some(k)
    }

    pub fn center(&self, k: usize) -> f64 {
        self.origin_ps as f64 + (k as f64 + 0.5) * self.width_ps as f64
    }

    pub fn lower_edge(&self, k: usize) -> f64 {
        self.origin_ps as f64 + k as f64 * self.width_ps as f64
    }

    pub fn end_ps(&self) -> i64 {
        self.origin_ps + (self.n_bins as u64 * self.width_ps) as i64
    }
}

/// Stop events that did not land in a bin.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropTally {
    /// Stop tag with no earlier trigger in the stream.
    pub no_trigger: u64,
    /// Delay outside the binned range.
    pub out_of_range: u64,
}

impl DropTally {
    pub fn total(&self) -> u64 {
        self.no_trigger + self.out_of_range
    }

    fn add(&mut self, other: &DropTally) {
        self.no_trigger += other.no_trigger;
        self.out_of_range += other.out_of_range;
    }
}

/// Start–stop delay histogram `N_CC(τ)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub bins: BinSpec,
    pub counts: Vec<u64>,
    pub dropped: DropTally,
}

impl Histogram {
    pub fn zeros(bins: BinSpec) -> Self {
        Self {
            bins,
            counts: vec![0; bins.n_bins],
            dropped: DropTally::default(),
        }
    }

    pub fn bin_width_ps(&self) -> u64 {
        self.bins.width_ps
    }

    pub fn origin_ps(&self) -> i64 {
        self.bins.origin_ps
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn centers(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.counts.len()).map(|k| self.bins.center(k))
    }

    #[inline]
    fn record(&mut self, tau: i64) {
        match self.bins.index(tau) {
            Some(k) => self.counts[k] += 1,
            None => self.dropped.out_of_range += 1,
        }
    }
}

pub fn merge_histograms(a: &Histogram, b: &Histogram) -> Result<Histogram> {
    if a.bins != b.bins {
        return Err(Error::GeometryMismatch(format!("{:?} vs {:?}", a.bins, b.bins)));
    }
    let mut out = a.clone();
    out.counts.iter_mut().zip(&b.counts).for_each(|(x, y)| *x += y);
    out.dropped.add(&b.dropped);
    Ok(out)
}

/// Histogram of `stop_channel` delays after the most recent trigger, binned
/// from zero over one clock period.
pub fn build_histogram(stream: &TagStream, stop_channel: u8, bin_width_ps: u64) -> Result<Histogram> {
    build_histogram_with(
        stream,
        stop_channel,
        &BinSpec::for_clock(stream.clock_period_ps(), bin_width_ps)?,
    )
}

pub fn build_histogram_with(stream: &TagStream, stop_channel: u8, bins: &BinSpec) -> Result<Histogram> {
    check_stop(stop_channel)?;
    Ok(histogram_slice(stream.tags(), stop_channel, bins))
}

/// Same result as [`build_histogram_with`], computed over `n_chunks` pieces
/// split at trigger tags and merged.
pub fn build_histogram_par(stream: &TagStream, stop_channel: u8, bins: &BinSpec, n_chunks: usize) -> Result<Histogram> {
    check_stop(stop_channel)?;
    trigger_chunks(stream.tags(), n_chunks)
        .into_par_iter()
        .map(|chunk| Ok(histogram_slice(chunk, stop_channel, bins)))
        .try_reduce(|| Histogram::zeros(*bins), |a, b| merge_histograms(&a, &b))
}

fn check_stop(stop_channel: u8) -> Result<()> {
    if stop_channel == TRIGGER_CHANNEL {
        return Err(invalid("stop channel cannot be the trigger channel"));
    }
    Ok(())
}

fn histogram_slice(tags: &[TimeTag], stop_channel: u8, bins: &BinSpec) -> Histogram {
    let mut hist = Histogram::zeros(*bins);
    let mut last_trigger: Option<u64> = None;
    for tag in tags {
        if tag.channel == TRIGGER_CHANNEL {
            last_trigger = Some(tag.timestamp);
        } else if tag.channel == stop_channel {
            match last_trigger {
                Some(t0) => hist.record((tag.timestamp - t0) as i64),
                None => hist.dropped.no_trigger += 1,
            }
        }
    }
    hist
}

/// Split `tags` into at most `n_chunks` contiguous slices, each beginning at
/// a trigger tag (except possibly the first), so that start–stop processing
/// of the slices is independent.
pub fn trigger_chunks(tags: &[TimeTag], n_chunks: usize) -> Vec<&[TimeTag]> {
    let n_chunks = n_chunks.max(1);
    let mut cuts = vec![0usize];
    for i in 1..n_chunks {
        let target = tags.len() * i / n_chunks;
        let start = (*cuts.last().unwrap()).max(target);
        if let Some(off) = tags[start..].iter().position(|t| t.channel == TRIGGER_CHANNEL) {
            let cut = start + off;
            if cut > *cuts.last().unwrap() {
                cuts.push(cut);
            }
        }
    }
    cuts.push(tags.len());
    cuts.windows(2).map(|w| &tags[w[0]..w[1]]).collect()
}

/// Two-dimensional coincidence histogram, row-major over (a, b).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointHistogram {
    pub bins_a: BinSpec,
    pub bins_b: BinSpec,
    pub counts: Vec<u64>,
    /// Pairs outside the gridded range.
    pub dropped: u64,
}

impl JointHistogram {
    pub fn zeros(bins_a: BinSpec, bins_b: BinSpec) -> Self {
        Self {
            bins_a,
            bins_b,
            counts: vec![0; bins_a.n_bins * bins_b.n_bins],
            dropped: 0,
        }
    }

    pub fn from_pairs(pairs: &[CoincidencePair], bins_a: BinSpec, bins_b: BinSpec) -> Self {
        let mut h = Self::zeros(bins_a, bins_b);
        for p in pairs {
            match (bins_a.index(p.tau_a as i64), bins_b.index(p.tau_b as i64)) {
                (Some(i), Some(j)) => h.counts[i * bins_b.n_bins + j] += 1,
                _ => h.dropped += 1,
            }
        }
        h
    }

    /// Chunked gridding merged in order; identical to [`Self::from_pairs`].
    pub fn from_pairs_par(pairs: &[CoincidencePair], bins_a: BinSpec, bins_b: BinSpec, n_chunks: usize) -> Self {
        let size = pairs.len().div_ceil(n_chunks.max(1)).max(1);
        pairs
            .par_chunks(size)
            .map(|c| Self::from_pairs(c, bins_a, bins_b))
            .reduce(
                || Self::zeros(bins_a, bins_b),
                |a, b| a.merge(&b).expect("same geometry"),
            )
    }

    pub fn merge(&self, other: &Self) -> Result<Self> {
        if self.bins_a != other.bins_a || self.bins_b != other.bins_b {
            return Err(Error::GeometryMismatch("joint histogram axes differ".into()));
        }
        let mut out = self.clone();
        out.counts.iter_mut().zip(&other.counts).for_each(|(x, y)| *x += y);
        out.dropped += other.dropped;
        Ok(out)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.bins_b.n_bins + j]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}
