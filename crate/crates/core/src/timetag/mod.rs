//! Clock-referenced detection time tags and the TDC-side processing:
//! start–stop histogramming, coincidence pairing and the binary tag format.

mod coincidence;
mod histogram;
mod io;

pub use coincidence::{coincidence_pairs, coincidence_pairs_par, CoincidencePair};
pub use histogram::{
    build_histogram, build_histogram_par, build_histogram_with, merge_histograms, trigger_chunks, BinSpec, DropTally,
    Histogram, JointHistogram,
};
pub use io::{read_tags, read_tags_from, write_csv, write_tags, write_tags_to, MAGIC, RECORD_BYTES, VERSION};

use crate::error::{invalid, Result};

/// Experiment clock (or herald) trigger channel.
pub const TRIGGER_CHANNEL: u8 = 0;
/// Signal photon detector.
pub const SIGNAL_CHANNEL: u8 = 1;
/// Idler photon detector.
pub const IDLER_CHANNEL: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TimeTag {
    pub channel: u8,
    /// Picoseconds since the start of the run.
    pub timestamp: u64,
}

impl TimeTag {
    pub fn new(channel: u8, timestamp: u64) -> Self {
        Self { channel, timestamp }
    }

    #[inline]
    fn order_key(&self) -> (u64, u8) {
        (self.timestamp, self.channel)
    }
}

/// Time-ordered tag list. Ties in timestamp are ordered by channel, and a
/// channel never repeats a timestamp.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagStream {
    clock_period_ps: u64,
    tags: Vec<TimeTag>,
}

impl TagStream {
    pub fn new(clock_period_ps: u64, tags: Vec<TimeTag>) -> Result<Self> {
        if clock_period_ps == 0 {
            return Err(invalid("clock period must be positive"));
        }
        if let Some(i) = first_disorder(&tags) {
            return Err(invalid(format!(
                "tag {i} ({:?}) does not follow tag {} ({:?})",
                tags[i],
                i - 1,
                tags[i - 1]
            )));
        }
        Ok(Self { clock_period_ps, tags })
    }

    /// Sort tags and drop exact duplicates.
    pub fn from_unsorted(clock_period_ps: u64, mut tags: Vec<TimeTag>) -> Result<Self> {
        tags.sort_unstable_by_key(TimeTag::order_key);
        tags.dedup();
        Self::new(clock_period_ps, tags)
    }

    pub fn empty(clock_period_ps: u64) -> Result<Self> {
        Self::new(clock_period_ps, Vec::new())
    }

    pub fn clock_period_ps(&self) -> u64 {
        self.clock_period_ps
    }

    pub fn tags(&self) -> &[TimeTag] {
        &self.tags
    }

    pub fn into_tags(self) -> Vec<TimeTag> {
        self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    /// One more than the highest channel present (zero for an empty stream).
    pub fn channel_count(&self) -> u16 {
        self.tags.iter().map(|t| t.channel as u16 + 1).max().unwrap_or(0)
    }

    pub fn count_channel(&self, channel: u8) -> usize {
        self.tags.iter().filter(|t| t.channel == channel).count()
    }

    /// Same stream with every timestamp moved later by `offset_ps`.
    pub fn shifted(&self, offset_ps: u64) -> Self {
        let tags = self
            .tags
            .iter()
            .map(|t| TimeTag::new(t.channel, t.timestamp + offset_ps))
            .collect();
        Self {
            clock_period_ps: self.clock_period_ps,
            tags,
        }
    }
}

/// Index of the first tag that is not strictly after its predecessor.
pub(crate) fn first_disorder(tags: &[TimeTag]) -> Option<usize> {
    tags.windows(2)
        .position(|w| w[1].order_key() <= w[0].order_key())
        .map(|i| i + 1)
}
