use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::histogram::trigger_chunks;
use super::{TagStream, TimeTag, TRIGGER_CHANNEL};
use crate::error::{invalid, Result};

/// Delays of two channels measured from the same trigger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CoincidencePair {
    pub tau_a: u64,
    pub tau_b: u64,
}

/// Pairs of first detections on `chan_a` and `chan_b` sharing a trigger.
/// Later hits within a cycle are ignored, so each trigger yields at most
/// one pair.
pub fn coincidence_pairs(stream: &TagStream, chan_a: u8, chan_b: u8) -> Result<Vec<CoincidencePair>> {
    check_channels(chan_a, chan_b)?;
    Ok(pairs_slice(stream.tags(), chan_a, chan_b))
}

pub fn coincidence_pairs_par(
    stream: &TagStream,
    chan_a: u8,
    chan_b: u8,
    n_chunks: usize,
) -> Result<Vec<CoincidencePair>> {
    check_channels(chan_a, chan_b)?;
    let parts: Vec<Vec<CoincidencePair>> = trigger_chunks(stream.tags(), n_chunks)
        .into_par_iter()
        .map(|chunk| pairs_slice(chunk, chan_a, chan_b))
        .collect();
    Ok(parts.concat())
}

fn check_channels(a: u8, b: u8) -> Result<()> {
    if a == b || a == TRIGGER_CHANNEL || b == TRIGGER_CHANNEL {
        return Err(invalid(format!("cannot pair channels {a} and {b}")));
    }
    Ok(())
}

fn pairs_slice(tags: &[TimeTag], chan_a: u8, chan_b: u8) -> Vec<CoincidencePair> {
    let mut out = Vec::new();
    let mut trigger: Option<u64> = None;
    let mut first_a: Option<u64> = None;
    let mut first_b: Option<u64> = None;
    let mut flush = |t0: Option<u64>, a: Option<u64>, b: Option<u64>| {
        if let (Some(t0), Some(a), Some(b)) = (t0, a, b) {
            out.push(CoincidencePair {
                tau_a: a - t0,
                tau_b: b - t0,
            });
        }
    };
    for tag in tags {
        if tag.channel == TRIGGER_CHANNEL {
            flush(trigger, first_a, first_b);
            trigger = Some(tag.timestamp);
            first_a = None;
            first_b = None;
        } else if tag.channel == chan_a {
            first_a.get_or_insert(tag.timestamp);
        } else if tag.channel == chan_b {
            first_b.get_or_insert(tag.timestamp);
        }
    }
    flush(trigger, first_a, first_b);
    out
}
