//! `TTAG` binary format, little-endian:
//!
//! ```text
//! header  : "TTAG" | u16 version | u16 channel_count | u64 clock_period_ps | u64 record_count
//! record  : u8 channel | u64 timestamp_ps          (9 bytes, packed)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::{first_disorder, TagStream, TimeTag};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"TTAG";
pub const VERSION: u16 = 1;
pub const RECORD_BYTES: usize = 9;
const HEADER_BYTES: usize = 4 + 2 + 2 + 8 + 8;

fn header_err(reason: impl Into<String>) -> Error {
    Error::TagFormat {
        record: None,
        reason: reason.into(),
    }
}

pub fn write_tags_to<W: Write>(mut w: W, stream: &TagStream) -> Result<()> {
    let mut header = [0u8; HEADER_BYTES];
    header[..4].copy_from_slice(&MAGIC);
    header[4..6].copy_from_slice(&VERSION.to_le_bytes());
    header[6..8].copy_from_slice(&stream.channel_count().to_le_bytes());
    header[8..16].copy_from_slice(&stream.clock_period_ps().to_le_bytes());
    header[16..24].copy_from_slice(&(stream.len() as u64).to_le_bytes());
    w.write_all(&header)?;
    let mut rec = [0u8; RECORD_BYTES];
    for tag in stream.tags() {
        rec[0] = tag.channel;
        rec[1..].copy_from_slice(&tag.timestamp.to_le_bytes());
        w.write_all(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_tags(path: impl AsRef<Path>, stream: &TagStream) -> Result<()> {
    let file = File::create(path)?;
    write_tags_to(BufWriter::with_capacity(1 << 20, file), stream)
}

pub fn read_tags_from<R: Read>(mut r: R) -> Result<TagStream> {
    let mut header = [0u8; HEADER_BYTES];
    r.read_exact(&mut header).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => header_err("file shorter than header"),
        _ => Error::Io(e),
    })?;
    if header[..4] != MAGIC {
        return Err(header_err(format!("bad magic {:?}", &header[..4])));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != VERSION {
        return Err(header_err(format!("unsupported version {version}")));
    }
    let channels = u16::from_le_bytes([header[6], header[7]]);
    let clock_period = u64::from_le_bytes(header[8..16].try_into().unwrap());
    let count = u64::from_le_bytes(header[16..24].try_into().unwrap());
    if clock_period == 0 {
        return Err(header_err("clock period is zero"));
    }

    // Don't trust the header count for the allocation size.
    let mut tags = Vec::with_capacity(count.min(1 << 24) as usize);
    let mut rec = [0u8; RECORD_BYTES];
    for index in 0..count {
        r.read_exact(&mut rec).map_err(|e| match e.kind() {
            ErrorKind::UnexpectedEof => Error::TagFormat {
                record: Some(index),
                reason: format!("truncated: header declares {count} records"),
            },
            _ => Error::Io(e),
        })?;
        let tag = TimeTag::new(rec[0], u64::from_le_bytes(rec[1..].try_into().unwrap()));
        if u16::from(tag.channel) >= channels {
            return Err(Error::TagFormat {
                record: Some(index),
                reason: format!("channel {} outside declared count {channels}", tag.channel),
            });
        }
        tags.push(tag);
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::TagFormat {
            record: Some(count),
            reason: "trailing bytes after the declared records".into(),
        });
    }
    if let Some(i) = first_disorder(&tags) {
        return Err(Error::TagFormat {
            record: Some(i as u64),
            reason: format!("non-monotone timestamp: {:?} after {:?}", tags[i], tags[i - 1]),
        });
    }
    TagStream::new(clock_period, tags)
}

pub fn read_tags(path: impl AsRef<Path>) -> Result<TagStream> {
    let file = File::open(path)?;
    read_tags_from(BufReader::with_capacity(1 << 20, file))
}

/// Debug export: `channel,timestamp_ps` per line.
pub fn write_csv<W: Write>(mut w: W, stream: &TagStream) -> Result<()> {
    writeln!(w, "channel,timestamp_ps")?;
    for tag in stream.tags() {
        writeln!(w, "{},{}", tag.channel, tag.timestamp)?;
    }
    w.flush()?;
    Ok(())
}
