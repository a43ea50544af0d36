//! SCTR trace archives.
//!
//! Layout, little-endian: magic `SCTR`, `u16` version, `u8` leak point,
//! `u32` samples per trace, `u32` record count, then per record a `u8`
//! label followed by the samples as IEEE-754 binary32.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use super::{LeakPoint, Trace};

pub const ARCHIVE_MAGIC: &[u8; 4] = b"SCTR";
pub const ARCHIVE_VERSION: u16 = 1;
const HEADER_LEN: usize = 15;

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("not an SCTR archive")]
    BadMagic,
    #[error("archive version {0} is not supported")]
    VersionMismatch(u16),
    #[error("archive is truncated")]
    TruncatedFile,
    #[error("invalid archive: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceArchive {
    pub point: LeakPoint,
    pub trace_len: usize,
    pub traces: Vec<Trace>,
}

pub fn encode_archive(archive: &TraceArchive) -> Result<Vec<u8>, ArchiveError> {
    let len = archive.trace_len;
    if let Some(t) = archive.traces.iter().find(|t| t.samples.len() != len) {
        return Err(ArchiveError::Invalid(format!(
            "trace of {} samples in an archive of {len}",
            t.samples.len()
        )));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + archive.traces.len() * (1 + 4 * len));
    out.extend_from_slice(ARCHIVE_MAGIC);
    out.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
    out.push(archive.point.code());
    out.extend_from_slice(&(len as u32).to_le_bytes());
    out.extend_from_slice(&(archive.traces.len() as u32).to_le_bytes());
    for t in &archive.traces {
        out.push(t.label);
        for s in &t.samples {
            out.extend_from_slice(&s.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_archive(data: &[u8]) -> Result<TraceArchive, ArchiveError> {
    if data.len() < 4 {
        return Err(ArchiveError::TruncatedFile);
    }
    if &data[..4] != ARCHIVE_MAGIC {
        return Err(ArchiveError::BadMagic);
    }
    if data.len() < HEADER_LEN {
        return Err(ArchiveError::TruncatedFile);
    }
    let version = u16::from_le_bytes([data[4], data[5]]);
    if version != ARCHIVE_VERSION {
        return Err(ArchiveError::VersionMismatch(version));
    }
    let point = LeakPoint::from_code(data[6])
        .ok_or_else(|| ArchiveError::Invalid(format!("leak point code {}", data[6])))?;
    let trace_len = u32::from_le_bytes(data[7..11].try_into().unwrap()) as usize;
    let count = u32::from_le_bytes(data[11..15].try_into().unwrap()) as usize;
    let record = 1 + 4 * trace_len;
    let body = &data[HEADER_LEN..];
    let needed = count
        .checked_mul(record)
        .ok_or_else(|| ArchiveError::Invalid("record count overflows".into()))?;
    if body.len() < needed {
        return Err(ArchiveError::TruncatedFile);
    }
    if body.len() > needed {
        return Err(ArchiveError::Invalid(format!(
            "{} trailing bytes",
            body.len() - needed
        )));
    }
    let mut traces = Vec::with_capacity(count);
    for rec in body.chunks_exact(record.max(1)).take(count) {
        let samples: Vec<f32> = rec[1..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(ArchiveError::Invalid("non-finite sample".into()));
        }
        traces.push(Trace {
            samples,
            label: rec[0],
        });
    }
    Ok(TraceArchive {
        point,
        trace_len,
        traces,
    })
}

pub fn write_archive(path: &Path, archive: &TraceArchive) -> Result<(), ArchiveError> {
    fs::write(path, encode_archive(archive)?)?;
    Ok(())
}

pub fn read_archive(path: &Path) -> Result<TraceArchive, ArchiveError> {
    decode_archive(&fs::read(path)?)
}
