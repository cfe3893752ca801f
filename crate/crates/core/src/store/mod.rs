//! On-disk formats.
//!
//! * ACTB: activation banks (`f32` payload, optional `u32` labels).
//! * WGT1: linear heads (`f32` weights, optional bias).
//! * Run configs: flat `key=value` text.
//!
//! All binary integers and floats are little-endian. Layouts are documented
//! byte for byte in `docs/FORMATS.md`.

pub mod actb;
pub mod config;
pub mod wgt;

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{FormatError, Result};

pub use actb::{decode_actb, encode_actb, read_actb, write_actb};
pub use wgt::{decode_wgt, encode_wgt, read_wgt, write_wgt};

pub const FORMAT_VERSION: u32 = 1;

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_string());
    let tmp = path.with_file_name(format!(".{file_name}.tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    if let Err(e) = fs::rename(&tmp, path) {
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(())
}

/// Bounds-checked little-endian cursor. Every read reports the offset it
/// started at when the input runs out.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self
            .pos
            .checked_add(n)
            .ok_or(FormatError::DimensionOverflow)?;
        if end > self.buf.len() {
            return Err(FormatError::Truncated { offset: self.pos });
        }
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn magic(&mut self, expected: [u8; 4]) -> Result<(), FormatError> {
        let got = self.take(4)?;
        let found = [got[0], got[1], got[2], got[3]];
        if found != expected {
            return Err(FormatError::BadMagic { found, expected });
        }
        Ok(())
    }

    pub(crate) fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn flag(&mut self) -> Result<bool, FormatError> {
        let offset = self.pos;
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            value => Err(FormatError::BadFlag { offset, value }),
        }
    }

    pub(crate) fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn version(&mut self) -> Result<(), FormatError> {
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return Err(FormatError::BadVersion(v));
        }
        Ok(())
    }

    /// Reads `count` f32 values, rejecting non-finite ones. `first_index` is
    /// the element index reported for errors.
    pub(crate) fn f32s(
        &mut self,
        count: usize,
        first_index: usize,
    ) -> Result<Vec<f64>, FormatError> {
        let bytes = count.checked_mul(4).ok_or(FormatError::DimensionOverflow)?;
        let raw = self.take(bytes)?;
        raw.chunks_exact(4)
            .enumerate()
            .map(|(i, c)| {
                let v = f32::from_le_bytes(c.try_into().unwrap());
                if v.is_finite() {
                    Ok(v as f64)
                } else {
                    Err(FormatError::NonFinitePayload {
                        index: first_index + i,
                    })
                }
            })
            .collect()
    }

    pub(crate) fn u32s(&mut self, count: usize) -> Result<Vec<u32>, FormatError> {
        let bytes = count.checked_mul(4).ok_or(FormatError::DimensionOverflow)?;
        let raw = self.take(bytes)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn finish(&self) -> Result<(), FormatError> {
        if self.pos != self.buf.len() {
            return Err(FormatError::TrailingData { offset: self.pos });
        }
        Ok(())
    }
}

pub(crate) fn dim(v: u64) -> Result<usize, FormatError> {
    usize::try_from(v).map_err(|_| FormatError::DimensionOverflow)
}

pub(crate) fn push_f32s(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}
