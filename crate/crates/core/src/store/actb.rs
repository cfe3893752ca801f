//! ACTB activation bank files.
//!
//! ```text
//! offset  size        field
//! 0       4           magic "ACTB"
//! 4       4           version (u32, = 1)
//! 8       8           rows (u64)
//! 16      8           cols (u64)
//! 24      1           has_labels (0 or 1)
//! 25      4*rows*cols f32 payload, row-major
//! ..      4*rows      u32 labels, only if has_labels = 1
//! ```

use std::path::Path;

use super::{dim, push_f32s, write_atomic, Reader, FORMAT_VERSION};
use crate::bank::{ActivationBank, BankMeta};
use crate::error::{FormatError, Result};
use crate::linalg::Mat;

pub const ACTB_MAGIC: [u8; 4] = *b"ACTB";
pub const ACTB_HEADER_LEN: usize = 25;

pub fn encode_actb(bank: &ActivationBank) -> Vec<u8> {
    let (rows, cols) = (bank.rows(), bank.cols());
    let labels = bank.labels();
    let mut out =
        Vec::with_capacity(ACTB_HEADER_LEN + 4 * rows * cols + labels.map_or(0, |l| 4 * l.len()));
    out.extend_from_slice(&ACTB_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(rows as u64).to_le_bytes());
    out.extend_from_slice(&(cols as u64).to_le_bytes());
    out.push(labels.is_some() as u8);
    push_f32s(&mut out, bank.features().data());
    if let Some(labels) = labels {
        for l in labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    out
}

pub fn decode_actb(bytes: &[u8]) -> Result<ActivationBank> {
    let mut r = Reader::new(bytes);
    r.magic(ACTB_MAGIC)?;
    r.version()?;
    let rows = dim(r.u64()?)?;
    let cols = dim(r.u64()?)?;
    let has_labels = r.flag()?;
    let count = rows
        .checked_mul(cols)
        .ok_or(FormatError::DimensionOverflow)?;
    let data = r.f32s(count, 0)?;
    let labels = if has_labels {
        Some(r.u32s(rows)?)
    } else {
        None
    };
    r.finish()?;
    let features = Mat::new(rows, cols, data)?;
    ActivationBank::new(features, labels)
}

pub fn read_actb(path: &Path) -> Result<ActivationBank> {
    let bytes = std::fs::read(path)?;
    Ok(decode_actb(&bytes)?.with_meta(BankMeta {
        source: path.display().to_string(),
        ..BankMeta::default()
    }))
}

pub fn write_actb(path: &Path, bank: &ActivationBank) -> Result<()> {
    write_atomic(path, &encode_actb(bank))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn sample() -> ActivationBank {
        let m = Mat::new(2, 3, vec![0.5, -1.25, 3.0, 1e-3, 0.0, 7.75]).unwrap();
        ActivationBank::new(m, Some(vec![4, 0])).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let bytes = encode_actb(&sample());
        assert_eq!(bytes.len(), ACTB_HEADER_LEN + 24 + 8);
        let back = decode_actb(&bytes).unwrap();
        assert_eq!(encode_actb(&back), bytes);
        assert_eq!(back.labels(), Some(&[4u32, 0][..]));
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode_actb(&sample());
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            decode_actb(&bytes),
            Err(Error::Format(FormatError::BadMagic { .. }))
        ));
        let mut bytes = encode_actb(&sample());
        bytes[4] = 2;
        assert!(matches!(
            decode_actb(&bytes),
            Err(Error::Format(FormatError::BadVersion(2)))
        ));
    }

    #[test]
    fn oversized_header_is_truncated_at_payload() {
        let mut bytes = encode_actb(&sample());
        bytes[8..16].copy_from_slice(&1000u64.to_le_bytes());
        match decode_actb(&bytes) {
            Err(Error::Format(FormatError::Truncated { offset })) => {
                assert_eq!(offset, ACTB_HEADER_LEN)
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_payload_and_trailing_bytes() {
        let mut bytes = encode_actb(&sample());
        let at = ACTB_HEADER_LEN + 4 * 4;
        bytes[at..at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            decode_actb(&bytes),
            Err(Error::Format(FormatError::NonFinitePayload { index: 4 }))
        ));
        let mut bytes = encode_actb(&sample());
        bytes.push(0);
        assert!(matches!(
            decode_actb(&bytes),
            Err(Error::Format(FormatError::TrailingData { .. }))
        ));
        let mut bytes = encode_actb(&sample());
        bytes[24] = 7;
        assert!(matches!(
            decode_actb(&bytes),
            Err(Error::Format(FormatError::BadFlag {
                offset: 24,
                value: 7
            }))
        ));
    }

    #[test]
    fn huge_dimensions_do_not_allocate() {
        let mut bytes = encode_actb(&sample());
        bytes[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
        bytes[16..24].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(decode_actb(&bytes).is_err());
    }
}
