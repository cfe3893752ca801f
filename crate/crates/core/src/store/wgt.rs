//! WGT1 classifier head files.
//!
//! ```text
//! offset  size     field
//! 0       4        magic "WGT1"
//! 4       4        version (u32, = 1)
//! 8       8        c, classes (u64)
//! 16      8        n, features (u64)
//! 24      1        has_bias (0 or 1)
//! 25      4*c*n    W as f32, row-major (c x n)
//! ..      4*c      bias as f32, only if has_bias = 1
//! ```

use std::path::Path;

use super::{dim, push_f32s, write_atomic, Reader, FORMAT_VERSION};
use crate::error::{FormatError, Result};
use crate::linalg::Mat;
use crate::subspace::WeightHead;

pub const WGT_MAGIC: [u8; 4] = *b"WGT1";
pub const WGT_HEADER_LEN: usize = 25;

pub fn encode_wgt(head: &WeightHead) -> Vec<u8> {
    let (c, n) = (head.classes(), head.features());
    let mut out = Vec::with_capacity(WGT_HEADER_LEN + 4 * c * (n + 1));
    out.extend_from_slice(&WGT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(c as u64).to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.push(head.bias.is_some() as u8);
    push_f32s(&mut out, head.w.data());
    if let Some(b) = &head.bias {
        push_f32s(&mut out, b);
    }
    out
}

pub fn decode_wgt(bytes: &[u8]) -> Result<WeightHead> {
    let mut r = Reader::new(bytes);
    r.magic(WGT_MAGIC)?;
    r.version()?;
    let c = dim(r.u64()?)?;
    let n = dim(r.u64()?)?;
    let has_bias = r.flag()?;
    let count = c.checked_mul(n).ok_or(FormatError::DimensionOverflow)?;
    let w = r.f32s(count, 0)?;
    let bias = if has_bias {
        Some(r.f32s(c, count)?)
    } else {
        None
    };
    r.finish()?;
    WeightHead::new(Mat::new(c, n, w)?, bias)
}

pub fn read_wgt(path: &Path) -> Result<WeightHead> {
    decode_wgt(&std::fs::read(path)?)
}

pub fn write_wgt(path: &Path, head: &WeightHead) -> Result<()> {
    write_atomic(path, &encode_wgt(head))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn round_trip_with_bias() {
        let head = WeightHead::new(
            Mat::new(2, 2, vec![1.0, -0.5, 0.25, 2.0]).unwrap(),
            Some(vec![0.125, -3.0]),
        )
        .unwrap();
        let bytes = encode_wgt(&head);
        assert_eq!(bytes.len(), WGT_HEADER_LEN + 16 + 8);
        let back = decode_wgt(&bytes).unwrap();
        assert_eq!(back, head);
        assert_eq!(encode_wgt(&back), bytes);
    }

    #[test]
    fn non_finite_bias_index_continues_after_weights() {
        let head =
            WeightHead::new(Mat::new(1, 2, vec![1.0, 2.0]).unwrap(), Some(vec![0.0])).unwrap();
        let mut bytes = encode_wgt(&head);
        let at = WGT_HEADER_LEN + 8;
        bytes[at..at + 4].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(
            decode_wgt(&bytes),
            Err(Error::Format(FormatError::NonFinitePayload { index: 2 }))
        ));
    }

    #[test]
    fn wrong_magic() {
        let head = WeightHead::new(Mat::new(1, 1, vec![1.0]).unwrap(), None).unwrap();
        let mut bytes = encode_wgt(&head);
        bytes[3] = b'2';
        assert!(matches!(
            decode_wgt(&bytes),
            Err(Error::Format(FormatError::BadMagic { .. }))
        ));
    }
}
