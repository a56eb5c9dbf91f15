//! `LRSV` tensor container.
//!
//! ```text
//! magic    4 bytes  "LRSV"
//! version  u16      1
//! dtype    u8       0 = f32
//! rank     u8
//! dims     u64 x rank
//! payload  f32 x prod(dims), row-major
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::tensor::Tensor;

pub const TENSOR_MAGIC: [u8; 4] = *b"LRSV";
pub const TENSOR_VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 0;

/// Upper bound on elements accepted by the reader (16 GiB of f32).
const MAX_ELEMENTS: u64 = 1 << 32;

/// Little-endian cursor over a byte slice.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], FormatError> {
        if self.remaining() < n {
            return Err(FormatError::TruncatedHeader);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> std::result::Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> std::result::Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> std::result::Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> std::result::Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn magic(&mut self, expected: [u8; 4]) -> std::result::Result<(), FormatError> {
        let found: [u8; 4] = match self.take(4) {
            Ok(b) => b.try_into().unwrap(),
            Err(_) => {
                let mut found = [0u8; 4];
                let rest = &self.buf[self.pos..];
                found[..rest.len()].copy_from_slice(rest);
                if rest != &expected[..rest.len()] {
                    return Err(FormatError::BadMagic { expected, found });
                }
                return Err(FormatError::TruncatedHeader);
            }
        };
        if found != expected {
            return Err(FormatError::BadMagic { expected, found });
        }
        Ok(())
    }

    pub(crate) fn version(&mut self, supported: u16) -> std::result::Result<u16, FormatError> {
        let v = self.u16()?;
        if v == 0 || v > supported {
            return Err(FormatError::UnsupportedVersion { found: v, supported });
        }
        Ok(v)
    }

    /// Rank byte, dims and the f32 payload that follows them.
    pub(crate) fn shaped_payload(&mut self) -> std::result::Result<(Vec<usize>, Vec<f32>), FormatError> {
        let rank = self.u8()? as usize;
        let dims: Vec<u64> = (0..rank).map(|_| self.u64()).collect::<std::result::Result<_, _>>()?;
        let mut count: u64 = 1;
        for &d in &dims {
            count = match count.checked_mul(d) {
                Some(c) if c <= MAX_ELEMENTS => c,
                _ => return Err(FormatError::DimOverflow(dims)),
            };
        }
        if dims.contains(&0) {
            return Err(FormatError::EmptyDim(dims.iter().map(|&d| d as usize).collect()));
        }
        let expected = count * 4;
        if (self.remaining() as u64) < expected {
            return Err(FormatError::TruncatedPayload {
                expected,
                found: self.remaining() as u64,
            });
        }
        let bytes = self.take(expected as usize)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((dims.iter().map(|&d| d as usize).collect(), data))
    }
}

/// Appends rank, dims and payload. Rejects zero dims and non-finite values.
pub(crate) fn put_shaped_payload(
    out: &mut Vec<u8>,
    shape: &[usize],
    data: &[f32],
) -> std::result::Result<(), FormatError> {
    if shape.contains(&0) {
        return Err(FormatError::EmptyDim(shape.to_vec()));
    }
    if shape.len() > u8::MAX as usize || shape.iter().product::<usize>() != data.len() {
        return Err(FormatError::DimOverflow(shape.iter().map(|&d| d as u64).collect()));
    }
    if let Some(i) = data.iter().position(|x| !x.is_finite()) {
        return Err(FormatError::NonFinite(i));
    }
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.reserve(data.len() * 4);
    for x in data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(())
}

/// Encodes raw `(shape, data)`.
pub fn encode_raw(shape: &[usize], data: &[f32]) -> std::result::Result<Vec<u8>, FormatError> {
    let mut out = Vec::with_capacity(16 + 8 * shape.len() + 4 * data.len());
    out.extend_from_slice(&TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    out.push(DTYPE_F32);
    put_shaped_payload(&mut out, shape, data)?;
    Ok(out)
}

pub fn encode_tensor(t: &Tensor) -> std::result::Result<Vec<u8>, FormatError> {
    encode_raw(t.shape(), t.data())
}

pub fn decode_tensor(bytes: &[u8]) -> std::result::Result<Tensor, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(TENSOR_MAGIC)?;
    r.version(TENSOR_VERSION)?;
    let dtype = r.u8()?;
    if dtype != DTYPE_F32 {
        return Err(FormatError::UnknownDtype(dtype));
    }
    let (shape, data) = r.shaped_payload()?;
    if r.remaining() > 0 {
        return Err(FormatError::TrailingBytes(r.remaining() as u64));
    }
    Ok(Tensor::new(shape, data).expect("validated shape"))
}

/// Writes atomically: a temporary sibling is renamed over `path`.
pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("partial");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    write_bytes(path.as_ref(), &encode_tensor(t)?)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    Ok(decode_tensor(&read_bytes(path.as_ref())?)?)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn round_trip_frame() {
        let t = Tensor::from_fn(&[12, 16, 3], |i| (i as f32 * 0.37).sin());
        let bytes = encode_tensor(&t).unwrap();
        assert_eq!(bytes.len(), 4 + 2 + 1 + 1 + 3 * 8 + 12 * 16 * 3 * 4);
        assert_eq!(&bytes[..4], b"LRSV");
        let back = decode_tensor(&bytes).unwrap();
        assert!(back.bit_eq(&t));
        assert_eq!(encode_tensor(&back).unwrap(), bytes);
    }

    #[test]
    fn scalar_round_trip() {
        let t = Tensor::scalar(-0.0f32);
        assert!(decode_tensor(&encode_tensor(&t).unwrap()).unwrap().bit_eq(&t));
    }

    #[test]
    fn exact_header_layout() {
        let t = Tensor::new(vec![2], vec![1.0, -2.0]).unwrap();
        let bytes = encode_tensor(&t).unwrap();
        let mut want = b"LRSV".to_vec();
        want.extend_from_slice(&[1, 0, 0, 1]);
        want.extend_from_slice(&2u64.to_le_bytes());
        want.extend_from_slice(&1.0f32.to_le_bytes());
        want.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(bytes, want);
    }

    #[test]
    fn typed_errors() {
        let t = Tensor::from_fn(&[4, 5], |i| i as f32);
        let good = encode_tensor(&t).unwrap();

        let cut = &good[..good.len() - 3];
        assert!(matches!(
            decode_tensor(cut),
            Err(FormatError::TruncatedPayload { expected: 80, found: 77 })
        ));
        assert_eq!(decode_tensor(&good[..10]), Err(FormatError::TruncatedHeader));
        assert_eq!(decode_tensor(&good[..2]), Err(FormatError::TruncatedHeader));

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_tensor(&bad), Err(FormatError::BadMagic { .. })));

        let mut future = good.clone();
        future[4] = 2;
        assert!(matches!(decode_tensor(&future), Err(FormatError::UnsupportedVersion { found: 2, .. })));

        let mut dtype = good.clone();
        dtype[6] = 7;
        assert_eq!(decode_tensor(&dtype), Err(FormatError::UnknownDtype(7)));

        let mut huge = good[..8].to_vec();
        huge.extend_from_slice(&u64::MAX.to_le_bytes());
        huge.extend_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(decode_tensor(&huge), Err(FormatError::DimOverflow(_))));

        let mut extra = good.clone();
        extra.push(0);
        assert_eq!(decode_tensor(&extra), Err(FormatError::TrailingBytes(1)));

        let mut zero = good[..8].to_vec();
        zero.extend_from_slice(&4u64.to_le_bytes());
        zero.extend_from_slice(&0u64.to_le_bytes());
        assert!(matches!(decode_tensor(&zero), Err(FormatError::EmptyDim(_))));
    }

    #[test]
    fn write_rejects_empty_dim_and_nan() {
        assert_eq!(encode_raw(&[0], &[]), Err(FormatError::EmptyDim(vec![0])));
        let t = Tensor::from_vec(vec![1.0, f32::NAN]);
        assert_eq!(encode_tensor(&t), Err(FormatError::NonFinite(1)));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/x.lrsv");
        let t = Tensor::from_fn(&[3, 12, 16, 3], |i| i as f32 / 7.0);
        write_tensor(&p, &t).unwrap();
        assert!(read_tensor(&p).unwrap().bit_eq(&t));
        assert!(matches!(read_tensor(dir.path().join("missing")), Err(Error::Io { .. })));
    }

    proptest! {
        #[test]
        fn prop_round_trip_bit_exact(dims in prop::collection::vec(1usize..5, 0..4), seed in any::<u32>()) {
            let n: usize = dims.iter().product();
            let data: Vec<f32> = (0..n).map(|i| f32::from_bits((seed.wrapping_mul(2654435761).wrapping_add(i as u32 * 97)) & 0x7f7f_ffff)).collect();
            let t = Tensor::new(dims, data).unwrap();
            let back = decode_tensor(&encode_tensor(&t).unwrap()).unwrap();
            prop_assert!(back.bit_eq(&t));
        }

        #[test]
        fn prop_corruption_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..64), cut in 0usize..64) {
            let _ = decode_tensor(&bytes);
            let t = Tensor::from_fn(&[2, 3], |i| i as f32);
            let good = encode_tensor(&t).unwrap();
            let _ = decode_tensor(&good[..cut.min(good.len())]);
        }
    }
}
