//! The binary envelope shared by checkpoints, reference sidecars and
//! detector files.
//!
//! ```text
//! "NMDK"  u32 version  [u8; 4] file tag  records...
//! ```
//!
//! All integers and floats are little-endian. A tensor is a `u32` rank, a
//! `u64` per dimension, then `f64` values in row-major order. Strings are a
//! `u32` byte length and UTF-8 bytes.

use nmd_core::Tensor;

pub const MAGIC: &[u8; 4] = b"NMDK";
pub const VERSION: u32 = 1;

pub type Tag = [u8; 4];
pub const TAG_CHECKPOINT: Tag = *b"CKPT";
pub const TAG_REFS: Tag = *b"REFS";
pub const TAG_DETECTOR: Tag = *b"DETR";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecodeError {
    BadMagic,
    Version(u32),
    WrongTag { expected: Tag, found: Tag },
    Truncated { needed: usize, at: usize },
    Invalid(String),
}

impl std::fmt::Display for DecodeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = |t: &Tag| String::from_utf8_lossy(t).into_owned();
        match self {
            DecodeError::BadMagic => write!(f, "bad magic"),
            DecodeError::Version(v) => write!(f, "unsupported format version {v} (expected {VERSION})"),
            DecodeError::WrongTag { expected, found } => write!(f, "expected a {} file, found {}", tag(expected), tag(found)),
            DecodeError::Truncated { needed, at } => write!(f, "truncated file: needed {needed} more bytes at offset {at}"),
            DecodeError::Invalid(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for DecodeError {}

pub type DecodeResult<T> = std::result::Result<T, DecodeError>;

#[derive(Debug, Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(tag: Tag) -> Self {
        let mut w = Writer { buf: Vec::new() };
        w.buf.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.tag(tag);
        w
    }

    pub fn tag(&mut self, t: Tag) {
        self.buf.extend_from_slice(&t);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        v.iter().for_each(|&x| self.f64(x));
    }

    pub fn usizes(&mut self, v: &[usize]) {
        self.u64(v.len() as u64);
        v.iter().for_each(|&x| self.usize(x));
    }

    pub fn tensor(&mut self, t: &Tensor) {
        self.u32(t.ndim() as u32);
        t.shape().iter().for_each(|&d| self.usize(d));
        t.data().iter().for_each(|&x| self.f64(x));
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug)]
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks magic, version and file tag.
    pub fn open(buf: &'a [u8], expected: Tag) -> DecodeResult<Self> {
        if buf.len() < 4 || &buf[..4] != MAGIC {
            return Err(DecodeError::BadMagic);
        }
        let mut r = Reader { buf, pos: 4 };
        let v = r.u32()?;
        if v != VERSION {
            return Err(DecodeError::Version(v));
        }
        let found = r.tag()?;
        if found != expected {
            return Err(DecodeError::WrongTag { expected, found });
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> DecodeResult<&'a [u8]> {
        let rest = self.buf.len() - self.pos;
        if n > rest {
            return Err(DecodeError::Truncated { needed: n - rest, at: self.pos });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> DecodeResult<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("slice of length N"))
    }

    pub fn tag(&mut self) -> DecodeResult<Tag> {
        self.array()
    }

    pub fn expect_tag(&mut self, expected: Tag) -> DecodeResult<()> {
        let found = self.tag()?;
        if found != expected {
            return Err(DecodeError::Invalid(format!(
                "expected record {}, found {}",
                String::from_utf8_lossy(&expected),
                String::from_utf8_lossy(&found)
            )));
        }
        Ok(())
    }

    pub fn u8(&mut self) -> DecodeResult<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> DecodeResult<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> DecodeResult<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn usize(&mut self) -> DecodeResult<usize> {
        usize::try_from(self.u64()?).map_err(|_| DecodeError::Invalid("size does not fit in usize".into()))
    }

    pub fn f64(&mut self) -> DecodeResult<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    pub fn str(&mut self) -> DecodeResult<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| DecodeError::Invalid("string is not UTF-8".into()))
    }

    /// Element count whose payload of `width` bytes each must still fit.
    fn count(&mut self, width: usize) -> DecodeResult<usize> {
        let n = self.usize()?;
        let rest = self.buf.len() - self.pos;
        match n.checked_mul(width) {
            Some(bytes) if bytes <= rest => Ok(n),
            Some(bytes) => Err(DecodeError::Truncated { needed: bytes - rest, at: self.pos }),
            None => Err(DecodeError::Invalid("element count overflows".into())),
        }
    }

    pub fn f64s(&mut self) -> DecodeResult<Vec<f64>> {
        let n = self.count(8)?;
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn usizes(&mut self) -> DecodeResult<Vec<usize>> {
        let n = self.count(8)?;
        (0..n).map(|_| self.usize()).collect()
    }

    pub fn tensor(&mut self) -> DecodeResult<Tensor> {
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(DecodeError::Invalid(format!("tensor rank {rank} is implausible")));
        }
        let shape: Vec<usize> = (0..rank).map(|_| self.usize()).collect::<DecodeResult<_>>()?;
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| DecodeError::Invalid("tensor size overflows".into()))?;
        let rest = self.buf.len() - self.pos;
        if len.saturating_mul(8) > rest {
            return Err(DecodeError::Truncated { needed: len * 8 - rest, at: self.pos });
        }
        let data = (0..len).map(|_| self.f64()).collect::<DecodeResult<Vec<_>>>()?;
        Tensor::from_vec(&shape, data).map_err(|e| DecodeError::Invalid(e.to_string()))
    }

    pub fn finish(self) -> DecodeResult<()> {
        if self.pos != self.buf.len() {
            return Err(DecodeError::Invalid(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitives_round_trip() {
        let mut w = Writer::new(TAG_REFS);
        w.u8(7);
        w.f64(-0.0);
        w.str("layer");
        w.f64s(&[1.5, f64::MIN_POSITIVE]);
        w.tensor(&Tensor::from_vec(&[2, 1], vec![3.0, 4.0]).unwrap());
        let bytes = w.finish();
        let mut r = Reader::open(&bytes, TAG_REFS).unwrap();
        assert_eq!(r.u8().unwrap(), 7);
        assert_eq!(r.f64().unwrap().to_bits(), (-0.0f64).to_bits());
        assert_eq!(r.str().unwrap(), "layer");
        assert_eq!(r.f64s().unwrap(), vec![1.5, f64::MIN_POSITIVE]);
        assert_eq!(r.tensor().unwrap().shape(), &[2, 1]);
        r.finish().unwrap();
    }

    #[test]
    fn header_checks() {
        let bytes = Writer::new(TAG_DETECTOR).finish();
        assert_eq!(Reader::open(b"NMDX\x01\0\0\0DETR", TAG_DETECTOR).unwrap_err(), DecodeError::BadMagic);
        assert_eq!(Reader::open(b"NMDK\x02\0\0\0DETR", TAG_DETECTOR).unwrap_err(), DecodeError::Version(2));
        assert!(matches!(Reader::open(&bytes, TAG_REFS), Err(DecodeError::WrongTag { .. })));
        assert!(matches!(Reader::open(&bytes[..9], TAG_DETECTOR), Err(DecodeError::Truncated { .. })));
    }

    #[test]
    fn huge_counts_are_truncation_not_allocation() {
        let mut w = Writer::new(TAG_REFS);
        w.u64(u64::MAX / 16);
        let bytes = w.finish();
        let mut r = Reader::open(&bytes, TAG_REFS).unwrap();
        assert!(matches!(r.f64s(), Err(DecodeError::Truncated { .. })));
    }
}
