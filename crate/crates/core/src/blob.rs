//! Little-endian binary blobs.
//!
//! Tensor blob layout:
//!
//! ```text
//! b"MPFT" | rank: u32 | dims: rank x u64 | payload: prod(dims) x f64
//! ```
//!
//! Other blobs (datasets, PKCF payloads, checkpoints) are built from the same
//! primitives and embed tensor blobs verbatim.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const TENSOR_MAGIC: [u8; 4] = *b"MPFT";

#[derive(Debug, Default)]
pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn magic(&mut self, m: [u8; 4]) {
        self.buf.extend_from_slice(&m);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        self.u64(vs.len() as u64);
        for &v in vs {
            self.f64(v);
        }
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.buf.extend_from_slice(b);
    }

    pub fn tensor(&mut self, t: &Tensor) {
        self.magic(TENSOR_MAGIC);
        self.u32(t.shape().len() as u32);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        for &v in t.data() {
            self.f64(v);
        }
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(Error::Truncated { needed: n, available });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn expect_magic(&mut self, m: [u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != m {
            return Err(Error::BadMagic {
                expected: u32::from_be_bytes(m),
                found: u32::from_be_bytes(got.try_into().expect("4 bytes")),
            });
        }
        Ok(())
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Malformed("length overflows usize".into()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.usize()?;
        self.check_remaining(n, 8)?;
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.usize()?;
        self.take(n)
    }

    fn check_remaining(&self, count: usize, width: usize) -> Result<()> {
        let needed = count
            .checked_mul(width)
            .ok_or_else(|| Error::Malformed("length overflow".into()))?;
        let available = self.buf.len() - self.pos;
        if needed > available {
            return Err(Error::Truncated { needed, available });
        }
        Ok(())
    }

    pub fn tensor(&mut self) -> Result<Tensor> {
        self.expect_magic(TENSOR_MAGIC)?;
        let rank = self.u32()? as usize;
        self.check_remaining(rank, 8)?;
        let shape: Vec<usize> = (0..rank).map(|_| self.usize()).collect::<Result<_>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Malformed("tensor size overflow".into()))?;
        self.check_remaining(n, 8)?;
        let data = (0..n).map(|_| self.f64()).collect::<Result<_>>()?;
        Tensor::new(shape, data)
    }

    pub fn is_empty(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub fn finish(self) -> Result<()> {
        if !self.is_empty() {
            return Err(Error::Malformed(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.tensor(t);
    w.finish()
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let mut r = ByteReader::new(bytes);
    let t = r.tensor()?;
    r.finish()?;
    Ok(t)
}
