//! Little-endian primitives shared by the checkpoint and vocabulary formats.

use std::io::{Read, Write};

use ndarray::Array2;

use crate::error::{Error, Result};

pub(crate) struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    pub fn new(inner: W) -> Self {
        Self { inner }
    }

    pub fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.inner.write_all(b)?;
        Ok(())
    }

    pub fn u8(&mut self, v: u8) -> Result<()> {
        self.bytes(&[v])
    }

    pub fn u16(&mut self, v: u16) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn u128(&mut self, v: u128) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f64(&mut self, v: f64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn varint(&mut self, mut v: u64) -> Result<()> {
        loop {
            let byte = (v & 0x7f) as u8;
            v >>= 7;
            if v == 0 {
                return self.u8(byte);
            }
            self.u8(byte | 0x80)?;
        }
    }

    pub fn matrix(&mut self, m: &Array2<f64>) -> Result<()> {
        self.u64(m.nrows() as u64)?;
        self.u64(m.ncols() as u64)?;
        for v in m.iter() {
            self.f64(*v)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

pub(crate) struct Reader<R: Read> {
    inner: R,
    what: &'static str,
}

impl<R: Read> Reader<R> {
    pub fn new(inner: R, what: &'static str) -> Self {
        Self { inner, what }
    }

    pub fn err(&self, reason: impl Into<String>) -> Error {
        Error::format(self.what, reason)
    }

    pub fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                self.err("unexpected end of file")
            } else {
                Error::Io(e)
            }
        })?;
        Ok(buf)
    }

    pub fn vec(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| self.err("unexpected end of file"))?;
        Ok(buf)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes()?))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    pub fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.bytes()?))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    /// A length or count, bounded to reject corrupt headers early.
    pub fn len(&mut self, max: u64) -> Result<usize> {
        let v = self.u64()?;
        if v > max {
            return Err(self.err(format!("length {v} exceeds limit {max}")));
        }
        Ok(v as usize)
    }

    /// Varint-encoded length or count with the same bound check as [`len`](Self::len).
    pub fn varint_len(&mut self, max: u64) -> Result<usize> {
        let v = self.varint()?;
        if v > max {
            return Err(self.err(format!("length {v} exceeds limit {max}")));
        }
        Ok(v as usize)
    }

    pub fn varint(&mut self) -> Result<u64> {
        let mut v = 0u64;
        for shift in (0..64).step_by(7) {
            let b = self.u8()?;
            v |= ((b & 0x7f) as u64) << shift;
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(self.err("varint longer than 10 bytes"))
    }

    pub fn matrix(&mut self) -> Result<Array2<f64>> {
        let rows = self.len(1 << 24)?;
        let cols = self.len(1 << 24)?;
        if rows.saturating_mul(cols) > 1 << 28 {
            return Err(self.err("tensor too large"));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(self.f64()?);
        }
        Array2::from_shape_vec((rows, cols), data).map_err(|e| self.err(e.to_string()))
    }

    pub fn expect_eof(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe)? {
            0 => Ok(()),
            _ => Err(self.err("trailing bytes after end of data")),
        }
    }
}

/// Checks the magic bytes and returns the stored format version.
pub(crate) fn read_header<R: Read>(r: &mut Reader<R>, magic: &[u8; 8]) -> Result<u32> {
    let found: [u8; 8] = r.bytes()?;
    if &found != magic {
        return Err(r.err("bad magic bytes"));
    }
    r.u32()
}
