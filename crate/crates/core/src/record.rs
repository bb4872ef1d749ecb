//! Versioned little-endian binary records for fitted models, codebooks and
//! feature matrices.
//!
//! Every record starts with the 4-byte magic `FLGR`, a 4-byte kind tag and
//! a `u32` version. Payload values are `u64` counts, length-prefixed UTF-8
//! strings and length-prefixed `f64` arrays (matrices carry rows and cols).
//! Values of any [`Real`] type are widened to `f64` on write.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::Real;

const MAGIC: &[u8; 4] = b"FLGR";

pub struct RecordWriter<W: Write> {
    w: W,
}

impl<W: Write> RecordWriter<W> {
    pub fn new(mut w: W, kind: &[u8; 4], version: u32) -> Result<Self> {
        w.write_all(MAGIC)?;
        w.write_all(kind)?;
        w.write_u32::<LittleEndian>(version)?;
        Ok(Self { w })
    }

    pub fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.w.write_u64::<LittleEndian>(v)?)
    }

    pub fn f64(&mut self, v: f64) -> Result<()> {
        Ok(self.w.write_f64::<LittleEndian>(v)?)
    }

    pub fn str(&mut self, s: &str) -> Result<()> {
        self.u64(s.len() as u64)?;
        Ok(self.w.write_all(s.as_bytes())?)
    }

    pub fn vector<T: Real>(&mut self, v: ArrayView1<'_, T>) -> Result<()> {
        self.u64(v.len() as u64)?;
        for x in v.iter() {
            self.f64(x.f64())?;
        }
        Ok(())
    }

    pub fn matrix<T: Real>(&mut self, m: ArrayView2<'_, T>) -> Result<()> {
        self.u64(m.nrows() as u64)?;
        self.u64(m.ncols() as u64)?;
        for x in m.iter() {
            self.f64(x.f64())?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.w.flush()?;
        Ok(self.w)
    }
}

pub struct RecordReader<R: Read> {
    r: R,
    pub version: u32,
}

impl<R: Read> RecordReader<R> {
    /// Checks magic and kind; accepts versions up to `max_version`.
    pub fn open(mut r: R, kind: &[u8; 4], max_version: u32) -> Result<Self> {
        let mut head = [0u8; 8];
        r.read_exact(&mut head)?;
        if &head[..4] != MAGIC {
            return Err(Error::Format("bad record magic".into()));
        }
        if &head[4..] != kind {
            return Err(Error::Format(format!(
                "record kind `{}` where `{}` was expected",
                String::from_utf8_lossy(&head[4..]),
                String::from_utf8_lossy(kind)
            )));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version == 0 || version > max_version {
            return Err(Error::Format(format!("unsupported record version {version}")));
        }
        Ok(Self { r, version })
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(self.r.read_u64::<LittleEndian>()?)
    }

    pub fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("count overflows usize".into()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(self.r.read_f64::<LittleEndian>()?)
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.bounded_len(1)?;
        let mut buf = vec![0u8; n];
        self.r.read_exact(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
    }

    fn bounded_len(&mut self, elem: usize) -> Result<usize> {
        let n = self.usize()?;
        // Guards allocation against corrupt headers.
        if n.saturating_mul(elem) > (1usize << 36) {
            return Err(Error::Format(format!("implausible length {n}")));
        }
        Ok(n)
    }

    pub fn vector<T: Real>(&mut self) -> Result<Array1<T>> {
        let n = self.bounded_len(8)?;
        let mut buf = vec![0f64; n];
        self.r.read_f64_into::<LittleEndian>(&mut buf)?;
        Ok(buf.into_iter().map(T::of).collect())
    }

    pub fn matrix<T: Real>(&mut self) -> Result<Array2<T>> {
        let rows = self.usize()?;
        let cols = self.usize()?;
        if rows.saturating_mul(cols).saturating_mul(8) > (1usize << 36) {
            return Err(Error::Format(format!("implausible matrix {rows}x{cols}")));
        }
        let mut buf = vec![0f64; rows * cols];
        self.r.read_f64_into::<LittleEndian>(&mut buf)?;
        Array2::from_shape_vec((rows, cols), buf.into_iter().map(T::of).collect())
            .map_err(|e| Error::Format(e.to_string()))
    }
}
