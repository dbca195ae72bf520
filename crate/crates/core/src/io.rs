//! Little-endian binary containers.
//!
//! Every container starts with a 4-byte magic and a `u16` version. The family:
//!
//! | magic  | payload                                                    |
//! |--------|------------------------------------------------------------|
//! | `BHFT` | `u32 N, u32 D, u32 C`, `N*D` f32 row-major, `N` u32 labels   |
//! | `BHPV` | `u32 P`, layout, `P` f64                                    |
//! | `BHSC` | `u32 S, u32 P`, layout, `S*P` f64, `S` f64 accept stats,      |
//! |        | `u32` divergences, f64 final step size, `u64` seed          |
//! | `BHGP` | `u32 P`, layout, `P` f64 mean, `P` f64 variance             |
//!
//! A layout is `u32` entry count followed by, per entry, `u32` name length,
//! UTF-8 name bytes, `u32` rank, and `rank` x `u32` dims. Offsets are implied
//! by entry order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Layout, TensorSpec};

pub const VERSION: u16 = 1;

#[derive(Default)]
pub(crate) struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn with_header(magic: &[u8; 4]) -> Self {
        let mut w = ByteWriter { buf: Vec::new() };
        w.buf.extend_from_slice(magic);
        w.u16(VERSION);
        w
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        self.buf.reserve(vs.len() * 8);
        for &v in vs {
            self.f64(v);
        }
    }

    pub fn len_u32(&mut self, n: usize) -> Result<()> {
        let n = u32::try_from(n).map_err(|_| Error::invalid("length exceeds u32 range"))?;
        self.u32(n);
        Ok(())
    }

    pub fn layout(&mut self, layout: &Layout) -> Result<()> {
        self.len_u32(layout.entries().len())?;
        for t in layout.entries() {
            self.len_u32(t.name.len())?;
            self.buf.extend_from_slice(t.name.as_bytes());
            self.len_u32(t.shape.len())?;
            for &d in &t.shape {
                self.len_u32(d)?;
            }
        }
        Ok(())
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
    origin: String,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8], origin: impl Into<String>) -> Self {
        ByteReader {
            buf,
            pos: 0,
            origin: origin.into(),
        }
    }

    pub fn err(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            path: self.origin.clone(),
            msg: msg.into(),
        }
    }

    pub fn origin(&self) -> &str {
        &self.origin
    }

    pub fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.buf.is_empty() {
            return Err(self.err("empty file"));
        }
        let got = self.take(4)?;
        if got != magic {
            return Err(self.err(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(magic)
            )));
        }
        let version = self.u16()?;
        if version != VERSION {
            return Err(self.err(format!("unsupported version {version}")));
        }
        Ok(())
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| self.err(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| self.err("size overflow"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn layout(&mut self) -> Result<Layout> {
        let n = self.u32()? as usize;
        let mut specs = Vec::with_capacity(n.min(64));
        for _ in 0..n {
            let len = self.u32()? as usize;
            let name = std::str::from_utf8(self.take(len)?)
                .map_err(|_| self.err("layout name is not UTF-8"))?
                .to_string();
            let rank = self.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(self.u32()? as usize);
            }
            specs.push(TensorSpec { name, shape });
        }
        Layout::new(specs).map_err(|e| self.err(e.to_string()))
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.err(format!(
                "{} trailing bytes after payload",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}
