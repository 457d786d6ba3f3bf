//! Little-endian cursor helpers shared by the binary file formats.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Byte cursor that reports the offset of the first failed read.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < len {
            return Err(Error::format(
                self.pos as u64,
                format!(
                    "truncated at offset {}: needed {} bytes, {} remain",
                    self.pos,
                    len,
                    self.buf.len() - self.pos
                ),
            ));
        }
        let out = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != expected {
            return Err(Error::format(
                0,
                format!(
                    "bad magic: expected {:?}, found {:?}",
                    String::from_utf8_lossy(expected),
                    String::from_utf8_lossy(got)
                ),
            ));
        }
        Ok(())
    }

    pub(crate) fn version(&mut self, expected: u32) -> Result<()> {
        let at = self.offset();
        let v = self.u32()?;
        if v != expected {
            return Err(Error::format(at, format!("unsupported version {v}")));
        }
        Ok(())
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    /// Reads a header count and checks it fits in memory-addressable size.
    pub(crate) fn count(&mut self) -> Result<usize> {
        let at = self.offset();
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::format(at, format!("count {v} too large")))
    }

    /// Reads `len` finite f32 values.
    pub(crate) fn finite_f32s(&mut self, len: usize) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(len.min(self.remaining() / 4 + 1));
        for _ in 0..len {
            let at = self.offset();
            let v = self.f32()?;
            if !v.is_finite() {
                return Err(Error::format(at, format!("non-finite value {v}")));
            }
            out.push(v);
        }
        Ok(out)
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::format(
                self.offset(),
                format!("{} trailing bytes", self.remaining()),
            ));
        }
        Ok(())
    }
}

#[derive(Default)]
pub(crate) struct Writer {
    pub(crate) buf: Vec<u8>,
}

impl Writer {
    pub(crate) fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    pub(crate) fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }
    pub(crate) fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    pub(crate) fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    pub(crate) fn f32s(&mut self, vs: &[f32]) {
        self.buf.reserve(vs.len() * 4);
        for v in vs {
            self.bytes(&v.to_le_bytes());
        }
    }
}
