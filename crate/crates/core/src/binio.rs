//! Little-endian primitives shared by the binary file formats.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub(crate) struct LeReader<R> {
    inner: R,
    what: &'static str,
}

impl<R: Read> LeReader<R> {
    pub fn new(inner: R, what: &'static str) -> Self {
        LeReader { inner, what }
    }

    pub fn bytes<const N: usize>(&mut self, field: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.fill(&mut buf, field)?;
        Ok(buf)
    }

    pub fn fill(&mut self, buf: &mut [u8], field: &str) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Truncated(format!("{} ended inside {field}", self.what)),
            _ => Error::Truncated(format!("{}: {e} while reading {field}", self.what)),
        })
    }

    pub fn u8(&mut self, field: &str) -> Result<u8> {
        Ok(self.bytes::<1>(field)?[0])
    }

    pub fn u16(&mut self, field: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes(field)?))
    }

    pub fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(field)?))
    }

    pub fn f64(&mut self, field: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(field)?))
    }

    /// `true` when the stream is exhausted; otherwise the next byte.
    pub fn peek_eof(&mut self) -> Result<Option<u8>> {
        let mut b = [0u8; 1];
        loop {
            match self.inner.read(&mut b) {
                Ok(0) => return Ok(None),
                Ok(_) => return Ok(Some(b[0])),
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(Error::Truncated(format!("{}: {e}", self.what))),
            }
        }
    }
}

pub(crate) fn write_all<W: Write>(w: &mut W, bytes: &[u8]) -> Result<()> {
    w.write_all(bytes).map_err(|e| Error::io("<stream>", e))
}
