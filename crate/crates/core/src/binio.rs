//! Little-endian primitives with byte-offset tracking, shared by the binary
//! container formats (KNND dumps, KNNS datastores, KNNI indexes).

use std::io::{ErrorKind, Read, Write};

use crate::error::{Error, Result};

/// Upper bound on a single allocation driven by a length read from disk.
const CHUNK: usize = 1 << 20;

pub(crate) struct ByteWriter<W> {
    inner: W,
    offset: u64,
}

impl<W: Write> ByteWriter<W> {
    pub fn new(inner: W) -> Self {
        Self { inner, offset: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }

    pub fn bytes(&mut self, buf: &[u8]) -> Result<()> {
        self.inner.write_all(buf).map_err(|source| Error::Io {
            offset: self.offset,
            source,
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    pub fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f64(&mut self, v: f64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    /// u32 length prefix followed by the UTF-8 bytes.
    pub fn string(&mut self, s: &str) -> Result<()> {
        let len = u32::try_from(s.len())
            .map_err(|_| Error::invalid(format!("string of {} bytes is too long", s.len())))?;
        self.u32(len)?;
        self.bytes(s.as_bytes())
    }

    pub fn f32s(&mut self, values: &[f32]) -> Result<()> {
        let mut buf = Vec::with_capacity(values.len().min(CHUNK) * 4);
        for chunk in values.chunks(CHUNK) {
            buf.clear();
            for v in chunk {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            self.bytes(&buf)?;
        }
        Ok(())
    }

    pub fn u32s(&mut self, values: &[u32]) -> Result<()> {
        let mut buf = Vec::with_capacity(values.len().min(CHUNK) * 4);
        for chunk in values.chunks(CHUNK) {
            buf.clear();
            for v in chunk {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            self.bytes(&buf)?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush().map_err(|source| Error::Io {
            offset: self.offset,
            source,
        })
    }
}

pub(crate) struct ByteReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> ByteReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, offset: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }

    pub fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        let mut filled = 0;
        while filled < buf.len() {
            match self.inner.read(&mut buf[filled..]) {
                Ok(0) => {
                    return Err(Error::Truncated {
                        offset: self.offset + filled as u64,
                        needed: buf.len() - filled,
                    })
                }
                Ok(n) => filled += n,
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(source) => {
                    return Err(Error::Io {
                        offset: self.offset + filled as u64,
                        source,
                    })
                }
            }
        }
        self.offset += buf.len() as u64;
        Ok(())
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.fill(&mut buf)?;
        Ok(buf)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    /// Reads `len` bytes without trusting `len` for the initial allocation.
    pub fn byte_vec(&mut self, len: usize) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(len.min(CHUNK));
        let mut remaining = len;
        let mut buf = vec![0u8; len.min(CHUNK)];
        while remaining > 0 {
            let take = remaining.min(CHUNK);
            self.fill(&mut buf[..take])?;
            out.extend_from_slice(&buf[..take]);
            remaining -= take;
        }
        Ok(out)
    }

    pub fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let at = self.offset;
        let bytes = self.byte_vec(len)?;
        String::from_utf8(bytes).map_err(|e| Error::Corrupt {
            offset: at + e.utf8_error().valid_up_to() as u64,
            reason: "string is not valid UTF-8".into(),
        })
    }

    pub fn f32s(&mut self, count: usize) -> Result<Vec<f32>> {
        let len = count
            .checked_mul(4)
            .ok_or_else(|| self.corrupt(format!("float block of {count} entries overflows")))?;
        let bytes = self.byte_vec(len)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub fn u32s(&mut self, count: usize) -> Result<Vec<u32>> {
        let len = count
            .checked_mul(4)
            .ok_or_else(|| self.corrupt(format!("integer block of {count} entries overflows")))?;
        let bytes = self.byte_vec(len)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub fn corrupt(&self, reason: impl Into<String>) -> Error {
        Error::Corrupt {
            offset: self.offset,
            reason: reason.into(),
        }
    }

    /// Fails unless the source is exhausted.
    pub fn expect_eof(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        loop {
            match self.inner.read(&mut probe) {
                Ok(0) => return Ok(()),
                Ok(_) => return Err(self.corrupt("trailing bytes after end of container")),
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(source) => {
                    return Err(Error::Io {
                        offset: self.offset,
                        source,
                    })
                }
            }
        }
    }
}

/// Reads the 4-byte magic and the u32 version, checking both.
pub(crate) fn read_preamble<R: Read>(
    reader: &mut ByteReader<R>,
    magic: [u8; 4],
    version: u32,
) -> Result<()> {
    let found = reader.array::<4>()?;
    if found != magic {
        return Err(Error::BadMagic {
            expected: magic,
            found,
        });
    }
    let at = reader.offset();
    let found = reader.u32()?;
    if found != version {
        return Err(Error::VersionMismatch {
            offset: at,
            expected: version,
            found,
        });
    }
    Ok(())
}
