//! Little-endian cursor helpers for the binary file formats.

use crate::checksum::crc64;
use crate::error::{Error, Result};

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(Error::Truncated(self.what))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
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

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn expect_magic(&mut self, magic: &'static str) -> Result<()> {
        if self.take(magic.len())? != magic.as_bytes() {
            return Err(Error::BadMagic { what: self.what, expected: magic });
        }
        Ok(())
    }

    /// After the body has been parsed, checks that exactly the CRC-64 trailer
    /// remains and that it matches everything before it.
    pub fn finish_with_crc(mut self) -> Result<()> {
        let body_end = self.pos;
        if self.remaining() < 8 {
            return Err(Error::Truncated(self.what));
        }
        let stored = self.u64()?;
        let computed = crc64(&self.buf[..body_end]);
        if self.remaining() != 0 || stored != computed {
            return Err(Error::Checksum { what: self.what, stored, computed });
        }
        Ok(())
    }
}

/// Appends the CRC-64 trailer of `buf` to itself.
pub(crate) fn seal(buf: &mut Vec<u8>) {
    let crc = crc64(buf);
    buf.extend_from_slice(&crc.to_le_bytes());
}
