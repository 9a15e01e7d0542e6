//! CRC-64 (XZ polynomial) used for content checksums and file trailers.

use crc::{Crc, Digest, CRC_64_XZ};

pub const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

pub fn crc64(bytes: &[u8]) -> u64 {
    CRC64.checksum(bytes)
}

pub fn digest() -> Digest<'static, u64> {
    CRC64.digest()
}
