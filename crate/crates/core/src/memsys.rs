//! Global and shared memory with per-lane masked loads and stores.

use thiserror::Error;

use crate::WARP_SIZE;

/// Default size of the global memory image.
pub const DEFAULT_GLOBAL_BYTES: u32 = 16 << 20;
/// Kernel parameters live at global address 0 and must end below this.
pub const PARAM_REGION_BYTES: u32 = 0x1000;
/// Shared memory per SM.
pub const SHARED_BYTES_PER_SM: u32 = 16384;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    Global,
    Shared,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MemError {
    #[error("UnalignedAccess lane {lane} addr {addr:#x}")]
    UnalignedAccess { lane: usize, addr: u32 },
    #[error("OutOfBounds lane {lane} addr {addr:#x}")]
    OutOfBounds { lane: usize, addr: u32 },
    #[error("ParamsTooLarge {len} bytes (limit {limit})")]
    ParamsTooLarge { len: usize, limit: u32 },
    #[error("OutOfBounds range {addr:#x}+{len}")]
    RangeOutOfBounds { addr: u32, len: usize },
}

fn check(region_words: usize, lane: usize, addr: u32) -> Result<usize, MemError> {
    if !addr.is_multiple_of(4) {
        return Err(MemError::UnalignedAccess { lane, addr });
    }
    let idx = (addr / 4) as usize;
    if idx >= region_words {
        return Err(MemError::OutOfBounds { lane, addr });
    }
    Ok(idx)
}

/// Reads one word per lane in `mask` into `dst`; other lanes keep their value.
pub fn load(region: &[u32], addrs: &[u32; WARP_SIZE], mask: u32, dst: &mut [u32; WARP_SIZE]) -> Result<(), MemError> {
    let mut bits = mask;
    while bits != 0 {
        let lane = bits.trailing_zeros() as usize;
        bits &= bits - 1;
        dst[lane] = region[check(region.len(), lane, addrs[lane])?];
    }
    Ok(())
}

/// Writes one word per lane in `mask`. All addresses are checked before any
/// write; lanes commit in ascending order, so the highest lane wins when two
/// lanes hit the same word.
pub fn store(
    region: &mut [u32],
    addrs: &[u32; WARP_SIZE],
    values: &[u32; WARP_SIZE],
    mask: u32,
) -> Result<(), MemError> {
    let mut bits = mask;
    while bits != 0 {
        let lane = bits.trailing_zeros() as usize;
        bits &= bits - 1;
        check(region.len(), lane, addrs[lane])?;
    }
    let mut bits = mask;
    while bits != 0 {
        let lane = bits.trailing_zeros() as usize;
        bits &= bits - 1;
        region[(addrs[lane] / 4) as usize] = values[lane];
    }
    Ok(())
}

/// Byte-addressed global memory, stored as little-endian 32-bit words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryImage {
    words: Vec<u32>,
}

impl Default for MemoryImage {
    fn default() -> Self {
        MemoryImage::new(DEFAULT_GLOBAL_BYTES)
    }
}

impl MemoryImage {
    /// Zero-filled image of `size_bytes`, rounded up to a whole word.
    pub fn new(size_bytes: u32) -> MemoryImage {
        MemoryImage {
            words: vec![0; size_bytes.div_ceil(4) as usize],
        }
    }

    pub fn size_bytes(&self) -> u64 {
        self.words.len() as u64 * 4
    }

    pub fn words(&self) -> &[u32] {
        &self.words
    }

    pub fn words_mut(&mut self) -> &mut [u32] {
        &mut self.words
    }

    fn range(&self, addr: u32, words: usize) -> Result<std::ops::Range<usize>, MemError> {
        let bad = MemError::RangeOutOfBounds { addr, len: words * 4 };
        if !addr.is_multiple_of(4) {
            return Err(bad);
        }
        let start = (addr / 4) as usize;
        let end = start.checked_add(words).ok_or(bad.clone())?;
        if end > self.words.len() {
            return Err(bad);
        }
        Ok(start..end)
    }

    pub fn read_words(&self, addr: u32, count: usize) -> Result<&[u32], MemError> {
        Ok(&self.words[self.range(addr, count)?])
    }

    pub fn write_words(&mut self, addr: u32, data: &[u32]) -> Result<(), MemError> {
        let r = self.range(addr, data.len())?;
        self.words[r].copy_from_slice(data);
        Ok(())
    }

    /// Little-endian bytes of `len` bytes starting at `addr`.
    pub fn read_bytes(&self, addr: u32, len: usize) -> Result<Vec<u8>, MemError> {
        let words = self.read_words(addr, len.div_ceil(4))?;
        let mut out: Vec<u8> = words.iter().flat_map(|w| w.to_le_bytes()).collect();
        out.truncate(len);
        Ok(out)
    }

    /// Copies raw little-endian bytes in at `addr`; a trailing partial word is
    /// zero-padded.
    pub fn write_bytes(&mut self, addr: u32, bytes: &[u8]) -> Result<(), MemError> {
        let words: Vec<u32> = bytes
            .chunks(4)
            .map(|c| {
                let mut w = [0u8; 4];
                w[..c.len()].copy_from_slice(c);
                u32::from_le_bytes(w)
            })
            .collect();
        self.write_words(addr, &words)
    }

    /// Places kernel parameters at address 0.
    pub fn init_params(&mut self, params: &[u8]) -> Result<(), MemError> {
        if params.len() > PARAM_REGION_BYTES as usize {
            return Err(MemError::ParamsTooLarge {
                len: params.len(),
                limit: PARAM_REGION_BYTES,
            });
        }
        if params.is_empty() {
            return Ok(());
        }
        self.write_bytes(0, params)
    }
}

/// Packs 32-bit parameter words into the little-endian byte form used by
/// [`MemoryImage::init_params`].
pub fn param_bytes(words: &[u32]) -> Vec<u8> {
    words.iter().flat_map(|w| w.to_le_bytes()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lanes(f: impl Fn(usize) -> u32) -> [u32; WARP_SIZE] {
        std::array::from_fn(f)
    }

    #[test]
    fn shared_write_then_read() {
        let mut shared = vec![0u32; 16];
        store(&mut shared, &lanes(|_| 0), &lanes(|_| 42), 1).unwrap();
        let mut dst = [0; WARP_SIZE];
        load(&shared, &lanes(|_| 0), 1, &mut dst).unwrap();
        assert_eq!(dst[0], 42);
    }

    #[test]
    fn masked_lanes_are_untouched() {
        let mem = vec![7u32; 4];
        let mut dst = lanes(|l| l as u32);
        load(&mem, &lanes(|_| 0xDEAD_BEE1), 0, &mut dst).unwrap();
        assert_eq!(dst, lanes(|l| l as u32));

        let mut mem = vec![0u32; 32];
        store(&mut mem, &lanes(|l| 4 * l as u32), &lanes(|_| 9), 0x1).unwrap();
        assert_eq!(mem[0], 9);
        assert!(mem[1..].iter().all(|&w| w == 0));
    }

    #[test]
    fn out_of_bounds_and_unaligned() {
        let img = MemoryImage::new(64);
        let mut dst = [0; WARP_SIZE];
        assert_eq!(
            load(img.words(), &lanes(|_| 64 + 4), 1 << 3, &mut dst),
            Err(MemError::OutOfBounds { lane: 3, addr: 68 })
        );
        let mut mem = vec![0u32; 256];
        assert_eq!(
            store(&mut mem, &lanes(|_| 0x102), &lanes(|_| 1), 1),
            Err(MemError::UnalignedAccess { lane: 0, addr: 0x102 })
        );
    }

    #[test]
    fn highest_lane_wins() {
        let mut mem = vec![0u32; 128];
        let mask = (1 << 3) | (1 << 7);
        store(&mut mem, &lanes(|_| 0x100), &lanes(|l| 100 + l as u32), mask).unwrap();
        assert_eq!(mem[0x40], 107);
    }

    #[test]
    fn failed_store_writes_nothing() {
        let mut mem = vec![0u32; 4];
        let addrs = lanes(|l| if l == 1 { 64 } else { 0 });
        assert!(store(&mut mem, &addrs, &lanes(|_| 5), 0b11).is_err());
        assert_eq!(mem, vec![0; 4]);
    }

    #[test]
    fn params_layout() {
        let mut img = MemoryImage::new(0x4000);
        img.init_params(&param_bytes(&[256, 0x1000, 0x2000])).unwrap();
        assert_eq!(img.read_words(0, 3).unwrap(), &[256, 0x1000, 0x2000]);

        let before = img.clone();
        img.init_params(&[]).unwrap();
        assert_eq!(img, before);

        assert!(matches!(
            img.init_params(&vec![0u8; PARAM_REGION_BYTES as usize + 4]),
            Err(MemError::ParamsTooLarge { .. })
        ));
    }

    #[test]
    fn byte_round_trip() {
        let mut img = MemoryImage::new(32);
        img.write_bytes(4, &[1, 2, 3, 4, 5]).unwrap();
        assert_eq!(img.read_bytes(4, 5).unwrap(), vec![1, 2, 3, 4, 5]);
        assert_eq!(img.read_words(4, 2).unwrap(), &[0x0403_0201, 5]);
    }
}
