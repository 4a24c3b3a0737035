//! LSB-first bit packing shared by the packet and volume file formats.
//!
//! Bit `i` of a stream lives in byte `i / 8` at bit position `i % 8`.
//! Multi-bit values are written least-significant bit first. The final byte
//! is zero-padded.

/// Number of bits needed to store labels `0..num_classes` (`⌈log2 C⌉`, 0 for C ≤ 1).
pub fn bits_per_label(num_classes: u16) -> u32 {
    if num_classes <= 1 {
        0
    } else {
        u32::BITS - (num_classes as u32 - 1).leading_zeros()
    }
}

pub fn packed_len(bit_count: usize) -> usize {
    bit_count.div_ceil(8)
}

#[derive(Debug, Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    bit_len: usize,
}

impl BitWriter {
    pub fn with_capacity(bits: usize) -> Self {
        Self {
            bytes: Vec::with_capacity(packed_len(bits)),
            bit_len: 0,
        }
    }

    #[inline]
    pub fn push_bit(&mut self, bit: bool) {
        let offset = self.bit_len % 8;
        if offset == 0 {
            self.bytes.push(0);
        }
        if bit {
            *self.bytes.last_mut().expect("byte pushed above") |= 1 << offset;
        }
        self.bit_len += 1;
    }

    /// Append the low `width` bits of `value`, LSB first.
    pub fn push_bits(&mut self, value: u64, width: u32) {
        for b in 0..width {
            self.push_bit((value >> b) & 1 == 1);
        }
    }

    pub fn bit_len(&self) -> usize {
        self.bit_len
    }

    pub fn finish(self) -> Vec<u8> {
        self.bytes
    }
}

#[derive(Debug)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    #[inline]
    pub fn read_bit(&mut self) -> Option<bool> {
        let byte = *self.bytes.get(self.pos / 8)?;
        let bit = (byte >> (self.pos % 8)) & 1 == 1;
        self.pos += 1;
        Some(bit)
    }

    pub fn read_bits(&mut self, width: u32) -> Option<u64> {
        let mut v = 0u64;
        for b in 0..width {
            if self.read_bit()? {
                v |= 1 << b;
            }
        }
        Some(v)
    }

    pub fn position(&self) -> usize {
        self.pos
    }
}

pub fn pack_bools(bits: &[bool]) -> Vec<u8> {
    let mut w = BitWriter::with_capacity(bits.len());
    for &b in bits {
        w.push_bit(b);
    }
    w.finish()
}

/// Unpack `count` bits; `None` if `bytes` is too short.
pub fn unpack_bools(bytes: &[u8], count: usize) -> Option<Vec<bool>> {
    if bytes.len() < packed_len(count) {
        return None;
    }
    let mut r = BitReader::new(bytes);
    (0..count).map(|_| r.read_bit()).collect()
}

pub fn pack_labels(labels: &[u8], width: u32) -> Vec<u8> {
    let mut w = BitWriter::with_capacity(labels.len() * width as usize);
    for &l in labels {
        w.push_bits(l as u64, width);
    }
    w.finish()
}

pub fn unpack_labels(bytes: &[u8], count: usize, width: u32) -> Option<Vec<u8>> {
    if bytes.len() < packed_len(count * width as usize) {
        return None;
    }
    let mut r = BitReader::new(bytes);
    (0..count)
        .map(|_| r.read_bits(width).map(|v| v as u8))
        .collect()
}
