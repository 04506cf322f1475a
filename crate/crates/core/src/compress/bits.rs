//! LSB-first bit packing used by the sign, 2-bit, INT4 and mask streams.

pub(crate) struct BitWriter {
    bytes: Vec<u8>,
    bit_len: u64,
}

impl BitWriter {
    pub(crate) fn with_capacity_bits(bits: u64) -> Self {
        Self {
            bytes: Vec::with_capacity(bits.div_ceil(8) as usize),
            bit_len: 0,
        }
    }

    /// Appends the low `width` bits of `value` (width ≤ 8).
    #[inline]
    pub(crate) fn push(&mut self, value: u8, width: u32) {
        debug_assert!(width <= 8 && (width == 8 || value >> width == 0));
        let offset = (self.bit_len % 8) as u32;
        if offset == 0 {
            self.bytes.push(value);
        } else {
            let last = self.bytes.last_mut().expect("offset > 0 implies a byte");
            *last |= value << offset;
            if offset + width > 8 {
                self.bytes.push(value >> (8 - offset));
            }
        }
        self.bit_len += width as u64;
    }

    pub(crate) fn finish(self) -> Vec<u8> {
        self.bytes
    }
}

pub(crate) struct BitReader<'a> {
    bytes: &'a [u8],
    pos: u64,
}

impl<'a> BitReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    /// Reads `width` bits (≤ 8). Caller guarantees the stream is long enough.
    #[inline]
    pub(crate) fn read(&mut self, width: u32) -> u8 {
        let byte = (self.pos / 8) as usize;
        let offset = (self.pos % 8) as u32;
        let mut v = (self.bytes[byte] >> offset) as u16;
        if offset + width > 8 {
            v |= (self.bytes[byte + 1] as u16) << (8 - offset);
        }
        self.pos += width as u64;
        (v & ((1u16 << width) - 1)) as u8
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn nibbles_are_little_end_first() {
        let mut w = BitWriter::with_capacity_bits(8);
        w.push(0x3, 4);
        w.push(0xA, 4);
        assert_eq!(w.finish(), vec![0xA3]);
    }

    proptest! {
        #[test]
        fn mixed_widths_round_trip(items in proptest::collection::vec((0u8..=255, 1u32..=8), 0..200)) {
            let items: Vec<(u8, u32)> = items
                .into_iter()
                .map(|(v, w)| (if w == 8 { v } else { v & ((1 << w) - 1) }, w))
                .collect();
            let total: u64 = items.iter().map(|&(_, w)| w as u64).sum();
            let mut wr = BitWriter::with_capacity_bits(total);
            for &(v, w) in &items {
                wr.push(v, w);
            }
            let bytes = wr.finish();
            prop_assert_eq!(bytes.len() as u64, total.div_ceil(8));
            let mut rd = BitReader::new(&bytes);
            for &(v, w) in &items {
                prop_assert_eq!(rd.read(w), v);
            }
        }
    }
}
