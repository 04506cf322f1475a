//! Serialized codec output.
//!
//! Wire layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       1     codec tag
//! 1       4     rows
//! 5       4     cols
//! 9       4     codec parameter (rank | n<<16|m | k | 0)
//! 13      ..    body, exactly ceil(bit_size / 8) bytes
//! ```

use super::CodecError;

pub const HEADER_LEN: usize = 13;

/// Bits per element of the uncompressed 16-bit activations that ratios are
/// measured against.
pub const BASELINE_BITS_PER_ELEMENT: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum CodecTag {
    Raw = 0,
    Sign1Bit = 1,
    Quant2Bit = 2,
    LowRankF32 = 3,
    LowRankF16 = 4,
    LowRankInt4 = 5,
    NmBlock = 6,
    TopK = 7,
}

impl CodecTag {
    pub fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0 => Self::Raw,
            1 => Self::Sign1Bit,
            2 => Self::Quant2Bit,
            3 => Self::LowRankF32,
            4 => Self::LowRankF16,
            5 => Self::LowRankInt4,
            6 => Self::NmBlock,
            7 => Self::TopK,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Raw => "raw",
            Self::Sign1Bit => "sign1bit",
            Self::Quant2Bit => "quant2bit",
            Self::LowRankF32 => "lowrank-f32",
            Self::LowRankF16 => "lowrank-f16",
            Self::LowRankInt4 => "lowrank-int4",
            Self::NmBlock => "nm-block",
            Self::TopK => "topk",
        }
    }
}

impl std::fmt::Display for CodecTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Size accounting for one payload shape, derived purely from the header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Layout {
    /// Whole body, including scales, masks and indices.
    pub bits: u64,
    /// Only the per-element codes or values (what headline ratios count).
    pub element_bits: u64,
}

pub(crate) fn nm_unpack(param: u32) -> (usize, usize) {
    ((param >> 16) as usize, (param & 0xFFFF) as usize)
}

pub(crate) fn layout(
    tag: CodecTag,
    rows: usize,
    cols: usize,
    param: u32,
) -> Result<Layout, CodecError> {
    let bad = |reason: String| CodecError::Corrupt { codec: tag, reason };
    if rows == 0 || cols == 0 {
        return Err(bad(format!("empty shape {rows}x{cols}")));
    }
    let (n, c) = (rows as u64, cols as u64);
    let elems = n * c;
    let p = param as u64;
    let out = match tag {
        CodecTag::Raw => Layout {
            bits: 32 * elems,
            element_bits: 32 * elems,
        },
        CodecTag::Sign1Bit => Layout {
            bits: elems + 16 * (n + c),
            element_bits: elems,
        },
        CodecTag::Quant2Bit => Layout {
            bits: 2 * elems + 16 * (n + c),
            element_bits: 2 * elems,
        },
        CodecTag::LowRankF32 | CodecTag::LowRankF16 | CodecTag::LowRankInt4 => {
            if p == 0 || p > n.min(c) {
                return Err(bad(format!("rank {p} invalid for {rows}x{cols}")));
            }
            let width = match tag {
                CodecTag::LowRankF32 => 32,
                CodecTag::LowRankF16 => 16,
                _ => 4,
            };
            let factors = width * p * (n + c);
            let scales = if tag == CodecTag::LowRankInt4 { 64 * p } else { 0 };
            Layout {
                bits: factors + scales,
                element_bits: factors,
            }
        }
        CodecTag::NmBlock => {
            let (keep, block) = nm_unpack(param);
            if block == 0 || keep == 0 || keep > block {
                return Err(bad(format!("invalid N:M pair {keep}:{block}")));
            }
            let blocks = n * c.div_ceil(block as u64);
            Layout {
                bits: blocks * (block as u64 + 16 * keep as u64),
                element_bits: blocks * 16 * keep as u64,
            }
        }
        CodecTag::TopK => {
            if p == 0 || p > elems {
                return Err(bad(format!("k = {p} invalid for {elems} elements")));
            }
            Layout {
                bits: 48 * p,
                element_bits: 16 * p,
            }
        }
    };
    Ok(out)
}

/// Codec output: header fields plus the packed body bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompressedPayload {
    tag: CodecTag,
    rows: u32,
    cols: u32,
    param: u32,
    bit_size: u64,
    body: Vec<u8>,
}

impl CompressedPayload {
    pub(crate) fn build(
        tag: CodecTag,
        rows: usize,
        cols: usize,
        param: u32,
        body: Vec<u8>,
    ) -> Result<Self, CodecError> {
        let layout = layout(tag, rows, cols, param)?;
        let rows = u32::try_from(rows).map_err(|_| CodecError::TooLarge)?;
        let cols = u32::try_from(cols).map_err(|_| CodecError::TooLarge)?;
        assert_eq!(
            body.len() as u64,
            layout.bits.div_ceil(8),
            "{tag} encoder produced a body of the wrong size"
        );
        Ok(Self {
            tag,
            rows,
            cols,
            param,
            bit_size: layout.bits,
            body,
        })
    }

    pub fn tag(&self) -> CodecTag {
        self.tag
    }

    pub fn rows(&self) -> usize {
        self.rows as usize
    }

    pub fn cols(&self) -> usize {
        self.cols as usize
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows as usize, self.cols as usize)
    }

    pub fn param(&self) -> u32 {
        self.param
    }

    /// Exact body size in bits, counting every scale, mask and index.
    pub fn bit_size(&self) -> u64 {
        self.bit_size
    }

    /// Bits spent on per-element codes only (scales, masks and indices excluded).
    pub fn element_bits(&self) -> u64 {
        layout(self.tag, self.rows(), self.cols(), self.param)
            .expect("validated at construction")
            .element_bits
    }

    pub fn body(&self) -> &[u8] {
        &self.body
    }

    /// Header plus body.
    pub fn wire_len(&self) -> usize {
        HEADER_LEN + self.body.len()
    }

    /// Bits of the 16-bit uncompressed tensor this payload stands in for.
    pub fn baseline_bits(&self) -> u64 {
        BASELINE_BITS_PER_ELEMENT * self.rows as u64 * self.cols as u64
    }

    /// Ratio against the 16-bit baseline counting element codes only.
    pub fn payload_only_ratio(&self) -> f64 {
        self.baseline_bits() as f64 / self.element_bits() as f64
    }

    /// Ratio against the 16-bit baseline counting the whole body.
    pub fn with_overhead_ratio(&self) -> f64 {
        self.baseline_bits() as f64 / self.bit_size as f64
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        self.write_to(&mut out);
        out
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.push(self.tag as u8);
        out.extend_from_slice(&self.rows.to_le_bytes());
        out.extend_from_slice(&self.cols.to_le_bytes());
        out.extend_from_slice(&self.param.to_le_bytes());
        out.extend_from_slice(&self.body);
    }

    /// Parses a wire frame. Only structural checks happen here; content
    /// checks (finite scales, valid masks, sorted indices) run in `decode`.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        if bytes.len() < HEADER_LEN {
            return Err(CodecError::Truncated { len: bytes.len() });
        }
        let tag = CodecTag::from_byte(bytes[0]).ok_or(CodecError::UnknownTag(bytes[0]))?;
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let (rows, cols, param) = (word(1), word(5), word(9));
        let layout = layout(tag, rows as usize, cols as usize, param)?;
        let body = &bytes[HEADER_LEN..];
        if body.len() as u64 != layout.bits.div_ceil(8) {
            return Err(CodecError::Corrupt {
                codec: tag,
                reason: format!(
                    "body is {} bytes, expected {}",
                    body.len(),
                    layout.bits.div_ceil(8)
                ),
            });
        }
        Ok(Self {
            tag,
            rows,
            cols,
            param,
            bit_size: layout.bits,
            body: body.to_vec(),
        })
    }
}

pub(crate) fn push_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Reads `count` little-endian `f32`s starting at `*at`, advancing it.
pub(crate) fn read_f32s(
    body: &[u8],
    at: &mut usize,
    count: usize,
    codec: CodecTag,
) -> Result<Vec<f32>, CodecError> {
    let end = *at + 4 * count;
    let out: Vec<f32> = body[*at..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    *at = end;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(CodecError::Corrupt {
            codec,
            reason: "non-finite value in body".into(),
        });
    }
    Ok(out)
}
