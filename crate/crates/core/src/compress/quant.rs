//! 1-bit and 2-bit quantization against a rank-1 magnitude estimate:
//! `Q(X) = q(X) ⊙ (u vᵀ)`.

use super::bits::{BitReader, BitWriter};
use super::payload::{CodecTag, CompressedPayload};
use super::{to_f16, CodecError};
use crate::tensor::Matrix;

/// Rank-1 magnitude model: `u` holds normalized row means of `|X|`, `v` the
/// column means.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalePair {
    pub u: Vec<f32>,
    pub v: Vec<f32>,
}

impl ScalePair {
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.u[i] as f64 * self.v[j] as f64
    }
}

/// `u_i = mean_j |X_ij| / mean_ij |X_ij|`, `v_j = mean_i |X_ij|`.
///
/// An all-zero input yields `u = 1`, `v = 0` so that every scale product is
/// exactly zero.
pub fn scale_estimate(x: &Matrix) -> ScalePair {
    let (rows, cols) = x.shape();
    let mut row_sum = vec![0.0f64; rows];
    let mut col_sum = vec![0.0f64; cols];
    for i in 0..rows {
        for (j, &val) in x.row(i).iter().enumerate() {
            let a = (val as f64).abs();
            row_sum[i] += a;
            col_sum[j] += a;
        }
    }
    let total: f64 = row_sum.iter().sum();
    if total == 0.0 {
        return ScalePair {
            u: vec![1.0; rows],
            v: vec![0.0; cols],
        };
    }
    let global_mean = total / (rows * cols) as f64;
    ScalePair {
        u: row_sum
            .iter()
            .map(|s| ((s / cols as f64) / global_mean) as f32)
            .collect(),
        v: col_sum.iter().map(|s| (s / rows as f64) as f32).collect(),
    }
}

/// The four 2-bit levels, indexed by code.
pub const QUANT2_LEVELS: [f32; 4] = [-2.0, -0.5, 0.5, 2.0];

/// Nearest level to a scale-normalized value; ties go to the level of smaller
/// magnitude, and 0 maps to +0.5.
#[inline]
pub fn quant2_code(z: f64) -> u8 {
    if z < -1.25 {
        0
    } else if z < 0.0 {
        1
    } else if z <= 1.25 {
        2
    } else {
        3
    }
}

/// Scales travel as half precision; the encoder codes against the rounded
/// values so that both ends use identical scale products.
fn wire_scales(x: &Matrix, codec: CodecTag) -> Result<ScalePair, CodecError> {
    let s = scale_estimate(x);
    let round = |v: &[f32]| -> Result<Vec<f32>, CodecError> { v.iter().map(|&a| Ok(to_f16(a, codec)?.to_f32())).collect() };
    Ok(ScalePair {
        u: round(&s.u)?,
        v: round(&s.v)?,
    })
}

fn write_scales(s: &ScalePair, body: &mut Vec<u8>) {
    for &a in s.u.iter().chain(&s.v) {
        body.extend_from_slice(&half::f16::from_f32(a).to_le_bytes());
    }
}

fn read_f16s(body: &[u8], at: &mut usize, count: usize, codec: CodecTag) -> Result<Vec<f32>, CodecError> {
    let end = *at + 2 * count;
    let bytes = body.get(*at..end).ok_or_else(|| CodecError::Corrupt {
        codec,
        reason: "scale vectors truncated".into(),
    })?;
    *at = end;
    Ok(bytes
        .chunks_exact(2)
        .map(|c| half::f16::from_le_bytes([c[0], c[1]]).to_f32())
        .collect())
}

fn read_scales(
    body: &[u8],
    at: &mut usize,
    rows: usize,
    cols: usize,
    codec: CodecTag,
) -> Result<ScalePair, CodecError> {
    let u = read_f16s(body, at, rows, codec)?;
    let v = read_f16s(body, at, cols, codec)?;
    if u.iter().chain(&v).any(|&s| !(s >= 0.0) || s.is_infinite()) {
        return Err(CodecError::Corrupt {
            codec,
            reason: "negative scale".into(),
        });
    }
    Ok(ScalePair { u, v })
}

pub fn encode_sign1bit(x: &Matrix) -> Result<CompressedPayload, CodecError> {
    let (rows, cols) = x.shape();
    let scales = wire_scales(x, CodecTag::Sign1Bit)?;
    let mut body = Vec::new();
    write_scales(&scales, &mut body);
    let mut bits = BitWriter::with_capacity_bits((rows * cols) as u64);
    for &v in x.data() {
        bits.push(u8::from(v < 0.0), 1);
    }
    body.extend(bits.finish());
    CompressedPayload::build(CodecTag::Sign1Bit, rows, cols, 0, body)
}

pub fn encode_quant2bit(x: &Matrix) -> Result<CompressedPayload, CodecError> {
    let (rows, cols) = x.shape();
    let scales = wire_scales(x, CodecTag::Quant2Bit)?;
    let mut body = Vec::new();
    write_scales(&scales, &mut body);
    let mut bits = BitWriter::with_capacity_bits(2 * (rows * cols) as u64);
    for i in 0..rows {
        for (j, &v) in x.row(i).iter().enumerate() {
            let s = scales.at(i, j);
            let code = if s == 0.0 { 2 } else { quant2_code(v as f64 / s) };
            bits.push(code, 2);
        }
    }
    body.extend(bits.finish());
    CompressedPayload::build(CodecTag::Quant2Bit, rows, cols, 0, body)
}

pub(super) fn decode_quantized(p: &CompressedPayload) -> Result<Matrix, CodecError> {
    let (rows, cols) = p.shape();
    let mut at = 0;
    let scales = read_scales(p.body(), &mut at, rows, cols, p.tag())?;
    let mut codes = BitReader::new(&p.body()[at..]);
    let width = if p.tag() == CodecTag::Sign1Bit { 1 } else { 2 };
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            let code = codes.read(width);
            let level = if width == 1 {
                if code == 1 {
                    -1.0
                } else {
                    1.0
                }
            } else {
                QUANT2_LEVELS[code as usize] as f64
            };
            data.push((level * scales.at(i, j)) as f32);
        }
    }
    Matrix::new(rows, cols, data).map_err(|_| CodecError::Corrupt {
        codec: p.tag(),
        reason: "reconstruction overflowed".into(),
    })
}
