//! Rank-r approximation by randomized subspace iteration, with optional
//! 16-bit or INT4 factor storage.
//!
//! The sender transmits `U` (m×r, orthonormal) and `W = AᵀU` (n×r); the
//! receiver reconstructs `Â = U Wᵀ = U Uᵀ A`, the projection of `A` onto the
//! recovered column space.

use serde::{Deserialize, Serialize};

use super::bits::{BitReader, BitWriter};
use super::payload::{push_f32s, read_f32s, CodecTag, CompressedPayload};
use super::{to_f16, CodecError};
use crate::rng::Rng;
use crate::tensor::{gaussian_matrix, orthogonalize, Matrix};

/// Storage for the transmitted factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorPrecision {
    #[default]
    F32,
    F16,
    /// 16 uniform levels per column, one 32-bit scale per column.
    Int4,
}

impl FactorPrecision {
    pub fn name(self) -> &'static str {
        match self {
            Self::F32 => "f32",
            Self::F16 => "f16",
            Self::Int4 => "int4",
        }
    }

    pub(crate) fn tag(self) -> CodecTag {
        match self {
            Self::F32 => CodecTag::LowRankF32,
            Self::F16 => CodecTag::LowRankF16,
            Self::Int4 => CodecTag::LowRankInt4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Subspace {
    /// Orthonormal basis of the dominant column space (m×r).
    pub u: Matrix,
    /// Orthonormal basis of the dominant row space, `Q` after the last sweep (n×r).
    pub v: Matrix,
    /// Columns replaced by random directions because `A` had rank < r.
    pub replaced_columns: usize,
}

/// Start from a random orthonormal `Q`; repeat `T` times `Q ← orth(Aᵀ(AQ))`;
/// finish with `U = orth(AQ)`, `V = Q`.
pub fn subspace_iteration(
    a: &Matrix,
    rank: usize,
    iterations: usize,
    rng: &mut Rng,
) -> Result<Subspace, CodecError> {
    let (m, n) = a.shape();
    if rank == 0 || rank > m.min(n) || iterations == 0 {
        return Err(CodecError::InvalidSpec(format!(
            "subspace iteration needs 1 <= r <= {} and T >= 1, got r={rank}, T={iterations}",
            m.min(n)
        )));
    }
    let start = orthogonalize(&gaussian_matrix(rng, n, rank, 1.0), rng)?;
    let mut q = start.q;
    let mut replaced = 0;
    for _ in 0..iterations {
        let z = a.transpose_matmul(&a.matmul(&q)?)?;
        let o = orthogonalize(&z, rng)?;
        replaced = o.replaced_columns;
        q = o.q;
    }
    let u = orthogonalize(&a.matmul(&q)?, rng)?;
    Ok(Subspace {
        u: u.q,
        v: q,
        replaced_columns: replaced.max(u.replaced_columns),
    })
}

pub(super) fn encode_lowrank(
    a: &Matrix,
    rank: usize,
    iterations: usize,
    precision: FactorPrecision,
    rng: &mut Rng,
) -> Result<CompressedPayload, CodecError> {
    let sub = subspace_iteration(a, rank, iterations, rng)?;
    let w = a.transpose_matmul(&sub.u)?;
    let tag = precision.tag();
    let mut body = Vec::new();
    match precision {
        FactorPrecision::F32 => {
            push_f32s(&mut body, sub.u.data());
            push_f32s(&mut body, w.data());
        }
        FactorPrecision::F16 => {
            for &v in sub.u.data().iter().chain(w.data()) {
                body.extend_from_slice(&to_f16(v, tag)?.to_le_bytes());
            }
        }
        FactorPrecision::Int4 => {
            let su = column_max_abs(&sub.u);
            let sw = column_max_abs(&w);
            push_f32s(&mut body, &su);
            push_f32s(&mut body, &sw);
            let mut bits = BitWriter::with_capacity_bits(4 * (sub.u.len() + w.len()) as u64);
            for (f, scales) in [(&sub.u, &su), (&w, &sw)] {
                for i in 0..f.rows() {
                    for (j, &v) in f.row(i).iter().enumerate() {
                        bits.push(int4_code(v, scales[j]), 4);
                    }
                }
            }
            body.extend(bits.finish());
        }
    }
    CompressedPayload::build(tag, a.rows(), a.cols(), rank as u32, body)
}

fn column_max_abs(f: &Matrix) -> Vec<f32> {
    let mut out = vec![0.0f32; f.cols()];
    for i in 0..f.rows() {
        for (o, &v) in out.iter_mut().zip(f.row(i)) {
            *o = o.max(v.abs());
        }
    }
    out
}

/// Code `k` stands for `(2k − 15)/15 · s`: 16 evenly spaced levels on `[−s, s]`.
#[inline]
fn int4_code(v: f32, s: f32) -> u8 {
    if s == 0.0 {
        return 0;
    }
    let k = ((v as f64 / s as f64 + 1.0) * 7.5).round();
    k.clamp(0.0, 15.0) as u8
}

#[inline]
fn int4_level(code: u8, s: f32) -> f32 {
    ((2.0 * code as f64 - 15.0) / 15.0 * s as f64) as f32
}

pub(super) fn decode_lowrank(p: &CompressedPayload) -> Result<Matrix, CodecError> {
    let (m, n) = p.shape();
    let r = p.param() as usize;
    let tag = p.tag();
    let body = p.body();
    let corrupt = |reason: &str| CodecError::Corrupt {
        codec: tag,
        reason: reason.into(),
    };
    let (u, w) = match tag {
        CodecTag::LowRankF32 => {
            let mut at = 0;
            let u = read_f32s(body, &mut at, m * r, tag)?;
            let w = read_f32s(body, &mut at, n * r, tag)?;
            (u, w)
        }
        CodecTag::LowRankF16 => {
            let vals: Vec<f32> = body
                .chunks_exact(2)
                .map(|c| half::f16::from_le_bytes([c[0], c[1]]).to_f32())
                .collect();
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(corrupt("non-finite factor entry"));
            }
            let w = vals[m * r..].to_vec();
            let mut u = vals;
            u.truncate(m * r);
            (u, w)
        }
        _ => {
            let mut at = 0;
            let su = read_f32s(body, &mut at, r, tag)?;
            let sw = read_f32s(body, &mut at, r, tag)?;
            if su.iter().chain(&sw).any(|&s| s < 0.0) {
                return Err(corrupt("negative column scale"));
            }
            let mut codes = BitReader::new(&body[at..]);
            let mut read = |rows: usize, scales: &[f32]| -> Vec<f32> {
                (0..rows * r)
                    .map(|idx| int4_level(codes.read(4), scales[idx % r]))
                    .collect()
            };
            let u = read(m, &su);
            let w = read(n, &sw);
            (u, w)
        }
    };
    let u = Matrix::new(m, r, u)?;
    let w = Matrix::new(n, r, w)?;
    u.matmul_transpose(&w)
        .map_err(|_| corrupt("reconstruction overflowed"))
}

#[cfg(test)]
#[path = "../../tests/support/oracle.rs"]
mod oracle;
