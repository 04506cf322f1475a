//! The compressor family and its wire payloads.
//!
//! Every codec is a pair of pure functions: [`encode`] turns a matrix into a
//! [`CompressedPayload`] whose bit size is exact, and [`decode`] turns the
//! payload back into a matrix. Only the low-rank codec consumes randomness.

mod bits;
pub mod lowrank;
pub mod payload;
pub mod quant;
pub mod sparse;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Rng;
use crate::tensor::{Matrix, TensorError};

pub use lowrank::{subspace_iteration, FactorPrecision, Subspace};
pub use payload::{CodecTag, CompressedPayload, BASELINE_BITS_PER_ELEMENT, HEADER_LEN};
pub use quant::{scale_estimate, ScalePair};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("invalid compressor spec: {0}")]
    InvalidSpec(String),
    #[error("corrupt {codec} payload: {reason}")]
    Corrupt { codec: CodecTag, reason: String },
    #[error("tensor dimensions exceed the 32-bit wire header")]
    TooLarge,
    #[error("payload truncated: {len} bytes is shorter than the header")]
    Truncated { len: usize },
    #[error("unknown codec tag {0:#04x}")]
    UnknownTag(u8),
    #[error("{codec}: value {value} does not fit in 16-bit storage")]
    Overflow { codec: CodecTag, value: f32 },
    #[error("empirical delta undefined: input is zero but reconstruction is not")]
    UndefinedDelta,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Which codec to apply, with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CompressorSpec {
    /// Lossless: raw 32-bit values.
    Identity,
    #[serde(rename = "sign1bit")]
    Sign1Bit,
    #[serde(rename = "quant2bit")]
    Quant2Bit,
    LowRank {
        rank: usize,
        #[serde(default = "default_iterations")]
        iterations: usize,
        #[serde(default)]
        precision: FactorPrecision,
    },
    NmBlockSparse {
        n: usize,
        m: usize,
    },
    TopK {
        keep_fraction: f64,
    },
}

fn default_iterations() -> usize {
    2
}

impl CompressorSpec {
    /// Shape-independent parameter checks.
    pub fn validate(&self) -> Result<(), CodecError> {
        let bad = |s: String| Err(CodecError::InvalidSpec(s));
        match *self {
            Self::LowRank {
                rank, iterations, ..
            } => {
                if rank == 0 {
                    return bad("low-rank rank must be at least 1".into());
                }
                if iterations == 0 {
                    return bad("low-rank iterations must be at least 1".into());
                }
                if rank > u32::MAX as usize {
                    return bad(format!("rank {rank} too large"));
                }
            }
            Self::NmBlockSparse { n, m } => {
                if n == 0 || m == 0 || n > m {
                    return bad(format!("N:M needs 1 <= n <= m, got {n}:{m}"));
                }
                if m > u16::MAX as usize {
                    return bad(format!("block size {m} exceeds 65535"));
                }
            }
            Self::TopK { keep_fraction } => {
                if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
                    return bad(format!("keep_fraction must be in (0, 1], got {keep_fraction}"));
                }
            }
            Self::Identity | Self::Sign1Bit | Self::Quant2Bit => {}
        }
        Ok(())
    }

    /// Checks that also depend on the tensor shape.
    pub fn validate_for(&self, rows: usize, cols: usize) -> Result<(), CodecError> {
        self.validate()?;
        if let Self::LowRank { rank, .. } = *self {
            if rank > rows.min(cols) {
                return Err(CodecError::InvalidSpec(format!(
                    "rank {rank} exceeds min dimension of {rows}x{cols}"
                )));
            }
        }
        Ok(())
    }

    /// Wire tag of the payloads this spec produces.
    pub fn tag(&self) -> CodecTag {
        match *self {
            Self::Identity => CodecTag::Raw,
            Self::Sign1Bit => CodecTag::Sign1Bit,
            Self::Quant2Bit => CodecTag::Quant2Bit,
            Self::LowRank { precision, .. } => precision.tag(),
            Self::NmBlockSparse { .. } => CodecTag::NmBlock,
            Self::TopK { .. } => CodecTag::TopK,
        }
    }

    pub fn is_lossless(&self) -> bool {
        matches!(self, Self::Identity)
    }

    /// Short stable name used in reports.
    pub fn label(&self) -> String {
        match *self {
            Self::Identity => "identity".into(),
            Self::Sign1Bit => "sign1bit".into(),
            Self::Quant2Bit => "quant2bit".into(),
            Self::LowRank {
                rank,
                iterations,
                precision,
            } => format!("lowrank-r{rank}-t{iterations}-{}", precision.name()),
            Self::NmBlockSparse { n, m } => format!("nm-{n}of{m}"),
            Self::TopK { keep_fraction } => format!("topk-{keep_fraction}"),
        }
    }
}

impl std::fmt::Display for CompressorSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

/// Raw little-endian `f32` body; used for the identity codec and for warmup.
pub fn encode_raw(x: &Matrix) -> Result<CompressedPayload, CodecError> {
    let mut body = Vec::with_capacity(4 * x.len());
    payload::push_f32s(&mut body, x.data());
    CompressedPayload::build(CodecTag::Raw, x.rows(), x.cols(), 0, body)
}

pub fn encode(
    spec: &CompressorSpec,
    x: &Matrix,
    rng: &mut Rng,
) -> Result<CompressedPayload, CodecError> {
    spec.validate_for(x.rows(), x.cols())?;
    match *spec {
        CompressorSpec::Identity => encode_raw(x),
        CompressorSpec::Sign1Bit => quant::encode_sign1bit(x),
        CompressorSpec::Quant2Bit => quant::encode_quant2bit(x),
        CompressorSpec::LowRank {
            rank,
            iterations,
            precision,
        } => lowrank::encode_lowrank(x, rank, iterations, precision, rng),
        CompressorSpec::NmBlockSparse { n, m } => sparse::encode_nm_block(x, n, m),
        CompressorSpec::TopK { keep_fraction } => sparse::encode_topk(x, keep_fraction),
    }
}

/// Reconstructs the matrix a payload describes, validating its contents.
pub fn decode(p: &CompressedPayload) -> Result<Matrix, CodecError> {
    match p.tag() {
        CodecTag::Raw => {
            let mut at = 0;
            let data = payload::read_f32s(p.body(), &mut at, p.rows() * p.cols(), p.tag())?;
            Ok(Matrix::new(p.rows(), p.cols(), data)?)
        }
        CodecTag::Sign1Bit | CodecTag::Quant2Bit => quant::decode_quantized(p),
        CodecTag::LowRankF32 | CodecTag::LowRankF16 | CodecTag::LowRankInt4 => {
            lowrank::decode_lowrank(p)
        }
        CodecTag::NmBlock => sparse::decode_nm_block(p),
        CodecTag::TopK => sparse::decode_topk(p),
    }
}

/// `δ̂ = 1 − ‖X̂ − X‖² / ‖X‖²`, or `Exact` when both norms are zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeltaEstimate {
    Measured(f64),
    Exact,
}

impl DeltaEstimate {
    /// Numeric value, with `Exact` mapped to 1.
    pub fn value(self) -> f64 {
        match self {
            Self::Measured(d) => d,
            Self::Exact => 1.0,
        }
    }
}

pub fn delta_between(x: &Matrix, reconstruction: &Matrix) -> Result<DeltaEstimate, CodecError> {
    let err = x.dist_sq(reconstruction)?;
    let energy = x.frob_norm_sq();
    if energy == 0.0 {
        return if err == 0.0 {
            Ok(DeltaEstimate::Exact)
        } else {
            Err(CodecError::UndefinedDelta)
        };
    }
    Ok(DeltaEstimate::Measured(1.0 - err / energy))
}

pub fn empirical_delta(x: &Matrix, p: &CompressedPayload) -> Result<DeltaEstimate, CodecError> {
    delta_between(x, &decode(p)?)
}

/// Converts to half precision, refusing values that would become infinite.
pub(crate) fn to_f16(v: f32, codec: CodecTag) -> Result<half::f16, CodecError> {
    let h = half::f16::from_f32(v);
    if h.is_finite() {
        Ok(h)
    } else {
        Err(CodecError::Overflow { codec, value: v })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gaussian_matrix;
    use proptest::prelude::*;
    use crate::rng::Rng;

    fn all_specs() -> Vec<CompressorSpec> {
        vec![
            CompressorSpec::Identity,
            CompressorSpec::Sign1Bit,
            CompressorSpec::Quant2Bit,
            CompressorSpec::LowRank {
                rank: 3,
                iterations: 2,
                precision: FactorPrecision::F32,
            },
            CompressorSpec::LowRank {
                rank: 3,
                iterations: 2,
                precision: FactorPrecision::F16,
            },
            CompressorSpec::LowRank {
                rank: 3,
                iterations: 2,
                precision: FactorPrecision::Int4,
            },
            CompressorSpec::NmBlockSparse { n: 2, m: 4 },
            CompressorSpec::TopK { keep_fraction: 0.3 },
        ]
    }

    #[test]
    fn spec_json_shape() {
        let s: CompressorSpec =
            serde_json::from_str(r#"{"kind":"low_rank","rank":32,"precision":"int4"}"#).unwrap();
        assert_eq!(
            s,
            CompressorSpec::LowRank {
                rank: 32,
                iterations: 2,
                precision: FactorPrecision::Int4
            }
        );
        let s: CompressorSpec = serde_json::from_str(r#"{"kind":"nm_block_sparse","n":2,"m":4}"#).unwrap();
        assert_eq!(s, CompressorSpec::NmBlockSparse { n: 2, m: 4 });
        assert!(serde_json::from_str::<CompressorSpec>(r#"{"kind":"top_k","keep_fraction":0.5,"x":1}"#).is_err());
        let back = serde_json::to_string(&CompressorSpec::Sign1Bit).unwrap();
        assert_eq!(back, r#"{"kind":"sign1bit"}"#);
        assert_eq!(serde_json::from_str::<CompressorSpec>(&back).unwrap(), CompressorSpec::Sign1Bit);
    }

    #[test]
    fn invalid_specs_rejected() {
        for s in [
            CompressorSpec::TopK { keep_fraction: 0.0 },
            CompressorSpec::TopK { keep_fraction: 1.5 },
            CompressorSpec::NmBlockSparse { n: 5, m: 4 },
            CompressorSpec::LowRank {
                rank: 0,
                iterations: 2,
                precision: FactorPrecision::F32,
            },
        ] {
            assert!(matches!(s.validate(), Err(CodecError::InvalidSpec(_))), "{s:?}");
        }
        let big = CompressorSpec::LowRank {
            rank: 9,
            iterations: 2,
            precision: FactorPrecision::F32,
        };
        assert!(big.validate_for(8, 100).is_err());
        assert!(big.validate_for(9, 9).is_ok());
    }

    #[test]
    fn identity_is_lossless() {
        let x = gaussian_matrix(&mut Rng::seed_from(3), 5, 7, 2.0);
        let p = encode(&CompressorSpec::Identity, &x, &mut Rng::seed_from(0)).unwrap();
        assert_eq!(decode(&p).unwrap(), x);
        assert_eq!(empirical_delta(&x, &p).unwrap(), DeltaEstimate::Measured(1.0));
    }

    #[test]
    fn delta_of_zero_reconstruction_is_zero() {
        let x = gaussian_matrix(&mut Rng::seed_from(3), 4, 4, 1.0);
        let d = delta_between(&x, &Matrix::zeros(4, 4)).unwrap();
        assert_eq!(d, DeltaEstimate::Measured(0.0));
    }

    #[test]
    fn delta_on_zero_input() {
        let z = Matrix::zeros(2, 2);
        assert_eq!(delta_between(&z, &z).unwrap(), DeltaEstimate::Exact);
        let one = Matrix::from_rows(&[[0.0, 1.0], [0.0, 0.0]]);
        assert_eq!(delta_between(&z, &one), Err(CodecError::UndefinedDelta));
    }

    #[test]
    fn sign1bit_delta_exact_case() {
        let x = Matrix::from_rows(&[[1.0, -1.0], [3.0, -3.0]]);
        let p = encode(&CompressorSpec::Sign1Bit, &x, &mut Rng::seed_from(0)).unwrap();
        assert_eq!(empirical_delta(&x, &p).unwrap().value(), 1.0);
    }

    #[test]
    fn quantizers_positive_delta_on_gaussians() {
        let mut rng = Rng::seed_from(99);
        for spec in [CompressorSpec::Sign1Bit, CompressorSpec::Quant2Bit] {
            let mut positive = 0;
            for _ in 0..1000 {
                let x = gaussian_matrix(&mut rng, 8, 8, 1.0);
                let p = encode(&spec, &x, &mut rng).unwrap();
                if empirical_delta(&x, &p).unwrap().value() > 0.0 {
                    positive += 1;
                }
            }
            assert!(positive >= 990, "{spec}: {positive}/1000");
        }
    }

    #[test]
    fn unknown_tag_and_truncation() {
        assert_eq!(
            CompressedPayload::from_bytes(&[9; 20]),
            Err(CodecError::UnknownTag(9))
        );
        assert_eq!(
            CompressedPayload::from_bytes(&[1, 2]),
            Err(CodecError::Truncated { len: 2 })
        );
        let x = gaussian_matrix(&mut Rng::seed_from(1), 4, 4, 1.0);
        let mut bytes = encode_raw(&x).unwrap().to_bytes();
        bytes.pop();
        assert!(matches!(
            CompressedPayload::from_bytes(&bytes),
            Err(CodecError::Corrupt { codec: CodecTag::Raw, .. })
        ));
    }

    #[test]
    fn f16_overflow_is_reported() {
        let x = Matrix::from_rows(&[[1e6, 1.0], [2.0, 3.0]]);
        let r = encode(&CompressorSpec::TopK { keep_fraction: 1.0 }, &x, &mut Rng::seed_from(0));
        assert!(matches!(r, Err(CodecError::Overflow { .. })));
    }

    proptest! {
        #[test]
        fn wire_round_trip_and_exact_size(seed in 0u64..500, rows in 3usize..12, cols in 3usize..12) {
            let x = gaussian_matrix(&mut Rng::seed_from(seed), rows, cols, 1.5);
            for spec in all_specs() {
                let p = encode(&spec, &x, &mut Rng::seed_from(seed)).unwrap();
                let again = encode(&spec, &x, &mut Rng::seed_from(seed)).unwrap();
                prop_assert_eq!(&p, &again);
                let bytes = p.to_bytes();
                prop_assert_eq!(bytes.len() as u64, HEADER_LEN as u64 + p.bit_size().div_ceil(8));
                let parsed = CompressedPayload::from_bytes(&bytes).unwrap();
                prop_assert_eq!(&parsed, &p);
                let a = decode(&parsed).unwrap();
                let b = decode(&p).unwrap();
                prop_assert_eq!(a.data(), b.data());
                prop_assert!(a.is_finite());
            }
        }
    }
}
