//! Magnitude sparsifiers: N:M blocks and global top-k. Kept values travel as
//! IEEE half precision.
//!
//! N:M body: all kept values (row-major block order, `n` per block), then one
//! `m`-bit mask per block. Rows whose width is not a multiple of `m` are
//! zero-padded; the padding is counted in the bit size.
//!
//! Top-k body: `k` ascending `u32` flat indices, then `k` values.

use super::bits::{BitReader, BitWriter};
use super::payload::{nm_unpack, CodecTag, CompressedPayload};
use super::{to_f16, CodecError};
use crate::tensor::Matrix;

/// Indices of the `n` largest-magnitude entries of `block`, ascending.
/// Ties go to the lower index.
pub fn select_block(block: &[f32], n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..block.len()).collect();
    order.sort_by(|&a, &b| block[b].abs().total_cmp(&block[a].abs()).then(a.cmp(&b)));
    let mut kept = order[..n].to_vec();
    kept.sort_unstable();
    kept
}

pub(super) fn encode_nm_block(x: &Matrix, n: usize, m: usize) -> Result<CompressedPayload, CodecError> {
    let tag = CodecTag::NmBlock;
    let (rows, cols) = x.shape();
    let per_row = cols.div_ceil(m);
    let mut values = Vec::with_capacity(2 * n * rows * per_row);
    let mut masks = BitWriter::with_capacity_bits((m * rows * per_row) as u64);
    let mut block = vec![0.0f32; m];
    for i in 0..rows {
        let row = x.row(i);
        for b in 0..per_row {
            block.fill(0.0);
            let start = b * m;
            let end = (start + m).min(cols);
            block[..end - start].copy_from_slice(&row[start..end]);
            let kept = select_block(&block, n);
            for &k in &kept {
                values.extend_from_slice(&to_f16(block[k], tag)?.to_le_bytes());
            }
            let mut next = kept.iter().peekable();
            for pos in 0..m {
                let hit = next.peek() == Some(&&pos);
                if hit {
                    next.next();
                }
                masks.push(u8::from(hit), 1);
            }
        }
    }
    values.extend(masks.finish());
    let param = ((n as u32) << 16) | m as u32;
    CompressedPayload::build(tag, rows, cols, param, values)
}

pub(super) fn decode_nm_block(p: &CompressedPayload) -> Result<Matrix, CodecError> {
    let tag = p.tag();
    let (rows, cols) = p.shape();
    let (n, m) = nm_unpack(p.param());
    let per_row = cols.div_ceil(m);
    let blocks = rows * per_row;
    let body = p.body();
    let (vals, mask_bytes) = body.split_at(2 * n * blocks);
    let mut masks = BitReader::new(mask_bytes);
    let mut data = vec![0.0f32; rows * cols];
    let mut v = vals.chunks_exact(2);
    for i in 0..rows {
        for b in 0..per_row {
            let mut seen = 0;
            for pos in 0..m {
                if masks.read(1) == 0 {
                    continue;
                }
                seen += 1;
                if seen > n {
                    break;
                }
                let c = v.next().expect("length checked by layout");
                let val = half::f16::from_le_bytes([c[0], c[1]]).to_f32();
                if !val.is_finite() {
                    return Err(CodecError::Corrupt {
                        codec: tag,
                        reason: "non-finite kept value".into(),
                    });
                }
                let col = b * m + pos;
                if col < cols {
                    data[i * cols + col] = val;
                }
            }
            if seen != n {
                return Err(CodecError::Corrupt {
                    codec: tag,
                    reason: format!("block mask keeps {seen} entries, expected {n}"),
                });
            }
        }
    }
    Ok(Matrix::new(rows, cols, data)?)
}

/// Number of entries top-k keeps: `⌈fraction · len⌉`, at least one.
pub fn topk_count(len: usize, keep_fraction: f64) -> usize {
    ((keep_fraction * len as f64).ceil() as usize).clamp(1, len)
}

pub(super) fn encode_topk(x: &Matrix, keep_fraction: f64) -> Result<CompressedPayload, CodecError> {
    let tag = CodecTag::TopK;
    let data = x.data();
    if data.len() > u32::MAX as usize {
        return Err(CodecError::TooLarge);
    }
    let k = topk_count(data.len(), keep_fraction);
    let kept = select_block(data, k);
    let mut body = Vec::with_capacity(6 * k);
    for &i in &kept {
        body.extend_from_slice(&(i as u32).to_le_bytes());
    }
    for &i in &kept {
        body.extend_from_slice(&to_f16(data[i], tag)?.to_le_bytes());
    }
    CompressedPayload::build(tag, x.rows(), x.cols(), k as u32, body)
}

pub(super) fn decode_topk(p: &CompressedPayload) -> Result<Matrix, CodecError> {
    let tag = p.tag();
    let (rows, cols) = p.shape();
    let len = rows * cols;
    let k = p.param() as usize;
    let (idx, vals) = p.body().split_at(4 * k);
    let mut data = vec![0.0f32; len];
    let mut prev: Option<usize> = None;
    for (ic, vc) in idx.chunks_exact(4).zip(vals.chunks_exact(2)) {
        let i = u32::from_le_bytes(ic.try_into().unwrap()) as usize;
        let bad = |reason: String| CodecError::Corrupt { codec: tag, reason };
        if i >= len {
            return Err(bad(format!("index {i} out of range")));
        }
        if prev.is_some_and(|q| q >= i) {
            return Err(bad("indices not strictly ascending".into()));
        }
        prev = Some(i);
        let v = half::f16::from_le_bytes([vc[0], vc[1]]).to_f32();
        if !v.is_finite() {
            return Err(bad("non-finite kept value".into()));
        }
        data[i] = v;
    }
    Ok(Matrix::new(rows, cols, data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compress::{decode, empirical_delta, encode, CompressorSpec};
    use crate::rng::Rng;
    use crate::tensor::gaussian_matrix;
    use proptest::prelude::*;

    fn f16_round(v: f32) -> f32 {
        half::f16::from_f32(v).to_f32()
    }

    #[test]
    fn nm_hand_example() {
        assert_eq!(select_block(&[1.0, -5.0, 2.0, 0.0], 2), vec![1, 2]);
        let x = Matrix::from_rows(&[[1.0, -5.0, 2.0, 0.0]]);
        let p = encode_nm_block(&x, 2, 4).unwrap();
        // Two 16-bit values, then mask 0110 (LSB first → 0b0110).
        assert_eq!(p.bit_size(), 4 + 32);
        assert_eq!(p.body()[4], 0b0110);
        assert_eq!(decode(&p).unwrap().data(), &[0.0, -5.0, 2.0, 0.0]);
    }

    #[test]
    fn nm_zero_block_keeps_first_entries() {
        assert_eq!(select_block(&[0.0; 4], 2), vec![0, 1]);
        let p = encode_nm_block(&Matrix::zeros(1, 4), 2, 4).unwrap();
        assert_eq!(p.body()[4], 0b0011);
    }

    #[test]
    fn nm_full_is_lossless_up_to_half() {
        let x = gaussian_matrix(&mut Rng::seed_from(5), 6, 8, 3.0);
        let y = decode(&encode_nm_block(&x, 4, 4).unwrap()).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert_eq!(f16_round(*a), *b);
        }
    }

    #[test]
    fn nm_pads_ragged_columns() {
        let x = Matrix::from_rows(&[[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]]);
        let p = encode_nm_block(&x, 2, 4).unwrap();
        // Two blocks per row; the second block is [5, 6, 0, 0].
        assert_eq!(p.bit_size(), 2 * (4 + 32));
        assert_eq!(decode(&p).unwrap().data(), &[0.0, 0.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn nm_bad_mask_is_corrupt() {
        let x = Matrix::from_rows(&[[1.0, -5.0, 2.0, 0.0]]);
        let mut bytes = encode_nm_block(&x, 2, 4).unwrap().to_bytes();
        *bytes.last_mut().unwrap() = 0b0111;
        let p = CompressedPayload::from_bytes(&bytes).unwrap();
        assert!(matches!(decode(&p), Err(CodecError::Corrupt { .. })));
    }

    #[test]
    fn topk_hand_example() {
        let x = Matrix::from_rows(&[[3.0, 1.0], [-4.0, 0.0]]);
        let p = encode_topk(&x, 0.5).unwrap();
        assert_eq!(p.param(), 2);
        assert_eq!(p.bit_size(), 2 * 48);
        assert_eq!(decode(&p).unwrap().data(), &[3.0, 0.0, -4.0, 0.0]);
    }

    #[test]
    fn topk_full_is_lossless_up_to_half() {
        let x = gaussian_matrix(&mut Rng::seed_from(8), 5, 5, 1.0);
        let y = decode(&encode_topk(&x, 1.0).unwrap()).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert_eq!(f16_round(*a), *b);
        }
    }

    #[test]
    fn topk_unsorted_indices_are_corrupt() {
        let x = Matrix::from_rows(&[[3.0, 1.0], [-4.0, 0.0]]);
        let mut bytes = encode_topk(&x, 0.5).unwrap().to_bytes();
        bytes.swap(13, 17);
        let p = CompressedPayload::from_bytes(&bytes).unwrap();
        assert!(matches!(decode(&p), Err(CodecError::Corrupt { .. })));
    }

    #[test]
    fn topk_delta_exceeds_keep_fraction() {
        let mut rng = Rng::seed_from(21);
        for frac in [0.05, 0.1, 0.25, 0.5] {
            let x = gaussian_matrix(&mut rng, 32, 32, 1.0);
            let spec = CompressorSpec::TopK { keep_fraction: frac };
            let p = encode(&spec, &x, &mut rng).unwrap();
            assert!(empirical_delta(&x, &p).unwrap().value() >= frac);
        }
    }

    fn subsets(m: usize, n: usize) -> Vec<Vec<usize>> {
        (0u32..1 << m)
            .filter(|s| s.count_ones() as usize == n)
            .map(|s| (0..m).filter(|i| s >> i & 1 == 1).collect())
            .collect()
    }

    proptest! {
        #[test]
        fn nm_keeps_maximum_energy(block in proptest::collection::vec(-10.0f32..10.0, 1..=8), seed in 0usize..8) {
            let m = block.len();
            let n = seed % m + 1;
            let energy = |s: &[usize]| s.iter().map(|&i| (block[i] as f64).powi(2)).sum::<f64>();
            let kept = energy(&select_block(&block, n));
            for s in subsets(m, n) {
                prop_assert!(kept >= energy(&s));
            }
        }
    }
}
