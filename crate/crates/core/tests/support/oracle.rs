//! Brute-force SVD oracle for checking low-rank approximations.
//!
//! Deliberately shares no code with the codecs: singular values come from a
//! cyclic Jacobi eigendecomposition of the Gram matrix, all in f64. The
//! including module must have `Matrix` in scope.

#![allow(dead_code)]

use super::Matrix;

/// Eigenvalues of a symmetric matrix (row-major, `n×n`), descending.
pub fn jacobi_eigenvalues(mut a: Vec<f64>, n: usize) -> Vec<f64> {
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        let diag: f64 = (0..n).map(|i| a[i * n + i] * a[i * n + i]).sum();
        if off <= 1e-30 * diag.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    ev.sort_by(|x, y| y.partial_cmp(x).unwrap());
    ev
}

/// Singular values of `a`, descending, from the smaller Gram matrix.
pub fn singular_values(a: &Matrix) -> Vec<f64> {
    let (m, n) = (a.rows(), a.cols());
    let small = m.min(n);
    let mut g = vec![0.0f64; small * small];
    for i in 0..small {
        for j in i..small {
            let mut s = 0.0;
            if n <= m {
                for k in 0..m {
                    s += a.get(k, i) as f64 * a.get(k, j) as f64;
                }
            } else {
                for k in 0..n {
                    s += a.get(i, k) as f64 * a.get(j, k) as f64;
                }
            }
            g[i * small + j] = s;
            g[j * small + i] = s;
        }
    }
    jacobi_eigenvalues(g, small)
        .into_iter()
        .map(|e| e.max(0.0).sqrt())
        .collect()
}

/// `min over rank-r B of ‖A − B‖_F²` = sum of the squared trailing singular values.
pub fn optimal_rank_error_sq(a: &Matrix, r: usize) -> f64 {
    singular_values(a).iter().skip(r).map(|s| s * s).sum()
}
