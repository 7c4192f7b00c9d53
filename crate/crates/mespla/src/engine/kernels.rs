//! Dense f64 matrix kernels behind the tensor ops.
//!
//! All three GEMM variants parallelize over fixed-size chunks so results are
//! bit-identical regardless of thread count: every output element is a
//! sequential sum, and the transposed-A variant reduces per-chunk partials in
//! chunk order.

use rayon::prelude::*;

/// Below this op count the rayon dispatch overhead dominates.
const PAR_THRESHOLD: usize = 1 << 18;
/// Accumulation rows per partial in the transposed-A kernel.
const TN_CHUNK: usize = 2048;

/// Rows per parallel chunk, sized for roughly half a MFLOP of work per task
/// so the scheduler overhead stays negligible. Depends only on the shapes,
/// never on the pool, so partitions are deterministic.
fn row_chunk(inner_flops: usize) -> usize {
    (524_288 / inner_flops.max(1)).clamp(16, 8192)
}

/// out[m x n] (+)= a[m x k] * b[k x n]
pub fn gemm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64], accumulate: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let row = |out_rows: &mut [f64], i0: usize| {
        for (di, out_row) in out_rows.chunks_mut(n).enumerate() {
            let i = i0 + di;
            if !accumulate {
                out_row.fill(0.0);
            }
            let a_row = &a[i * k..(i + 1) * k];
            for (p, &a_ip) in a_row.iter().enumerate() {
                if a_ip == 0.0 {
                    continue;
                }
                let b_row = &b[p * n..(p + 1) * n];
                for (o, &bv) in out_row.iter_mut().zip(b_row.iter()) {
                    *o += a_ip * bv;
                }
            }
        }
    };
    if m * k * n < PAR_THRESHOLD {
        row(out, 0);
    } else {
        let rows = row_chunk(k * n);
        out.par_chunks_mut(rows * n)
            .enumerate()
            .for_each(|(c, chunk)| row(chunk, c * rows));
    }
}

/// out[m x p] (+)= a[m x n] * b[p x n]^T
pub fn gemm_nt(a: &[f64], b: &[f64], m: usize, n: usize, p: usize, out: &mut [f64], accumulate: bool) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), p * n);
    debug_assert_eq!(out.len(), m * p);
    let rows = |out_rows: &mut [f64], i0: usize| {
        for (di, out_row) in out_rows.chunks_mut(p).enumerate() {
            let i = i0 + di;
            let a_row = &a[i * n..(i + 1) * n];
            for (j, o) in out_row.iter_mut().enumerate() {
                let b_row = &b[j * n..(j + 1) * n];
                let mut acc = 0.0;
                for (&x, &y) in a_row.iter().zip(b_row.iter()) {
                    acc += x * y;
                }
                if accumulate {
                    *o += acc;
                } else {
                    *o = acc;
                }
            }
        }
    };
    if m * n * p < PAR_THRESHOLD {
        rows(out, 0);
    } else {
        let per = row_chunk(n * p);
        out.par_chunks_mut(per * p)
            .enumerate()
            .for_each(|(c, chunk)| rows(chunk, c * per));
    }
}

/// out[p x q] (+)= a[m x p]^T * b[m x q]
pub fn gemm_tn(a: &[f64], b: &[f64], m: usize, p: usize, q: usize, out: &mut [f64], accumulate: bool) {
    debug_assert_eq!(a.len(), m * p);
    debug_assert_eq!(b.len(), m * q);
    debug_assert_eq!(out.len(), p * q);
    let chunk_partial = |i0: usize, i1: usize| -> Vec<f64> {
        let mut part = vec![0.0; p * q];
        for i in i0..i1 {
            let a_row = &a[i * p..(i + 1) * p];
            let b_row = &b[i * q..(i + 1) * q];
            for (jp, &a_ip) in a_row.iter().enumerate() {
                if a_ip == 0.0 {
                    continue;
                }
                let out_row = &mut part[jp * q..(jp + 1) * q];
                for (o, &bv) in out_row.iter_mut().zip(b_row.iter()) {
                    *o += a_ip * bv;
                }
            }
        }
        part
    };
    if !accumulate {
        out.fill(0.0);
    }
    if m * p * q < PAR_THRESHOLD || m <= TN_CHUNK {
        let part = chunk_partial(0, m);
        for (o, v) in out.iter_mut().zip(part.iter()) {
            *o += v;
        }
    } else {
        let n_chunks = m.div_ceil(TN_CHUNK);
        let partials: Vec<Vec<f64>> = (0..n_chunks)
            .into_par_iter()
            .map(|c| chunk_partial(c * TN_CHUNK, ((c + 1) * TN_CHUNK).min(m)))
            .collect();
        // Reduce in chunk order for determinism.
        for part in partials {
            for (o, v) in out.iter_mut().zip(part.iter()) {
                *o += v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Vec<f64> {
        let mut rng = crate::seeds::rng(seed, crate::seeds::stream::GRADCHECK, 77);
        (0..rows * cols).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
    }

    fn triple_loop(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a[i * k + p] * b[p * n + j];
                }
                out[i * n + j] = s;
            }
        }
        out
    }

    #[test]
    fn nn_matches_triple_loop() {
        for (m, k, n) in [(4, 5, 6), (33, 17, 9), (130, 40, 30)] {
            let a = random_matrix(m, k, 1);
            let b = random_matrix(k, n, 2);
            let mut out = vec![0.0; m * n];
            gemm_nn(&a, &b, m, k, n, &mut out, false);
            let reference = triple_loop(&a, &b, m, k, n);
            for (x, y) in out.iter().zip(reference.iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn nt_and_tn_match_explicit_transposes() {
        let (m, n, p) = (21, 13, 17);
        let a = random_matrix(m, n, 3);
        let b = random_matrix(p, n, 4);
        let mut out = vec![0.0; m * p];
        gemm_nt(&a, &b, m, n, p, &mut out, false);
        // b^T explicitly.
        let mut bt = vec![0.0; n * p];
        for i in 0..p {
            for j in 0..n {
                bt[j * p + i] = b[i * n + j];
            }
        }
        let reference = triple_loop(&a, &bt, m, n, p);
        for (x, y) in out.iter().zip(reference.iter()) {
            assert!((x - y).abs() < 1e-12);
        }

        let (m2, p2, q2) = (19, 11, 23);
        let a2 = random_matrix(m2, p2, 5);
        let b2 = random_matrix(m2, q2, 6);
        let mut out2 = vec![0.0; p2 * q2];
        gemm_tn(&a2, &b2, m2, p2, q2, &mut out2, false);
        let mut at = vec![0.0; p2 * m2];
        for i in 0..m2 {
            for j in 0..p2 {
                at[j * m2 + i] = a2[i * p2 + j];
            }
        }
        let reference2 = triple_loop(&at, &b2, p2, m2, q2);
        for (x, y) in out2.iter().zip(reference2.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn large_parallel_path_is_deterministic() {
        let (m, k, n) = (300, 64, 48);
        let a = random_matrix(m, k, 7);
        let b = random_matrix(k, n, 8);
        let mut out1 = vec![0.0; m * n];
        let mut out2 = vec![0.0; m * n];
        gemm_nn(&a, &b, m, k, n, &mut out1, false);
        gemm_nn(&a, &b, m, k, n, &mut out2, false);
        assert_eq!(out1, out2);
        let reference = triple_loop(&a, &b, m, k, n);
        for (x, y) in out1.iter().zip(reference.iter()) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn accumulate_adds_on_top() {
        let (m, k, n) = (3, 4, 5);
        let a = random_matrix(m, k, 9);
        let b = random_matrix(k, n, 10);
        let mut out = vec![1.0; m * n];
        gemm_nn(&a, &b, m, k, n, &mut out, true);
        let reference = triple_loop(&a, &b, m, k, n);
        for (x, y) in out.iter().zip(reference.iter()) {
            assert!((x - (y + 1.0)).abs() < 1e-12);
        }
    }
}
