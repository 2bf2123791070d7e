//! Small dense matrix kernels shared by the convolution layers.
//!
//! Every output element of [`matmul`] is `bias + a[i,0]*b[0,j] + a[i,1]*b[1,j] + ...`
//! summed in increasing `k`, independent of blocking and thread count.

use crate::parallel::for_each_chunk;
use crate::tensor::Scalar;

/// Register tile: rows of the output handled together, and columns per tile.
const MR: usize = 4;
const NR: usize = 8;
/// Output columns kept hot while sweeping `k`.
const NC: usize = 512;
/// Upper bound on column-buffer elements per block.
pub(crate) const BLOCK_ELEMS: usize = 1 << 21;

/// Row-major matrix view with leading dimension `ld`.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a, S> {
    pub data: &'a [S],
    pub ld: usize,
}

/// `out[i, j] = bias[i] + sum_k a[i, k] * b[k, j]` for `i < m`, `j < n`.
/// `out` starts at element `(0, 0)` and has leading dimension `ldo`.
pub(crate) fn matmul<S: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: Mat<'_, S>,
    b: Mat<'_, S>,
    bias: Option<&[S]>,
    out: &mut [S],
    ldo: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    let span = (m - 1) * ldo + n;
    for_each_chunk(&mut out[..span], MR * ldo, |chunk, rows| {
        let r0 = chunk * MR;
        let nr = MR.min(m - r0);
        for j0 in (0..n).step_by(NC) {
            let len = NC.min(n - j0);
            for r in 0..nr {
                let bv = bias.map_or(S::zero(), |b| b[r0 + r]);
                rows[r * ldo + j0..r * ldo + j0 + len].iter_mut().for_each(|v| *v = bv);
            }
            if nr == MR {
                let panel: Vec<S> = (0..k)
                    .flat_map(|kk| (0..MR).map(move |r| (r, kk)))
                    .map(|(r, kk)| a.data[(r0 + r) * a.ld + kk])
                    .collect();
                let mut j = j0;
                while j + NR <= j0 + len {
                    let mut acc = [[S::zero(); NR]; MR];
                    for (r, row) in acc.iter_mut().enumerate() {
                        row.copy_from_slice(&rows[r * ldo + j..r * ldo + j + NR]);
                    }
                    for kk in 0..k {
                        let bt: &[S; NR] = b.data[kk * b.ld + j..kk * b.ld + j + NR].try_into().unwrap();
                        let w: &[S; MR] = panel[kk * MR..kk * MR + MR].try_into().unwrap();
                        for r in 0..MR {
                            for l in 0..NR {
                                acc[r][l] += w[r] * bt[l];
                            }
                        }
                    }
                    for (r, row) in acc.iter().enumerate() {
                        rows[r * ldo + j..r * ldo + j + NR].copy_from_slice(row);
                    }
                    j += NR;
                }
                for r in 0..MR {
                    let o = &mut rows[r * ldo + j..r * ldo + j0 + len];
                    for kk in 0..k {
                        let brow = &b.data[kk * b.ld + j..kk * b.ld + j0 + len];
                        let w = panel[kk * MR + r];
                        for (v, &x) in o.iter_mut().zip(brow) {
                            *v += w * x;
                        }
                    }
                }
            } else {
                for r in 0..nr {
                    let o = &mut rows[r * ldo + j0..r * ldo + j0 + len];
                    for kk in 0..k {
                        let brow = &b.data[kk * b.ld + j0..kk * b.ld + j0 + len];
                        let w = a.data[(r0 + r) * a.ld + kk];
                        for (v, &x) in o.iter_mut().zip(brow) {
                            *v += w * x;
                        }
                    }
                }
            }
        }
    });
}

/// Dot product with eight fixed partial sums, combined in a fixed order.
#[inline]
pub(crate) fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut lanes = [S::zero(); 8];
    let split = n - n % 8;
    for (ca, cb) in a[..split].chunks_exact(8).zip(b[..split].chunks_exact(8)) {
        for l in 0..8 {
            lanes[l] += ca[l] * cb[l];
        }
    }
    for i in split..n {
        lanes[i % 8] += a[i] * b[i];
    }
    ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5])) + ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7]))
}

/// `out[i, j] += dot(a_row_i, b_row_j)` over `n` columns; `out` is `m x k`, contiguous.
pub(crate) fn matmul_nt_acc<S: Scalar>(m: usize, k: usize, n: usize, a: Mat<'_, S>, b: Mat<'_, S>, out: &mut [S]) {
    for_each_chunk(&mut out[..m * k], k, |i, row| {
        let ar = &a.data[i * a.ld..i * a.ld + n];
        for (j, o) in row.iter_mut().enumerate() {
            *o += dot(ar, &b.data[j * b.ld..j * b.ld + n]);
        }
    });
}

/// Transpose of a contiguous `rows x cols` matrix.
pub(crate) fn transpose<S: Scalar>(src: &[S], rows: usize, cols: usize) -> Vec<S> {
    let mut out = vec![S::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

/// Split the `H` rows of a `W`-wide frame into blocks whose column buffers
/// (`k_rows` rows each) stay under [`BLOCK_ELEMS`].
pub(crate) fn row_blocks(h: usize, w: usize, k_rows: usize) -> impl Iterator<Item = (usize, usize)> {
    let per = (BLOCK_ELEMS / (k_rows * w).max(1)).clamp(1, h);
    (0..h).step_by(per).map(move |h0| (h0, (h0 + per).min(h)))
}
