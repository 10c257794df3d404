//! Raw numeric kernels on flat row-major buffers. The tape owns shape
//! checking and gradient bookkeeping; these functions assume validated
//! inputs. GEMM delegates to ndarray, which routes f32/f64 to the
//! matrixmultiply crate; everything else is explicit loops.

use ndarray::{ArrayView2, ArrayViewMut2};

use super::Element;

/// out = alpha * op(a) @ op(b) + beta * out, with op = transpose when flagged.
/// Dimensions are those of the *stored* matrices, pre-transpose.
#[allow(clippy::too_many_arguments)]
pub fn gemm_into<E: Element>(
    alpha: E,
    a: &[E],
    a_rows: usize,
    a_cols: usize,
    trans_a: bool,
    b: &[E],
    b_rows: usize,
    b_cols: usize,
    trans_b: bool,
    beta: E,
    out: &mut [E],
) {
    let av = ArrayView2::from_shape((a_rows, a_cols), a).expect("gemm lhs shape");
    let bv = ArrayView2::from_shape((b_rows, b_cols), b).expect("gemm rhs shape");
    let av = if trans_a { av.reversed_axes() } else { av };
    let bv = if trans_b { bv.reversed_axes() } else { bv };
    let (m, n) = (av.nrows(), bv.ncols());
    debug_assert_eq!(av.ncols(), bv.nrows());
    let mut cv = ArrayViewMut2::from_shape((m, n), out).expect("gemm out shape");
    ndarray::linalg::general_mat_mul(alpha, &av, &bv, beta, &mut cv);
}

pub fn matmul2<E: Element>(a: &[E], b: &[E], m: usize, k: usize, n: usize) -> Vec<E> {
    let mut out = vec![E::zero(); m * n];
    gemm_into(E::one(), a, m, k, false, b, k, n, false, E::zero(), &mut out);
    out
}

/// Lay out x [B, C, T] as patch rows [B*T, C*k] with zero padding (k-1)/2,
/// so that convolution becomes one GEMM against w viewed as [Cout, C*k].
pub fn im2col<E: Element>(x: &[E], b: usize, c: usize, t: usize, k: usize) -> Vec<E> {
    let pad = (k - 1) / 2;
    let mut cols = vec![E::zero(); b * t * c * k];
    for bi in 0..b {
        for ti in 0..t {
            let row = (bi * t + ti) * c * k;
            for ci in 0..c {
                let x_base = (bi * c + ci) * t;
                for ki in 0..k {
                    let src = ti + ki;
                    if src >= pad && src - pad < t {
                        cols[row + ci * k + ki] = x[x_base + (src - pad)];
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add of im2col rows back into x-layout [B, C, T].
pub fn col2im_acc<E: Element>(cols: &[E], b: usize, c: usize, t: usize, k: usize, dx: &mut [E]) {
    let pad = (k - 1) / 2;
    for bi in 0..b {
        for ti in 0..t {
            let row = (bi * t + ti) * c * k;
            for ci in 0..c {
                let x_base = (bi * c + ci) * t;
                for ki in 0..k {
                    let src = ti + ki;
                    if src >= pad && src - pad < t {
                        dx[x_base + (src - pad)] += cols[row + ci * k + ki];
                    }
                }
            }
        }
    }
}

/// Cross-correlation, zero padding, stride 1, odd k: y [B, Cout, T].
#[allow(clippy::too_many_arguments)]
pub fn conv1d_forward<E: Element>(
    x: &[E],
    w: &[E],
    bias: &[E],
    b: usize,
    c_in: usize,
    t: usize,
    c_out: usize,
    k: usize,
) -> Vec<E> {
    let cols = im2col(x, b, c_in, t, k);
    // rows [B*T, Cout] = cols [B*T, C*k] @ w^T [C*k, Cout]
    let mut rows = vec![E::zero(); b * t * c_out];
    gemm_into(
        E::one(),
        &cols,
        b * t,
        c_in * k,
        false,
        w,
        c_out,
        c_in * k,
        true,
        E::zero(),
        &mut rows,
    );
    let mut y = vec![E::zero(); b * c_out * t];
    for bi in 0..b {
        for ti in 0..t {
            let row = (bi * t + ti) * c_out;
            for co in 0..c_out {
                y[(bi * c_out + co) * t + ti] = rows[row + co] + bias[co];
            }
        }
    }
    y
}

/// Gradients for conv1d_forward. Returns (dx, dw, dbias).
#[allow(clippy::too_many_arguments)]
pub fn conv1d_backward<E: Element>(
    x: &[E],
    w: &[E],
    dy: &[E],
    b: usize,
    c_in: usize,
    t: usize,
    c_out: usize,
    k: usize,
) -> (Vec<E>, Vec<E>, Vec<E>) {
    // dy [B, Cout, T] -> row layout [B*T, Cout]
    let mut dy_rows = vec![E::zero(); b * t * c_out];
    let mut dbias = vec![E::zero(); c_out];
    for bi in 0..b {
        for co in 0..c_out {
            let base = (bi * c_out + co) * t;
            for ti in 0..t {
                let g = dy[base + ti];
                dy_rows[(bi * t + ti) * c_out + co] = g;
                dbias[co] += g;
            }
        }
    }
    let cols = im2col(x, b, c_in, t, k);
    // dw [Cout, C*k] = dy_rows^T [Cout, B*T] @ cols [B*T, C*k]
    let mut dw = vec![E::zero(); c_out * c_in * k];
    gemm_into(
        E::one(),
        &dy_rows,
        b * t,
        c_out,
        true,
        &cols,
        b * t,
        c_in * k,
        false,
        E::zero(),
        &mut dw,
    );
    // dcols [B*T, C*k] = dy_rows @ w
    let mut dcols = vec![E::zero(); b * t * c_in * k];
    gemm_into(
        E::one(),
        &dy_rows,
        b * t,
        c_out,
        false,
        w,
        c_out,
        c_in * k,
        false,
        E::zero(),
        &mut dcols,
    );
    let mut dx = vec![E::zero(); b * c_in * t];
    col2im_acc(&dcols, b, c_in, t, k, &mut dx);
    (dx, dw, dbias)
}

/// Row-wise softmax with max subtraction; exact on extreme logits.
pub fn softmax_rows<E: Element>(x: &[E], rows: usize, cols: usize) -> Vec<E> {
    let mut y = vec![E::zero(); rows * cols];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let m = row.iter().cloned().fold(E::neg_infinity(), E::max);
        let mut sum = E::zero();
        for (o, &v) in y[r * cols..(r + 1) * cols].iter_mut().zip(row) {
            let e = (v - m).exp();
            *o = e;
            sum += e;
        }
        for o in &mut y[r * cols..(r + 1) * cols] {
            *o = *o / sum;
        }
    }
    y
}

/// dX for row-wise softmax: dx = y ⊙ (dy − <dy, y>).
pub fn softmax_backward<E: Element>(y: &[E], dy: &[E], rows: usize, cols: usize) -> Vec<E> {
    let mut dx = vec![E::zero(); rows * cols];
    for r in 0..rows {
        let o = r * cols;
        let mut dot = E::zero();
        for i in 0..cols {
            dot += dy[o + i] * y[o + i];
        }
        for i in 0..cols {
            dx[o + i] = y[o + i] * (dy[o + i] - dot);
        }
    }
    dx
}

/// Row-wise layer norm over the last dimension.
pub fn layer_norm_forward<E: Element>(
    x: &[E],
    rows: usize,
    dim: usize,
    gamma: &[E],
    beta: &[E],
    eps: E,
) -> Vec<E> {
    let mut y = vec![E::zero(); rows * dim];
    let n = E::from_usize(dim);
    for r in 0..rows {
        let o = r * dim;
        let mut mean = E::zero();
        for i in 0..dim {
            mean += x[o + i];
        }
        mean = mean / n;
        let mut var = E::zero();
        for i in 0..dim {
            let d = x[o + i] - mean;
            var += d * d;
        }
        var = var / n;
        let istd = E::one() / (var + eps).sqrt();
        for i in 0..dim {
            y[o + i] = (x[o + i] - mean) * istd * gamma[i] + beta[i];
        }
    }
    y
}

/// Returns (dx, dgamma, dbeta) for layer_norm_forward.
pub fn layer_norm_backward<E: Element>(
    x: &[E],
    dy: &[E],
    rows: usize,
    dim: usize,
    gamma: &[E],
    eps: E,
) -> (Vec<E>, Vec<E>, Vec<E>) {
    let mut dx = vec![E::zero(); rows * dim];
    let mut dgamma = vec![E::zero(); dim];
    let mut dbeta = vec![E::zero(); dim];
    let n = E::from_usize(dim);
    for r in 0..rows {
        let o = r * dim;
        let mut mean = E::zero();
        for i in 0..dim {
            mean += x[o + i];
        }
        mean = mean / n;
        let mut var = E::zero();
        for i in 0..dim {
            let d = x[o + i] - mean;
            var += d * d;
        }
        var = var / n;
        let istd = E::one() / (var + eps).sqrt();
        let mut sum_dh = E::zero();
        let mut sum_dh_xhat = E::zero();
        for i in 0..dim {
            let xhat = (x[o + i] - mean) * istd;
            let dh = dy[o + i] * gamma[i];
            dgamma[i] += dy[o + i] * xhat;
            dbeta[i] += dy[o + i];
            sum_dh += dh;
            sum_dh_xhat += dh * xhat;
        }
        for i in 0..dim {
            let xhat = (x[o + i] - mean) * istd;
            let dh = dy[o + i] * gamma[i];
            dx[o + i] = istd * (dh - sum_dh / n - xhat * sum_dh_xhat / n);
        }
    }
    (dx, dgamma, dbeta)
}

/// Per-channel mean and biased variance of x [B, C, T] over the B and T axes.
pub fn batch_stats<E: Element>(x: &[E], b: usize, c: usize, t: usize) -> (Vec<E>, Vec<E>) {
    let n = E::from_usize(b * t);
    let mut mean = vec![E::zero(); c];
    let mut var = vec![E::zero(); c];
    for ci in 0..c {
        let mut s = E::zero();
        for bi in 0..b {
            let base = (bi * c + ci) * t;
            for ti in 0..t {
                s += x[base + ti];
            }
        }
        mean[ci] = s / n;
        let mut v = E::zero();
        for bi in 0..b {
            let base = (bi * c + ci) * t;
            for ti in 0..t {
                let d = x[base + ti] - mean[ci];
                v += d * d;
            }
        }
        var[ci] = v / n;
    }
    (mean, var)
}

/// Normalize x [B, C, T] per channel with the given statistics.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm_apply<E: Element>(
    x: &[E],
    b: usize,
    c: usize,
    t: usize,
    mean: &[E],
    var: &[E],
    gamma: &[E],
    beta: &[E],
    eps: E,
) -> Vec<E> {
    let mut y = vec![E::zero(); x.len()];
    for ci in 0..c {
        let istd = E::one() / (var[ci] + eps).sqrt();
        for bi in 0..b {
            let base = (bi * c + ci) * t;
            for ti in 0..t {
                y[base + ti] = (x[base + ti] - mean[ci]) * istd * gamma[ci] + beta[ci];
            }
        }
    }
    y
}

/// Gradients for batch norm. `stats_from_batch` distinguishes train mode
/// (statistics were functions of x, full chain rule) from eval mode
/// (statistics were constants). Returns (dx, dgamma, dbeta).
#[allow(clippy::too_many_arguments)]
pub fn batch_norm_backward<E: Element>(
    x: &[E],
    dy: &[E],
    b: usize,
    c: usize,
    t: usize,
    mean: &[E],
    var: &[E],
    gamma: &[E],
    eps: E,
    stats_from_batch: bool,
) -> (Vec<E>, Vec<E>, Vec<E>) {
    let n = E::from_usize(b * t);
    let mut dx = vec![E::zero(); x.len()];
    let mut dgamma = vec![E::zero(); c];
    let mut dbeta = vec![E::zero(); c];
    for ci in 0..c {
        let istd = E::one() / (var[ci] + eps).sqrt();
        let mut sum_dy = E::zero();
        let mut sum_dy_xhat = E::zero();
        for bi in 0..b {
            let base = (bi * c + ci) * t;
            for ti in 0..t {
                let xhat = (x[base + ti] - mean[ci]) * istd;
                sum_dy += dy[base + ti];
                sum_dy_xhat += dy[base + ti] * xhat;
            }
        }
        dgamma[ci] = sum_dy_xhat;
        dbeta[ci] = sum_dy;
        for bi in 0..b {
            let base = (bi * c + ci) * t;
            for ti in 0..t {
                let xhat = (x[base + ti] - mean[ci]) * istd;
                dx[base + ti] = if stats_from_batch {
                    gamma[ci] * istd * (dy[base + ti] - sum_dy / n - xhat * sum_dy_xhat / n)
                } else {
                    gamma[ci] * istd * dy[base + ti]
                };
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Decompose a shape around `axis` into (outer, len, inner) extents.
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn mean_axis<E: Element>(x: &[E], outer: usize, len: usize, inner: usize) -> Vec<E> {
    let n = E::from_usize(len);
    let mut y = vec![E::zero(); outer * inner];
    for o in 0..outer {
        for l in 0..len {
            let base = (o * len + l) * inner;
            for i in 0..inner {
                y[o * inner + i] += x[base + i];
            }
        }
    }
    for v in &mut y {
        *v = *v / n;
    }
    y
}

/// Swap axes 1 and 2 of a rank>=3 shape (inner = product of axes 3..).
pub fn swap12<E: Element>(x: &[E], d0: usize, d1: usize, d2: usize, inner: usize) -> Vec<E> {
    let mut y = vec![E::zero(); x.len()];
    for a in 0..d0 {
        for b in 0..d1 {
            for c in 0..d2 {
                let src = ((a * d1 + b) * d2 + c) * inner;
                let dst = ((a * d2 + c) * d1 + b) * inner;
                y[dst..dst + inner].copy_from_slice(&x[src..src + inner]);
            }
        }
    }
    y
}

/// Transpose the trailing two axes of a [batch, m, n] layout.
pub fn transpose_last2<E: Element>(x: &[E], batch: usize, m: usize, n: usize) -> Vec<E> {
    let mut y = vec![E::zero(); x.len()];
    for bi in 0..batch {
        let base = bi * m * n;
        for r in 0..m {
            for c in 0..n {
                y[base + c * m + r] = x[base + r * n + c];
            }
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_2x3_3x2_hand_value() {
        // [[1,2,3],[4,5,6]] @ [[7,8],[9,10],[11,12]] = [[58,64],[139,154]]
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0f64, 8.0, 9.0, 10.0, 11.0, 12.0];
        let c = matmul2(&a, &b, 2, 3, 2);
        assert_eq!(c, vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn conv_identity_kernel_recovers_input() {
        // k=1, single channel, unit weight: cross-correlation is identity.
        let x = [1.0f64, -2.0, 3.0, 0.5];
        let y = conv1d_forward(&x, &[1.0], &[0.0], 1, 1, 4, 1, 1);
        assert_eq!(y, x.to_vec());
    }

    #[test]
    fn conv_k3_hand_value_with_zero_padding() {
        // x = [1,2,3], w = [1,1,1]: y = [0+1+2, 1+2+3, 2+3+0] = [3,6,5]
        let x = [1.0f64, 2.0, 3.0];
        let w = [1.0f64, 1.0, 1.0];
        let y = conv1d_forward(&x, &w, &[0.0], 1, 1, 3, 1, 3);
        assert_eq!(y, vec![3.0, 6.0, 5.0]);
    }

    #[test]
    fn conv_is_cross_correlation_not_flipped() {
        // Asymmetric kernel [1,0,0] picks the *left* neighbor under
        // cross-correlation: y[t] = x[t-1].
        let x = [1.0f64, 2.0, 3.0];
        let w = [1.0f64, 0.0, 0.0];
        let y = conv1d_forward(&x, &w, &[0.0], 1, 1, 3, 1, 3);
        assert_eq!(y, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn conv_preserves_length_when_t_smaller_than_k() {
        let x = [2.0f64];
        let w = [1.0f64; 7];
        let y = conv1d_forward(&x, &w, &[0.0], 1, 1, 1, 1, 7);
        assert_eq!(y.len(), 1);
        assert_eq!(y[0], 2.0);
    }

    #[test]
    fn softmax_handles_extreme_logits() {
        let y = softmax_rows(&[1000.0f64, 0.0], 1, 2);
        assert_eq!(y, vec![1.0, 0.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let y = softmax_rows(&[0.3f64, -1.2, 2.0, 0.0, 0.0, 0.0], 2, 3);
        for r in 0..2 {
            let s: f64 = y[r * 3..(r + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_constant_row_maps_to_beta() {
        let y =
            layer_norm_forward(&[5.0f64, 5.0, 5.0], 1, 3, &[1.0, 1.0, 1.0], &[0.5, 0.5, 0.5], 1e-5);
        for v in y {
            assert!((v - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn batch_stats_match_hand_computation() {
        // x [B=2, C=1, T=2] = [1,2 | 3,4]: mean 2.5, biased var 1.25
        let (m, v) = batch_stats(&[1.0f64, 2.0, 3.0, 4.0], 2, 1, 2);
        assert_eq!(m, vec![2.5]);
        assert_eq!(v, vec![1.25]);
    }

    #[test]
    #[allow(clippy::identity_op)]
    fn swap12_round_trips() {
        let x: Vec<f64> = (0..24).map(|i| i as f64).collect();
        let y = swap12(&x, 2, 3, 4, 1);
        let back = swap12(&y, 2, 4, 3, 1);
        assert_eq!(x, back);
        // spot check: x[a=1,b=2,c=3] lands at y[a=1,c=3,b=2]
        assert_eq!(y[(1 * 4 + 3) * 3 + 2], x[(1 * 3 + 2) * 4 + 3]);
    }

    #[test]
    fn transpose_last2_spot_check() {
        let x: Vec<f64> = (0..6).map(|i| i as f64).collect();
        let y = transpose_last2(&x, 1, 2, 3);
        assert_eq!(y, vec![0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
    }
}
