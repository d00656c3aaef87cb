//! Dense numeric kernels shared by the forward and backward rules.

/// `C = op(A) · op(B)` (or `C += ...` when `accumulate`), all row-major.
///
/// `A` is `m×k` (stored `k×m` when `trans_a`), `B` is `k×n` (stored `n×k`
/// when `trans_b`), `C` is `m×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(0.0);
        }
        return;
    }
    let (rsa, csa) = if trans_a { (1, m) } else { (k, 1) };
    let (rsb, csb) = if trans_b { (1, k) } else { (n, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above guarantee every strided access of the
    // m×k, k×n and m×n operands stays inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a valid time convolution over `[batch, time, sensors, channels]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub time: usize,
    pub sensors: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl ConvDims {
    pub fn out_time(&self) -> usize {
        self.time + 1 - self.kernel
    }

    pub fn rows(&self) -> usize {
        self.batch * self.out_time() * self.sensors
    }

    pub fn patch(&self) -> usize {
        self.kernel * self.in_channels
    }
}

/// Unfolds every output position's receptive field into one row.
///
/// Row `((b·T' + t)·S + s)` holds `x[b, t + dk, s, c]` at column `dk·C + c`.
pub(crate) fn im2col(x: &[f64], d: &ConvDims) -> Vec<f64> {
    let tout = d.out_time();
    let patch = d.patch();
    let cin = d.in_channels;
    let mut cols = vec![0.0; d.rows() * patch];
    for b in 0..d.batch {
        for t in 0..tout {
            for s in 0..d.sensors {
                let row = ((b * tout + t) * d.sensors + s) * patch;
                for dk in 0..d.kernel {
                    let src = ((b * d.time + t + dk) * d.sensors + s) * cin;
                    cols[row + dk * cin..row + (dk + 1) * cin]
                        .copy_from_slice(&x[src..src + cin]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds patch rows back onto the input grid.
pub(crate) fn col2im(cols: &[f64], d: &ConvDims, dx: &mut [f64]) {
    let tout = d.out_time();
    let patch = d.patch();
    let cin = d.in_channels;
    for b in 0..d.batch {
        for t in 0..tout {
            for s in 0..d.sensors {
                let row = ((b * tout + t) * d.sensors + s) * patch;
                for dk in 0..d.kernel {
                    let dst = ((b * d.time + t + dk) * d.sensors + s) * cin;
                    for c in 0..cin {
                        dx[dst + c] += cols[row + dk * cin + c];
                    }
                }
            }
        }
    }
}

/// Copies axis-`[start, start+len)` slabs of a tensor viewed as `[outer, axis, inner]`.
pub(crate) fn slice_axis(
    src: &[f64],
    outer: usize,
    axis_len: usize,
    inner: usize,
    start: usize,
    len: usize,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * axis_len + start) * inner;
        out.extend_from_slice(&src[base..base + len * inner]);
    }
    out
}

/// Maps a row-major index permutation: `out[idx] = src[perm(idx)]`.
pub(crate) fn permute(src: &[f64], shape: &[usize], axes: &[usize]) -> Vec<f64> {
    let nd = shape.len();
    let mut in_strides = vec![1usize; nd];
    for i in (0..nd.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let total = src.len();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; nd];
    let mut offset = 0usize;
    for _ in 0..total {
        out.push(src[offset]);
        for d in (0..nd).rev() {
            idx[d] += 1;
            offset += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    out
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let th = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}
