//! Raw slice kernels shared by the graph ops and their backward rules.

use super::Real;

/// `C[m×n] = A[m×k] · B[k×n]`.
pub fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    matmul_acc(a, b, &mut c, m, k, n);
    c
}

/// `C += A · B`.
pub fn matmul_acc<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// `C[m×k] += A[m×n] · B[k×n]ᵀ`.
pub fn matmul_a_bt_acc<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let mut acc = T::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            c[i * k + p] += acc;
        }
    }
}

/// `C[k×n] += A[m×k]ᵀ · B[m×n]`.
pub fn matmul_at_b_acc<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let c_row = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// Geometry of a batched 1-D convolution over `[batch, len, c_in]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv1dDims {
    pub batch: usize,
    pub len: usize,
    pub c_in: usize,
    pub kernel: usize,
    pub c_out: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv1dDims {
    pub fn out_len(&self) -> usize {
        (self.len + 2 * self.padding - self.kernel) / self.stride + 1
    }

    /// Input position for output `o` and tap `kk`, or `None` inside the padding.
    #[inline]
    fn source(&self, o: usize, kk: usize) -> Option<usize> {
        let pos = (o * self.stride + kk) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < self.len).then_some(pos as usize)
    }
}

pub fn conv1d_forward<T: Real>(x: &[T], w: &[T], d: &Conv1dDims) -> Vec<T> {
    let out_len = d.out_len();
    let mut out = vec![T::zero(); d.batch * out_len * d.c_out];
    for b in 0..d.batch {
        for o in 0..out_len {
            let dst = &mut out[(b * out_len + o) * d.c_out..(b * out_len + o + 1) * d.c_out];
            for kk in 0..d.kernel {
                let Some(i) = d.source(o, kk) else { continue };
                let x_row = &x[(b * d.len + i) * d.c_in..(b * d.len + i + 1) * d.c_in];
                for (ci, &xv) in x_row.iter().enumerate() {
                    let w_row = &w[(kk * d.c_in + ci) * d.c_out..(kk * d.c_in + ci + 1) * d.c_out];
                    for (ov, &wv) in dst.iter_mut().zip(w_row) {
                        *ov += xv * wv;
                    }
                }
            }
        }
    }
    out
}

/// Accumulates input and kernel gradients of a convolution.
pub fn conv1d_backward<T: Real>(
    x: &[T],
    w: &[T],
    dout: &[T],
    d: &Conv1dDims,
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
) {
    let out_len = d.out_len();
    let mut dx = dx;
    let mut dw = dw;
    for b in 0..d.batch {
        for o in 0..out_len {
            let g = &dout[(b * out_len + o) * d.c_out..(b * out_len + o + 1) * d.c_out];
            for kk in 0..d.kernel {
                let Some(i) = d.source(o, kk) else { continue };
                let base = (b * d.len + i) * d.c_in;
                for ci in 0..d.c_in {
                    let w_off = (kk * d.c_in + ci) * d.c_out;
                    if let Some(dx) = dx.as_deref_mut() {
                        let w_row = &w[w_off..w_off + d.c_out];
                        let mut acc = T::zero();
                        for (&gv, &wv) in g.iter().zip(w_row) {
                            acc += gv * wv;
                        }
                        dx[base + ci] += acc;
                    }
                    if let Some(dw) = dw.as_deref_mut() {
                        let xv = x[base + ci];
                        for (dwv, &gv) in dw[w_off..w_off + d.c_out].iter_mut().zip(g) {
                            *dwv += xv * gv;
                        }
                    }
                }
            }
        }
    }
}

/// Sizes of a fused LSTM sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmDims {
    pub steps: usize,
    pub batch: usize,
    pub hidden: usize,
}

/// Per-step activations kept for the backward pass, all time-major.
pub struct LstmTrace<T> {
    /// Gate activations i, f, g, o: `[T × B × 4H]`.
    pub gates: Vec<T>,
    /// Cell states `[T × B × H]`.
    pub cells: Vec<T>,
    /// Hidden states `[T × B × H]`.
    pub hiddens: Vec<T>,
}

/// Runs the cell from zero state. `xw` holds the input projection plus bias
/// for every step, `[T·B × 4H]`; `wh` is `[H × 4H]`.
pub fn lstm_forward<T: Real>(xw: &[T], wh: &[T], d: LstmDims) -> LstmTrace<T> {
    let LstmDims { steps, batch, hidden: h } = d;
    let (row, step) = (4 * h, batch * 4 * h);
    let mut gates = xw.to_vec();
    let mut cells = vec![T::zero(); steps * batch * h];
    let mut hiddens = vec![T::zero(); steps * batch * h];
    for t in 0..steps {
        let a = &mut gates[t * step..(t + 1) * step];
        if t > 0 {
            matmul_acc(&hiddens[(t - 1) * batch * h..t * batch * h], wh, a, batch, h, row);
        }
        for b in 0..batch {
            let a = &mut a[b * row..(b + 1) * row];
            let at = (t * batch + b) * h;
            for j in 0..h {
                let i = sigmoid(a[j]);
                let f = sigmoid(a[h + j]);
                let g = a[2 * h + j].tanh();
                let o = sigmoid(a[3 * h + j]);
                a[j] = i;
                a[h + j] = f;
                a[2 * h + j] = g;
                a[3 * h + j] = o;
                let prev = if t > 0 { cells[at - batch * h + j] } else { T::zero() };
                let c = f * prev + i * g;
                cells[at + j] = c;
                hiddens[at + j] = o * c.tanh();
            }
        }
    }
    LstmTrace { gates, cells, hiddens }
}

/// Back-propagation through time from `dh_last`, the gradient of the final
/// hidden state. Accumulates into `dxw` (`[T·B × 4H]`) and `dwh` when given.
pub fn lstm_backward<T: Real>(
    trace: &LstmTrace<T>,
    wh: &[T],
    d: LstmDims,
    dh_last: &[T],
    mut dxw: Option<&mut [T]>,
    mut dwh: Option<&mut [T]>,
) {
    let LstmDims { steps, batch, hidden: h } = d;
    let (row, step) = (4 * h, batch * 4 * h);
    let mut dh = dh_last.to_vec();
    let mut dc = vec![T::zero(); batch * h];
    let mut da = vec![T::zero(); step];
    for t in (0..steps).rev() {
        let gates = &trace.gates[t * step..(t + 1) * step];
        for b in 0..batch {
            let gs = &gates[b * row..(b + 1) * row];
            let at = (t * batch + b) * h;
            for j in 0..h {
                let (i, f, g, o) = (gs[j], gs[h + j], gs[2 * h + j], gs[3 * h + j]);
                let tc = trace.cells[at + j].tanh();
                let k = b * h + j;
                let dhk = dh[k];
                let c = flush(dc[k] + dhk * o * (T::one() - tc * tc));
                let prev = if t > 0 { trace.cells[at - batch * h + j] } else { T::zero() };
                let a = &mut da[b * row..(b + 1) * row];
                a[j] = flush(c * g * i * (T::one() - i));
                a[h + j] = flush(c * prev * f * (T::one() - f));
                a[2 * h + j] = flush(c * i * (T::one() - g * g));
                a[3 * h + j] = flush(dhk * tc * o * (T::one() - o));
                dc[k] = flush(c * f);
            }
        }
        if let Some(dxw) = dxw.as_deref_mut() {
            for (x, &v) in dxw[t * step..(t + 1) * step].iter_mut().zip(&da) {
                *x += v;
            }
        }
        if t > 0 {
            let h_prev = &trace.hiddens[(t - 1) * batch * h..t * batch * h];
            if let Some(dwh) = dwh.as_deref_mut() {
                matmul_at_b_acc(h_prev, &da, dwh, batch, h, row);
            }
            dh.iter_mut().for_each(|v| *v = T::zero());
            matmul_a_bt_acc(&da, wh, &mut dh, batch, row, h);
            dh.iter_mut().for_each(|v| *v = flush(*v));
        }
    }
}

/// Zeroes subnormals. Gradients decaying through long recurrences otherwise
/// end up in the (very slow) subnormal range.
#[inline]
fn flush<T: Real>(x: T) -> T {
    if x.abs() < T::min_positive_value() {
        T::zero()
    } else {
        x
    }
}

/// `ln(1 + eˣ)` with the large-argument branch at 30, floored at the smallest
/// positive normal so the result stays strictly positive after underflow.
#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    if x > T::from_f64(30.0) {
        x
    } else {
        x.exp().ln_1p().max(T::min_positive_value())
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Row-wise softmax over the last axis with max subtraction.
pub fn softmax_rows<T: Real>(x: &[T], n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for (src, dst) in x.chunks(n).zip(out.chunks_mut(n)) {
        let max = src.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            total += *d;
        }
        for d in dst.iter_mut() {
            *d = *d / total;
        }
    }
    out
}

/// Row-major strides for `shape`.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Copies `x` (with `shape`) into the axis order `perm`.
pub fn permute<T: Real>(x: &[T], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<T>) {
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = strides(shape);
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(x.len());
    let mut idx = vec![0usize; out_shape.len()];
    let mut offset = 0usize;
    for _ in 0..x.len() {
        out.push(x[offset]);
        for ax in (0..idx.len()).rev() {
            idx[ax] += 1;
            offset += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= src_strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    (out_shape, out)
}

pub fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}
