//! Forward kernels and their hand-written adjoints.
//!
//! Every function here is a pure function of its inputs. The tape in
//! [`super::tape`] wires them together; tests call them directly.

use super::scalar::{gemm, MatView, Scalar};
use super::tensor::Tensor;
use super::NumericsError;

/// Rows with a norm below this are mapped to the first basis vector.
pub const NORM_EPS: f64 = 1e-8;
pub const LAYER_NORM_EPS: f64 = 1e-6;

fn require_2d<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize), NumericsError> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(NumericsError::shape(op, format!("expected a matrix, got {:?}", s))),
    }
}

/// `a @ b` for `[m, k] x [k, n]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, NumericsError> {
    let (m, k) = require_2d("matmul", a)?;
    let (k2, n) = require_2d("matmul", b)?;
    if k != k2 {
        return Err(NumericsError::shape("matmul", format!("{:?} x {:?}", a.shape(), b.shape())));
    }
    let mut out = Tensor::zeros(&[m, n]);
    gemm(
        T::one(),
        a.data(),
        MatView::dense(m, k),
        b.data(),
        MatView::dense(k, n),
        T::zero(),
        out.data_mut(),
        MatView::dense(m, n),
    );
    Ok(out)
}

/// `a @ b^T` for `[m, k] x [n, k]`.
pub fn matmul_nt<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, NumericsError> {
    let (m, k) = require_2d("matmul_nt", a)?;
    let (n, k2) = require_2d("matmul_nt", b)?;
    if k != k2 {
        return Err(NumericsError::shape("matmul_nt", format!("{:?} x {:?}^T", a.shape(), b.shape())));
    }
    let mut out = Tensor::zeros(&[m, n]);
    gemm(
        T::one(),
        a.data(),
        MatView::dense(m, k),
        b.data(),
        MatView::dense(n, k).t(),
        T::zero(),
        out.data_mut(),
        MatView::dense(m, n),
    );
    Ok(out)
}

/// `x @ w + b` for `x: [n, in]`, `w: [in, out]`, `b: [out]`.
pub fn linear<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
) -> Result<Tensor<T>, NumericsError> {
    let mut out = matmul(x, w).map_err(|_| {
        NumericsError::shape("linear", format!("x {:?} with w {:?}", x.shape(), w.shape()))
    })?;
    if let Some(b) = b {
        let cols = out.cols();
        if b.len() != cols {
            return Err(NumericsError::shape(
                "linear",
                format!("bias {:?} for output width {}", b.shape(), cols),
            ));
        }
        for r in 0..out.rows() {
            for (o, &bb) in out.row_mut(r).iter_mut().zip(b.data()) {
                *o += bb;
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`linear`]: returns `(dx, dw, db)`.
pub fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, din) = (x.rows(), x.cols());
    let dout = w.cols();
    let mut dx = Tensor::zeros(x.shape());
    gemm(
        T::one(),
        dy.data(),
        MatView::dense(n, dout),
        w.data(),
        MatView::dense(din, dout).t(),
        T::zero(),
        dx.data_mut(),
        MatView::dense(n, din),
    );
    let mut dw = Tensor::zeros(w.shape());
    gemm(
        T::one(),
        x.data(),
        MatView::dense(n, din).t(),
        dy.data(),
        MatView::dense(n, dout),
        T::zero(),
        dw.data_mut(),
        MatView::dense(din, dout),
    );
    let mut db = Tensor::zeros(&[dout]);
    for r in 0..n {
        for (d, &g) in db.data_mut().iter_mut().zip(dy.row(r)) {
            *d += g;
        }
    }
    (dx, dw, db)
}

/// Row-wise softmax over the last axis. `-inf` entries get probability 0.
pub fn softmax<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        row.iter_mut().for_each(|v| *v = T::zero());
        return;
    }
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Adjoint of softmax given its output `p`.
pub fn softmax_backward<T: Scalar>(p: &Tensor<T>, dp: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(p.shape());
    for r in 0..p.rows() {
        let (pr, gr) = (p.row(r), dp.row(r));
        let dot: T = pr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for ((d, &pp), &g) in dx.row_mut(r).iter_mut().zip(pr).zip(gr) {
            *d = pp * (g - dot);
        }
    }
    dx
}

/// Per-row statistics saved by layer norm for its adjoint.
#[derive(Clone, Debug)]
pub struct LayerNormStats<T> {
    pub mean: Vec<T>,
    pub rstd: Vec<T>,
}

pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<(Tensor<T>, LayerNormStats<T>), NumericsError> {
    let d = x.cols();
    if gamma.len() != d || beta.len() != d {
        return Err(NumericsError::shape(
            "layer_norm",
            format!("x {:?}, gamma {:?}, beta {:?}", x.shape(), gamma.shape(), beta.shape()),
        ));
    }
    let n = x.rows();
    let mut out = Tensor::zeros(x.shape());
    let mut mean = Vec::with_capacity(n);
    let mut rstd = Vec::with_capacity(n);
    let dn = T::lit(d as f64);
    let eps = T::lit(LAYER_NORM_EPS);
    for r in 0..n {
        let row = x.row(r);
        let mu = row.iter().copied().sum::<T>() / dn;
        let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / dn;
        let rs = T::one() / (var + eps).sqrt();
        for (((o, &v), &g), &b) in out.row_mut(r).iter_mut().zip(row).zip(gamma.data()).zip(beta.data()) {
            *o = (v - mu) * rs * g + b;
        }
        mean.push(mu);
        rstd.push(rs);
    }
    Ok((out, LayerNormStats { mean, rstd }))
}

/// Adjoint of [`layer_norm`]: returns `(dx, dgamma, dbeta)`.
pub fn layer_norm_backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    stats: &LayerNormStats<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let d = x.cols();
    let dn = T::lit(d as f64);
    let mut dx = Tensor::zeros(x.shape());
    let mut dg = Tensor::zeros(gamma.shape());
    let mut db = Tensor::zeros(gamma.shape());
    let mut xhat = vec![T::zero(); d];
    let mut dxhat = vec![T::zero(); d];
    for r in 0..x.rows() {
        let (mu, rs) = (stats.mean[r], stats.rstd[r]);
        let (row, grow) = (x.row(r), dy.row(r));
        for j in 0..d {
            xhat[j] = (row[j] - mu) * rs;
            dxhat[j] = grow[j] * gamma.data()[j];
            dg.data_mut()[j] += grow[j] * xhat[j];
            db.data_mut()[j] += grow[j];
        }
        let sum_dxhat: T = dxhat.iter().copied().sum();
        let sum_dxhat_xhat: T = dxhat.iter().zip(&xhat).map(|(&a, &b)| a * b).sum();
        for (j, o) in dx.row_mut(r).iter_mut().enumerate() {
            *o = rs / dn * (dn * dxhat[j] - sum_dxhat - xhat[j] * sum_dxhat_xhat);
        }
    }
    (dx, dg, db)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU, evaluated as `x * sigmoid(2u)` with
/// `u = c (x + a x^3)`, which equals `0.5 x (1 + tanh u)`.
pub fn gelu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (c2, a) = (T::lit(2.0 * GELU_C), T::lit(GELU_A));
    x.map(|v| v / (T::one() + (-(c2 * (v + a * v * v * v))).exp()))
}

pub fn gelu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let (c2, a, three) = (T::lit(2.0 * GELU_C), T::lit(GELU_A), T::lit(3.0));
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| {
            let s = T::one() / (T::one() + (-(c2 * (v + a * v * v * v))).exp());
            let du2 = c2 * (T::one() + three * a * v * v);
            g * (s + v * s * (T::one() - s) * du2)
        })
        .collect();
    Tensor::new(x.shape(), data).expect("same shape")
}

/// Row-wise L2 normalization with the small-norm guard.
///
/// Returns the output and the per-row norms (0 marks a guarded row).
pub fn l2_normalize<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<T>) {
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.rows());
    let eps = T::lit(NORM_EPS);
    for r in 0..x.rows() {
        let row = out.row_mut(r);
        let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
        if norm < eps || !norm.is_finite() {
            row.iter_mut().for_each(|v| *v = T::zero());
            if let Some(first) = row.first_mut() {
                *first = T::one();
            }
            norms.push(T::zero());
        } else {
            row.iter_mut().for_each(|v| *v /= norm);
            norms.push(norm);
        }
    }
    (out, norms)
}

/// Adjoint of [`l2_normalize`]: `(I/|v| - v v^T/|v|^3) g`; guarded rows get 0.
pub fn l2_normalize_backward<T: Scalar>(y: &Tensor<T>, norms: &[T], dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(y.shape());
    for (r, &norm) in norms.iter().enumerate() {
        if norm == T::zero() {
            continue;
        }
        let (yr, gr) = (y.row(r), dy.row(r));
        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for ((d, &yy), &g) in dx.row_mut(r).iter_mut().zip(yr).zip(gr) {
            *d = (g - yy * dot) / norm;
        }
    }
    dx
}

/// Layout of a packed multi-head attention input.
///
/// `qkv` is `[batch * seq, 3 * width]`, each row `[q | k | v]`, heads laid out
/// contiguously inside each third.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionShape {
    pub batch: usize,
    pub seq: usize,
    pub width: usize,
    pub heads: usize,
}

impl AttentionShape {
    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    fn check<T: Scalar>(&self, qkv: &Tensor<T>, key_mask: Option<&[bool]>) -> Result<(), NumericsError> {
        if self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(NumericsError::shape(
                "attention",
                format!("width {} not divisible by heads {}", self.width, self.heads),
            ));
        }
        if qkv.shape() != [self.batch * self.seq, 3 * self.width] {
            return Err(NumericsError::shape(
                "attention",
                format!("qkv {:?} for {:?}", qkv.shape(), self),
            ));
        }
        if let Some(m) = key_mask {
            if m.len() != self.batch * self.seq {
                return Err(NumericsError::shape(
                    "attention",
                    format!("key mask of length {} for {} tokens", m.len(), self.batch * self.seq),
                ));
            }
        }
        Ok(())
    }
}

/// Scaled dot-product attention. Keys with `key_mask[i] == false` receive an
/// additive `-inf` score. Returns the output `[batch * seq, width]` and the
/// attention probabilities `[batch, heads, seq, seq]` for the adjoint.
pub fn attention<T: Scalar>(
    qkv: &Tensor<T>,
    shape: AttentionShape,
    key_mask: Option<&[bool]>,
) -> Result<(Tensor<T>, Vec<T>), NumericsError> {
    shape.check(qkv, key_mask)?;
    let AttentionShape { batch, seq, width, heads } = shape;
    let dh = shape.head_dim();
    let scale = T::one() / T::lit(dh as f64).sqrt();
    let row = 3 * width;
    let mut out = Tensor::zeros(&[batch * seq, width]);
    let mut probs = vec![T::zero(); batch * heads * seq * seq];
    for b in 0..batch {
        let base = b * seq * row;
        for h in 0..heads {
            let p_off = (b * heads + h) * seq * seq;
            let scores = &mut probs[p_off..p_off + seq * seq];
            gemm(
                scale,
                qkv.data(),
                MatView::at(base + h * dh, seq, dh, row),
                qkv.data(),
                MatView::at(base + width + h * dh, seq, dh, row).t(),
                T::zero(),
                scores,
                MatView::dense(seq, seq),
            );
            for i in 0..seq {
                let srow = &mut scores[i * seq..(i + 1) * seq];
                if let Some(mask) = key_mask {
                    for (j, s) in srow.iter_mut().enumerate() {
                        if !mask[b * seq + j] {
                            *s = T::neg_infinity();
                        }
                    }
                }
                softmax_in_place(srow);
            }
            gemm(
                T::one(),
                &probs[p_off..p_off + seq * seq],
                MatView::dense(seq, seq),
                qkv.data(),
                MatView::at(base + 2 * width + h * dh, seq, dh, row),
                T::zero(),
                out.data_mut(),
                MatView::at(b * seq * width + h * dh, seq, dh, width),
            );
        }
    }
    Ok((out, probs))
}

/// Adjoint of [`attention`] with respect to the packed `qkv` input.
pub fn attention_backward<T: Scalar>(
    qkv: &Tensor<T>,
    probs: &[T],
    shape: AttentionShape,
    dout: &Tensor<T>,
) -> Tensor<T> {
    let AttentionShape { batch, seq, width, heads } = shape;
    let dh = shape.head_dim();
    let scale = T::one() / T::lit(dh as f64).sqrt();
    let row = 3 * width;
    let mut dqkv = Tensor::zeros(qkv.shape());
    let mut dp = vec![T::zero(); seq * seq];
    for b in 0..batch {
        let base = b * seq * row;
        let obase = b * seq * width;
        for h in 0..heads {
            let p = &probs[(b * heads + h) * seq * seq..(b * heads + h + 1) * seq * seq];
            // dV = P^T dO
            gemm(
                T::one(),
                p,
                MatView::dense(seq, seq).t(),
                dout.data(),
                MatView::at(obase + h * dh, seq, dh, width),
                T::zero(),
                dqkv.data_mut(),
                MatView::at(base + 2 * width + h * dh, seq, dh, row),
            );
            // dP = dO V^T
            gemm(
                T::one(),
                dout.data(),
                MatView::at(obase + h * dh, seq, dh, width),
                qkv.data(),
                MatView::at(base + 2 * width + h * dh, seq, dh, row).t(),
                T::zero(),
                &mut dp,
                MatView::dense(seq, seq),
            );
            // dS = scale * P .* (dP - rowsum(dP .* P))
            for i in 0..seq {
                let pr = &p[i * seq..(i + 1) * seq];
                let gr = &mut dp[i * seq..(i + 1) * seq];
                let dot: T = pr.iter().zip(gr.iter()).map(|(&a, &b)| a * b).sum();
                for (g, &pp) in gr.iter_mut().zip(pr) {
                    *g = scale * pp * (*g - dot);
                }
            }
            // dQ = dS K
            gemm(
                T::one(),
                &dp,
                MatView::dense(seq, seq),
                qkv.data(),
                MatView::at(base + width + h * dh, seq, dh, row),
                T::zero(),
                dqkv.data_mut(),
                MatView::at(base + h * dh, seq, dh, row),
            );
            // dK = dS^T Q
            gemm(
                T::one(),
                &dp,
                MatView::dense(seq, seq).t(),
                qkv.data(),
                MatView::at(base + h * dh, seq, dh, row),
                T::zero(),
                dqkv.data_mut(),
                MatView::at(base + width + h * dh, seq, dh, row),
            );
        }
    }
    dqkv
}

/// Symmetric contrastive cross-entropy over a square logit matrix with
/// matched pairs on the diagonal. Returns the loss and its gradient.
pub fn clip_loss<T: Scalar>(logits: &Tensor<T>) -> Result<(T, Tensor<T>), NumericsError> {
    let (n, m) = require_2d("clip_loss", logits)?;
    if n != m {
        return Err(NumericsError::shape("clip_loss", format!("logits {:?} not square", logits.shape())));
    }
    if n < 2 {
        return Err(NumericsError::Contract {
            op: "clip_loss",
            detail: format!("needs at least 2 pairs, got {}", n),
        });
    }
    let row_p = softmax(logits);
    let mut col_p = Tensor::zeros(&[n, n]);
    for j in 0..n {
        let max = (0..n).map(|i| logits.data()[i * n + j]).fold(T::neg_infinity(), T::max);
        let sum: T = (0..n).map(|i| (logits.data()[i * n + j] - max).exp()).sum();
        for i in 0..n {
            col_p.data_mut()[i * n + j] = (logits.data()[i * n + j] - max).exp() / sum;
        }
    }
    let mut loss = T::zero();
    for i in 0..n {
        loss -= row_p.data()[i * n + i].ln();
        loss -= col_p.data()[i * n + i].ln();
    }
    let nn = T::lit(n as f64);
    let two = T::lit(2.0);
    loss /= two * nn;
    let mut grad = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { T::one() } else { T::zero() };
            let g = (row_p.data()[i * n + j] - target) + (col_p.data()[i * n + j] - target);
            grad.data_mut()[i * n + j] = g / (two * nn);
        }
    }
    Ok((loss, grad))
}
