//! Reverse-mode differentiation over an append-only tape.
//!
//! Nodes are recorded in execution order, which is a topological order, so
//! the backward sweep is a single reverse pass that visits each record once.

use std::collections::HashMap;

use super::ops::{self, AttentionShape};
use super::params::{ParamId, ParamStore};
use super::scalar::Scalar;
use super::tensor::Tensor;
use super::NumericsError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

type BackwardFn<T> = Box<dyn Fn(&[&Tensor<T>], &Tensor<T>, &Tensor<T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Tensor<T>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
}

/// Gradients of a scalar with respect to each parameter used on the tape.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    by_param: HashMap<ParamId, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `id`; `None` for parameters that never reached the loss.
    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.by_param.get(&id)
    }

    /// Gradient for `id`, zeros when the parameter was disconnected.
    pub fn get_or_zeros(&self, id: ParamId, shape: &[usize]) -> Tensor<T> {
        self.by_param.get(&id).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }

    pub fn all_finite(&self) -> bool {
        self.by_param.values().all(|t| t.all_finite())
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, parents: Vec<usize>, backward: Option<BackwardFn<T>>) -> Var {
        self.nodes.push(Node { value, parents, backward });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Vec::new(), None)
    }

    /// Leaf for a parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Vec::new(), None);
        self.params.insert(id, v);
        v
    }

    fn unary(&mut self, x: Var, value: Tensor<T>, f: BackwardFn<T>) -> Var {
        self.push(value, vec![x.0], Some(f))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(
            out,
            vec![a.0, b.0],
            Some(Box::new(|inp, _, g| {
                let da = ops::matmul_nt(g, inp[1]).expect("shapes checked forward");
                let at = transpose(inp[0], inp[0].rows(), inp[0].cols());
                let db = ops::matmul(&at, g).expect("shapes checked forward");
                vec![Some(da), Some(db)]
            })),
        ))
    }

    /// `a @ b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = ops::matmul_nt(self.value(a), self.value(b))?;
        Ok(self.push(
            out,
            vec![a.0, b.0],
            Some(Box::new(|inp, _, g| {
                let da = ops::matmul(g, inp[1]).expect("shapes checked forward");
                let gt = transpose(g, g.rows(), g.cols());
                let db = ops::matmul(&gt, inp[0]).expect("shapes checked forward");
                vec![Some(da), Some(db)]
            })),
        ))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, NumericsError> {
        let out = ops::linear(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let mut parents = vec![x.0, w.0];
        if let Some(b) = b {
            parents.push(b.0);
        }
        Ok(self.push(
            out,
            parents,
            Some(Box::new(|inp, _, g| {
                let (dx, dw, db) = ops::linear_backward(inp[0], inp[1], g);
                let mut grads = vec![Some(dx), Some(dw)];
                if inp.len() == 3 {
                    grads.push(Some(db.reshape(inp[2].shape()).expect("bias shape")));
                }
                grads
            })),
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(NumericsError::shape("add", format!("{:?} + {:?}", va.shape(), vb.shape())));
        }
        let mut out = va.clone();
        out.add_assign(vb);
        Ok(self.push(out, vec![a.0, b.0], Some(Box::new(|_, _, g| vec![Some(g.clone()), Some(g.clone())]))))
    }

    /// Adds a non-trainable tensor of the same shape.
    pub fn add_const(&mut self, x: Var, c: &Tensor<T>) -> Result<Var, NumericsError> {
        let vx = self.value(x);
        if vx.shape() != c.shape() {
            return Err(NumericsError::shape("add_const", format!("{:?} + {:?}", vx.shape(), c.shape())));
        }
        let mut out = vx.clone();
        out.add_assign(c);
        Ok(self.unary(x, out, Box::new(|_, _, g| vec![Some(g.clone())])))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(NumericsError::shape("mul", format!("{:?} * {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(va.shape(), data)?;
        Ok(self.push(
            out,
            vec![a.0, b.0],
            Some(Box::new(|inp, _, g| {
                let da = zip_map(g, inp[1], |g, y| g * y);
                let db = zip_map(g, inp[0], |g, x| g * x);
                vec![Some(da), Some(db)]
            })),
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().copied().sum();
        self.unary(x, Tensor::scalar(s), Box::new(|inp, _, g| vec![Some(Tensor::full(inp[0].shape(), g.item()))]))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.exp());
        self.unary(x, out, Box::new(|_, y, g| vec![Some(zip_map(g, y, |g, y| g * y))]))
    }

    /// Multiplies every element of `x` by the single-element `s`.
    pub fn scale(&mut self, x: Var, s: Var) -> Result<Var, NumericsError> {
        if self.value(s).len() != 1 {
            return Err(NumericsError::shape("scale", format!("scale factor {:?}", self.value(s).shape())));
        }
        let sv = self.value(s).item();
        let out = self.value(x).map(|v| v * sv);
        Ok(self.push(
            out,
            vec![x.0, s.0],
            Some(Box::new(|inp, _, g| {
                let sv = inp[1].item();
                let dx = g.map(|v| v * sv);
                let ds: T = g.data().iter().zip(inp[0].data()).map(|(&a, &b)| a * b).sum();
                vec![Some(dx), Some(Tensor::full(inp[1].shape(), ds))]
            })),
        ))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let out = ops::softmax(self.value(x));
        self.unary(x, out, Box::new(|_, y, g| vec![Some(ops::softmax_backward(y, g))]))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = ops::gelu(self.value(x));
        self.unary(x, out, Box::new(|inp, _, g| vec![Some(ops::gelu_backward(inp[0], g))]))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, NumericsError> {
        let (out, stats) = ops::layer_norm(self.value(x), self.value(gamma), self.value(beta))?;
        Ok(self.push(
            out,
            vec![x.0, gamma.0, beta.0],
            Some(Box::new(move |inp, _, g| {
                let (dx, dg, db) = ops::layer_norm_backward(inp[0], inp[1], &stats, g);
                vec![Some(dx), Some(dg), Some(db)]
            })),
        ))
    }

    pub fn l2_normalize(&mut self, x: Var) -> Var {
        let (out, norms) = ops::l2_normalize(self.value(x));
        self.unary(x, out, Box::new(move |_, y, g| vec![Some(ops::l2_normalize_backward(y, &norms, g))]))
    }

    pub fn attention(
        &mut self,
        qkv: Var,
        shape: AttentionShape,
        key_mask: Option<Vec<bool>>,
    ) -> Result<Var, NumericsError> {
        let (out, probs) = ops::attention(self.value(qkv), shape, key_mask.as_deref())?;
        Ok(self.unary(
            qkv,
            out,
            Box::new(move |inp, _, g| vec![Some(ops::attention_backward(inp[0], &probs, shape, g))]),
        ))
    }

    /// Selects rows of a `[n, d]` tensor; the adjoint scatter-adds.
    pub fn gather_rows(&mut self, x: Var, indices: Vec<usize>) -> Result<Var, NumericsError> {
        let vx = self.value(x);
        let (n, d) = (vx.rows(), vx.cols());
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(NumericsError::shape("gather_rows", format!("index {} into {:?}", bad, vx.shape())));
        }
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in &indices {
            data.extend_from_slice(vx.row(i));
        }
        let out = Tensor::new(&[indices.len(), d], data)?;
        Ok(self.unary(
            x,
            out,
            Box::new(move |inp, _, g| {
                let mut dx = Tensor::zeros(inp[0].shape());
                for (r, &i) in indices.iter().enumerate() {
                    for (a, &b) in dx.row_mut(i).iter_mut().zip(g.row(r)) {
                        *a += b;
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Inserts the single row `token` in front of each group of `group` rows.
    pub fn prepend_token(&mut self, x: Var, token: Var, group: usize) -> Result<Var, NumericsError> {
        let (vx, vt) = (self.value(x), self.value(token));
        let d = vx.cols();
        if vt.len() != d || group == 0 || vx.rows() % group != 0 {
            return Err(NumericsError::shape(
                "prepend_token",
                format!("x {:?}, token {:?}, group {}", vx.shape(), vt.shape(), group),
            ));
        }
        let groups = vx.rows() / group;
        let mut data = Vec::with_capacity((vx.rows() + groups) * d);
        for b in 0..groups {
            data.extend_from_slice(vt.data());
            data.extend_from_slice(&vx.data()[b * group * d..(b + 1) * group * d]);
        }
        let out = Tensor::new(&[groups * (group + 1), d], data)?;
        Ok(self.push(
            out,
            vec![x.0, token.0],
            Some(Box::new(move |inp, _, g| {
                let d = inp[0].cols();
                let groups = inp[0].rows() / group;
                let mut dx = Vec::with_capacity(inp[0].len());
                let mut dt = Tensor::zeros(inp[1].shape());
                for b in 0..groups {
                    let start = b * (group + 1) * d;
                    for (a, &v) in dt.data_mut().iter_mut().zip(&g.data()[start..start + d]) {
                        *a += v;
                    }
                    dx.extend_from_slice(&g.data()[start + d..start + (group + 1) * d]);
                }
                vec![Some(Tensor::new(inp[0].shape(), dx).expect("shape")), Some(dt)]
            })),
        ))
    }

    /// Mean over each group of `group` consecutive rows, skipping the first
    /// `skip` rows of every group.
    pub fn group_mean(&mut self, x: Var, group: usize, skip: usize) -> Result<Var, NumericsError> {
        let vx = self.value(x);
        let d = vx.cols();
        if group <= skip || !vx.rows().is_multiple_of(group) {
            return Err(NumericsError::shape(
                "group_mean",
                format!("x {:?}, group {}, skip {}", vx.shape(), group, skip),
            ));
        }
        let groups = vx.rows() / group;
        let inv = T::one() / T::lit((group - skip) as f64);
        let mut out = Tensor::zeros(&[groups, d]);
        for b in 0..groups {
            for r in skip..group {
                let src = vx.row(b * group + r);
                for (o, &v) in out.row_mut(b).iter_mut().zip(src) {
                    *o += v * inv;
                }
            }
        }
        Ok(self.unary(
            x,
            out,
            Box::new(move |inp, _, g| {
                let mut dx = Tensor::zeros(inp[0].shape());
                for b in 0..groups {
                    for r in skip..group {
                        for (o, &v) in dx.row_mut(b * group + r).iter_mut().zip(g.row(b)) {
                            *o = v * inv;
                        }
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Symmetric contrastive loss over square logits.
    pub fn clip_loss(&mut self, logits: Var) -> Result<Var, NumericsError> {
        let (loss, grad) = ops::clip_loss(self.value(logits))?;
        Ok(self.unary(
            logits,
            Tensor::scalar(loss),
            Box::new(move |_, _, g| vec![Some(grad.map(|v| v * g.item()))]),
        ))
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, NumericsError> {
        if self.value(loss).len() != 1 {
            return Err(NumericsError::shape("backward", format!("loss {:?} is not a scalar", self.value(loss).shape())));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if let Some(f) = &node.backward {
                let inputs: Vec<&Tensor<T>> = node.parents.iter().map(|&p| &self.nodes[p].value).collect();
                for (&p, pg) in node.parents.iter().zip(f(&inputs, &node.value, &g)) {
                    let Some(pg) = pg else { continue };
                    match &mut grads[p] {
                        Some(acc) => acc.add_assign(&pg),
                        slot => *slot = Some(pg),
                    }
                }
            }
            grads[idx] = Some(g);
        }
        let by_param = self
            .params
            .iter()
            .filter_map(|(&id, &v)| grads[v.0].take().map(|g| (id, g)))
            .collect();
        Ok(Gradients { by_param })
    }
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("same shape")
}

fn transpose<T: Scalar>(x: &Tensor<T>, rows: usize, cols: usize) -> Tensor<T> {
    let mut out = Tensor::zeros(&[cols, rows]);
    for r in 0..rows {
        for c in 0..cols {
            out.data_mut()[c * rows + r] = x.data()[r * cols + c];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_of_sum_of_squares() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("x", Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap());
        let mut tape = Tape::new();
        let x = tape.param(&store, id);
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(id).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn disconnected_parameter_has_zero_gradient() {
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", Tensor::from_f64(&[1], &[3.0]).unwrap());
        let b = store.add("b", Tensor::from_f64(&[1], &[5.0]).unwrap());
        let mut tape = Tape::new();
        let va = tape.param(&store, a);
        let _vb = tape.param(&store, b);
        let loss = tape.sum(va);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(b).is_none());
        assert_eq!(grads.get_or_zeros(b, &[1]).data(), &[0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[2]));
        assert!(tape.backward(x).is_err());
    }
}
