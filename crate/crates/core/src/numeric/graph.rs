//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Node ids are
//! assigned in creation order, which is already a topological order, so the
//! backward pass is a single reverse sweep.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::kernels;
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddScalar(usize),
    Scale(usize, T),
    Pow(usize, T),
    Abs(usize),
    Relu(usize),
    Gelu(usize),
    Clip01(usize),
    Sum(usize),
    Mean(usize),
    MatMul {
        a: usize,
        b: usize,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        trans_b: bool,
    },
    Softmax {
        x: usize,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Conv2d {
        x: usize,
        w: usize,
        bias: Option<usize>,
        k: usize,
    },
    AvgPool2(usize),
    Resize(usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Concat(usize, usize),
    Reshape(usize),
    Gather { x: usize, index: Rc<Vec<usize>> },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<usize> {
        use Op::*;
        match *self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | Concat(a, b) => vec![a, b],
            AddScalar(x) | Scale(x, _) | Pow(x, _) | Abs(x) | Relu(x) | Gelu(x) | Clip01(x)
            | Sum(x) | Mean(x) | AvgPool2(x) | Resize(x) | Reshape(x) => vec![x],
            MatMul { a, b, .. } => vec![a, b],
            Softmax { x, .. } | Gather { x, .. } => vec![x],
            Conv2d { x, w, bias, .. } => {
                let mut v = vec![x, w];
                v.extend(bias);
                v
            }
            LayerNorm { x, gamma, beta, .. } => vec![x, gamma, beta],
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<String>,
}

/// Recording of a computation for reverse-mode differentiation.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: RefCell<Vec<Node<T>>>,
    params: RefCell<HashMap<String, usize>>,
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy)]
pub struct Var<'g, T> {
    graph: &'g Graph<T>,
    id: usize,
}

/// Gradients of the leaves of a graph with respect to a scalar.
#[derive(Debug)]
pub struct Gradients<T> {
    leaves: HashMap<usize, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.leaves.get(&var.id)
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = op.inputs().iter().any(|&i| nodes[i].requires_grad);
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
            param: None,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// A value that gradients never flow into.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf)
    }

    /// A leaf whose gradient is reported by [`Graph::gradients`].
    pub fn input(&self, value: Tensor<T>) -> Var<'_, T> {
        let v = self.push(value, Op::Leaf);
        self.nodes.borrow_mut()[v.id].requires_grad = true;
        v
    }

    /// The named trainable parameter. Repeated lookups share one node, so
    /// every use site contributes to the same gradient.
    pub fn param(&self, store: &ParamStore<T>, name: &str) -> Result<Var<'_, T>> {
        if let Some(&id) = self.params.borrow().get(name) {
            return Ok(Var { graph: self, id });
        }
        let value = store
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))?
            .clone();
        let v = self.input(value);
        self.nodes.borrow_mut()[v.id].param = Some(name.to_string());
        self.params.borrow_mut().insert(name.to_string(), v.id);
        Ok(v)
    }

    /// Zeroes every gradient in `store`, then writes d(loss)/d(param) for
    /// each parameter this graph used. Unused parameters keep a zero gradient.
    pub fn backward(&self, loss: Var<'_, T>, store: &mut ParamStore<T>) -> Result<()> {
        store.zero_grads();
        self.backward_accumulate(loss, store)
    }

    /// Like [`Graph::backward`] but adds onto the existing gradients.
    pub fn backward_accumulate(&self, loss: Var<'_, T>, store: &mut ParamStore<T>) -> Result<()> {
        let grads = self.sweep(loss)?;
        let nodes = self.nodes.borrow();
        for (id, g) in grads {
            if let Some(name) = &nodes[id].param {
                store.accumulate_grad(name, &g)?;
            }
        }
        Ok(())
    }

    /// Gradients of `loss` with respect to every leaf that requires them.
    pub fn gradients(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let leaves = self
            .sweep(loss)?
            .into_iter()
            .map(|(id, g)| {
                let shape = self.nodes.borrow()[id].value.shape().to_vec();
                (id, Tensor::from_parts(shape, g))
            })
            .collect();
        Ok(Gradients { leaves })
    }

    fn sweep(&self, loss: Var<'_, T>) -> Result<Vec<(usize, Vec<T>)>> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![T::one()]);
        let mut leaves = Vec::new();
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                leaves.push((id, g));
                continue;
            }
            for (input, dg) in local_grads(&nodes, id, &g) {
                if !nodes[input].requires_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => acc.iter_mut().zip(&dg).for_each(|(a, &d)| *a += d),
                    slot @ None => *slot = Some(dg),
                }
            }
        }
        leaves.reverse();
        Ok(leaves)
    }
}

/// Vector-Jacobian products of node `id` for every input that needs one.
fn local_grads<T: Scalar>(nodes: &[Node<T>], id: usize, g: &[T]) -> Vec<(usize, Vec<T>)> {
    let val = |i: usize| nodes[i].value.data();
    let needs = |i: usize| nodes[i].requires_grad;
    let out = val(id);
    let pointwise = |x: usize, f: &dyn Fn(T, T) -> T| -> Vec<T> {
        val(x).iter().zip(g).map(|(&xv, &gv)| f(xv, gv)).collect()
    };
    match &nodes[id].op {
        Op::Leaf => vec![],
        &Op::Add(a, b) => vec![(a, g.to_vec()), (b, g.to_vec())],
        &Op::Sub(a, b) => vec![(a, g.to_vec()), (b, g.iter().map(|&v| -v).collect())],
        &Op::Mul(a, b) => vec![
            (a, val(b).iter().zip(g).map(|(&bv, &gv)| bv * gv).collect()),
            (b, val(a).iter().zip(g).map(|(&av, &gv)| av * gv).collect()),
        ],
        &Op::Div(a, b) => {
            let (av, bv) = (val(a), val(b));
            let da = bv.iter().zip(g).map(|(&d, &gv)| gv / d).collect();
            let db = av
                .iter()
                .zip(bv)
                .zip(g)
                .map(|((&n, &d), &gv)| -gv * n / (d * d))
                .collect();
            vec![(a, da), (b, db)]
        }
        &Op::AddScalar(x) => vec![(x, g.to_vec())],
        &Op::Scale(x, c) => vec![(x, g.iter().map(|&v| v * c).collect())],
        &Op::Pow(x, p) => vec![(
            x,
            pointwise(x, &|xv, gv| {
                if xv == T::zero() && p < T::one() {
                    T::zero()
                } else {
                    gv * p * xv.powf(p - T::one())
                }
            }),
        )],
        &Op::Abs(x) => vec![(
            x,
            pointwise(x, &|xv, gv| {
                if xv > T::zero() {
                    gv
                } else if xv < T::zero() {
                    -gv
                } else {
                    T::zero()
                }
            }),
        )],
        &Op::Relu(x) => vec![(x, pointwise(x, &|xv, gv| if xv > T::zero() { gv } else { T::zero() }))],
        &Op::Gelu(x) => vec![(x, pointwise(x, &|xv, gv| gv * kernels::gelu_grad(xv)))],
        &Op::Clip01(x) => vec![(
            x,
            pointwise(x, &|xv, gv| {
                if xv >= T::zero() && xv <= T::one() {
                    gv
                } else {
                    T::zero()
                }
            }),
        )],
        &Op::Sum(x) => vec![(x, vec![g[0]; val(x).len()])],
        &Op::Mean(x) => {
            let n = val(x).len();
            vec![(x, vec![g[0] / T::lit(n as f64); n])]
        }
        &Op::MatMul {
            a,
            b,
            batch,
            m,
            k,
            n,
            trans_b,
        } => {
            let (av, bv) = (val(a), val(b));
            let mut res = Vec::new();
            if needs(a) {
                let mut da = vec![T::zero(); batch * m * k];
                for bi in 0..batch {
                    let gb = &g[bi * m * n..(bi + 1) * m * n];
                    let dst = &mut da[bi * m * k..(bi + 1) * m * k];
                    let bb = &bv[bi * k * n..(bi + 1) * k * n];
                    if trans_b {
                        // b is [n, k]
                        kernels::gemm(m, n, k, gb, bb, dst);
                    } else {
                        kernels::gemm_nt(m, n, k, gb, bb, dst);
                    }
                }
                res.push((a, da));
            }
            if needs(b) {
                let mut db = vec![T::zero(); batch * k * n];
                for bi in 0..batch {
                    let gb = &g[bi * m * n..(bi + 1) * m * n];
                    let ab = &av[bi * m * k..(bi + 1) * m * k];
                    let dst = &mut db[bi * k * n..(bi + 1) * k * n];
                    if trans_b {
                        kernels::gemm_tn(n, m, k, gb, ab, dst);
                    } else {
                        kernels::gemm_tn(k, m, n, ab, gb, dst);
                    }
                }
                res.push((b, db));
            }
            res
        }
        &Op::Softmax {
            x,
            outer,
            len,
            inner,
        } => vec![(x, kernels::softmax_backward(out, g, outer, len, inner))],
        &Op::Conv2d { x, w, bias, k } => {
            let xs = nodes[x].value.shape();
            let (cin, h, wd) = (xs[0], xs[1], xs[2]);
            let cout = nodes[w].value.shape()[0];
            let hw = h * wd;
            let ckk = cin * k * k;
            let mut res = Vec::new();
            let cols_owned;
            let cols: &[T] = if k == 1 {
                val(x)
            } else {
                cols_owned = kernels::im2col(val(x), cin, h, wd, k);
                &cols_owned
            };
            if needs(w) {
                let mut dw = vec![T::zero(); cout * ckk];
                kernels::gemm_nt(cout, hw, ckk, g, cols, &mut dw);
                res.push((w, dw));
            }
            if needs(x) {
                let mut dcols = vec![T::zero(); ckk * hw];
                kernels::gemm_tn(ckk, cout, hw, val(w), g, &mut dcols);
                let dx = if k == 1 {
                    dcols
                } else {
                    kernels::col2im(&dcols, cin, h, wd, k)
                };
                res.push((x, dx));
            }
            if let Some(bias) = bias {
                let db = (0..cout).map(|o| g[o * hw..(o + 1) * hw].iter().copied().sum()).collect();
                res.push((bias, db));
            }
            res
        }
        &Op::AvgPool2(x) => {
            let s = nodes[x].value.shape();
            vec![(x, kernels::avg_pool2_backward(g, s[0], s[1], s[2]))]
        }
        &Op::Resize(x) => {
            let s = nodes[x].value.shape();
            let o = nodes[id].value.shape();
            vec![(x, kernels::bilinear_resize_backward(g, s[0], s[1], s[2], o[1], o[2]))]
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        } => {
            let s = nodes[*x].value.shape();
            let (c, hw) = (s[0], s[1] * s[2]);
            let (dx, dgamma, dbeta) =
                kernels::layer_norm_channels_backward(g, xhat, inv_std, val(*gamma), c, hw);
            vec![(*x, dx), (*gamma, dgamma), (*beta, dbeta)]
        }
        &Op::Concat(a, b) => {
            let na = val(a).len();
            vec![(a, g[..na].to_vec()), (b, g[na..].to_vec())]
        }
        &Op::Reshape(x) => vec![(x, g.to_vec())],
        Op::Gather { x, index } => {
            let mut dx = vec![T::zero(); val(*x).len()];
            for (&src, &gv) in index.iter().zip(g) {
                dx[src] += gv;
            }
            vec![(*x, dx)]
        }
    }
}

impl<'g, T: Scalar> Var<'g, T> {
    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.graph.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    /// Value of a single-element variable.
    pub fn item(&self) -> T {
        self.value().item()
    }

    fn unary(self, op: Op<T>, f: impl Fn(T) -> T) -> Self {
        let value = self.value().map(f);
        self.graph.push(value, op)
    }

    fn binary(self, other: Self, name: &'static str, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Self> {
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(Error::shapes(name, a.shape(), b.shape()));
        }
        let value = a.zip_map(&b, f)?;
        Ok(self.graph.push(value, op))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(self, other: Self) -> Result<Self> {
        self.binary(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, other: Self) -> Result<Self> {
        self.binary(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn mul(self, other: Self) -> Result<Self> {
        self.binary(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn div(self, other: Self) -> Result<Self> {
        self.binary(other, "div", Op::Div(self.id, other.id), |a, b| a / b)
    }

    pub fn add_scalar(self, c: T) -> Self {
        self.unary(Op::AddScalar(self.id), |x| x + c)
    }

    pub fn scale(self, c: T) -> Self {
        self.unary(Op::Scale(self.id, c), |x| x * c)
    }

    /// `x^p` for non-negative `x`. The derivative at `0` is taken as `0`
    /// when `p < 1`.
    pub fn pow(self, p: T) -> Result<Self> {
        if self.value().data().iter().any(|&x| x < T::zero()) {
            return Err(Error::Contract("pow: negative base".into()));
        }
        Ok(self.unary(Op::Pow(self.id, p), |x| x.powf(p)))
    }

    /// Absolute value; subgradient `0` at `0`.
    pub fn abs(self) -> Self {
        self.unary(Op::Abs(self.id), |x| x.abs())
    }

    pub fn relu(self) -> Self {
        self.unary(Op::Relu(self.id), |x| x.max(T::zero()))
    }

    pub fn gelu(self) -> Self {
        self.unary(Op::Gelu(self.id), kernels::gelu)
    }

    pub fn clip01(self) -> Self {
        self.unary(Op::Clip01(self.id), |x| x.max(T::zero()).min(T::one()))
    }

    pub fn sum(self) -> Self {
        let s = self.value().sum();
        self.graph.push(Tensor::scalar(s), Op::Sum(self.id))
    }

    pub fn mean(self) -> Self {
        let s = self.value().mean();
        self.graph.push(Tensor::scalar(s), Op::Mean(self.id))
    }

    fn matmul_impl(self, other: Self, trans_b: bool) -> Result<Self> {
        let name = if trans_b { "matmul_t" } else { "matmul" };
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.shape(), b.shape());
        let err = || Error::shapes(name, sa, sb);
        let (batch, m, k, bk, bn) = match (sa, sb) {
            ([m, k], [r, c]) => (1, *m, *k, *r, *c),
            ([ba, m, k], [bb, r, c]) if ba == bb => (*ba, *m, *k, *r, *c),
            _ => return Err(err()),
        };
        let (kb, n) = if trans_b { (bn, bk) } else { (bk, bn) };
        if kb != k {
            return Err(err());
        }
        let mut out = vec![T::zero(); batch * m * n];
        for bi in 0..batch {
            let ab = &a.data()[bi * m * k..(bi + 1) * m * k];
            let bb = &b.data()[bi * k * n..(bi + 1) * k * n];
            let dst = &mut out[bi * m * n..(bi + 1) * m * n];
            if trans_b {
                kernels::gemm_nt(m, k, n, ab, bb, dst);
            } else {
                kernels::gemm(m, k, n, ab, bb, dst);
            }
        }
        let shape = if sa.len() == 2 { vec![m, n] } else { vec![batch, m, n] };
        Ok(self.graph.push(
            Tensor::from_parts(shape, out),
            Op::MatMul {
                a: self.id,
                b: other.id,
                batch,
                m,
                k,
                n,
                trans_b,
            },
        ))
    }

    /// Matrix product `[M,K]×[K,N]`, or batched `[B,M,K]×[B,K,N]`.
    pub fn matmul(self, other: Self) -> Result<Self> {
        self.matmul_impl(other, false)
    }

    /// Product with the transpose of the last two axes of `other`.
    pub fn matmul_t(self, other: Self) -> Result<Self> {
        self.matmul_impl(other, true)
    }

    /// Softmax along `axis`, shifted by the slice maximum for stability.
    pub fn softmax(self, axis: usize) -> Result<Self> {
        let x = self.value();
        let s = x.shape();
        if axis >= s.len() {
            return Err(Error::Contract(format!("softmax: axis {axis} out of range for {s:?}")));
        }
        let outer = s[..axis].iter().product();
        let inner = s[axis + 1..].iter().product();
        let len = s[axis];
        let y = kernels::softmax(x.data(), outer, len, inner);
        Ok(self.graph.push(
            Tensor::from_parts(s.to_vec(), y),
            Op::Softmax {
                x: self.id,
                outer,
                len,
                inner,
            },
        ))
    }

    /// Stride-1 cross-correlation of a `[Cin,H,W]` map with `[Cout,Cin,k,k]`
    /// weights, zero padding `(k-1)/2`.
    pub fn conv2d(self, weight: Self, bias: Option<Self>) -> Result<Self> {
        let (x, w) = (self.value(), weight.value());
        let (cin, h, wd) = x.chw()?;
        let (cout, wcin, k) = match w.shape() {
            &[o, i, k1, k2] if k1 == k2 && (k1 == 1 || k1 == 3) => (o, i, k1),
            other => return Err(Error::dim("conv2d", format!("unsupported kernel shape {other:?}"))),
        };
        if wcin != cin {
            return Err(Error::shapes("conv2d", x.shape(), w.shape()));
        }
        if let Some(b) = bias {
            if b.shape() != [cout] {
                return Err(Error::shapes("conv2d bias", &b.shape(), &[cout]));
            }
        }
        let hw = h * wd;
        let mut out = vec![T::zero(); cout * hw];
        if let Some(b) = bias {
            for (o, &bv) in b.value().data().iter().enumerate() {
                out[o * hw..(o + 1) * hw].iter_mut().for_each(|v| *v = bv);
            }
        }
        if k == 1 {
            kernels::gemm(cout, cin, hw, w.data(), x.data(), &mut out);
        } else {
            let cols = kernels::im2col(x.data(), cin, h, wd, k);
            kernels::gemm(cout, cin * k * k, hw, w.data(), &cols, &mut out);
        }
        Ok(self.graph.push(
            Tensor::from_parts(vec![cout, h, wd], out),
            Op::Conv2d {
                x: self.id,
                w: weight.id,
                bias: bias.map(|b| b.id),
                k,
            },
        ))
    }

    /// Non-overlapping 2×2 mean pooling.
    pub fn avg_pool2(self) -> Result<Self> {
        let x = self.value();
        let (c, h, w) = x.chw()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::dim("avg_pool2", format!("odd spatial dims {h}x{w}")));
        }
        let y = kernels::avg_pool2(x.data(), c, h, w);
        Ok(self
            .graph
            .push(Tensor::from_parts(vec![c, h / 2, w / 2], y), Op::AvgPool2(self.id)))
    }

    /// `[4C,H,W] -> [C,2H,2W]`.
    pub fn pixel_shuffle(self) -> Result<Self> {
        let (c4, h, w) = self.value().chw()?;
        if c4 % 4 != 0 {
            return Err(Error::dim("pixel_shuffle", format!("{c4} channels not divisible by 4")));
        }
        let index = kernels::pixel_shuffle_index(c4 / 4, h, w);
        self.gather(Rc::new(index), &[c4 / 4, 2 * h, 2 * w])
    }

    /// Inverse of [`Var::pixel_shuffle`]: `[C,2H,2W] -> [4C,H,W]`.
    pub fn pixel_unshuffle(self) -> Result<Self> {
        let (c, h2, w2) = self.value().chw()?;
        if h2 % 2 != 0 || w2 % 2 != 0 {
            return Err(Error::dim("pixel_unshuffle", format!("odd spatial dims {h2}x{w2}")));
        }
        let (h, w) = (h2 / 2, w2 / 2);
        let fwd = kernels::pixel_shuffle_index(c, h, w);
        let mut inv = vec![0; fwd.len()];
        for (dst, &src) in fwd.iter().enumerate() {
            inv[src] = dst;
        }
        self.gather(Rc::new(inv), &[4 * c, h, w])
    }

    /// Bilinear resize of a `[C,H,W]` map (half-pixel centres).
    pub fn resize(self, oh: usize, ow: usize) -> Result<Self> {
        if oh == 0 || ow == 0 {
            return Err(Error::dim("resize", format!("target size {oh}x{ow}")));
        }
        let x = self.value();
        let (c, h, w) = x.chw()?;
        let y = kernels::bilinear_resize(x.data(), c, h, w, oh, ow);
        Ok(self
            .graph
            .push(Tensor::from_parts(vec![c, oh, ow], y), Op::Resize(self.id)))
    }

    /// Normalizes each pixel across channels of a `[C,H,W]` map, then applies
    /// per-channel `gamma` and `beta`.
    pub fn layer_norm(self, gamma: Self, beta: Self) -> Result<Self> {
        let x = self.value();
        let (c, h, w) = x.chw()?;
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(Error::shapes("layer_norm", x.shape(), &gamma.shape()));
        }
        let (y, xhat, inv_std) = kernels::layer_norm_channels(
            x.data(),
            c,
            h * w,
            gamma.value().data(),
            beta.value().data(),
            T::lit(LAYER_NORM_EPS),
        );
        Ok(self.graph.push(
            Tensor::from_parts(vec![c, h, w], y),
            Op::LayerNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                inv_std,
            },
        ))
    }

    /// Concatenates along the leading axis.
    pub fn concat(self, other: Self) -> Result<Self> {
        let (a, b) = (self.value(), other.value());
        if a.shape().len() != b.shape().len() || a.shape()[1..] != b.shape()[1..] {
            return Err(Error::shapes("concat", a.shape(), b.shape()));
        }
        let mut shape = a.shape().to_vec();
        shape[0] += b.shape()[0];
        let mut data = a.data().to_vec();
        data.extend_from_slice(b.data());
        Ok(self
            .graph
            .push(Tensor::from_parts(shape, data), Op::Concat(self.id, other.id)))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        let x = self.value();
        if shape.iter().product::<usize>() != x.len() {
            return Err(Error::shapes("reshape", x.shape(), shape));
        }
        Ok(self
            .graph
            .push(Tensor::from_parts(shape.to_vec(), x.data().to_vec()), Op::Reshape(self.id)))
    }

    pub fn permute(self, axes: &[usize]) -> Result<Self> {
        let s = self.shape();
        let mut seen = axes.to_vec();
        seen.sort_unstable();
        if seen != (0..s.len()).collect::<Vec<_>>() {
            return Err(Error::Contract(format!("permute: invalid axes {axes:?} for {s:?}")));
        }
        let (index, out_shape) = kernels::permute_index(&s, axes);
        self.gather(Rc::new(index), &out_shape)
    }

    /// `out[i] = x[index[i]]`, reshaped to `shape`.
    pub fn gather(self, index: Rc<Vec<usize>>, shape: &[usize]) -> Result<Self> {
        let x = self.value();
        if index.len() != shape.iter().product::<usize>() || index.iter().any(|&i| i >= x.len()) {
            return Err(Error::dim("gather", format!("index of {} into {:?}", index.len(), x.shape())));
        }
        let data = index.iter().map(|&i| x.data()[i]).collect();
        Ok(self.graph.push(
            Tensor::from_parts(shape.to_vec(), data),
            Op::Gather { x: self.id, index },
        ))
    }
}
