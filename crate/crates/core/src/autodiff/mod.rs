//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends a node to a [`Graph`]; node order is a valid
//! topological order, so [`Graph::backward`] simply walks the tape in reverse.
//! Gradient accumulation is sequential and therefore bit-reproducible.

mod backward;
pub mod kernels;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

use kernels::ConvGeom;

pub use backward::Gradients;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds recorded on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Leaf,
    Param,
    MatMul,
    Add,
    Sub,
    Mul,
    Scale,
    Relu,
    Sigmoid,
    Tanh,
    Sign,
    Abs,
    Sum,
    MeanLastAxis,
    Reshape,
    Transpose,
    Concat,
    Slice,
    Conv2d,
    LayerNorm,
    Softmax,
    Attention,
}

impl OpKind {
    /// Every kind with a backward rule, in declaration order.
    pub const DIFFERENTIABLE: [OpKind; 20] = [
        OpKind::MatMul,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Scale,
        OpKind::Relu,
        OpKind::Sigmoid,
        OpKind::Tanh,
        OpKind::Sign,
        OpKind::Abs,
        OpKind::Sum,
        OpKind::MeanLastAxis,
        OpKind::Reshape,
        OpKind::Transpose,
        OpKind::Concat,
        OpKind::Slice,
        OpKind::Conv2d,
        OpKind::LayerNorm,
        OpKind::Softmax,
        OpKind::Attention,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Param => "param",
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::Sign => "sign",
            OpKind::Abs => "abs",
            OpKind::Sum => "sum",
            OpKind::MeanLastAxis => "mean_last_axis",
            OpKind::Reshape => "reshape",
            OpKind::Transpose => "transpose",
            OpKind::Concat => "concat",
            OpKind::Slice => "slice",
            OpKind::Conv2d => "conv2d",
            OpKind::LayerNorm => "layer_norm",
            OpKind::Softmax => "softmax",
            OpKind::Attention => "attention",
        }
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Param(String),
    MatMul { m: usize, k: usize, n: usize },
    /// `map[i]` is the rhs element feeding output element `i` when broadcasting.
    Add { map: Option<Vec<usize>> },
    Sub { map: Option<Vec<usize>> },
    Mul { map: Option<Vec<usize>> },
    Scale(T),
    Relu,
    Sigmoid,
    Tanh,
    Sign,
    Abs,
    Sum,
    MeanLastAxis { n: usize },
    Reshape,
    Transpose { rows: usize, cols: usize },
    Concat { sizes: Vec<usize> },
    Slice { offset: usize },
    Conv2d { geom: ConvGeom, cols: Vec<T> },
    LayerNorm { d: usize, xhat: Vec<T>, rstd: Vec<T> },
    Softmax { n: usize },
    Attention { m: usize, c: usize, heads: usize, probs: Vec<T> },
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Param(_) => OpKind::Param,
            Op::MatMul { .. } => OpKind::MatMul,
            Op::Add { .. } => OpKind::Add,
            Op::Sub { .. } => OpKind::Sub,
            Op::Mul { .. } => OpKind::Mul,
            Op::Scale(_) => OpKind::Scale,
            Op::Relu => OpKind::Relu,
            Op::Sigmoid => OpKind::Sigmoid,
            Op::Tanh => OpKind::Tanh,
            Op::Sign => OpKind::Sign,
            Op::Abs => OpKind::Abs,
            Op::Sum => OpKind::Sum,
            Op::MeanLastAxis { .. } => OpKind::MeanLastAxis,
            Op::Reshape => OpKind::Reshape,
            Op::Transpose { .. } => OpKind::Transpose,
            Op::Concat { .. } => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::Attention { .. } => OpKind::Attention,
        }
    }
}

pub(crate) struct Node<T> {
    op: Op<T>,
    inputs: Vec<usize>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Append-only gradient tape.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    fault: Option<OpKind>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            fault: None,
        }
    }

    /// Test hook: the backward rule of `kind` returns deliberately wrong gradients.
    #[doc(hidden)]
    pub fn with_fault(kind: OpKind) -> Self {
        Graph {
            nodes: Vec::new(),
            fault: Some(kind),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Number of recorded nodes of each kind, in [`OpKind`] order.
    pub fn op_counts(&self) -> std::collections::BTreeMap<OpKind, usize> {
        let mut counts = std::collections::BTreeMap::new();
        for n in &self.nodes {
            *counts.entry(n.op.kind()).or_insert(0) += 1;
        }
        counts
    }

    fn push(&mut self, op: Op<T>, inputs: Vec<usize>, value: Tensor<T>) -> Var {
        let requires_grad = match op {
            Op::Param(_) => true,
            Op::Leaf => false,
            _ => inputs.iter().any(|&i| self.nodes[i].requires_grad),
        };
        self.nodes.push(Node {
            op,
            inputs,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant input; gradients are not propagated into it.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Leaf, Vec::new(), t)
    }

    /// A differentiable input that is not a stored parameter.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        let v = self.push(Op::Leaf, Vec::new(), t);
        self.nodes[v.0].requires_grad = true;
        v
    }

    /// Loads a named parameter onto the tape.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        let t = store.tensor(name)?.clone();
        Ok(self.push(Op::Param(name.to_string()), Vec::new(), t))
    }

    // -- linear algebra ---------------------------------------------------

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim(
                "matmul",
                format!("cannot multiply {sa:?} by {sb:?}"),
            ));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.value(a).data(),
            k as isize,
            1,
            self.value(b).data(),
            n as isize,
            1,
            T::zero(),
            &mut out,
            n as isize,
            1,
        );
        Ok(self.push(
            Op::MatMul { m, k, n },
            vec![a.0, b.0],
            Tensor::from_parts(vec![m, n], out),
        ))
    }

    /// Swaps the two axes of a matrix.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::dim("transpose", format!("expected a matrix, got {s:?}")));
        }
        let (rows, cols) = (s[0], s[1]);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = src[r * cols + c];
            }
        }
        Ok(self.push(
            Op::Transpose { rows, cols },
            vec![x.0],
            Tensor::from_parts(vec![cols, rows], out),
        ))
    }

    // -- elementwise ------------------------------------------------------

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        make: impl FnOnce(Option<Vec<usize>>) -> Op<T>,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let (out, map) = if sa == sb {
            (va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect(), None)
        } else {
            let map = kernels::broadcast_index(&sa, &sb).ok_or_else(|| {
                Error::dim(name, format!("cannot broadcast {sb:?} onto {sa:?}"))
            })?;
            (
                va.iter().zip(&map).map(|(&x, &j)| f(x, vb[j])).collect(),
                Some(map),
            )
        };
        Ok(self.push(make(map), vec![a.0, b.0], Tensor::from_parts(sa, out)))
    }

    /// Elementwise sum. `b` may broadcast over the trailing axes of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, |map| Op::Add { map })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, |map| Op::Sub { map })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, |map| Op::Mul { map })
    }

    fn unary(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let t = self.value(x);
        let out = Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect());
        self.push(op, vec![x.0], out)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        self.unary(x, Op::Scale(s), |v| v * s)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu, |v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid, |v| {
            // split on sign so exp never overflows
            if v >= T::zero() {
                T::one() / (T::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (T::one() + e)
            }
        })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh, T::tanh)
    }

    /// `sign(0) = 0`; the gradient is zero everywhere.
    pub fn sign(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sign, |v| {
            if v > T::zero() {
                T::one()
            } else if v < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        })
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Op::Abs, T::abs)
    }

    // -- reductions and layout -------------------------------------------

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().copied().sum();
        self.push(Op::Sum, vec![x.0], Tensor::scalar(s))
    }

    /// Mean over the last axis, dropping it.
    pub fn mean_last_axis(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let Some((&n, lead)) = shape.split_last() else {
            return Err(Error::dim("mean_last_axis", "rank-0 input"));
        };
        let inv = T::one() / T::from_usize(n).expect("usize fits");
        let out: Vec<T> = self
            .value(x)
            .data()
            .chunks_exact(n)
            .map(|r| r.iter().copied().sum::<T>() * inv)
            .collect();
        let out_shape = if lead.is_empty() { Vec::new() } else { lead.to_vec() };
        Ok(self.push(
            Op::MeanLastAxis { n },
            vec![x.0],
            Tensor::from_parts(out_shape, out),
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        Ok(self.push(Op::Reshape, vec![x.0], t))
    }

    /// Concatenates along axis 0. Trailing axes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::dim("concat", "no inputs"));
        };
        let tail = self.shape(first).get(1..).unwrap_or(&[]).to_vec();
        let mut lead = 0;
        let mut sizes = Vec::with_capacity(parts.len());
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[1..] != tail[..] {
                return Err(Error::dim(
                    "concat",
                    format!("{s:?} does not share trailing axes {tail:?}"),
                ));
            }
            lead += s[0];
            sizes.push(self.value(p).numel());
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        Ok(self.push(
            Op::Concat { sizes },
            parts.iter().map(|v| v.0).collect(),
            Tensor::from_parts(shape, data),
        ))
    }

    /// Rows `start..start+len` along axis 0.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.is_empty() || len == 0 || start + len > shape[0] {
            return Err(Error::dim(
                "slice_rows",
                format!("rows {start}..{} out of range for {shape:?}", start + len),
            ));
        }
        let row = numel(&shape[1..]);
        let data = self.value(x).data()[start * row..(start + len) * row].to_vec();
        let mut out_shape = shape;
        out_shape[0] = len;
        Ok(self.push(
            Op::Slice { offset: start * row },
            vec![x.0],
            Tensor::from_parts(out_shape, data),
        ))
    }

    // -- neural network primitives ---------------------------------------

    /// Zero-padded cross-correlation of `x: [cin,h,w]` with `w: [cout,cin,kh,kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 3 || sw.len() != 4 || sb != [sw[0]] || sw[1] != sx[0] {
            return Err(Error::dim(
                "conv2d",
                format!("input {sx:?}, weight {sw:?}, bias {sb:?}"),
            ));
        }
        let (cin, h, wd) = (sx[0], sx[1], sx[2]);
        let (cout, kh, kw) = (sw[0], sw[2], sw[3]);
        let (Some(oh), Some(ow)) = (
            kernels::conv_out_dim(h, kh, stride, pad),
            kernels::conv_out_dim(wd, kw, stride, pad),
        ) else {
            return Err(Error::dim(
                "conv2d",
                format!("kernel {kh}x{kw} (stride {stride}, pad {pad}) does not fit input {h}x{wd}"),
            ));
        };
        let geom = ConvGeom {
            cin,
            h,
            w: wd,
            cout,
            kh,
            kw,
            stride,
            pad,
            oh,
            ow,
        };
        let cols = kernels::im2col(self.value(x).data(), &geom);
        let (k, p) = (geom.patch_len(), geom.out_pixels());
        let bias = self.value(b).data();
        let mut out = Vec::with_capacity(cout * p);
        for &bv in bias {
            out.extend(std::iter::repeat_n(bv, p));
        }
        T::gemm(
            cout,
            k,
            p,
            T::one(),
            self.value(w).data(),
            k as isize,
            1,
            &cols,
            p as isize,
            1,
            T::one(),
            &mut out,
            p as isize,
            1,
        );
        Ok(self.push(
            Op::Conv2d { geom, cols },
            vec![x.0, w.0, b.0],
            Tensor::from_parts(vec![cout, oh, ow], out),
        ))
    }

    /// Normalizes over the last axis with the biased variance.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().unwrap_or(&0);
        if d == 0 || self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::dim(
                "layer_norm",
                format!(
                    "input {shape:?}, gamma {:?}, beta {:?}",
                    self.shape(gamma),
                    self.shape(beta)
                ),
            ));
        }
        if !(eps > 0.0) {
            return Err(Error::Contract(format!("layer_norm eps must be positive, got {eps}")));
        }
        let eps = T::from_f64_lossy(eps);
        let inv_d = T::one() / T::from_usize(d).expect("usize fits");
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let src = self.value(x).data();
        let rows = src.len() / d;
        let mut xhat = Vec::with_capacity(src.len());
        let mut rstd = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(src.len());
        for row in src.chunks_exact(d) {
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let r = T::one() / (var + eps).sqrt();
            rstd.push(r);
            for (j, &v) in row.iter().enumerate() {
                let xh = (v - mean) * r;
                xhat.push(xh);
                out.push(xh * g[j] + bt[j]);
            }
        }
        Ok(self.push(
            Op::LayerNorm { d, xhat, rstd },
            vec![x.0, gamma.0, beta.0],
            Tensor::from_parts(shape, out),
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let Some(&n) = shape.last() else {
            return Err(Error::dim("softmax", "rank-0 input"));
        };
        let mut data = self.value(x).data().to_vec();
        kernels::softmax_rows(&mut data, n);
        Ok(self.push(Op::Softmax { n }, vec![x.0], Tensor::from_parts(shape, data)))
    }

    /// Multi-head scaled dot-product attention over already projected
    /// `q`, `k`, `v` of shape `[m, c]`. Head `h` uses columns `h*c/heads..(h+1)*c/heads`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let sq = self.shape(q).to_vec();
        if sq.len() != 2 || self.shape(k) != sq || self.shape(v) != sq {
            return Err(Error::dim(
                "attention",
                format!("q {sq:?}, k {:?}, v {:?}", self.shape(k), self.shape(v)),
            ));
        }
        let (m, c) = (sq[0], sq[1]);
        if heads == 0 || c % heads != 0 {
            return Err(Error::dim(
                "attention",
                format!("width {c} not divisible by {heads} heads"),
            ));
        }
        let dh = c / heads;
        let scale = T::one() / T::from_usize(dh).expect("usize fits").sqrt();
        let (qd, kd, vd) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
        );
        let mut probs = vec![T::zero(); heads * m * m];
        let mut out = vec![T::zero(); m * c];
        let ci = c as isize;
        for h in 0..heads {
            let off = h * dh;
            let p = &mut probs[h * m * m..(h + 1) * m * m];
            // scores = q_h k_h^T * scale
            T::gemm(
                m, dh, m, scale, &qd[off..], ci, 1, &kd[off..], 1, ci, T::zero(), p, m as isize, 1,
            );
            kernels::softmax_rows(p, m);
            T::gemm(
                m,
                m,
                dh,
                T::one(),
                p,
                m as isize,
                1,
                &vd[off..],
                ci,
                1,
                T::zero(),
                &mut out[off..],
                ci,
                1,
            );
        }
        Ok(self.push(
            Op::Attention {
                m,
                c,
                heads,
                probs,
            },
            vec![q.0, k.0, v.0],
            Tensor::from_parts(vec![m, c], out),
        ))
    }

    /// Attention probabilities `[heads, m, m]` saved by an attention node.
    pub fn attention_weights(&self, v: Var) -> Option<Tensor<T>> {
        match &self.nodes[v.0].op {
            Op::Attention { m, heads, probs, .. } => {
                Some(Tensor::from_parts(vec![*heads, *m, *m], probs.clone()))
            }
            _ => None,
        }
    }

    /// Runs reverse-mode differentiation from a scalar `loss`.
    ///
    /// Parameter gradients are added into `store`; repeated calls accumulate.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        backward::run(self, loss, store)
    }
}
