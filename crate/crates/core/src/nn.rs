//! Parameterized layers built from graph primitives.
//!
//! Layers only hold names and sizes; values live in a [`ParamStore`].

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Half-width of the default uniform weight initializer.
pub fn init_half_width(fan_in: usize) -> f64 {
    (1.0 / fan_in as f64).sqrt()
}

/// Affine map `x W + b` with `W: [din, dout]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    pub din: usize,
    pub dout: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, din: usize, dout: usize) -> Self {
        Linear {
            name: name.into(),
            din,
            dout,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
        self.init_scaled(store, rng, init_half_width(self.din))
    }

    /// Initializes with an explicit weight half-width (zero gives a zero map).
    pub fn init_scaled<T: Scalar, R: Rng + ?Sized>(
        &self,
        store: &mut ParamStore<T>,
        rng: &mut R,
        half_width: f64,
    ) -> Result<()> {
        store.insert(self.weight_name(), Tensor::uniform(&[self.din, self.dout], half_width, rng))?;
        store.insert(self.bias_name(), Tensor::zeros(&[self.dout]))
    }

    /// Accepts `[din]` or `[m, din]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        let (x2, vector) = match shape.as_slice() {
            [d] if *d == self.din => (g.reshape(x, &[1, self.din])?, true),
            [_, d] if *d == self.din => (x, false),
            _ => {
                return Err(Error::dim(
                    "linear",
                    format!("`{}` expects width {}, got {shape:?}", self.name, self.din),
                ))
            }
        };
        let w = g.param(store, &self.weight_name())?;
        let b = g.param(store, &self.bias_name())?;
        let y = g.matmul(x2, w)?;
        let y = g.add(y, b)?;
        if vector {
            g.reshape(y, &[self.dout])
        } else {
            Ok(y)
        }
    }
}

/// 2D convolution layer over `[cin, h, w]` maps.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new(
        name: impl Into<String>,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        Conv2d {
            name: name.into(),
            cin,
            cout,
            kernel,
            stride,
            pad,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
        let fan_in = self.cin * self.kernel * self.kernel;
        self.init_scaled(store, rng, init_half_width(fan_in))
    }

    pub fn init_scaled<T: Scalar, R: Rng + ?Sized>(
        &self,
        store: &mut ParamStore<T>,
        rng: &mut R,
        half_width: f64,
    ) -> Result<()> {
        let shape = [self.cout, self.cin, self.kernel, self.kernel];
        store.insert(self.weight_name(), Tensor::uniform(&shape, half_width, rng))?;
        store.insert(self.bias_name(), Tensor::zeros(&[self.cout]))
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, &self.weight_name())?;
        let b = g.param(store, &self.bias_name())?;
        g.conv2d(x, w, b, self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub name: String,
    pub dim: usize,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        LayerNorm {
            name: name.into(),
            dim,
            eps: 1e-5,
        }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>) -> Result<()> {
        store.insert(format!("{}.gamma", self.name), Tensor::filled(&[self.dim], T::one()))?;
        store.insert(format!("{}.beta", self.name), Tensor::zeros(&[self.dim]))
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let gamma = g.param(store, &format!("{}.gamma", self.name))?;
        let beta = g.param(store, &format!("{}.beta", self.name))?;
        g.layer_norm(x, gamma, beta, self.eps)
    }
}

/// Gated recurrent unit.
///
/// ```text
/// r  = sigmoid(Wr x + Ur h + br)
/// u  = sigmoid(Wu x + Uu h + bu)
/// n  = tanh(Wn x + r * (Un h) + bn)
/// h' = (1 - u) * n + u * h
/// ```
#[derive(Clone, Debug)]
pub struct GruCell {
    pub name: String,
    pub input: usize,
    pub hidden: usize,
}

const GATES: [&str; 3] = ["r", "u", "n"];

impl GruCell {
    pub fn new(name: impl Into<String>, input: usize, hidden: usize) -> Self {
        GruCell {
            name: name.into(),
            input,
            hidden,
        }
    }

    fn pname(&self, kind: &str, gate: &str) -> String {
        format!("{}.{kind}_{gate}", self.name)
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
        let hw = init_half_width(self.hidden);
        for gate in GATES {
            let w = Tensor::uniform(&[self.input, self.hidden], init_half_width(self.input), rng);
            store.insert(self.pname("w", gate), w)?;
            store.insert(self.pname("u", gate), Tensor::uniform(&[self.hidden, self.hidden], hw, rng))?;
            store.insert(self.pname("b", gate), Tensor::zeros(&[self.hidden]))?;
        }
        Ok(())
    }

    /// One recurrence step on vectors `x: [input]`, `h: [hidden]`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        h: Var,
    ) -> Result<Var> {
        if g.shape(x) != [self.input] || g.shape(h) != [self.hidden] {
            return Err(Error::dim(
                "gru_cell",
                format!(
                    "`{}` expects x [{}] and h [{}], got {:?} and {:?}",
                    self.name,
                    self.input,
                    self.hidden,
                    g.shape(x),
                    g.shape(h)
                ),
            ));
        }
        let x2 = g.reshape(x, &[1, self.input])?;
        let h2 = g.reshape(h, &[1, self.hidden])?;
        let proj = |g: &mut Graph<T>, kind: &str, gate: &str, v: Var| -> Result<Var> {
            let w = g.param(store, &self.pname(kind, gate))?;
            g.matmul(v, w)
        };
        let mut gates = Vec::with_capacity(3);
        for gate in GATES {
            let wx = proj(g, "w", gate, x2)?;
            let uh = proj(g, "u", gate, h2)?;
            let b = g.param(store, &self.pname("b", gate))?;
            gates.push((wx, uh, b));
        }
        let [(wrx, urh, br), (wux, uuh, bu), (wnx, unh, bn)] = gates[..] else {
            unreachable!()
        };
        let r = g.add(wrx, urh)?;
        let r = g.add(r, br)?;
        let r = g.sigmoid(r);
        let u = g.add(wux, uuh)?;
        let u = g.add(u, bu)?;
        let u = g.sigmoid(u);
        let gated = g.mul(r, unh)?;
        let n = g.add(wnx, gated)?;
        let n = g.add(n, bn)?;
        let n = g.tanh(n);
        // h' = n + u * (h - n)
        let diff = g.sub(h2, n)?;
        let keep = g.mul(u, diff)?;
        let out = g.add(n, keep)?;
        g.reshape(out, &[self.hidden])
    }
}

/// Standalone GRU step, see [`GruCell`].
pub fn gru_cell<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    cell: &GruCell,
    x: Var,
    h: Var,
) -> Result<Var> {
    cell.forward(g, store, x, h)
}
