use super::kernels;
use super::{Graph, Op, OpKind, Var};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;

/// Gradients of the loss with respect to every node on the tape.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` when the node did not influence the loss.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn slot<T: Scalar>(grads: &mut [Option<Vec<T>>], idx: usize, len: usize) -> &mut Vec<T> {
    grads[idx].get_or_insert_with(|| vec![T::zero(); len])
}

pub(super) fn run<T: Scalar>(
    graph: &Graph<T>,
    loss: Var,
    store: &mut ParamStore<T>,
) -> Result<Gradients<T>> {
    if loss.0 >= graph.nodes.len() {
        return Err(Error::Contract("loss is not a node of this graph".into()));
    }
    if !graph.value(loss).is_scalar() {
        return Err(Error::Contract(format!(
            "backward needs a scalar loss, got shape {:?}",
            graph.shape(loss)
        )));
    }
    let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
    grads[loss.0] = Some(vec![T::one()]);

    for i in (0..=loss.0).rev() {
        let node = &graph.nodes[i];
        if !node.requires_grad {
            continue;
        }
        let (lower, upper) = grads.split_at_mut(i);
        let Some(gout) = upper[0].as_deref() else {
            continue;
        };
        let faulty = graph.fault == Some(node.op.kind());
        let needs = |j: usize| graph.nodes[node.inputs[j]].requires_grad;
        let in_len = |j: usize| graph.nodes[node.inputs[j]].value.numel();
        let in_val = |j: usize| graph.nodes[node.inputs[j]].value.data();
        let y = node.value.data();

        match &node.op {
            Op::Leaf => {}
            Op::Param(name) => {
                let p = store.get_mut(name)?;
                for (a, &g) in p.grad.iter_mut().zip(gout) {
                    *a += g;
                }
            }
            &Op::MatMul { m, k, n } => {
                let (a, b) = (in_val(0), in_val(1));
                if needs(0) {
                    // dA = dC B^T
                    let da = slot(lower, node.inputs[0], m * k);
                    T::gemm(
                        m, n, k, T::one(), gout, n as isize, 1, b, 1, n as isize, T::one(), da,
                        k as isize, 1,
                    );
                }
                if needs(1) {
                    // dB = A^T dC
                    let db = slot(lower, node.inputs[1], k * n);
                    T::gemm(
                        k, m, n, T::one(), a, 1, k as isize, gout, n as isize, 1, T::one(), db,
                        n as isize, 1,
                    );
                }
            }
            Op::Add { map } | Op::Sub { map } => {
                let rhs_sign = if matches!(node.op, Op::Sub { .. }) {
                    -T::one()
                } else {
                    T::one()
                };
                if needs(0) {
                    let da = slot(lower, node.inputs[0], gout.len());
                    da.iter_mut().zip(gout).for_each(|(a, &g)| *a += g);
                }
                if needs(1) {
                    let db = slot(lower, node.inputs[1], in_len(1));
                    match map {
                        None => db.iter_mut().zip(gout).for_each(|(a, &g)| *a += rhs_sign * g),
                        Some(map) => {
                            for (&j, &g) in map.iter().zip(gout) {
                                db[j] += rhs_sign * g;
                            }
                        }
                    }
                }
            }
            Op::Mul { map } => {
                let (a, b) = (in_val(0), in_val(1));
                let b_at = |i: usize| match map {
                    None => b[i],
                    Some(map) => b[map[i]],
                };
                if needs(0) {
                    let da = slot(lower, node.inputs[0], gout.len());
                    for (i, (d, &g)) in da.iter_mut().zip(gout).enumerate() {
                        *d += g * b_at(i);
                    }
                }
                if needs(1) {
                    let db = slot(lower, node.inputs[1], in_len(1));
                    for (i, (&g, &av)) in gout.iter().zip(a).enumerate() {
                        let j = match map {
                            None => i,
                            Some(map) => map[i],
                        };
                        db[j] += g * av;
                    }
                }
            }
            &Op::Scale(s) => {
                let dx = slot(lower, node.inputs[0], gout.len());
                dx.iter_mut().zip(gout).for_each(|(d, &g)| *d += g * s);
            }
            Op::Relu => {
                let dx = slot(lower, node.inputs[0], gout.len());
                for ((d, &g), &yv) in dx.iter_mut().zip(gout).zip(y) {
                    if yv > T::zero() {
                        *d += g;
                    }
                }
            }
            Op::Sigmoid => {
                let dx = slot(lower, node.inputs[0], gout.len());
                for ((d, &g), &yv) in dx.iter_mut().zip(gout).zip(y) {
                    *d += g * yv * (T::one() - yv);
                }
            }
            Op::Tanh => {
                let dx = slot(lower, node.inputs[0], gout.len());
                for ((d, &g), &yv) in dx.iter_mut().zip(gout).zip(y) {
                    *d += g * (T::one() - yv * yv);
                }
            }
            Op::Sign => {
                // zero gradient, but the input still receives a (zero) slot
                slot(lower, node.inputs[0], gout.len());
            }
            Op::Abs => {
                let x = in_val(0);
                let dx = slot(lower, node.inputs[0], gout.len());
                for ((d, &g), &xv) in dx.iter_mut().zip(gout).zip(x) {
                    if xv > T::zero() {
                        *d += g;
                    } else if xv < T::zero() {
                        *d -= g;
                    }
                }
            }
            Op::Sum => {
                let g = gout[0];
                let dx = slot(lower, node.inputs[0], in_len(0));
                dx.iter_mut().for_each(|d| *d += g);
            }
            &Op::MeanLastAxis { n } => {
                let inv = T::one() / T::from_usize(n).expect("usize fits");
                let dx = slot(lower, node.inputs[0], in_len(0));
                for (row, &g) in dx.chunks_exact_mut(n).zip(gout) {
                    row.iter_mut().for_each(|d| *d += g * inv);
                }
            }
            Op::Reshape => {
                let dx = slot(lower, node.inputs[0], gout.len());
                dx.iter_mut().zip(gout).for_each(|(d, &g)| *d += g);
            }
            &Op::Transpose { rows, cols } => {
                let dx = slot(lower, node.inputs[0], rows * cols);
                for r in 0..rows {
                    for c in 0..cols {
                        dx[r * cols + c] += gout[c * rows + r];
                    }
                }
            }
            Op::Concat { sizes } => {
                let mut off = 0;
                for (j, &len) in sizes.iter().enumerate() {
                    if needs(j) {
                        let dx = slot(lower, node.inputs[j], len);
                        dx.iter_mut()
                            .zip(&gout[off..off + len])
                            .for_each(|(d, &g)| *d += g);
                    }
                    off += len;
                }
            }
            &Op::Slice { offset } => {
                let dx = slot(lower, node.inputs[0], in_len(0));
                dx[offset..offset + gout.len()]
                    .iter_mut()
                    .zip(gout)
                    .for_each(|(d, &g)| *d += g);
            }
            Op::Conv2d { geom, cols } => {
                let (k, p, cout) = (geom.patch_len(), geom.out_pixels(), geom.cout);
                if needs(1) {
                    // dW = dOut cols^T
                    let dw = slot(lower, node.inputs[1], cout * k);
                    T::gemm(
                        cout, p, k, T::one(), gout, p as isize, 1, cols, 1, p as isize, T::one(),
                        dw, k as isize, 1,
                    );
                }
                if needs(2) {
                    let db = slot(lower, node.inputs[2], cout);
                    for (d, row) in db.iter_mut().zip(gout.chunks_exact(p)) {
                        *d += row.iter().copied().sum::<T>();
                    }
                }
                if needs(0) {
                    let w = in_val(1);
                    let mut dcols = vec![T::zero(); k * p];
                    T::gemm(
                        k, cout, p, T::one(), w, 1, k as isize, gout, p as isize, 1, T::zero(),
                        &mut dcols, p as isize, 1,
                    );
                    let dx = slot(lower, node.inputs[0], in_len(0));
                    kernels::col2im_acc(&dcols, geom, dx);
                }
            }
            Op::LayerNorm { d, xhat, rstd } => {
                let d = *d;
                let gamma = in_val(1);
                if needs(1) {
                    let dg = slot(lower, node.inputs[1], d);
                    for (grow, xrow) in gout.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                        for j in 0..d {
                            dg[j] += grow[j] * xrow[j];
                        }
                    }
                }
                if needs(2) {
                    let db = slot(lower, node.inputs[2], d);
                    for grow in gout.chunks_exact(d) {
                        for j in 0..d {
                            db[j] += grow[j];
                        }
                    }
                }
                if needs(0) {
                    let inv_d = T::one() / T::from_usize(d).expect("usize fits");
                    let dx = slot(lower, node.inputs[0], in_len(0));
                    for (((dxr, grow), xrow), &r) in dx
                        .chunks_exact_mut(d)
                        .zip(gout.chunks_exact(d))
                        .zip(xhat.chunks_exact(d))
                        .zip(rstd)
                    {
                        let mut sum_g = T::zero();
                        let mut sum_gx = T::zero();
                        for j in 0..d {
                            let gh = grow[j] * gamma[j];
                            sum_g += gh;
                            sum_gx += gh * xrow[j];
                        }
                        for j in 0..d {
                            let gh = grow[j] * gamma[j];
                            dxr[j] += r * (gh - inv_d * sum_g - xrow[j] * inv_d * sum_gx);
                        }
                    }
                }
            }
            &Op::Softmax { n } => {
                let dx = slot(lower, node.inputs[0], gout.len());
                kernels::softmax_rows_backward(y, gout, dx, n);
            }
            &Op::Attention {
                m,
                c,
                heads,
                ref probs,
            } => {
                let dh = c / heads;
                let scale = T::one() / T::from_usize(dh).expect("usize fits").sqrt();
                let (q, k, v) = (in_val(0), in_val(1), in_val(2));
                let (mi, ci) = (m as isize, c as isize);
                let mut dq = vec![T::zero(); m * c];
                let mut dk = vec![T::zero(); m * c];
                let mut dv = vec![T::zero(); m * c];
                let mut dp = vec![T::zero(); m * m];
                let mut ds = vec![T::zero(); m * m];
                for h in 0..heads {
                    let off = h * dh;
                    let p = &probs[h * m * m..(h + 1) * m * m];
                    // dV_h = P^T dO_h
                    T::gemm(
                        m, m, dh, T::one(), p, 1, mi, &gout[off..], ci, 1, T::zero(),
                        &mut dv[off..], ci, 1,
                    );
                    // dP = dO_h V_h^T
                    T::gemm(
                        m, dh, m, T::one(), &gout[off..], ci, 1, &v[off..], 1, ci, T::zero(),
                        &mut dp, mi, 1,
                    );
                    ds.iter_mut().for_each(|s| *s = T::zero());
                    kernels::softmax_rows_backward(p, &dp, &mut ds, m);
                    // dQ_h = scale * dS K_h, dK_h = scale * dS^T Q_h
                    T::gemm(
                        m, m, dh, scale, &ds, mi, 1, &k[off..], ci, 1, T::zero(), &mut dq[off..],
                        ci, 1,
                    );
                    T::gemm(
                        m, m, dh, scale, &ds, 1, mi, &q[off..], ci, 1, T::zero(), &mut dk[off..],
                        ci, 1,
                    );
                }
                for (j, part) in [dq, dk, dv].into_iter().enumerate() {
                    if needs(j) {
                        let dst = slot(lower, node.inputs[j], m * c);
                        dst.iter_mut().zip(&part).for_each(|(d, &g)| *d += g);
                    }
                }
            }
        }

        if faulty && node.op.kind() != OpKind::Param {
            // fault injection: inflate every gradient this rule produced
            let factor = T::from_f64_lossy(1.5);
            for &j in &node.inputs {
                if let Some(g) = lower[j].as_mut() {
                    g.iter_mut().for_each(|v| *v = *v * factor + T::from_f64_lossy(1e-2));
                }
            }
        }
    }
    Ok(Gradients { grads })
}
