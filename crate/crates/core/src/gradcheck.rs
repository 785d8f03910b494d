//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, OpKind, Var};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;

/// Which parameter coordinates to perturb.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coverage {
    All,
    /// At most `per_param` coordinates of every parameter, chosen by `seed`.
    Sample { per_param: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

/// Relative error with a `max(1, |a|, |n|)` denominator.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares backpropagated gradients of `f` against central differences
/// `(f(p + eps) - f(p - eps)) / (2 eps)`, one coordinate at a time.
///
/// `f` must be deterministic and return a scalar. Parameter values are
/// restored before returning; accumulated gradients are left zeroed.
pub fn finite_diff_check<T, F>(
    f: F,
    store: &mut ParamStore<T>,
    eps: f64,
    coverage: Coverage,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &ParamStore<T>) -> Result<Var>,
{
    finite_diff_check_in(Graph::new, f, store, eps, coverage)
}

/// Same as [`finite_diff_check`] but analytic gradients come from a graph
/// with a deliberately broken backward rule.
#[doc(hidden)]
pub fn finite_diff_check_faulty<T, F>(
    fault: OpKind,
    f: F,
    store: &mut ParamStore<T>,
    eps: f64,
    coverage: Coverage,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &ParamStore<T>) -> Result<Var>,
{
    finite_diff_check_in(|| Graph::with_fault(fault), f, store, eps, coverage)
}

fn finite_diff_check_in<T, F>(
    make_graph: impl Fn() -> Graph<T>,
    f: F,
    store: &mut ParamStore<T>,
    eps: f64,
    coverage: Coverage,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &ParamStore<T>) -> Result<Var>,
{
    if !(1e-5..=1e-2).contains(&eps) {
        return Err(Error::Contract(format!(
            "finite-difference eps must lie in [1e-5, 1e-2], got {eps}"
        )));
    }
    store.zero_grad();
    let mut g = make_graph();
    let loss = f(&mut g, store)?;
    g.backward(loss, store)?;
    let analytic: Vec<(String, Vec<T>)> = store
        .iter()
        .map(|(n, p)| (n.to_string(), p.grad.clone()))
        .collect();
    store.zero_grad();

    let eval = |store: &ParamStore<T>| -> Result<f64> {
        let mut g = Graph::new();
        let v = f(&mut g, store)?;
        Ok(g.value(v).item().to_f64_lossy())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(match coverage {
        Coverage::Sample { seed, .. } => seed,
        Coverage::All => 0,
    });
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    for (name, grad) in &analytic {
        let len = grad.len();
        let coords: Vec<usize> = match coverage {
            Coverage::All => (0..len).collect(),
            Coverage::Sample { per_param, .. } if per_param >= len => (0..len).collect(),
            Coverage::Sample { per_param, .. } => {
                let mut c = sample(&mut rng, len, per_param).into_vec();
                c.sort_unstable();
                c
            }
        };
        for i in coords {
            let orig = store.tensor(name)?.data()[i];
            let (plus, minus) = {
                let base = orig.to_f64_lossy();
                (T::from_f64_lossy(base + eps), T::from_f64_lossy(base - eps))
            };
            store.get_mut(name)?.tensor.data_mut()[i] = plus;
            let fp = eval(store);
            store.get_mut(name)?.tensor.data_mut()[i] = minus;
            let fm = eval(store);
            store.get_mut(name)?.tensor.data_mut()[i] = orig;
            // use the realized step so f32 rounding of p +/- eps does not bias the quotient
            let step = plus.to_f64_lossy() - minus.to_f64_lossy();
            let numeric = (fp? - fm?) / step;
            let err = relative_error(grad[i].to_f64_lossy(), numeric);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}
