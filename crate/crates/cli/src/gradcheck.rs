//! Finite-difference audit of every differentiable op and of the full model.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfse_core::fusion::FusionConfig;
use sfse_core::gradcheck::{finite_diff_check, finite_diff_check_faulty, Coverage, GradCheckReport};
use sfse_core::head::{GoalPoint, WaypointSequence};
use sfse_core::model::{FusionNet, ModelConfig, Sample};
use sfse_core::sensors::{BevGrid, CameraFrame};
use sfse_core::{Graph, OpKind, ParamStore, Result as CoreResult, Scalar, Tensor, Var};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckLine {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub passed: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct GradcheckSettings {
    pub seed: u64,
    pub eps: f64,
    pub tol: f64,
    /// Coordinates per parameter in the end-to-end check.
    pub samples: usize,
    pub fault: Option<OpKind>,
}

/// Random values in [-1.5, 1.5] at least `margin` away from zero, so no
/// finite-difference stencil straddles a kink at the origin.
fn away_from_zero(rng: &mut ChaCha8Rng, n: usize, margin: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = rng.gen_range(margin..1.5);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

fn store<T: Scalar>(rng: &mut ChaCha8Rng, shapes: &[(&str, &[usize])], margin: f64) -> ParamStore<T> {
    let mut s = ParamStore::new();
    for (name, shape) in shapes {
        let n = shape.iter().product();
        let data = away_from_zero(rng, n, margin).into_iter().map(T::from_f64_lossy).collect();
        s.insert(*name, Tensor::new(shape.to_vec(), data).expect("shape matches")).expect("fresh name");
    }
    s
}

/// Weighted sum so every output element gets its own gradient.
fn readout<T: Scalar>(g: &mut Graph<T>, y: Var) -> CoreResult<Var> {
    let shape = g.shape(y).to_vec();
    let w = g.constant(Tensor::from_fn(&shape, |i| T::from_f64_lossy(((i * 37 % 17) as f64 - 8.0) / 8.0)));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

type Case<T> = Box<dyn Fn(&mut Graph<T>, &ParamStore<T>) -> CoreResult<Var>>;

/// A small graph whose readout exercises `kind`, with its parameters.
fn op_case<T: Scalar>(kind: OpKind, rng: &mut ChaCha8Rng, margin: f64) -> (ParamStore<T>, Case<T>) {
    use OpKind::*;
    let ab: &[(&str, &[usize])] = &[("a", &[3, 4]), ("b", &[4])];
    let (shapes, f): (&[(&str, &[usize])], Case<T>) = match kind {
        MatMul => (
            &[("a", &[3, 4]), ("b", &[4, 2])],
            Box::new(|g, s| {
                let (a, b) = (g.param(s, "a")?, g.param(s, "b")?);
                let y = g.matmul(a, b)?;
                readout(g, y)
            }),
        ),
        Add | Sub | Mul => (
            ab,
            Box::new(move |g, s| {
                let (a, b) = (g.param(s, "a")?, g.param(s, "b")?);
                let y = match kind {
                    Add => g.add(a, b)?,
                    Sub => g.sub(a, b)?,
                    _ => g.mul(a, b)?,
                };
                readout(g, y)
            }),
        ),
        Scale | Relu | Sigmoid | Tanh | Abs => (
            &[("a", &[3, 4])],
            Box::new(move |g, s| {
                let a = g.param(s, "a")?;
                let y = match kind {
                    Scale => g.scale(a, T::from_f64_lossy(0.7)),
                    Relu => g.relu(a),
                    Sigmoid => g.sigmoid(a),
                    Tanh => g.tanh(a),
                    _ => g.abs(a),
                };
                readout(g, y)
            }),
        ),
        Sign => (
            &[("a", &[3, 4]), ("b", &[3, 4])],
            Box::new(|g, s| {
                let (a, b) = (g.param(s, "a")?, g.param(s, "b")?);
                let sa = g.sign(a);
                let y = g.mul(sa, b)?;
                readout(g, y)
            }),
        ),
        Sum => (
            &[("a", &[3, 4])],
            Box::new(|g, s| {
                let a = g.param(s, "a")?;
                let sq = g.mul(a, a)?;
                Ok(g.sum(sq))
            }),
        ),
        MeanLastAxis | Reshape | Transpose | Slice => (
            &[("a", &[3, 4])],
            Box::new(move |g, s| {
                let a = g.param(s, "a")?;
                let y = match kind {
                    MeanLastAxis => g.mean_last_axis(a)?,
                    Reshape => g.reshape(a, &[2, 6])?,
                    Transpose => g.transpose(a)?,
                    _ => g.slice_rows(a, 1, 2)?,
                };
                readout(g, y)
            }),
        ),
        Concat => (
            &[("a", &[2, 3]), ("b", &[1, 3])],
            Box::new(|g, s| {
                let (a, b) = (g.param(s, "a")?, g.param(s, "b")?);
                let y = g.concat(&[a, b])?;
                readout(g, y)
            }),
        ),
        Conv2d => (
            &[("x", &[2, 5, 5]), ("w", &[3, 2, 3, 3]), ("b", &[3])],
            Box::new(|g, s| {
                let (x, w, b) = (g.param(s, "x")?, g.param(s, "w")?, g.param(s, "b")?);
                let y = g.conv2d(x, w, b, 2, 1)?;
                readout(g, y)
            }),
        ),
        LayerNorm => (
            &[("x", &[3, 6]), ("gamma", &[6]), ("beta", &[6])],
            Box::new(|g, s| {
                let (x, ga, be) = (g.param(s, "x")?, g.param(s, "gamma")?, g.param(s, "beta")?);
                let y = g.layer_norm(x, ga, be, 1e-5)?;
                readout(g, y)
            }),
        ),
        Softmax => (
            &[("a", &[2, 5])],
            Box::new(|g, s| {
                let a = g.param(s, "a")?;
                let y = g.softmax(a)?;
                readout(g, y)
            }),
        ),
        Attention => (
            &[("q", &[4, 6]), ("k", &[4, 6]), ("v", &[4, 6])],
            Box::new(|g, s| {
                let (q, k, v) = (g.param(s, "q")?, g.param(s, "k")?, g.param(s, "v")?);
                let y = g.attention(q, k, v, 2)?;
                readout(g, y)
            }),
        ),
        Leaf | Param => unreachable!("not differentiable ops"),
    };
    (store(rng, shapes, margin), f)
}

/// A reduced network that still runs every stage of the real one.
pub fn small_model_config() -> ModelConfig {
    ModelConfig {
        camera_input: [3, 16, 32],
        lidar_input: [3, 16, 16],
        channels: vec![4, 8, 8, 16],
        fusion: FusionConfig {
            heads: 2,
            layers_per_resolution: 1,
            c: 8,
            mlp_ratio: 2,
            fusion_stages: vec![1, 2, 3],
        },
        fusion_enabled: true,
        fused_dim: 16,
        head_hidden: 8,
        feat_dim: 8,
        waypoints: 3,
    }
}

fn check<T: Scalar>(
    settings: &GradcheckSettings,
    f: impl Fn(&mut Graph<T>, &ParamStore<T>) -> CoreResult<Var>,
    store: &mut ParamStore<T>,
    coverage: Coverage,
) -> CoreResult<GradCheckReport> {
    match settings.fault {
        Some(kind) => finite_diff_check_faulty(kind, f, store, settings.eps, coverage),
        None => finite_diff_check(f, store, settings.eps, coverage),
    }
}

/// One line per differentiable op plus `end_to_end`, in that order.
pub fn run_checks<T: Scalar>(settings: &GradcheckSettings) -> Result<Vec<CheckLine>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let margin = (10.0 * settings.eps).max(0.05);
    let mut lines = Vec::new();
    let mut push = |name: &str, r: GradCheckReport| {
        lines.push(CheckLine {
            name: name.to_string(),
            max_rel_error: r.max_rel_error,
            checked: r.checked,
            passed: r.max_rel_error <= settings.tol,
        });
    };
    for kind in OpKind::DIFFERENTIABLE {
        let (mut s, f) = op_case::<T>(kind, &mut rng, margin);
        let r = check(settings, f, &mut s, Coverage::All)?;
        push(kind.name(), r);
    }

    // end to end: forward pass plus L1 loss of the reduced network
    let cfg = small_model_config();
    let net = FusionNet::new(cfg.clone())?;
    let mut s = net.init::<T>(settings.seed)?;
    // shake every parameter so zero-initialized branches carry gradient too
    for (_, p) in s.iter_mut() {
        for v in p.tensor.data_mut() {
            *v += T::from_f64_lossy(rng.gen_range(-0.2..0.2));
        }
    }
    let [cc, ch, cw] = cfg.camera_input;
    let [lc, lh, lw] = cfg.lidar_input;
    let sample = Sample {
        camera: CameraFrame {
            tensor: Tensor::from_fn(&[cc, ch, cw], |_| rng.gen_range(0.0..1.0)),
        },
        bev: BevGrid {
            tensor: Tensor::from_fn(&[lc, lh, lw], |_| rng.gen_range(0.0..1.0)),
        },
        goal: GoalPoint { x: 12.0, y: -3.0 },
    };
    let gt = WaypointSequence::new((1..=cfg.waypoints).map(|t| [3.0 * t as f64, 0.4 * t as f64]).collect())?;
    let coverage = Coverage::Sample {
        per_param: settings.samples,
        seed: settings.seed,
    };
    let r = check(settings, |g, s| net.loss(g, s, &sample, &gt), &mut s, coverage)?;
    push("end_to_end", r);
    Ok(lines)
}

/// Prints the report; fails with the offending names when any check is over
/// tolerance.
pub fn gradcheck(settings: &GradcheckSettings, f64_mode: bool, out: &mut dyn Write) -> Result<Vec<CheckLine>, CliError> {
    let lines = if f64_mode {
        run_checks::<f64>(settings)?
    } else {
        run_checks::<f32>(settings)?
    };
    let precision = if f64_mode { "f64" } else { "f32" };
    let io = |e: std::io::Error| CliError::Io(e.to_string());
    for l in &lines {
        writeln!(
            out,
            "op={} max_rel_err={:.3e} checked={} status={}",
            l.name,
            l.max_rel_error,
            l.checked,
            if l.passed { "ok" } else { "FAIL" }
        )
        .map_err(io)?;
    }
    let failed: Vec<&str> = lines.iter().filter(|l| !l.passed).map(|l| l.name.as_str()).collect();
    writeln!(
        out,
        "gradcheck precision={precision} tol={:e} passed={}/{}",
        settings.tol,
        lines.len() - failed.len(),
        lines.len()
    )
    .map_err(io)?;
    if failed.is_empty() {
        Ok(lines)
    } else {
        Err(CliError::Check(format!("gradient mismatch in: {}", failed.join(", "))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings() -> GradcheckSettings {
        GradcheckSettings {
            seed: 3,
            eps: 1e-5,
            tol: 1e-3,
            samples: 2,
            fault: None,
        }
    }

    #[test]
    fn every_op_passes_in_f64() {
        let lines = run_checks::<f64>(&settings()).unwrap();
        assert_eq!(lines.len(), OpKind::DIFFERENTIABLE.len() + 1);
        for l in &lines {
            assert!(l.passed, "{l:?}");
            assert!(l.checked > 0);
        }
    }

    #[test]
    fn injected_fault_is_named() {
        let s = GradcheckSettings {
            fault: Some(OpKind::Softmax),
            ..settings()
        };
        let mut out = Vec::new();
        let err = gradcheck(&s, true, &mut out).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("softmax"));
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("op=softmax") && text.contains("status=FAIL"));
        assert!(!text.contains("op=matmul max_rel_err=1"));
    }
}
