//! Waypoint prediction: MLP reduction of the fused vector and an
//! autoregressive GRU decoder, trained with a summed L1 loss.

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{GruCell, Linear};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Ego-frame waypoints `(x forward, y left)` in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct WaypointSequence {
    pub points: Vec<[f64; 2]>,
}

impl WaypointSequence {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Contract("waypoints must be finite".into()));
        }
        Ok(WaypointSequence { points })
    }

    pub fn zeros(steps: usize) -> Self {
        WaypointSequence {
            points: vec![[0.0; 2]; steps],
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `[T, 2]` tensor.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.points.iter().flatten().map(|&v| T::from_f64_lossy(v)).collect();
        Tensor::new(vec![self.points.len(), 2], data).expect("non-empty waypoint sequence")
    }

    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        if t.rank() != 2 || t.shape()[1] != 2 {
            return Err(Error::dim("waypoints", format!("expected [T, 2], got {:?}", t.shape())));
        }
        let points = t
            .data()
            .chunks_exact(2)
            .map(|p| [p[0].to_f64_lossy(), p[1].to_f64_lossy()])
            .collect();
        Ok(WaypointSequence { points })
    }

    /// Summed L1 distance, see [`l1_waypoint_loss`].
    pub fn l1(&self, other: &WaypointSequence) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::dim(
                "l1_waypoint_loss",
                format!("{} vs {} waypoints", self.len(), other.len()),
            ));
        }
        Ok(self
            .points
            .iter()
            .zip(&other.points)
            .map(|(a, b)| (a[0] - b[0]).abs() + (a[1] - b[1]).abs())
            .sum())
    }
}

/// Route marker the vehicle is heading to, ego frame.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GoalPoint {
    pub x: f64,
    pub y: f64,
}

/// Decoder inputs (previous waypoint and goal) are scaled by this before the
/// input projection so that tens of meters stay in the GRU's working range.
pub const INPUT_SCALE: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct WaypointHead {
    pub reduce1: Linear,
    pub reduce2: Linear,
    pub input: Linear,
    pub gru: GruCell,
    pub delta: Linear,
    pub steps: usize,
}

impl WaypointHead {
    pub fn new(fused: usize, hidden: usize, feat: usize, steps: usize) -> Self {
        WaypointHead {
            reduce1: Linear::new("head.reduce1", fused, hidden),
            reduce2: Linear::new("head.reduce2", hidden, feat),
            input: Linear::new("head.input", 4, feat),
            gru: GruCell::new("head.gru", feat, feat),
            delta: Linear::new("head.delta", feat, 2),
            steps,
        }
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
        self.reduce1.init(store, rng)?;
        self.reduce2.init(store, rng)?;
        self.input.init(store, rng)?;
        self.gru.init(store, rng)?;
        self.delta.init(store, rng)
    }
}

/// Affine, relu, affine: fused vector to the decoder's initial state.
pub fn reduce_mlp<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    head: &WaypointHead,
    fused: Var,
) -> Result<Var> {
    if g.shape(fused) != [head.reduce1.din] {
        return Err(Error::dim(
            "reduce_mlp",
            format!("expected [{}], got {:?}", head.reduce1.din, g.shape(fused)),
        ));
    }
    let h = head.reduce1.forward(g, store, fused)?;
    let h = g.relu(h);
    head.reduce2.forward(g, store, h)
}

/// Autoregressive decoding of `steps` waypoints as `[steps, 2]`.
///
/// Starting from `h = feat` and `w = (0, 0)`, each step feeds the previous
/// waypoint and the goal through the input projection and GRU and adds the
/// predicted offset.
pub fn predict_waypoints<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    head: &WaypointHead,
    feat: Var,
    goal: GoalPoint,
    steps: usize,
) -> Result<Var> {
    if steps == 0 {
        return Err(Error::Contract("at least one waypoint must be predicted".into()));
    }
    if !(goal.x.is_finite() && goal.y.is_finite()) {
        return Err(Error::Contract("goal point must be finite".into()));
    }
    let goal_v = g.constant(Tensor::new(
        vec![2],
        vec![T::from_f64_lossy(goal.x), T::from_f64_lossy(goal.y)],
    )?);
    let scale = T::from_f64_lossy(INPUT_SCALE);
    let mut h = feat;
    let mut w = g.constant(Tensor::zeros(&[2]));
    let mut rows = Vec::with_capacity(steps);
    for _ in 0..steps {
        let inp = g.concat(&[w, goal_v])?;
        let inp = g.scale(inp, scale);
        let x = head.input.forward(g, store, inp)?;
        h = head.gru.forward(g, store, x, h)?;
        let d = head.delta.forward(g, store, h)?;
        w = g.add(w, d)?;
        rows.push(g.reshape(w, &[1, 2])?);
    }
    g.concat(&rows)
}

/// `sum_t |x_t - x_t^gt| + |y_t - y_t^gt|`, not averaged.
pub fn l1_waypoint_loss<T: Scalar>(g: &mut Graph<T>, pred: Var, gt: Var) -> Result<Var> {
    if g.shape(pred) != g.shape(gt) || g.shape(pred).len() != 2 || g.shape(pred)[1] != 2 {
        return Err(Error::dim(
            "l1_waypoint_loss",
            format!("pred {:?} vs gt {:?}", g.shape(pred), g.shape(gt)),
        ));
    }
    let d = g.sub(pred, gt)?;
    let a = g.abs(d);
    Ok(g.sum(a))
}
