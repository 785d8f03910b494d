//! Kinematic bicycle and the pure-pursuit waypoint follower.

use sfse_core::head::WaypointSequence;

use crate::geometry::Vec2;

pub const WHEELBASE: f64 = 2.5;
pub const MAX_STEER: f64 = 0.5;
pub const MAX_ACCEL: f64 = 3.0;
pub const MAX_SPEED: f64 = 10.0;
pub const DT: f64 = 0.1;
pub const EGO_LENGTH: f64 = 4.0;
pub const EGO_WIDTH: f64 = 2.0;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EgoState {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub speed: f64,
}

impl EgoState {
    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.yaw.is_finite() && self.speed.is_finite()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Control {
    /// Front-wheel angle in radians, positive to the left.
    pub steer: f64,
    pub target_speed: f64,
}

/// Advances the bicycle by `dt`.
///
/// Position integrates exactly along the arc travelled at the start-of-step
/// speed, so constant inputs trace a true circle. Speed then moves toward the
/// target by at most `MAX_ACCEL * dt`.
pub fn step_dynamics(ego: &EgoState, control: Control, dt: f64) -> EgoState {
    let steer = if control.steer.is_finite() {
        control.steer.clamp(-MAX_STEER, MAX_STEER)
    } else {
        0.0
    };
    let target = if control.target_speed.is_finite() {
        control.target_speed.clamp(0.0, MAX_SPEED)
    } else {
        0.0
    };
    let dist = ego.speed * dt;
    let kappa = steer.tan() / WHEELBASE;
    let (x, y, yaw) = if kappa.abs() < 1e-12 {
        (ego.x + dist * ego.yaw.cos(), ego.y + dist * ego.yaw.sin(), ego.yaw)
    } else {
        let yaw = ego.yaw + dist * kappa;
        (
            ego.x + (yaw.sin() - ego.yaw.sin()) / kappa,
            ego.y - (yaw.cos() - ego.yaw.cos()) / kappa,
            yaw,
        )
    };
    let dv = (target - ego.speed).clamp(-MAX_ACCEL * dt, MAX_ACCEL * dt);
    EgoState {
        x,
        y,
        yaw,
        speed: (ego.speed + dv).clamp(0.0, MAX_SPEED),
    }
}

/// Pure-pursuit steering toward an ego-frame point.
pub fn pursuit_steer(target: Vec2) -> f64 {
    let d2 = target.dot(target);
    if d2 < 1e-9 {
        return 0.0;
    }
    (2.0 * WHEELBASE * target.y / d2).atan().clamp(-MAX_STEER, MAX_STEER)
}

/// Turns predicted ego-frame waypoints into actuation.
///
/// Steers at the second waypoint; twice the gap between the first two is the
/// target speed. A first waypoint at the ego means stop.
pub fn waypoint_controller(wps: &WaypointSequence, _speed: f64) -> Control {
    if wps.len() < 2 {
        return Control::default();
    }
    let w1 = Vec2::new(wps.points[0][0], wps.points[0][1]);
    let w2 = Vec2::new(wps.points[1][0], wps.points[1][1]);
    if !(w1.is_finite() && w2.is_finite()) || w1.norm() < 0.25 {
        return Control::default();
    }
    Control {
        steer: pursuit_steer(w2),
        target_speed: (2.0 * (w2 - w1).norm()).clamp(0.0, 8.0),
    }
}
