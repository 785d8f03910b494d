//! Privileged rule-based driver and the route-progress tracker it relies on.

use sfse_core::head::{GoalPoint, WaypointSequence};

use crate::dynamics::{pursuit_steer, Control, EgoState, EGO_LENGTH, EGO_WIDTH};
use crate::geometry::{to_local, Polyline, Projection, Vec2};
use crate::world::{World, PEDESTRIAN_RADIUS};

/// Arclength offsets of the ground-truth waypoints.
pub const GT_OFFSETS: [f64; 4] = [2.0, 4.0, 6.0, 8.0];
pub const LOOKAHEAD: f64 = 4.0;
pub const CRUISE_SPEED: f64 = 6.0;
/// Free space the expert wants in front of its bumper.
pub const STOP_DISTANCE: f64 = 8.0;
/// Distance from the route end at which a run counts as complete.
pub const COMPLETION_MARGIN: f64 = 0.5;
/// The expert also checks where agents will be this far in the future.
const PREDICT_HORIZON: f64 = 1.0;

/// Follows the ego's arclength along the route.
///
/// Projections search only a window around the last estimate so a route
/// passing close to itself cannot make progress jump.
#[derive(Clone, Debug, PartialEq)]
pub struct RouteTracker {
    pub s: f64,
    /// Furthest arclength reached so far.
    pub best: f64,
}

impl RouteTracker {
    pub fn new(route: &Polyline, p: Vec2) -> Self {
        let s = route.project_window(p, 0.0, 10.0).s;
        RouteTracker { s, best: s.max(0.0) }
    }

    pub fn update(&mut self, route: &Polyline, p: Vec2) -> Projection {
        let proj = route.project_window(p, self.s - 5.0, self.s + 10.0);
        self.s = proj.s;
        self.best = self.best.max(proj.s);
        proj
    }
}

/// Expert output for one decision.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertOutput {
    pub gt: WaypointSequence,
    pub control: Control,
}

/// Route points ahead of arclength `s` in the ego frame.
pub fn gt_waypoints(route: &Polyline, ego: &EgoState, s: f64) -> WaypointSequence {
    let points = GT_OFFSETS
        .iter()
        .map(|&d| {
            let p = to_local(route.point_at(s + d), ego.position(), ego.yaw);
            [p.x, p.y]
        })
        .collect();
    WaypointSequence { points }
}

/// Next sparse marker at least 10 m ahead, else the route end, in the ego frame.
pub fn goal_point(world: &World, ego: &EgoState, s: f64) -> GoalPoint {
    let markers = world.markers();
    let target = markers
        .iter()
        .copied()
        .find(|&m| m >= s + 10.0)
        .unwrap_or_else(|| world.route.length());
    let p = to_local(world.route.point_at(target), ego.position(), ego.yaw);
    GoalPoint { x: p.x, y: p.y }
}

/// Whether anything sits in the lane within the stop distance ahead of `s`,
/// now or after the prediction horizon.
pub fn path_blocked(world: &World, s: f64, t: f64) -> bool {
    let clearance = EGO_WIDTH / 2.0 + 0.5;
    let end = s + EGO_LENGTH / 2.0 + STOP_DISTANCE;
    let mut probe = s - 1.0;
    while probe <= end {
        let q = world.route.point_at(probe);
        if world.obstacles.iter().any(|o| o.rect.distance(q) <= clearance) {
            return true;
        }
        for tt in [t, t + PREDICT_HORIZON] {
            if world.npcs.iter().any(|n| n.footprint(tt).distance(q) <= clearance) {
                return true;
            }
            if world
                .pedestrians
                .iter()
                .any(|p| (p.path.position(tt) - q).norm() - PEDESTRIAN_RADIUS <= clearance)
            {
                return true;
            }
        }
        probe += 0.5;
    }
    false
}

/// Ground truth and actuation at route arclength `s`; `None` once the ego
/// has reached the end of the route.
pub fn expert_policy(world: &World, ego: &EgoState, s: f64, t: f64) -> Option<ExpertOutput> {
    if s >= world.route.length() - COMPLETION_MARGIN {
        return None;
    }
    let aim = to_local(world.route.point_at(s + LOOKAHEAD), ego.position(), ego.yaw);
    let target_speed = if path_blocked(world, s, t) { 0.0 } else { CRUISE_SPEED };
    Some(ExpertOutput {
        gt: gt_waypoints(&world.route, ego, s),
        control: Control {
            steer: pursuit_steer(aim),
            target_speed,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Aabb;
    use crate::world::{generate_world, Mover, Pedestrian, StaticObstacle, WorldConfig};
    use proptest::prelude::*;

    fn straight_world() -> World {
        World::bare(Polyline::new((0..=100).map(|i| Vec2::new(i as f64, 0.0)).collect()), 2.0)
    }

    #[test]
    fn straight_route_gt() {
        let w = straight_world();
        let out = expert_policy(&w, &EgoState::default(), 0.0, 0.0).unwrap();
        assert_eq!(out.gt.points, [[2.0, 0.0], [4.0, 0.0], [6.0, 0.0], [8.0, 0.0]]);
        assert_eq!(out.control.steer, 0.0);
        assert_eq!(out.control.target_speed, CRUISE_SPEED);
    }

    #[test]
    fn obstacle_ahead_stops() {
        let mut w = straight_world();
        w.obstacles.push(StaticObstacle {
            rect: Aabb {
                min: Vec2::new(5.0, -0.5),
                max: Vec2::new(6.0, 0.5),
            },
            height: 1.5,
        });
        let out = expert_policy(&w, &EgoState::default(), 0.0, 0.0).unwrap();
        assert_eq!(out.control.target_speed, 0.0);
        // far away it does not matter yet
        let far = EgoState {
            x: -20.0,
            ..EgoState::default()
        };
        assert_eq!(expert_policy(&w, &far, -20.0, 0.0).unwrap().control.target_speed, CRUISE_SPEED);
    }

    #[test]
    fn roadside_obstacle_does_not_stop() {
        let mut w = straight_world();
        w.obstacles.push(StaticObstacle {
            rect: Aabb {
                min: Vec2::new(5.0, 3.0),
                max: Vec2::new(7.0, 5.0),
            },
            height: 3.0,
        });
        assert_eq!(
            expert_policy(&w, &EgoState::default(), 0.0, 0.0).unwrap().control.target_speed,
            CRUISE_SPEED
        );
    }

    #[test]
    fn waits_for_crossing_pedestrian() {
        let mut w = straight_world();
        w.pedestrians.push(Pedestrian {
            path: Mover {
                start: Vec2::new(8.0, 6.0),
                end: Vec2::new(8.0, -6.0),
                speed: 1.0,
                depart: 0.0,
            },
        });
        // at t = 6 it stands on the centerline
        assert!(path_blocked(&w, 0.0, 6.0));
        assert!(!path_blocked(&w, 0.0, 14.0));
    }

    #[test]
    fn end_of_route_completes() {
        let w = straight_world();
        let ego = EgoState {
            x: 99.6,
            ..EgoState::default()
        };
        assert!(expert_policy(&w, &ego, 99.6, 0.0).is_none());
    }

    #[test]
    fn tracker_is_monotone_on_hairpin() {
        // out along y = 0, back along y = 3
        let mut pts: Vec<Vec2> = (0..=40).map(|i| Vec2::new(i as f64, 0.0)).collect();
        pts.extend((0..=40).rev().map(|i| Vec2::new(i as f64, 3.0)));
        let route = Polyline::new(pts);
        let mut tr = RouteTracker::new(&route, Vec2::new(0.0, 0.0));
        for i in 0..=38 {
            tr.update(&route, Vec2::new(i as f64, 1.4));
            assert!((tr.s - i as f64).abs() < 1e-9, "jumped to {}", tr.s);
        }
    }

    #[test]
    fn goal_is_next_far_marker() {
        let w = generate_world(2, &WorldConfig::clean()).unwrap();
        let g = goal_point(&w, &EgoState::default(), 0.0);
        let p = w.route.point_at(25.0);
        assert!((g.x - p.x).abs() < 1e-12 && (g.y - p.y).abs() < 1e-12);
        let s = 20.0;
        let ego = EgoState::default();
        let g = goal_point(&w, &ego, s);
        assert_eq!(Vec2::new(g.x, g.y), w.route.point_at(50.0));
        let near_end = w.route.length() - 3.0;
        let g = goal_point(&w, &ego, near_end);
        assert_eq!(Vec2::new(g.x, g.y), w.route.point_at(w.route.length()));
    }

    proptest! {
        #[test]
        fn gt_is_rotation_equivariant(theta in -3.1f64..3.1, seed in 0u64..6, s in 0.0f64..150.0, off in -1.0f64..1.0, dyaw in -0.3f64..0.3) {
            let w = generate_world(seed, &WorldConfig::clean()).unwrap();
            let base = w.route.point_at(s);
            let normal = Vec2::from_angle(w.route.heading_at(s)).perp();
            let p = base + normal * off;
            let ego = EgoState { x: p.x, y: p.y, yaw: w.route.heading_at(s) + dyaw, speed: 3.0 };
            let a = gt_waypoints(&w.route, &ego, s);
            let rotated = Polyline::new(w.route.points.iter().map(|q| q.rotate(theta)).collect());
            let rp = p.rotate(theta);
            let rego = EgoState { x: rp.x, y: rp.y, yaw: ego.yaw + theta, ..ego };
            let b = gt_waypoints(&rotated, &rego, s);
            for (u, v) in a.points.iter().zip(&b.points) {
                prop_assert!((u[0] - v[0]).abs() <= 1e-6 && (u[1] - v[1]).abs() <= 1e-6);
            }
        }
    }
}
