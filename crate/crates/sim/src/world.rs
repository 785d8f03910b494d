//! Procedural worlds: a curvy route, roadside obstacles and crossing agents.

use std::collections::hash_map::DefaultHasher;
use std::f64::consts::PI;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfse_core::{Error, Result};

use crate::geometry::{segments_intersect, Aabb, Obb, Polyline, Vec2};

/// Spacing of the dense route samples in meters.
pub const ROUTE_STEP: f64 = 0.5;
/// Spacing of the sparse route markers used as goal points.
pub const MARKER_SPACING: f64 = 25.0;
pub const OBSTACLE_HEIGHTS: [f64; 3] = [0.3, 1.5, 3.0];
pub const NPC_LENGTH: f64 = 4.0;
pub const NPC_WIDTH: f64 = 2.0;
pub const NPC_HEIGHT: f64 = 1.5;
pub const PEDESTRIAN_RADIUS: f64 = 0.3;
pub const PEDESTRIAN_HEIGHT: f64 = 1.8;
/// Assumed cruise speed when timing agent crossings.
const PLAN_SPEED: f64 = 6.0;

#[derive(Clone, Debug, PartialEq)]
pub struct WorldConfig {
    /// Route length range in meters.
    pub route_length: (f64, f64),
    /// Route segment count range (inclusive).
    pub segments: (usize, usize),
    pub lane_halfwidth: f64,
    pub obstacles: usize,
    pub npcs: usize,
    pub pedestrians: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            route_length: (200.0, 260.0),
            segments: (6, 12),
            lane_halfwidth: 2.0,
            obstacles: 6,
            npcs: 2,
            pedestrians: 2,
        }
    }
}

impl WorldConfig {
    /// No moving agents; roadside obstacles stay.
    pub fn clean() -> Self {
        WorldConfig {
            npcs: 0,
            pedestrians: 0,
            ..WorldConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.route_length;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Config(format!("route length range {lo}..{hi} is empty or non-positive")));
        }
        if self.segments.0 == 0 || self.segments.0 > self.segments.1 {
            return Err(Error::Config(format!("segment range {:?} is invalid", self.segments)));
        }
        if !(self.lane_halfwidth > 0.0) {
            return Err(Error::Config("lane half-width must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StaticObstacle {
    pub rect: Aabb,
    pub height: f64,
}

/// Agent moving along a straight path at constant speed, parked at the path
/// ends before it starts and after it finishes.
#[derive(Clone, Debug, PartialEq)]
pub struct Mover {
    pub start: Vec2,
    pub end: Vec2,
    pub speed: f64,
    /// Time at which it leaves `start`.
    pub depart: f64,
}

impl Mover {
    pub fn position(&self, t: f64) -> Vec2 {
        let len = (self.end - self.start).norm();
        let travelled = ((t - self.depart) * self.speed).clamp(0.0, len);
        self.start + (self.end - self.start) * (travelled / len)
    }

    pub fn heading(&self) -> f64 {
        let d = self.end - self.start;
        d.y.atan2(d.x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Npc {
    pub path: Mover,
}

impl Npc {
    pub fn footprint(&self, t: f64) -> Obb {
        Obb {
            center: self.path.position(t),
            half: Vec2::new(NPC_LENGTH / 2.0, NPC_WIDTH / 2.0),
            yaw: self.path.heading(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pedestrian {
    pub path: Mover,
}

#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub seed: u64,
    pub route: Polyline,
    pub lane_halfwidth: f64,
    pub obstacles: Vec<StaticObstacle>,
    pub npcs: Vec<Npc>,
    pub pedestrians: Vec<Pedestrian>,
}

impl World {
    /// A world holding only `route`; handy for tests.
    pub fn bare(route: Polyline, lane_halfwidth: f64) -> Self {
        World {
            seed: 0,
            route,
            lane_halfwidth,
            obstacles: Vec::new(),
            npcs: Vec::new(),
            pedestrians: Vec::new(),
        }
    }

    /// Hash of every route coordinate, bit-exact.
    pub fn route_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for p in &self.route.points {
            p.x.to_bits().hash(&mut h);
            p.y.to_bits().hash(&mut h);
        }
        h.finish()
    }

    /// Arclengths of the sparse markers, ending with the route end.
    pub fn markers(&self) -> Vec<f64> {
        let len = self.route.length();
        let mut m: Vec<f64> = (1..)
            .map(|k| k as f64 * MARKER_SPACING)
            .take_while(|&s| s < len)
            .collect();
        m.push(len);
        m
    }
}

fn sample_route(rng: &mut ChaCha8Rng, cfg: &WorldConfig) -> Vec<Vec2> {
    let total = rng.gen_range(cfg.route_length.0..=cfg.route_length.1);
    let n = rng.gen_range(cfg.segments.0..=cfg.segments.1);
    let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.6..1.4)).collect();
    let wsum: f64 = weights.iter().sum();
    let mut pts = vec![Vec2::new(0.0, 0.0)];
    let (mut p, mut yaw) = (Vec2::new(0.0, 0.0), 0.0f64);
    for (i, w) in weights.iter().enumerate() {
        let len = total * w / wsum;
        // the first segment is straight so every episode starts aligned
        let curvature = if i == 0 || rng.gen_bool(0.4) {
            0.0
        } else {
            let k: f64 = rng.gen_range(1.0 / 60.0..1.0 / 25.0);
            let k = k.min(PI / 2.0 / len);
            if rng.gen_bool(0.5) {
                k
            } else {
                -k
            }
        };
        let steps = (len / ROUTE_STEP).ceil().max(1.0) as usize;
        let ds = len / steps as f64;
        for _ in 0..steps {
            if curvature == 0.0 {
                p = p + Vec2::from_angle(yaw) * ds;
            } else {
                let r = 1.0 / curvature;
                let next = yaw + ds * curvature;
                p = p + Vec2::new(r * (next.sin() - yaw.sin()), -r * (next.cos() - yaw.cos()));
                yaw = next;
            }
            pts.push(p);
        }
    }
    pts
}

/// Rejects routes that come back within `clearance` of themselves.
fn route_is_clear(pts: &[Vec2], clearance: f64) -> bool {
    let skip = (4.0 * clearance / ROUTE_STEP).ceil() as usize;
    for i in 0..pts.len() {
        for j in (i + skip)..pts.len() {
            if (pts[i] - pts[j]).norm() < clearance {
                return false;
            }
        }
    }
    let segs: Vec<(Vec2, Vec2)> = pts.windows(2).map(|w| (w[0], w[1])).collect();
    for i in 0..segs.len() {
        for j in (i + 2)..segs.len() {
            if segments_intersect(segs[i].0, segs[i].1, segs[j].0, segs[j].1) {
                return false;
            }
        }
    }
    true
}

const MAX_ATTEMPTS: usize = 200;

/// Builds a world deterministically from `seed`.
pub fn generate_world(seed: u64, cfg: &WorldConfig) -> Result<World> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clearance = 6.0 * cfg.lane_halfwidth;
    let mut pts = None;
    for _ in 0..MAX_ATTEMPTS {
        let cand = sample_route(&mut rng, cfg);
        if route_is_clear(&cand, clearance) {
            pts = Some(cand);
            break;
        }
    }
    let Some(pts) = pts else {
        return Err(Error::Config(format!(
            "no self-avoiding route found for seed {seed} in {MAX_ATTEMPTS} attempts"
        )));
    };
    let route = Polyline::new(pts);
    let mut world = World::bare(route, cfg.lane_halfwidth);
    world.seed = seed;
    place_obstacles(&mut world, &mut rng, cfg.obstacles);
    place_movers(&mut world, &mut rng, cfg.npcs, cfg.pedestrians);
    Ok(world)
}

/// Roadside boxes kept at least `lane_halfwidth + 1` from the centerline so
/// the corridor itself stays free.
fn place_obstacles(world: &mut World, rng: &mut ChaCha8Rng, count: usize) {
    let len = world.route.length();
    let min_gap = world.lane_halfwidth + 1.0;
    let mut placed = 0;
    for _ in 0..count * 20 {
        if placed == count {
            break;
        }
        let s = rng.gen_range(15.0..len);
        let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let size = Vec2::new(rng.gen_range(1.0..4.0), rng.gen_range(1.0..4.0));
        let offset = min_gap + rng.gen_range(0.5..6.0) + size.x.max(size.y) / 2.0;
        let height = OBSTACLE_HEIGHTS[rng.gen_range(0..OBSTACLE_HEIGHTS.len())];
        let normal = Vec2::from_angle(world.route.heading_at(s)).perp();
        let c = world.route.point_at(s) + normal * (side * offset);
        let rect = Aabb {
            min: c - size * 0.5,
            max: c + size * 0.5,
        };
        let clear = world.route.points.iter().all(|&p| rect.distance(p) >= min_gap);
        if clear {
            world.obstacles.push(StaticObstacle { rect, height });
            placed += 1;
        }
    }
}

/// Agents crossing the route roughly when an ego at cruise speed arrives.
fn place_movers(world: &mut World, rng: &mut ChaCha8Rng, npcs: usize, peds: usize) {
    let len = world.route.length();
    let park_gap = world.lane_halfwidth + 2.0;
    let make = |rng: &mut ChaCha8Rng, reach: f64, speed: f64| -> Option<Mover> {
        let s = rng.gen_range(40.0..(len - 20.0).max(41.0));
        let normal = Vec2::from_angle(world.route.heading_at(s)).perp();
        let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let center = world.route.point_at(s);
        let start = center + normal * (side * reach);
        let end = center - normal * (side * reach);
        let arrive = s / PLAN_SPEED + 1.0 + rng.gen_range(-3.0..3.0);
        let depart = arrive - reach / speed;
        let parked_ok = [start, end].iter().all(|&p| world.route.distance(p) >= park_gap);
        parked_ok.then_some(Mover {
            start,
            end,
            speed,
            depart,
        })
    };
    for _ in 0..npcs {
        let speed = rng.gen_range(3.0..6.0);
        if let Some(path) = make(rng, 14.0, speed) {
            world.npcs.push(Npc { path });
        }
    }
    for _ in 0..peds {
        let speed = rng.gen_range(0.8..1.5);
        if let Some(path) = make(rng, 6.0, speed) {
            world.pedestrians.push(Pedestrian { path });
        }
    }
}
