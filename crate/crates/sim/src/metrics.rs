//! Infraction detection and driving-score bookkeeping.

use std::collections::BTreeMap;
use std::fmt;

use crate::dynamics::{EgoState, EGO_LENGTH, EGO_WIDTH};
use crate::expert::{RouteTracker, COMPLETION_MARGIN};
use crate::geometry::Obb;
use crate::world::{World, PEDESTRIAN_RADIUS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum InfractionKind {
    Ped,
    Veh,
    Stat,
    Dev,
    To,
    Block,
}

impl InfractionKind {
    pub const ALL: [InfractionKind; 6] = [
        InfractionKind::Ped,
        InfractionKind::Veh,
        InfractionKind::Stat,
        InfractionKind::Dev,
        InfractionKind::To,
        InfractionKind::Block,
    ];

    /// Multiplicative infraction-score factor; `None` for kinds that end the
    /// run instead.
    pub fn penalty(self) -> Option<f64> {
        match self {
            InfractionKind::Ped => Some(0.50),
            InfractionKind::Veh => Some(0.60),
            InfractionKind::Stat => Some(0.65),
            _ => None,
        }
    }

    pub fn terminates(self) -> bool {
        matches!(self, InfractionKind::Dev | InfractionKind::Block | InfractionKind::To)
    }
}

impl fmt::Display for InfractionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            InfractionKind::Ped => "Ped",
            InfractionKind::Veh => "Veh",
            InfractionKind::Stat => "Stat",
            InfractionKind::Dev => "Dev",
            InfractionKind::To => "TO",
            InfractionKind::Block => "Block",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InfractionEvent {
    pub kind: InfractionKind,
    pub time: f64,
    /// Route arclength at the event.
    pub position: f64,
}

/// Termination thresholds of an episode.
#[derive(Clone, Debug, PartialEq)]
pub struct Limits {
    pub timeout: f64,
    pub block_time: f64,
    pub block_speed: f64,
    pub max_deviation: f64,
    /// Seconds before a collided entity can register again.
    pub rearm: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            timeout: 120.0,
            block_time: 30.0,
            block_speed: 0.1,
            max_deviation: 6.0,
            rearm: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DriveMetrics {
    /// Route completion in percent.
    pub rc: f64,
    pub is_: f64,
    pub ds: f64,
    /// Events per km driven for every kind.
    pub per_km: BTreeMap<InfractionKind, f64>,
    pub counts: BTreeMap<InfractionKind, usize>,
    pub km_driven: f64,
    /// Set when nothing was driven and rates were reported as zero.
    pub zero_distance: bool,
}

impl DriveMetrics {
    pub fn count(&self, kind: InfractionKind) -> usize {
        self.counts.get(&kind).copied().unwrap_or(0)
    }

    pub fn rate(&self, kind: InfractionKind) -> f64 {
        self.per_km.get(&kind).copied().unwrap_or(0.0)
    }

    /// One machine-readable report line.
    pub fn line(&self, seed: u64) -> String {
        use InfractionKind::*;
        format!(
            "episode={seed} rc={:.4} is={:.4} ds={:.4} ped={:.4} veh={:.4} stat={:.4} dev={} to={} block={} km={:.4}",
            self.rc,
            self.is_,
            self.ds,
            self.rate(Ped),
            self.rate(Veh),
            self.rate(Stat),
            self.count(Dev),
            self.count(To),
            self.count(Block),
            self.km_driven
        )
    }
}

/// Scores one episode.
///
/// `route_progress` is clamped to the route; a completed run passes the full
/// length.
pub fn compute_metrics(events: &[InfractionEvent], route_progress: f64, route_length: f64, km_driven: f64) -> DriveMetrics {
    assert!(route_length > 0.0, "route length must be positive");
    let rc = 100.0 * (route_progress / route_length).clamp(0.0, 1.0);
    let mut counts = BTreeMap::new();
    let mut is_ = 1.0;
    for e in events {
        *counts.entry(e.kind).or_insert(0) += 1;
        if let Some(p) = e.kind.penalty() {
            is_ *= p;
        }
    }
    let zero_distance = !(km_driven > 0.0);
    let per_km = InfractionKind::ALL
        .iter()
        .map(|&k| {
            let n = counts.get(&k).copied().unwrap_or(0) as f64;
            (k, if zero_distance { 0.0 } else { n / km_driven })
        })
        .collect();
    DriveMetrics {
        rc,
        is_,
        ds: rc * is_,
        per_km,
        counts,
        km_driven: km_driven.max(0.0),
        zero_distance,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aggregate {
    pub ds: f64,
    pub rc: f64,
    pub is_: f64,
}

impl Aggregate {
    pub fn line(&self) -> String {
        format!("AGG ds={:.4} rc={:.4} is={:.4}", self.ds, self.rc, self.is_)
    }
}

/// Means over episodes. The driving score averages per-episode products.
pub fn aggregate(metrics: &[DriveMetrics]) -> Aggregate {
    if metrics.is_empty() {
        return Aggregate {
            ds: 0.0,
            rc: 0.0,
            is_: 0.0,
        };
    }
    let n = metrics.len() as f64;
    let mean = |f: fn(&DriveMetrics) -> f64| metrics.iter().map(f).sum::<f64>() / n;
    Aggregate {
        ds: mean(|m| m.ds),
        rc: mean(|m| m.rc),
        is_: mean(|m| m.is_),
    }
}

pub fn ego_footprint(ego: &EgoState) -> Obb {
    Obb {
        center: ego.position(),
        half: crate::geometry::Vec2::new(EGO_LENGTH / 2.0, EGO_WIDTH / 2.0),
        yaw: ego.yaw,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Entity {
    Obstacle(usize),
    Npc(usize),
    Pedestrian(usize),
}

/// Incremental infraction detector fed one trajectory sample at a time.
#[derive(Clone, Debug)]
pub struct InfractionMonitor {
    limits: Limits,
    tracker: Option<RouteTracker>,
    /// Entities that collided recently, with the time of the last contact.
    disarmed: BTreeMap<Entity, f64>,
    slow_since: Option<f64>,
    pub events: Vec<InfractionEvent>,
    pub finished: bool,
    pub completed: bool,
}

impl InfractionMonitor {
    pub fn new(limits: Limits) -> Self {
        InfractionMonitor {
            limits,
            tracker: None,
            disarmed: BTreeMap::new(),
            slow_since: None,
            events: Vec::new(),
            finished: false,
            completed: false,
        }
    }

    pub fn progress(&self) -> f64 {
        self.tracker.as_ref().map_or(0.0, |t| t.best)
    }

    pub fn arclength(&self) -> f64 {
        self.tracker.as_ref().map_or(0.0, |t| t.s)
    }

    fn push(&mut self, kind: InfractionKind, time: f64) {
        let position = self.arclength();
        self.events.push(InfractionEvent { kind, time, position });
        if kind.terminates() {
            self.finished = true;
        }
    }

    /// Records the ego state at time `t`; returns how many events it raised.
    pub fn observe(&mut self, world: &World, t: f64, ego: &EgoState) -> usize {
        if self.finished {
            return 0;
        }
        let before = self.events.len();
        let proj = match &mut self.tracker {
            Some(tr) => tr.update(&world.route, ego.position()),
            None => {
                let tr = RouteTracker::new(&world.route, ego.position());
                let p = world.route.project_window(ego.position(), tr.s - 5.0, tr.s + 10.0);
                self.tracker = Some(tr);
                p
            }
        };
        if self.progress() >= world.route.length() - COMPLETION_MARGIN {
            self.completed = true;
            self.finished = true;
        }

        let fp = ego_footprint(ego);
        let mut contacts = Vec::new();
        for (i, o) in world.obstacles.iter().enumerate() {
            if fp.overlaps(&o.rect.as_obb()) {
                contacts.push((Entity::Obstacle(i), InfractionKind::Stat));
            }
        }
        for (i, n) in world.npcs.iter().enumerate() {
            if fp.overlaps(&n.footprint(t)) {
                contacts.push((Entity::Npc(i), InfractionKind::Veh));
            }
        }
        for (i, p) in world.pedestrians.iter().enumerate() {
            if fp.overlaps_circle(p.path.position(t), PEDESTRIAN_RADIUS) {
                contacts.push((Entity::Pedestrian(i), InfractionKind::Ped));
            }
        }
        // re-arm entities that have been clear for long enough
        let rearm = self.limits.rearm;
        self.disarmed
            .retain(|e, last| contacts.iter().any(|(c, _)| c == e) || t - *last < rearm);
        for (e, kind) in contacts {
            match self.disarmed.insert(e, t) {
                Some(_) => {}
                None => self.push(kind, t),
            }
        }

        if self.completed {
            return self.events.len() - before;
        }
        if proj.lateral.abs() > self.limits.max_deviation {
            self.push(InfractionKind::Dev, t);
            return self.events.len() - before;
        }
        if ego.speed < self.limits.block_speed {
            let since = *self.slow_since.get_or_insert(t);
            if t - since >= self.limits.block_time - 1e-9 {
                self.push(InfractionKind::Block, t);
                return self.events.len() - before;
            }
        } else {
            self.slow_since = None;
        }
        if t >= self.limits.timeout - 1e-9 {
            self.push(InfractionKind::To, t);
        }
        self.events.len() - before
    }
}

/// Scans a sampled trajectory and reports every infraction up to the first
/// terminating one.
pub fn detect_infractions(world: &World, trajectory: &[(f64, EgoState)], limits: &Limits) -> Vec<InfractionEvent> {
    let mut m = InfractionMonitor::new(limits.clone());
    for (t, ego) in trajectory {
        m.observe(world, *t, ego);
        if m.finished {
            break;
        }
    }
    m.events
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Aabb, Polyline, Vec2};
    use crate::world::StaticObstacle;
    use proptest::prelude::*;

    fn ev(kind: InfractionKind) -> InfractionEvent {
        InfractionEvent {
            kind,
            time: 0.0,
            position: 0.0,
        }
    }

    #[test]
    fn clean_run() {
        let m = compute_metrics(&[], 250.0, 250.0, 0.25);
        assert_eq!((m.rc, m.is_, m.ds), (100.0, 1.0, 100.0));
    }

    #[test]
    fn two_vehicle_collisions() {
        let m = compute_metrics(&[ev(InfractionKind::Veh), ev(InfractionKind::Veh)], 100.0, 200.0, 4.0);
        assert!((m.is_ - 0.36).abs() < 1e-12);
        assert!((m.ds - 18.0).abs() < 1e-12);
        assert_eq!(m.rate(InfractionKind::Veh), 0.5);
    }

    #[test]
    fn zero_distance_is_flagged() {
        let m = compute_metrics(&[ev(InfractionKind::Block)], 0.0, 200.0, 0.0);
        assert!(m.zero_distance);
        assert_eq!(m.rate(InfractionKind::Block), 0.0);
        assert_eq!(m.count(InfractionKind::Block), 1);
        assert_eq!(m.is_, 1.0);
    }

    #[test]
    fn report_line_layout() {
        let m = compute_metrics(&[ev(InfractionKind::Stat)], 50.0, 200.0, 0.05);
        assert_eq!(
            m.line(3),
            "episode=3 rc=25.0000 is=0.6500 ds=16.2500 ped=0.0000 veh=0.0000 stat=20.0000 dev=0 to=0 block=0 km=0.0500"
        );
    }

    fn straight_world() -> World {
        World::bare(Polyline::new((0..=100).map(|i| Vec2::new(i as f64, 0.0)).collect()), 2.0)
    }

    fn drive(from: f64, to: f64, speed: f64) -> Vec<(f64, EgoState)> {
        let n = ((to - from) / (speed * 0.1)).round() as usize;
        (0..=n)
            .map(|k| {
                let t = k as f64 / 10.0;
                (
                    t,
                    EgoState {
                        x: from + speed * t,
                        y: 0.0,
                        yaw: 0.0,
                        speed,
                    },
                )
            })
            .collect()
    }

    #[test]
    fn collision_free_run_is_empty() {
        let w = straight_world();
        assert!(detect_infractions(&w, &drive(0.0, 99.9, 5.0), &Limits::default()).is_empty());
    }

    #[test]
    fn driving_through_obstacle_is_one_event() {
        let mut w = straight_world();
        w.obstacles.push(StaticObstacle {
            rect: Aabb {
                min: Vec2::new(40.0, -0.5),
                max: Vec2::new(41.0, 0.5),
            },
            height: 1.5,
        });
        let ev = detect_infractions(&w, &drive(0.0, 99.9, 5.0), &Limits::default());
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].kind, InfractionKind::Stat);
        // first contact when the front bumper (x + 2) reaches 40
        assert!((ev[0].time - 7.6).abs() < 1e-9, "{}", ev[0].time);
    }

    #[test]
    fn lingering_contact_rearms_after_leaving() {
        let mut w = straight_world();
        w.obstacles.push(StaticObstacle {
            rect: Aabb {
                min: Vec2::new(10.0, -0.5),
                max: Vec2::new(11.0, 0.5),
            },
            height: 1.5,
        });
        let at = |x: f64| EgoState {
            x,
            speed: 1.0,
            ..EgoState::default()
        };
        // in contact for 5 s, out for 1 s, back in, out for 3 s, back in
        let mut traj = Vec::new();
        let mut t = 0.0;
        for (x, dur) in [(9.0, 5.0), (0.0, 1.0), (9.0, 0.5), (0.0, 3.0), (9.0, 0.5)] {
            for _ in 0..(dur * 10.0) as usize {
                traj.push((t, at(x)));
                t += 0.1;
            }
        }
        let ev = detect_infractions(&w, &traj, &Limits::default());
        assert_eq!(ev.len(), 2);
    }

    #[test]
    fn standing_still_blocks() {
        let w = straight_world();
        let traj: Vec<(f64, EgoState)> = (0..=400).map(|k| (k as f64 / 10.0, EgoState::default())).collect();
        let ev = detect_infractions(&w, &traj, &Limits::default());
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].kind, InfractionKind::Block);
        assert!((ev[0].time - 30.0).abs() < 1e-9);
    }

    #[test]
    fn leaving_the_route_deviates() {
        let w = straight_world();
        let traj: Vec<(f64, EgoState)> = (0..100)
            .map(|k| {
                let t = k as f64 / 10.0;
                (
                    t,
                    EgoState {
                        x: t,
                        y: t,
                        yaw: 0.78,
                        speed: 1.4,
                    },
                )
            })
            .collect();
        let ev = detect_infractions(&w, &traj, &Limits::default());
        assert_eq!(ev.iter().map(|e| e.kind).collect::<Vec<_>>(), [InfractionKind::Dev]);
        assert!((ev[0].time - 6.1).abs() < 1e-9);
    }

    #[test]
    fn aggregate_is_mean_of_products() {
        let a = compute_metrics(&[ev(InfractionKind::Ped)], 100.0, 100.0, 0.1);
        let b = compute_metrics(&[], 20.0, 100.0, 0.1);
        let agg = aggregate(&[a, b]);
        assert!((agg.ds - 35.0).abs() < 1e-12);
        assert!((agg.rc - 60.0).abs() < 1e-12);
        assert!((agg.is_ - 0.75).abs() < 1e-12);
        assert_eq!(agg.line(), "AGG ds=35.0000 rc=60.0000 is=0.7500");
    }

    proptest! {
        #[test]
        fn score_algebra(kinds in prop::collection::vec(0usize..6, 0..12), progress in 0.0f64..300.0, km in 0.001f64..5.0) {
            let events: Vec<_> = kinds.iter().map(|&k| ev(InfractionKind::ALL[k])).collect();
            let m = compute_metrics(&events, progress, 250.0, km);
            let factors = [0.5, 0.6, 0.65, 1.0, 1.0, 1.0];
            let is_: f64 = kinds.iter().map(|&k| factors[k]).product();
            prop_assert!((m.is_ - is_).abs() <= 1e-9);
            prop_assert!(m.ds <= m.rc + 1e-12 && m.ds <= 100.0 * m.is_ + 1e-12);
            prop_assert!((m.ds - m.rc * m.is_).abs() <= 1e-9);
            for (i, &k) in InfractionKind::ALL.iter().enumerate() {
                let n = kinds.iter().filter(|&&x| x == i).count() as f64;
                prop_assert!((m.rate(k) - n / km).abs() <= 1e-9);
            }
            prop_assert_eq!(m.is_ == 1.0, kinds.iter().all(|&k| k >= 3));
        }
    }
}
