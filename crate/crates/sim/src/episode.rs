//! Closed-loop episodes: policies, the rollout loop and expert data collection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfse_core::head::{GoalPoint, WaypointSequence};
use sfse_core::model::{FusionNet, Sample};
use sfse_core::sensors::{bev_histogram, BevConfig, CameraFrame, PointCloud};
use sfse_core::{Error, ParamStore, Result, Scalar};

use crate::dynamics::{step_dynamics, waypoint_controller, Control, EgoState, DT};
use crate::expert::{expert_policy, goal_point, gt_waypoints};
use crate::metrics::{compute_metrics, DriveMetrics, InfractionEvent, InfractionMonitor, Limits};
use crate::render::{render_camera, render_lidar};
use crate::world::{generate_world, World, WorldConfig};

/// Physics steps between two perception/prediction updates (2 Hz at 10 Hz).
pub const PERCEPTION_PERIOD: usize = 5;

/// What a policy sees at a decision step.
#[derive(Clone, Copy, Debug)]
pub struct Observation<'a> {
    pub world: &'a World,
    pub ego: EgoState,
    pub t: f64,
    /// Current route arclength of the ego.
    pub s: f64,
}

pub trait Policy {
    /// Physics steps between decisions; the last control is held in between.
    fn decision_period(&self) -> usize;
    fn decide(&mut self, obs: &Observation<'_>) -> Result<Control>;
}

/// The privileged expert, deciding at every physics step.
#[derive(Clone, Debug, Default)]
pub struct ExpertDriver;

impl Policy for ExpertDriver {
    fn decision_period(&self) -> usize {
        1
    }

    fn decide(&mut self, obs: &Observation<'_>) -> Result<Control> {
        Ok(expert_policy(obs.world, &obs.ego, obs.s, obs.t).map_or(Control::default(), |e| e.control))
    }
}

/// Expert with a smooth random steering perturbation, so recorded data
/// includes recoveries from off-center states.
#[derive(Clone, Debug)]
pub struct NoisyExpert {
    rng: ChaCha8Rng,
    amplitude: f64,
    state: f64,
}

impl NoisyExpert {
    pub fn new(seed: u64, amplitude: f64) -> Self {
        NoisyExpert {
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_e4e7),
            amplitude,
            state: 0.0,
        }
    }
}

impl Policy for NoisyExpert {
    fn decision_period(&self) -> usize {
        1
    }

    fn decide(&mut self, obs: &Observation<'_>) -> Result<Control> {
        let mut c = ExpertDriver.decide(obs)?;
        if self.amplitude > 0.0 {
            self.state = 0.9 * self.state + self.rng.gen_range(-self.amplitude..self.amplitude);
            c.steer += self.state;
        }
        Ok(c)
    }
}

/// Anything that maps one sensor sample to waypoints.
pub trait WaypointModel {
    fn predict(&mut self, sample: &Sample) -> Result<WaypointSequence>;
}

/// Always predicts the ego position, i.e. always asks to stop.
#[derive(Clone, Debug)]
pub struct StopModel {
    pub steps: usize,
}

impl WaypointModel for StopModel {
    fn predict(&mut self, _sample: &Sample) -> Result<WaypointSequence> {
        Ok(WaypointSequence::zeros(self.steps))
    }
}

/// The trained network with its parameters.
#[derive(Clone, Debug)]
pub struct NetModel<T: Scalar> {
    pub net: FusionNet,
    pub store: ParamStore<T>,
}

impl<T: Scalar> WaypointModel for NetModel<T> {
    fn predict(&mut self, sample: &Sample) -> Result<WaypointSequence> {
        self.net.predict(&self.store, sample)
    }
}

/// Renders both sensors and bins the point cloud.
pub fn sensor_sample(world: &World, ego: &EgoState, t: f64, s: f64, bev: &BevConfig) -> Result<Sample> {
    let cloud = render_lidar(world, ego, t);
    Ok(Sample {
        camera: render_camera(world, ego, t),
        bev: bev_histogram(&cloud, bev)?,
        goal: goal_point(world, ego, s),
    })
}

/// A waypoint model driving through the renderers and the pure-pursuit follower.
#[derive(Clone, Debug)]
pub struct SensorPolicy<M> {
    pub model: M,
    pub bev: BevConfig,
}

impl<M> SensorPolicy<M> {
    pub fn new(model: M) -> Self {
        SensorPolicy {
            model,
            bev: BevConfig::default(),
        }
    }
}

impl<M: WaypointModel> Policy for SensorPolicy<M> {
    fn decision_period(&self) -> usize {
        PERCEPTION_PERIOD
    }

    fn decide(&mut self, obs: &Observation<'_>) -> Result<Control> {
        let sample = sensor_sample(obs.world, &obs.ego, obs.t, obs.s, &self.bev)?;
        let wps = self.model.predict(&sample)?;
        if wps.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("policy produced waypoints {:?}", wps.points)));
        }
        Ok(waypoint_controller(&wps, obs.ego.speed))
    }
}

#[derive(Clone, Debug)]
pub struct EpisodeOutcome {
    pub trajectory: Vec<(f64, EgoState)>,
    pub events: Vec<InfractionEvent>,
    pub metrics: DriveMetrics,
    pub completed: bool,
    /// Set when the policy failed; metrics then cover the run up to that point.
    pub aborted: Option<String>,
}

impl EpisodeOutcome {
    pub fn duration(&self) -> f64 {
        self.trajectory.last().map_or(0.0, |(t, _)| *t)
    }
}

fn rollout(
    world: &World,
    policy: &mut dyn Policy,
    limits: &Limits,
    mut before_step: impl FnMut(usize, &Observation<'_>) -> Result<()>,
) -> Result<EpisodeOutcome> {
    let period = policy.decision_period().max(1);
    let mut ego = EgoState {
        x: world.route.points[0].x,
        y: world.route.points[0].y,
        yaw: world.route.heading_at(0.0),
        speed: 0.0,
    };
    let mut monitor = InfractionMonitor::new(limits.clone());
    monitor.observe(world, 0.0, &ego);
    let mut trajectory = vec![(0.0, ego)];
    let mut control = Control::default();
    let mut driven = 0.0;
    let mut aborted = None;
    let mut step = 0usize;
    while !monitor.finished {
        let t = step as f64 / 10.0;
        let obs = Observation {
            world,
            ego,
            t,
            s: monitor.arclength(),
        };
        before_step(step, &obs)?;
        if step.is_multiple_of(period) {
            match policy.decide(&obs) {
                Ok(c) => control = c,
                Err(e) => {
                    aborted = Some(format!("policy failed at t={t:.1}: {e}"));
                    break;
                }
            }
        }
        let next = step_dynamics(&ego, control, DT);
        driven += (next.position() - ego.position()).norm();
        ego = next;
        step += 1;
        let t = step as f64 / 10.0;
        trajectory.push((t, ego));
        monitor.observe(world, t, &ego);
    }
    let length = world.route.length();
    let progress = if monitor.completed { length } else { monitor.progress() };
    let metrics = compute_metrics(&monitor.events, progress, length, driven / 1000.0);
    Ok(EpisodeOutcome {
        trajectory,
        events: monitor.events,
        metrics,
        completed: monitor.completed,
        aborted,
    })
}

/// Drives `policy` in `world` from the route start until completion or a
/// terminating infraction.
pub fn run_episode(policy: &mut dyn Policy, world: &World, limits: &Limits) -> EpisodeOutcome {
    rollout(world, policy, limits, |_, _| Ok(())).expect("no-op hook cannot fail")
}

/// One recorded observation along an expert rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub ego: EgoState,
    pub camera: CameraFrame,
    pub cloud: PointCloud,
    pub goal: GoalPoint,
    pub gt: WaypointSequence,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeConfig {
    pub world: WorldConfig,
    pub limits: Limits,
    /// Per-step amplitude of the steering perturbation during collection.
    pub steer_noise: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            world: WorldConfig::default(),
            limits: Limits::default(),
            steer_noise: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub seed: u64,
    pub world: World,
    /// Frames at 2 Hz: one per completed half second of driving.
    pub frames: Vec<Frame>,
    pub duration: f64,
}

/// Collects one expert episode from `seed`.
pub fn generate_episode(seed: u64, cfg: &EpisodeConfig) -> Result<Episode> {
    let world = generate_world(seed, &cfg.world)?;
    let mut frames = Vec::new();
    let mut expert = NoisyExpert::new(seed, cfg.steer_noise);
    let outcome = rollout(&world, &mut expert, &cfg.limits, |step, obs| {
        if step % PERCEPTION_PERIOD == 0 {
            frames.push(Frame {
                ego: obs.ego,
                camera: render_camera(obs.world, &obs.ego, obs.t),
                cloud: render_lidar(obs.world, &obs.ego, obs.t),
                goal: goal_point(obs.world, &obs.ego, obs.s),
                gt: gt_waypoints(&obs.world.route, &obs.ego, obs.s),
            });
        }
        Ok(())
    })?;
    let duration = outcome.duration();
    frames.truncate((duration * 2.0 + 1e-9).floor() as usize);
    Ok(Episode {
        seed,
        world,
        frames,
        duration,
    })
}
