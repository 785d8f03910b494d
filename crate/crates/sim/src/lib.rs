//! Procedural driving micro-world: route generation, toy sensors, the
//! expert driver, closed-loop episodes and driving-score metrics.

pub mod dynamics;
pub mod episode;
pub mod expert;
pub mod geometry;
pub mod metrics;
pub mod render;
pub mod world;

pub use dynamics::{step_dynamics, waypoint_controller, Control, EgoState};
pub use episode::{generate_episode, run_episode, Episode, EpisodeConfig, EpisodeOutcome, Policy};
pub use expert::expert_policy;
pub use metrics::{aggregate, compute_metrics, detect_infractions, DriveMetrics, InfractionEvent, InfractionKind, Limits};
pub use world::{generate_world, World, WorldConfig};
