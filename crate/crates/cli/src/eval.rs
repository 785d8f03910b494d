//! Closed-loop evaluation over a seed range.

use std::fs;
use std::io::Write;

use sfse_core::model::FusionNet;
use sfse_sim::episode::{ExpertDriver, NetModel, SensorPolicy, StopModel};
use sfse_sim::metrics::Aggregate;
use sfse_sim::{aggregate, generate_world, run_episode, DriveMetrics, Limits, Policy};

use crate::config::RunConfig;
use crate::container::load_checkpoint;
use crate::error::CliError;

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub episodes: Vec<(u64, DriveMetrics)>,
    pub aggregate: Aggregate,
    /// Exactly the text printed and written to the report file.
    pub text: String,
}

fn make_policy(cfg: &RunConfig) -> Result<Box<dyn Policy>, CliError> {
    let model = cfg.model()?;
    Ok(match cfg.str("policy") {
        "expert" => Box::new(ExpertDriver),
        "stop" => Box::new(SensorPolicy::new(StopModel { steps: model.waypoints })),
        _ => {
            let net = FusionNet::new(model)?;
            let template = net.init::<f32>(0)?;
            let store = load_checkpoint(&cfg.path("checkpoint"), &template)?;
            Box::new(SensorPolicy::new(NetModel { net, store }))
        }
    })
}

/// Runs one episode per seed, printing a line per episode and the aggregate,
/// and writes the same lines to `eval_dir/report.txt`.
pub fn evaluate(cfg: &RunConfig, out: &mut dyn Write) -> Result<EvalReport, CliError> {
    let seeds = cfg.seed_range()?;
    let world_cfg = cfg.world()?;
    let mut policy = make_policy(cfg)?;
    let limits = Limits::default();
    let mut text = String::new();
    let mut episodes = Vec::new();
    for seed in seeds {
        let world = generate_world(seed, &world_cfg)?;
        let outcome = run_episode(policy.as_mut(), &world, &limits);
        if let Some(why) = &outcome.aborted {
            eprintln!("episode {seed} aborted: {why}");
        }
        let line = outcome.metrics.line(seed);
        writeln!(out, "{line}").map_err(|e| CliError::Io(e.to_string()))?;
        text.push_str(&line);
        text.push('\n');
        episodes.push((seed, outcome.metrics));
    }
    let metrics: Vec<DriveMetrics> = episodes.iter().map(|(_, m)| m.clone()).collect();
    let agg = aggregate(&metrics);
    let line = agg.line();
    writeln!(out, "{line}").map_err(|e| CliError::Io(e.to_string()))?;
    text.push_str(&line);
    text.push('\n');
    let dir = cfg.path("eval_dir");
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let path = dir.join("report.txt");
    fs::write(&path, &text).map_err(|e| CliError::io(&path, e))?;
    Ok(EvalReport {
        episodes,
        aggregate: agg,
        text,
    })
}
