//! Adam training of the waypoint network on recorded expert episodes.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sfse_core::head::WaypointSequence;
use sfse_core::model::{FusionNet, Sample};
use sfse_core::ParamStore32;

use crate::config::RunConfig;
use crate::container::save_checkpoint;
use crate::dataset::read_dataset;
use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam with moments kept in f64.
#[derive(Clone, Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            t: 0,
        }
    }

    /// Applies the accumulated gradients, then clears them.
    pub fn step(&mut self, store: &mut ParamStore32) {
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for (name, p) in store.iter_mut() {
            let n = p.grad.len();
            let m = self.m.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
            let data = p.tensor.data_mut();
            for i in 0..n {
                let g = p.grad[i] as f64;
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let update = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                data[i] = (data[i] as f64 - update) as f32;
            }
        }
        store.zero_grad();
    }
}

/// Mean loss over every pair without touching gradients.
pub fn dataset_loss(net: &FusionNet, store: &ParamStore32, pairs: &[(&Sample, &WaypointSequence)]) -> Result<f64, CliError> {
    let mut total = 0.0;
    for (s, gt) in pairs {
        let mut g = sfse_core::Graph::new();
        let l = net.loss(&mut g, store, s, gt)?;
        total += g.value(l).item() as f64;
    }
    Ok(total / pairs.len() as f64)
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub initial_loss: f64,
    pub final_loss: f64,
    /// `(step, batch loss)` at every logged step.
    pub log: Vec<(usize, f64)>,
    pub run_dir: PathBuf,
}

fn save(store: &ParamStore32, dir: &Path, file: &str) -> Result<(), CliError> {
    save_checkpoint(store, &dir.join(file))
}

/// Trains on `data_dir`, writing `final.sfse`, `best.sfse` and `loss.log`
/// into `run_dir`. Log lines are passed to `out` as they are produced.
pub fn train(cfg: &RunConfig, out: &mut dyn Write) -> Result<TrainSummary, CliError> {
    let data_dir = cfg.path("data_dir");
    let run_dir = cfg.path("run_dir");
    let episodes = read_dataset(&data_dir)?;
    let pairs: Vec<(&Sample, &WaypointSequence)> = episodes
        .iter()
        .flat_map(|e| e.samples.iter().zip(&e.targets))
        .collect();
    if pairs.is_empty() {
        return Err(CliError::Io(format!("{}: dataset holds no frames", data_dir.display())));
    }
    let net = FusionNet::new(cfg.model()?)?;
    let seed = cfg.seed();
    let mut store = net.init::<f32>(seed)?;
    let batch: usize = cfg.get("batch")?;
    let steps: usize = cfg.get("steps")?;
    let log_every: usize = cfg.get::<usize>("log_every")?.max(1);
    if batch == 0 {
        return Err(CliError::Usage("batch must be positive".into()));
    }
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.get("lr")?,
        beta1: cfg.get("beta1")?,
        beta2: cfg.get("beta2")?,
        eps: cfg.get("adam_eps")?,
    });
    fs::create_dir_all(&run_dir).map_err(|e| CliError::io(&run_dir, e))?;

    let emit = |out: &mut dyn Write, line: &str, log: &mut String| -> Result<(), CliError> {
        writeln!(out, "{line}").map_err(|e| CliError::Io(e.to_string()))?;
        log.push_str(line);
        log.push('\n');
        Ok(())
    };
    let mut log_text = String::new();
    let initial_loss = dataset_loss(&net, &store, &pairs)?;
    emit(out, &format!("initial_loss={initial_loss:.6} frames={}", pairs.len()), &mut log_text)?;

    // the batch order is a chain of seeded shuffles, one per epoch
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0b5e_55ed);
    let mut order: Vec<usize> = Vec::new();
    let mut best: Option<(f64, ParamStore32)> = None;
    let mut log = Vec::new();
    for step in 1..=steps {
        let mut idx = Vec::with_capacity(batch);
        while idx.len() < batch {
            if order.is_empty() {
                order = (0..pairs.len()).collect();
                order.shuffle(&mut rng);
            }
            idx.push(order.pop().expect("refilled above"));
        }
        let chosen: Vec<_> = idx.iter().map(|&i| pairs[i]).collect();
        let last_good = store.clone();
        let loss = net.accumulate_batch(&mut store, &chosen);
        let finite_grads = store.iter().all(|(_, p)| p.grad.iter().all(|g| g.is_finite()));
        let loss = match loss {
            Ok(l) if l.is_finite() && finite_grads => l,
            other => {
                save(&last_good, &run_dir, "last_good.sfse")?;
                if let Some((_, b)) = &best {
                    save(b, &run_dir, "best.sfse")?;
                }
                fs::write(run_dir.join("loss.log"), &log_text).map_err(|e| CliError::io(&run_dir, e))?;
                let what = match other {
                    Ok(l) => format!("loss {l}"),
                    Err(e) => e.to_string(),
                };
                return Err(CliError::Numeric(format!(
                    "non-finite training state at step {step} ({what}); parameters before the step saved to {}",
                    run_dir.join("last_good.sfse").display()
                )));
            }
        };
        adam.step(&mut store);
        if step % log_every == 0 {
            emit(out, &format!("step={step} loss={loss:.6}"), &mut log_text)?;
            log.push((step, loss));
            if best.as_ref().is_none_or(|(b, _)| loss < *b) {
                best = Some((loss, last_good));
            }
        }
    }
    let final_loss = dataset_loss(&net, &store, &pairs)?;
    emit(out, &format!("final_loss={final_loss:.6}"), &mut log_text)?;
    save(&store, &run_dir, "final.sfse")?;
    save(best.as_ref().map_or(&store, |(_, b)| b), &run_dir, "best.sfse")?;
    let path = run_dir.join("loss.log");
    fs::write(&path, &log_text).map_err(|e| CliError::io(&path, e))?;
    Ok(TrainSummary {
        initial_loss,
        final_loss,
        log,
        run_dir,
    })
}
