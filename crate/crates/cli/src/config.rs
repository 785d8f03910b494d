//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sfse_core::fusion::FusionConfig;
use sfse_core::model::{FusionNet, ModelConfig};
use sfse_sim::episode::EpisodeConfig;
use sfse_sim::WorldConfig;

use crate::error::CliError;

/// Every accepted key with its default and a one-line description.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "0", "run seed for parameter init, batch order and gradcheck sampling"),
    ("seed_start", "0", "first episode seed for gen-data and eval"),
    ("seed_end", "8", "episode seed range end (exclusive)"),
    ("data_dir", "data", "dataset directory written by gen-data and read by train"),
    ("run_dir", "run", "training output directory (checkpoints, loss log)"),
    ("checkpoint", "run/final.sfse", "checkpoint evaluated by eval"),
    ("eval_dir", "eval", "directory of the eval report"),
    ("policy", "model", "eval driver: model, expert or stop"),
    ("clean_world", "false", "drop moving agents from generated worlds"),
    ("route_min", "200", "shortest route in meters"),
    ("route_max", "260", "longest route in meters"),
    ("obstacles", "6", "roadside obstacles per world"),
    ("npcs", "2", "crossing vehicles per world"),
    ("pedestrians", "2", "crossing pedestrians per world"),
    ("steer_noise", "0.02", "steering perturbation amplitude during data collection"),
    ("c", "64", "token width of the fusion transformer"),
    ("heads", "4", "attention heads"),
    ("layers", "2", "transformer blocks per fused resolution"),
    ("waypoints", "4", "predicted waypoints"),
    ("fusion", "true", "enable camera/LiDAR fusion"),
    ("optimizer", "adam", "optimizer; only adam is available"),
    ("lr", "0.001", "learning rate"),
    ("beta1", "0.9", "first-moment decay"),
    ("beta2", "0.999", "second-moment decay"),
    ("adam_eps", "1e-8", "denominator offset"),
    ("batch", "8", "samples per step"),
    ("steps", "500", "optimizer steps"),
    ("log_every", "10", "steps between loss log lines"),
    ("gc_eps", "1e-5", "finite-difference step of the 64-bit gradcheck, within [1e-5, 1e-2]"),
    ("gc_tol", "1e-3", "largest accepted relative gradient error"),
    ("gc_samples", "6", "coordinates checked per parameter end to end"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl RunConfig {
    /// Defaults overridden by the pairs in `text`.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| CliError::Usage(format!("config line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    /// Overrides one key; the value must parse as the key's type.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let Some(slot) = self.values.get_mut(key) else {
            return Err(CliError::Usage(format!("unknown config key `{key}`")));
        };
        let old = std::mem::replace(slot, value.to_string());
        if let Err(e) = self.validate_key(key) {
            self.values.insert(key.to_string(), old);
            return Err(e);
        }
        Ok(())
    }

    fn validate_key(&self, key: &str) -> Result<(), CliError> {
        match key {
            "data_dir" | "run_dir" | "checkpoint" | "eval_dir" => Ok(()),
            "policy" => match self.str(key) {
                "model" | "expert" | "stop" => Ok(()),
                other => Err(CliError::Usage(format!("policy must be model, expert or stop, got `{other}`"))),
            },
            "optimizer" => match self.str(key) {
                "adam" => Ok(()),
                other => Err(CliError::Usage(format!("unsupported optimizer `{other}`"))),
            },
            "clean_world" | "fusion" => self.get::<bool>(key).map(|_| ()),
            "seed" | "seed_start" | "seed_end" => self.get::<u64>(key).map(|_| ()),
            "obstacles" | "npcs" | "pedestrians" | "c" | "heads" | "layers" | "waypoints" | "batch" | "steps"
            | "log_every" | "gc_samples" => self.get::<usize>(key).map(|_| ()),
            "gc_eps" => match self.get::<f64>(key)? {
                v if (1e-5..=1e-2).contains(&v) => Ok(()),
                v => Err(CliError::Usage(format!("gc_eps must lie in [1e-5, 1e-2], got {v}"))),
            },
            _ => {
                let v = self.get::<f64>(key)?;
                if v.is_finite() {
                    Ok(())
                } else {
                    Err(CliError::Usage(format!("`{key}` must be finite")))
                }
            }
        }
    }

    pub fn str(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("every key has a default")
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError> {
        self.str(key)
            .parse()
            .map_err(|_| CliError::Usage(format!("`{key}` has invalid value `{}`", self.str(key))))
    }

    pub fn path(&self, key: &str) -> PathBuf {
        PathBuf::from(self.str(key))
    }

    pub fn seed(&self) -> u64 {
        self.get("seed").expect("validated")
    }

    /// Episode seeds; an empty range is a usage error.
    pub fn seed_range(&self) -> Result<std::ops::Range<u64>, CliError> {
        let (a, b): (u64, u64) = (self.get("seed_start")?, self.get("seed_end")?);
        if a >= b {
            return Err(CliError::Usage(format!("empty seed range {a}..{b}")));
        }
        Ok(a..b)
    }

    pub fn world(&self) -> Result<WorldConfig, CliError> {
        let clean: bool = self.get("clean_world")?;
        let cfg = WorldConfig {
            route_length: (self.get("route_min")?, self.get("route_max")?),
            obstacles: self.get("obstacles")?,
            npcs: if clean { 0 } else { self.get("npcs")? },
            pedestrians: if clean { 0 } else { self.get("pedestrians")? },
            ..WorldConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn episode(&self) -> Result<EpisodeConfig, CliError> {
        Ok(EpisodeConfig {
            world: self.world()?,
            steer_noise: self.get("steer_noise")?,
            ..EpisodeConfig::default()
        })
    }

    pub fn model(&self) -> Result<ModelConfig, CliError> {
        let fusion = FusionConfig {
            c: self.get("c")?,
            heads: self.get("heads")?,
            layers_per_resolution: self.get("layers")?,
            ..FusionConfig::default()
        };
        let model = ModelConfig {
            fusion,
            fusion_enabled: self.get("fusion")?,
            waypoints: self.get("waypoints")?,
            ..ModelConfig::default()
        };
        // building the network validates widths against heads and stages
        FusionNet::new(model.clone())?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_cover_every_key_and_validate() {
        let cfg = RunConfig::default();
        for (k, _, doc) in KEYS {
            assert!(!doc.is_empty());
            cfg.validate_key(k).unwrap();
        }
        assert_eq!(cfg.seed_range().unwrap(), 0..8);
        assert_eq!(cfg.model().unwrap(), ModelConfig::default());
        assert_eq!(cfg.world().unwrap(), WorldConfig::default());
    }

    #[test]
    fn parses_pairs_and_comments() {
        let cfg = RunConfig::parse("# run\nlr = 0.01  # faster\n\nsteps=20\nclean_world = true\n").unwrap();
        assert_eq!(cfg.get::<f64>("lr").unwrap(), 0.01);
        assert_eq!(cfg.get::<usize>("steps").unwrap(), 20);
        assert_eq!(cfg.world().unwrap().npcs, 0);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let err = RunConfig::parse("learning_rate = 0.1").unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
        assert_eq!(err.exit_code(), 2);
        assert!(RunConfig::parse("steps = many").is_err());
        assert!(RunConfig::parse("lr = nan").is_err());
        assert!(RunConfig::parse("optimizer = sgd").is_err());
        assert!(RunConfig::parse("just words").is_err());
    }

    #[test]
    fn failed_set_keeps_old_value() {
        let mut cfg = RunConfig::default();
        assert!(cfg.set("batch", "-1").is_err());
        assert_eq!(cfg.get::<usize>("batch").unwrap(), 8);
    }

    #[test]
    fn empty_seed_range_is_usage_error() {
        let cfg = RunConfig::parse("seed_start = 5\nseed_end = 5").unwrap();
        assert_eq!(cfg.seed_range().unwrap_err().exit_code(), 2);
    }
}
