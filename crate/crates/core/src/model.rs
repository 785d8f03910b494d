//! The full camera/LiDAR network: backbones, fusion, scene vector, decoder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::backbone::{Backbone, FeaturePyramid};
use crate::error::{Error, Result};
use crate::fusion::{global_feature, multi_resolution_fusion, Fusion, FusionConfig, FusionTrace, GlobalHead};
use crate::head::{l1_waypoint_loss, predict_waypoints, reduce_mlp, GoalPoint, WaypointHead, WaypointSequence};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::sensors::{BevGrid, CameraFrame};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub camera_input: [usize; 3],
    pub lidar_input: [usize; 3],
    pub channels: Vec<usize>,
    pub fusion: FusionConfig,
    /// When false the network runs both backbones without any fusion.
    pub fusion_enabled: bool,
    pub fused_dim: usize,
    pub head_hidden: usize,
    pub feat_dim: usize,
    pub waypoints: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            camera_input: [3, 64, 128],
            lidar_input: [3, 64, 64],
            channels: vec![16, 32, 64, 128],
            fusion: FusionConfig::default(),
            fusion_enabled: true,
            fused_dim: 512,
            head_hidden: 128,
            feat_dim: 64,
            waypoints: 4,
        }
    }
}

/// One model input.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub camera: CameraFrame,
    pub bev: BevGrid,
    pub goal: GoalPoint,
}

/// Graph handles of every intermediate a caller may want to inspect.
#[derive(Clone, Debug)]
pub struct ModelOutput {
    pub camera: FeaturePyramid,
    pub lidar: FeaturePyramid,
    pub global: Var,
    pub feat: Var,
    /// `[T, 2]`.
    pub waypoints: Var,
    pub trace: FusionTrace,
}

#[derive(Clone, Debug)]
pub struct FusionNet {
    pub cfg: ModelConfig,
    pub camera: Backbone,
    pub lidar: Backbone,
    pub fusion: Option<Fusion>,
    pub global: GlobalHead,
    pub head: WaypointHead,
}

impl FusionNet {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        if cfg.channels.is_empty() || cfg.waypoints == 0 {
            return Err(Error::Config("model needs at least one stage and one waypoint".into()));
        }
        let camera = Backbone::new("camera", cfg.camera_input, &cfg.channels);
        let lidar = Backbone::new("lidar", cfg.lidar_input, &cfg.channels);
        let fusion = if cfg.fusion_enabled {
            Some(Fusion::new(cfg.fusion.clone(), &camera, &lidar)?)
        } else {
            None
        };
        let last = *cfg.channels.last().expect("non-empty");
        Ok(FusionNet {
            global: GlobalHead::new(last, cfg.fused_dim),
            head: WaypointHead::new(cfg.fused_dim, cfg.head_hidden, cfg.feat_dim, cfg.waypoints),
            camera,
            lidar,
            fusion,
            cfg,
        })
    }

    /// The same network with fusion switched off; parameter names are shared.
    pub fn without_fusion(&self) -> Self {
        FusionNet {
            fusion: None,
            cfg: ModelConfig {
                fusion_enabled: false,
                ..self.cfg.clone()
            },
            ..self.clone()
        }
    }

    /// Fresh parameters drawn from a ChaCha stream seeded with `seed`.
    pub fn init<T: Scalar>(&self, seed: u64) -> Result<ParamStore<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        self.camera.init(&mut store, &mut rng)?;
        self.lidar.init(&mut store, &mut rng)?;
        if let Some(f) = &self.fusion {
            f.init(&mut store, &mut rng)?;
        }
        self.global.init(&mut store, &mut rng)?;
        self.head.init(&mut store, &mut rng)?;
        Ok(store)
    }

    /// Names of the fusion-branch parameters.
    pub fn is_fusion_param(name: &str) -> bool {
        name.starts_with("fusion")
    }

    pub fn is_head_param(name: &str) -> bool {
        name.starts_with("head.")
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, sample: &Sample) -> Result<ModelOutput> {
        let cam_in = g.constant(sample.camera.tensor.cast());
        let lid_in = g.constant(sample.bev.tensor.cast());
        let mut trace = FusionTrace::default();
        let (camera, lidar) = multi_resolution_fusion(
            g,
            store,
            &self.camera,
            &self.lidar,
            self.fusion.as_ref(),
            cam_in,
            lid_in,
            &mut trace,
        )?;
        let global = global_feature(g, store, &self.global, camera.last(), lidar.last())?;
        let feat = reduce_mlp(g, store, &self.head, global)?;
        let waypoints = predict_waypoints(g, store, &self.head, feat, sample.goal, self.cfg.waypoints)?;
        Ok(ModelOutput {
            camera,
            lidar,
            global,
            feat,
            waypoints,
            trace,
        })
    }

    /// Summed L1 loss of one sample against its ground truth.
    pub fn loss<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        sample: &Sample,
        gt: &WaypointSequence,
    ) -> Result<Var> {
        if gt.len() != self.cfg.waypoints {
            return Err(Error::dim(
                "loss",
                format!("expected {} ground-truth waypoints, got {}", self.cfg.waypoints, gt.len()),
            ));
        }
        let out = self.forward(g, store, sample)?;
        let gt = g.constant(gt.to_tensor());
        l1_waypoint_loss(g, out.waypoints, gt)
    }

    pub fn predict<T: Scalar>(&self, store: &ParamStore<T>, sample: &Sample) -> Result<WaypointSequence> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, store, sample)?;
        WaypointSequence::from_tensor(g.value(out.waypoints))
    }

    /// Mean loss over a batch; gradients of the mean are added into `store`.
    ///
    /// Each sample gets its own graph and the parameter gradients are summed
    /// in batch order.
    pub fn accumulate_batch<T: Scalar>(
        &self,
        store: &mut ParamStore<T>,
        batch: &[(&Sample, &WaypointSequence)],
    ) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let inv = T::from_f64_lossy(1.0 / batch.len() as f64);
        let mut total = 0.0;
        for (sample, gt) in batch {
            let mut g = Graph::new();
            let l = self.loss(&mut g, store, sample, gt)?;
            total += g.value(l).item().to_f64_lossy();
            let scaled = g.scale(l, inv);
            g.backward(scaled, store)?;
        }
        Ok(total / batch.len() as f64)
    }
}
