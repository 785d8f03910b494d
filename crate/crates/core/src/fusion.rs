//! Transformer fusion of camera and LiDAR tokens at several resolutions.

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::backbone::{Backbone, FeaturePyramid};
use crate::encoding::{
    concat_tokens, encode_tokens, flatten_tokens, reduce_1x1, sinusoidal_pe_2d, split_tokens,
    unflatten_tokens, PositionalEncoding, SensorEncoding, TokenSet, SENSOR_CAMERA, SENSOR_LIDAR,
};
use crate::error::{Error, Result, ResultExt};
use crate::nn::{Conv2d, LayerNorm, Linear};
use crate::params::ParamStore;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct FusionConfig {
    pub heads: usize,
    pub layers_per_resolution: usize,
    /// Token width; a stage with fewer channels uses its channel count instead.
    pub c: usize,
    pub mlp_ratio: usize,
    /// Pyramid stages (0-based) fused, ascending.
    pub fusion_stages: Vec<usize>,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            heads: 4,
            layers_per_resolution: 2,
            c: 64,
            mlp_ratio: 2,
            fusion_stages: vec![1, 2, 3],
        }
    }
}

impl FusionConfig {
    /// Token width used at a stage with `channels` backbone channels.
    pub fn width(&self, channels: usize) -> usize {
        self.c.min(channels)
    }

    pub fn validate(&self, num_stages: usize, channels: &[usize]) -> Result<()> {
        if self.heads == 0 || self.c == 0 || self.mlp_ratio == 0 {
            return Err(Error::Config("fusion heads, c and mlp_ratio must be positive".into()));
        }
        if !self.fusion_stages.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config("fusion stages must be strictly ascending".into()));
        }
        for &k in &self.fusion_stages {
            if k >= num_stages {
                return Err(Error::Config(format!(
                    "fusion stage {k} outside a {num_stages}-stage pyramid"
                )));
            }
            let c = self.width(channels[k]);
            if !c.is_multiple_of(self.heads) || !c.is_multiple_of(4) {
                return Err(Error::Config(format!(
                    "token width {c} at stage {k} must be divisible by {} heads and by 4",
                    self.heads
                )));
            }
        }
        Ok(())
    }
}

/// Multi-head self-attention with queries, keys and values all projected
/// from the same tokens.
#[derive(Clone, Debug)]
pub struct SelfAttention {
    pub heads: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
}

impl SelfAttention {
    pub fn new(name: &str, c: usize, heads: usize) -> Self {
        SelfAttention {
            heads,
            q: Linear::new(format!("{name}.q"), c, c),
            k: Linear::new(format!("{name}.k"), c, c),
            v: Linear::new(format!("{name}.v"), c, c),
            out: Linear::new(format!("{name}.out"), c, c),
        }
    }

    /// Output projection starts at zero.
    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
        self.q.init(store, rng)?;
        self.k.init(store, rng)?;
        self.v.init(store, rng)?;
        self.out.init_scaled(store, rng, 0.0)
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        Ok(self.forward_with_attention(g, store, x)?.0)
    }

    /// Also returns the attention node, whose saved probabilities can be
    /// read back with [`Graph::attention_weights`].
    pub fn forward_with_attention<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<(Var, Var)> {
        let shape = g.shape(x);
        if shape.len() != 2 {
            return Err(Error::dim("self_attention", format!("expected [M, c], got {shape:?}")));
        }
        let q = self.q.forward(g, store, x)?;
        let k = self.k.forward(g, store, x)?;
        let v = self.v.forward(g, store, x)?;
        let a = g.attention(q, k, v, self.heads)?;
        Ok((self.out.forward(g, store, a)?, a))
    }
}

/// Pre-norm transformer block with a relu MLP.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: SelfAttention,
    pub ln2: LayerNorm,
    pub mlp1: Linear,
    pub mlp2: Linear,
}

impl TransformerBlock {
    pub fn new(name: &str, c: usize, heads: usize, mlp_ratio: usize) -> Self {
        TransformerBlock {
            ln1: LayerNorm::new(format!("{name}.ln1"), c),
            attn: SelfAttention::new(&format!("{name}.attn"), c, heads),
            ln2: LayerNorm::new(format!("{name}.ln2"), c),
            mlp1: Linear::new(format!("{name}.mlp1"), c, mlp_ratio * c),
            mlp2: Linear::new(format!("{name}.mlp2"), mlp_ratio * c, c),
        }
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
        self.ln1.init(store)?;
        self.attn.init(store, rng)?;
        self.ln2.init(store)?;
        self.mlp1.init(store, rng)?;
        self.mlp2.init_scaled(store, rng, 0.0)
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.ln1.forward(g, store, x)?;
        let h = self.attn.forward(g, store, h)?;
        let x = g.add(x, h)?;
        let h = self.ln2.forward(g, store, x)?;
        let h = self.mlp1.forward(g, store, h)?;
        let h = g.relu(h);
        let h = self.mlp2.forward(g, store, h)?;
        g.add(x, h)
    }
}

/// Parameters of one fusion resolution.
#[derive(Clone, Debug)]
pub struct FusionStage {
    pub stage: usize,
    pub channels: usize,
    pub c: usize,
    pub reduce: [Conv2d; 2],
    pub expand: [Conv2d; 2],
    pub sensor: SensorEncoding,
    pub blocks: Vec<TransformerBlock>,
    /// Positional tables for the camera and LiDAR grids.
    pub pe: [PositionalEncoding; 2],
}

const SENSOR_TAGS: [&str; 2] = ["cam", "lid"];

impl FusionStage {
    pub fn new(
        stage: usize,
        channels: usize,
        cam_extent: (usize, usize),
        lid_extent: (usize, usize),
        cfg: &FusionConfig,
    ) -> Result<Self> {
        let c = cfg.width(channels);
        let name = format!("fusion{stage}");
        let conv = |kind: &str, i: usize, cin, cout| {
            Conv2d::new(format!("{name}.{kind}_{}", SENSOR_TAGS[i]), cin, cout, 1, 1, 0)
        };
        Ok(FusionStage {
            stage,
            channels,
            c,
            reduce: [conv("reduce", 0, channels, c), conv("reduce", 1, channels, c)],
            expand: [conv("expand", 0, c, channels), conv("expand", 1, c, channels)],
            sensor: SensorEncoding::new(format!("{name}.sensor"), c),
            blocks: (0..cfg.layers_per_resolution)
                .map(|l| TransformerBlock::new(&format!("{name}.block{l}"), c, cfg.heads, cfg.mlp_ratio))
                .collect(),
            pe: [
                sinusoidal_pe_2d(c, cam_extent.0, cam_extent.1)?,
                sinusoidal_pe_2d(c, lid_extent.0, lid_extent.1)?,
            ],
        })
    }

    /// Expansion convolutions start at zero, so a fresh stage is the identity.
    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
        for conv in &self.reduce {
            conv.init(store, rng)?;
        }
        self.sensor.init(store, rng)?;
        for b in &self.blocks {
            b.init(store, rng)?;
        }
        for conv in &self.expand {
            conv.init_scaled(store, rng, 0.0)?;
        }
        Ok(())
    }

    /// Fuses one resolution and returns the updated `(camera, lidar)` maps.
    pub fn fuse<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        f_cam: Var,
        f_lid: Var,
    ) -> Result<(Var, Var)> {
        let maps = [f_cam, f_lid];
        for (i, &f) in maps.iter().enumerate() {
            let (rows, cols) = (self.pe[i].rows, self.pe[i].cols);
            if g.shape(f) != [self.channels, rows, cols] {
                return Err(Error::dim(
                    "fuse_at_resolution",
                    format!(
                        "{} map expected [{}, {rows}, {cols}], got {:?}",
                        SENSOR_TAGS[i],
                        self.channels,
                        g.shape(f)
                    ),
                ));
            }
        }
        let s = g.param(store, &self.sensor.name)?;
        let mut sets: Vec<TokenSet> = Vec::with_capacity(2);
        for (i, &f) in maps.iter().enumerate() {
            let z = reduce_1x1(g, store, &self.reduce[i], f)?;
            let z = flatten_tokens(g, z, [SENSOR_CAMERA, SENSOR_LIDAR][i])?;
            let e = g.constant(self.pe[i].table.cast());
            sets.push(encode_tokens(g, &z, s, e)?);
        }
        let (mut x, splits) = concat_tokens(g, &sets)?;
        for b in &self.blocks {
            x = b.forward(g, store, x)?;
        }
        let parts = split_tokens(g, x, &splits)?;
        let mut out = [f_cam, f_lid];
        for i in 0..2 {
            let set = TokenSet {
                tokens: parts[i],
                ..sets[i]
            };
            let map = unflatten_tokens(g, &set)?;
            let delta = self.expand[i].forward(g, store, map)?;
            out[i] = g.add(maps[i], delta)?;
        }
        Ok((out[0], out[1]))
    }
}

/// Standalone single-resolution fusion, see [`FusionStage::fuse`].
pub fn fuse_at_resolution<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    stage: &FusionStage,
    f_cam: Var,
    f_lid: Var,
) -> Result<(Var, Var)> {
    stage
        .fuse(g, store, f_cam, f_lid)
        .context_with(|| format!("fusion stage {}", stage.stage))
}

#[derive(Clone, Debug)]
pub struct Fusion {
    pub cfg: FusionConfig,
    pub stages: Vec<FusionStage>,
}

impl Fusion {
    pub fn new(cfg: FusionConfig, cam: &Backbone, lid: &Backbone) -> Result<Self> {
        if cam.num_stages() != lid.num_stages()
            || (0..cam.num_stages()).any(|k| cam.channels(k) != lid.channels(k))
        {
            return Err(Error::Config("camera and LiDAR backbones must share stage channels".into()));
        }
        let channels: Vec<usize> = (0..cam.num_stages()).map(|k| cam.channels(k)).collect();
        cfg.validate(cam.num_stages(), &channels)?;
        let stages = cfg
            .fusion_stages
            .iter()
            .map(|&k| FusionStage::new(k, channels[k], cam.stage_extent(k), lid.stage_extent(k), &cfg))
            .collect::<Result<_>>()?;
        Ok(Fusion { cfg, stages })
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
        self.stages.iter().try_for_each(|s| s.init(store, rng))
    }

    fn at(&self, k: usize) -> Option<&FusionStage> {
        self.stages.iter().find(|s| s.stage == k)
    }
}

/// Counts how often each stage was fused during a forward pass.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FusionTrace {
    pub fused: Vec<usize>,
}

/// Runs both backbones stage by stage, fusing after each configured stage
/// so that later stages see the fused maps. With `fusion = None` this is the
/// plain two-backbone forward pass.
#[allow(clippy::too_many_arguments)]
pub fn multi_resolution_fusion<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    cam_bb: &Backbone,
    lid_bb: &Backbone,
    fusion: Option<&Fusion>,
    cam_input: Var,
    lid_input: Var,
    trace: &mut FusionTrace,
) -> Result<(FeaturePyramid, FeaturePyramid)> {
    for (bb, x) in [(cam_bb, cam_input), (lid_bb, lid_input)] {
        if g.shape(x) != bb.input {
            return Err(Error::dim(
                "multi_resolution_fusion",
                format!("`{}` expects input {:?}, got {:?}", bb.name, bb.input, g.shape(x)),
            ));
        }
    }
    let mut cam = Vec::with_capacity(cam_bb.num_stages());
    let mut lid = Vec::with_capacity(lid_bb.num_stages());
    let (mut c, mut l) = (cam_input, lid_input);
    for k in 0..cam_bb.num_stages() {
        c = cam_bb.stage(g, store, k, c)?;
        l = lid_bb.stage(g, store, k, l)?;
        if let Some(stage) = fusion.and_then(|f| f.at(k)) {
            (c, l) = fuse_at_resolution(g, store, stage, c, l)?;
            trace.fused.push(k);
        }
        cam.push(c);
        lid.push(l);
    }
    Ok((FeaturePyramid { stages: cam }, FeaturePyramid { stages: lid }))
}

/// Pool-concat-project head producing the fused scene vector.
#[derive(Clone, Debug)]
pub struct GlobalHead {
    pub proj: Linear,
    pub channels: usize,
}

impl GlobalHead {
    pub fn new(channels: usize, dim: usize) -> Self {
        GlobalHead {
            proj: Linear::new("global.proj", 2 * channels, dim),
            channels,
        }
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
        self.proj.init(store, rng)
    }
}

/// `[C, h, w] -> [C]` spatial mean.
pub fn global_average_pool<T: Scalar>(g: &mut Graph<T>, map: Var) -> Result<Var> {
    let shape = g.shape(map).to_vec();
    let [c, h, w] = shape[..] else {
        return Err(Error::dim("global_average_pool", format!("expected [C, h, w], got {shape:?}")));
    };
    let flat = g.reshape(map, &[c, h * w])?;
    g.mean_last_axis(flat)
}

/// Global-average-pools both final maps, concatenates camera first and
/// projects with relu to the fused vector.
pub fn global_feature<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    head: &GlobalHead,
    cam_final: Var,
    lid_final: Var,
) -> Result<Var> {
    for f in [cam_final, lid_final] {
        if g.shape(f).first() != Some(&head.channels) {
            return Err(Error::dim(
                "global_feature",
                format!("expected {} channels, got {:?}", head.channels, g.shape(f)),
            ));
        }
    }
    let a = global_average_pool(g, cam_final)?;
    let b = global_average_pool(g, lid_final)?;
    let v = g.concat(&[a, b])?;
    let y = head.proj.forward(g, store, v)?;
    Ok(g.relu(y))
}
