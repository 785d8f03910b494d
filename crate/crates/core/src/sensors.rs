//! Raw sensor containers and the LiDAR bird's-eye-view histogram.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CAMERA_CHANNELS: usize = 3;
pub const CAMERA_HEIGHT: usize = 64;
pub const CAMERA_WIDTH: usize = 128;

/// Camera image `[3, 64, 128]` with values in `[0, 1]`.
///
/// Channel 0 holds route markings, 1 static obstacles, 2 dynamic agents.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraFrame {
    pub tensor: Tensor<f32>,
}

impl CameraFrame {
    pub fn new(tensor: Tensor<f32>) -> Result<Self> {
        if tensor.shape() != [CAMERA_CHANNELS, CAMERA_HEIGHT, CAMERA_WIDTH] {
            return Err(Error::dim(
                "camera_frame",
                format!(
                    "expected [{CAMERA_CHANNELS}, {CAMERA_HEIGHT}, {CAMERA_WIDTH}], got {:?}",
                    tensor.shape()
                ),
            ));
        }
        if tensor.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Contract("camera values must lie in [0, 1]".into()));
        }
        Ok(CameraFrame { tensor })
    }

    pub fn blank() -> Self {
        CameraFrame {
            tensor: Tensor::zeros(&[CAMERA_CHANNELS, CAMERA_HEIGHT, CAMERA_WIDTH]),
        }
    }
}

/// LiDAR return in the ego frame: x forward, y left, z up (meters).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
}

/// Geometry of the bird's-eye-view histogram.
#[derive(Clone, Debug, PartialEq)]
pub struct BevConfig {
    /// Cells along the forward axis (image rows).
    pub rows: usize,
    /// Cells along the lateral axis (image columns).
    pub cols: usize,
    /// Side of the square extent in meters.
    pub extent: f64,
    /// Forward offset of the extent center from the ego.
    pub center_ahead: f64,
    /// Lower edges of height bins 1 and 2; bin 0 is everything below the first.
    pub z_edges: [f64; 2],
    /// Per-cell count at which the histogram saturates.
    pub clip: u32,
}

impl Default for BevConfig {
    fn default() -> Self {
        BevConfig {
            rows: 64,
            cols: 64,
            extent: 32.0,
            center_ahead: 16.0,
            z_edges: [0.5, 2.0],
            clip: 5,
        }
    }
}

impl BevConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.clip == 0 || !(self.extent > 0.0) {
            return Err(Error::Config("BEV grid needs positive cell counts, extent and clip".into()));
        }
        if !(self.z_edges[0] < self.z_edges[1]) {
            return Err(Error::Config("BEV height edges must increase".into()));
        }
        Ok(())
    }

    pub fn height_bin(&self, z: f64) -> usize {
        if z < self.z_edges[0] {
            0
        } else if z < self.z_edges[1] {
            1
        } else {
            2
        }
    }

    /// Grid cell `(row, col)` of an ego-frame ground position. Row 0 is the
    /// far edge and column 0 the left edge, matching the camera's left-to-right.
    /// The extent is half-open toward the ego and the right side.
    pub fn cell(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let half = self.extent / 2.0;
        let far = self.center_ahead + half;
        let left = half;
        let u = (far - x) / self.extent * self.rows as f64;
        let v = (left - y) / self.extent * self.cols as f64;
        if !(u >= 0.0 && v >= 0.0) {
            return None;
        }
        let (r, c) = (u.floor() as usize, v.floor() as usize);
        (r < self.rows && c < self.cols).then_some((r, c))
    }
}

/// Three-bin height histogram `[3, rows, cols]`, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BevGrid {
    pub tensor: Tensor<f32>,
}

/// Bins a point cloud into per-cell height histograms.
///
/// Each in-extent point lands in exactly one (bin, cell); counts saturate at
/// `cfg.clip` and are divided by it.
pub fn bev_histogram(pc: &PointCloud, cfg: &BevConfig) -> Result<BevGrid> {
    cfg.validate()?;
    let plane = cfg.rows * cfg.cols;
    let mut counts = vec![0u32; 3 * plane];
    for p in &pc.points {
        if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
            continue;
        }
        if let Some((r, c)) = cfg.cell(p.x, p.y) {
            counts[cfg.height_bin(p.z) * plane + r * cfg.cols + c] += 1;
        }
    }
    let clip = cfg.clip as f32;
    let data = counts
        .into_iter()
        .map(|n| n.min(cfg.clip) as f32 / clip)
        .collect();
    Ok(BevGrid {
        tensor: Tensor::new(vec![3, cfg.rows, cfg.cols], data)?,
    })
}
