//! On-disk expert episodes: one directory per seed holding a tensor container
//! and a text manifest with one line per frame.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sfse_core::head::{GoalPoint, WaypointSequence};
use sfse_core::model::Sample;
use sfse_core::sensors::{bev_histogram, BevConfig, BevGrid, CameraFrame};
use sfse_core::Tensor;
use sfse_sim::Episode;

use crate::container::Container;
use crate::error::CliError;

pub const TENSORS_FILE: &str = "tensors.sfse";
pub const MANIFEST_FILE: &str = "manifest.txt";

pub fn episode_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("episode_{seed:06}"))
}

fn stack(name: &str, items: &[&[f32]], inner: &[usize]) -> Result<Tensor<f32>, CliError> {
    let mut shape = vec![items.len()];
    shape.extend_from_slice(inner);
    let data: Vec<f32> = items.iter().flat_map(|d| d.iter().copied()).collect();
    Tensor::new(shape, data).map_err(|e| CliError::Format(format!("stacking `{name}`: {e}")))
}

/// Writes one episode; returns its frame count.
pub fn write_episode(root: &Path, ep: &Episode, bev: &BevConfig) -> Result<usize, CliError> {
    let dir = episode_dir(root, ep.seed);
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let n = ep.frames.len();
    let steps = ep.frames.first().map_or(0, |f| f.gt.len());
    let grids = ep
        .frames
        .iter()
        .map(|f| bev_histogram(&f.cloud, bev))
        .collect::<Result<Vec<_>, _>>()?;
    let cams: Vec<&[f32]> = ep.frames.iter().map(|f| f.camera.tensor.data()).collect();
    let bevs: Vec<&[f32]> = grids.iter().map(|g| g.tensor.data()).collect();
    let goals: Vec<Vec<f32>> = ep.frames.iter().map(|f| vec![f.goal.x as f32, f.goal.y as f32]).collect();
    let gts: Vec<Vec<f32>> = ep
        .frames
        .iter()
        .map(|f| f.gt.points.iter().flat_map(|p| [p[0] as f32, p[1] as f32]).collect())
        .collect();

    let mut c = Container::new();
    c.insert("camera", stack("camera", &cams, &[3, 64, 128])?)?;
    c.insert("bev", stack("bev", &bevs, &[3, bev.rows, bev.cols])?)?;
    let goal_refs: Vec<&[f32]> = goals.iter().map(Vec::as_slice).collect();
    c.insert("goal", stack("goal", &goal_refs, &[2])?)?;
    let gt_refs: Vec<&[f32]> = gts.iter().map(Vec::as_slice).collect();
    c.insert("gt", stack("gt", &gt_refs, &[steps, 2])?)?;
    c.save(&dir.join(TENSORS_FILE))?;

    let mut manifest = String::new();
    for (k, f) in ep.frames.iter().enumerate() {
        writeln!(
            manifest,
            "seed={} frame={k} t={:.1} x={:.6} y={:.6} yaw={:.6} speed={:.6} points={}",
            ep.seed,
            k as f64 / 2.0,
            f.ego.x,
            f.ego.y,
            f.ego.yaw,
            f.ego.speed,
            f.cloud.points.len()
        )
        .expect("writing to a String");
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest).map_err(|e| CliError::io(&path, e))?;
    Ok(n)
}

/// Training pairs of one episode.
#[derive(Clone, Debug)]
pub struct EpisodeData {
    pub seed: u64,
    pub samples: Vec<Sample>,
    pub targets: Vec<WaypointSequence>,
}

fn rows(t: &Tensor<f32>) -> impl Iterator<Item = &[f32]> {
    let per = t.shape()[1..].iter().product::<usize>().max(1);
    t.data().chunks(per)
}

pub fn read_episode(dir: &Path) -> Result<EpisodeData, CliError> {
    let c = Container::load(&dir.join(TENSORS_FILE))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest = fs::read_to_string(&manifest_path).map_err(|e| CliError::io(&manifest_path, e))?;
    let lines = manifest.lines().filter(|l| !l.trim().is_empty()).count();
    let (cam, bev, goal, gt) = (c.get("camera")?, c.get("bev")?, c.get("goal")?, c.get("gt")?);
    let n = cam.shape().first().copied().unwrap_or(0);
    for (name, t) in [("bev", bev), ("goal", goal), ("gt", gt)] {
        if t.shape().first() != Some(&n) {
            return Err(CliError::Format(format!(
                "{}: entry `{name}` has {:?} frames, camera has {n}",
                dir.display(),
                t.shape().first()
            )));
        }
    }
    if lines != n {
        return Err(CliError::Format(format!(
            "{}: manifest lists {lines} frames, tensors hold {n}",
            dir.display()
        )));
    }
    if cam.rank() != 4 || bev.rank() != 4 || goal.shape() != [n, 2] || gt.rank() != 3 || gt.shape()[2] != 2 {
        return Err(CliError::Format(format!("{}: unexpected tensor ranks", dir.display())));
    }
    let seed = dir
        .file_name()
        .and_then(|s| s.to_str())
        .and_then(|s| s.strip_prefix("episode_"))
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| CliError::Format(format!("{}: not an episode directory", dir.display())))?;
    let mut samples = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    let (cs, bs) = (&cam.shape()[1..], &bev.shape()[1..]);
    for (((cd, bd), gd), td) in rows(cam).zip(rows(bev)).zip(rows(goal)).zip(rows(gt)) {
        samples.push(Sample {
            camera: CameraFrame::new(Tensor::new(cs.to_vec(), cd.to_vec())?)?,
            bev: BevGrid {
                tensor: Tensor::new(bs.to_vec(), bd.to_vec())?,
            },
            goal: GoalPoint {
                x: gd[0] as f64,
                y: gd[1] as f64,
            },
        });
        targets.push(WaypointSequence::new(
            td.chunks(2).map(|p| [p[0] as f64, p[1] as f64]).collect(),
        )?);
    }
    Ok(EpisodeData { seed, samples, targets })
}

/// Every episode below `root`, in seed order.
pub fn read_dataset(root: &Path) -> Result<Vec<EpisodeData>, CliError> {
    let entries = fs::read_dir(root).map_err(|e| CliError::io(root, e))?;
    let mut dirs = Vec::new();
    for e in entries {
        let e = e.map_err(|e| CliError::io(root, e))?;
        let name = e.file_name();
        if name.to_str().is_some_and(|s| s.starts_with("episode_")) && e.path().is_dir() {
            dirs.push(e.path());
        }
    }
    if dirs.is_empty() {
        return Err(CliError::Io(format!("{}: no episodes found", root.display())));
    }
    let mut eps = dirs.iter().map(|d| read_episode(d)).collect::<Result<Vec<_>, _>>()?;
    eps.sort_by_key(|e| e.seed);
    Ok(eps)
}
