//! Small strided CNN backbones producing per-sensor feature pyramids.

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::Conv2d;
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::sensors::{BevGrid, CameraFrame};

/// Per-stage feature maps `[C, h, w]` at decreasing resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid {
    pub stages: Vec<Var>,
}

impl FeaturePyramid {
    pub fn shapes<T: Scalar>(&self, g: &Graph<T>) -> Vec<Vec<usize>> {
        self.stages.iter().map(|&v| g.shape(v).to_vec()).collect()
    }

    pub fn last(&self) -> Var {
        *self.stages.last().expect("pyramid has stages")
    }
}

/// Stack of `conv3x3(stride 2, pad 1) -> relu` stages.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub name: String,
    pub input: [usize; 3],
    pub convs: Vec<Conv2d>,
}

impl Backbone {
    pub fn new(name: impl Into<String>, input: [usize; 3], channels: &[usize]) -> Self {
        let name = name.into();
        let mut cin = input[0];
        let convs = channels
            .iter()
            .enumerate()
            .map(|(k, &cout)| {
                let c = Conv2d::new(format!("{name}.stage{k}"), cin, cout, 3, 2, 1);
                cin = cout;
                c
            })
            .collect();
        Backbone { name, input, convs }
    }

    pub fn num_stages(&self) -> usize {
        self.convs.len()
    }

    pub fn channels(&self, stage: usize) -> usize {
        self.convs[stage].cout
    }

    /// `(h, w)` of the map produced by `stage`.
    pub fn stage_extent(&self, stage: usize) -> (usize, usize) {
        let (mut h, mut w) = (self.input[1], self.input[2]);
        for _ in 0..=stage {
            h = h.div_ceil(2);
            w = w.div_ceil(2);
        }
        (h, w)
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
        self.convs.iter().try_for_each(|c| c.init(store, rng))
    }

    /// Runs a single stage on the previous stage's output (or the raw input for stage 0).
    pub fn stage<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        stage: usize,
        x: Var,
    ) -> Result<Var> {
        let conv = &self.convs[stage];
        if g.shape(x).first() != Some(&conv.cin) {
            return Err(Error::dim(
                "backbone",
                format!("`{}` expects {} channels, got {:?}", conv.name, conv.cin, g.shape(x)),
            ));
        }
        let y = conv.forward(g, store, x)?;
        Ok(g.relu(y))
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<FeaturePyramid> {
        if g.shape(x) != self.input {
            return Err(Error::dim(
                "backbone",
                format!("`{}` expects input {:?}, got {:?}", self.name, self.input, g.shape(x)),
            ));
        }
        let mut stages = Vec::with_capacity(self.convs.len());
        let mut cur = x;
        for k in 0..self.convs.len() {
            cur = self.stage(g, store, k, cur)?;
            stages.push(cur);
        }
        Ok(FeaturePyramid { stages })
    }
}

pub fn camera_backbone<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    backbone: &Backbone,
    frame: &CameraFrame,
) -> Result<FeaturePyramid> {
    let x = g.constant(frame.tensor.cast());
    backbone.forward(g, store, x)
}

pub fn lidar_backbone<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    backbone: &Backbone,
    bev: &BevGrid,
) -> Result<FeaturePyramid> {
    let x = g.constant(bev.tensor.cast());
    backbone.forward(g, store, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff_check, Coverage};
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const CHANNELS: [usize; 4] = [16, 32, 64, 128];

    fn setup(input: [usize; 3], seed: u64) -> (Backbone, ParamStore<f32>) {
        let bb = Backbone::new("cam", input, &CHANNELS);
        let mut store = ParamStore::new();
        bb.init(&mut store, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        (bb, store)
    }

    #[test]
    fn camera_stage_shapes() {
        let (bb, store) = setup([3, 64, 128], 0);
        let mut g = Graph::new();
        let p = camera_backbone(&mut g, &store, &bb, &CameraFrame::blank()).unwrap();
        assert_eq!(
            p.shapes(&g),
            vec![vec![16, 32, 64], vec![32, 16, 32], vec![64, 8, 16], vec![128, 4, 8]]
        );
    }

    #[test]
    fn lidar_stage_shapes() {
        let (bb, store) = setup([3, 64, 64], 0);
        let mut g = Graph::new();
        let bev = BevGrid {
            tensor: Tensor::zeros(&[3, 64, 64]),
        };
        let p = lidar_backbone(&mut g, &store, &bb, &bev).unwrap();
        assert_eq!(
            p.shapes(&g),
            vec![vec![16, 32, 32], vec![32, 16, 16], vec![64, 8, 8], vec![128, 4, 4]]
        );
        for k in 0..4 {
            let (h, w) = bb.stage_extent(k);
            assert_eq!(p.shapes(&g)[k][1..], [h, w]);
        }
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_pyramid() {
        let (bb, store) = setup([3, 64, 128], 3);
        let mut g = Graph::new();
        let p = camera_backbone(&mut g, &store, &bb, &CameraFrame::blank()).unwrap();
        for &s in &p.stages {
            assert!(g.value(s).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn wrong_input_shape_is_dimension_error() {
        let (bb, store) = setup([3, 64, 128], 0);
        let mut g = Graph::new();
        let x = g.constant(Tensor::<f32>::zeros(&[3, 64, 64]));
        assert!(matches!(bb.forward(&mut g, &store, x), Err(Error::Dimension { .. })));
    }

    #[test]
    fn stage_one_receptive_field_by_perturbation() {
        let (bb, store) = setup([3, 64, 128], 5);
        let base = Tensor::<f32>::from_fn(&[3, 64, 128], |i| ((i * 7919) % 101) as f32 / 100.0);
        let stage0 = |x: &Tensor<f32>| {
            let mut g = Graph::new();
            let v = g.constant(x.clone());
            let p = bb.forward(&mut g, &store, v).unwrap();
            g.value(p.stages[0]).clone()
        };
        let a = stage0(&base);
        let (py, px) = (20usize, 41usize);
        let mut pert = base.clone();
        let off = pert.offset(&[1, py, px]);
        pert.data_mut()[off] += 0.5;
        let b = stage0(&pert);
        // brute force: an output cell sees input rows 2*oy-1..=2*oy+1
        for oy in 0..32 {
            for ox in 0..64 {
                let sees = (2 * oy as isize - 1..=2 * oy as isize + 1).contains(&(py as isize))
                    && (2 * ox as isize - 1..=2 * ox as isize + 1).contains(&(px as isize));
                for c in 0..16 {
                    let changed = a.at(&[c, oy, ox]) != b.at(&[c, oy, ox]);
                    if changed {
                        assert!(sees, "cell ({oy},{ox}) changed outside receptive field");
                    }
                }
            }
        }
        assert!(a != b);
    }

    #[test]
    fn stride_two_translation_consistency() {
        let (bb, store) = setup([3, 64, 64], 9);
        let src = Tensor::<f32>::from_fn(&[3, 64, 64], |i| ((i * 31) % 17) as f32 / 17.0);
        // shift down/right by two cells
        let mut shifted = Tensor::<f32>::zeros(&[3, 64, 64]);
        for c in 0..3 {
            for r in 2..64 {
                for col in 2..64 {
                    let o = shifted.offset(&[c, r, col]);
                    shifted.data_mut()[o] = src.at(&[c, r - 2, col - 2]);
                }
            }
        }
        let run = |x: &Tensor<f32>| {
            let mut g = Graph::new();
            let v = g.constant(x.clone());
            let p = bb.forward(&mut g, &store, v).unwrap();
            g.value(p.stages[0]).clone()
        };
        let (a, b) = (run(&src), run(&shifted));
        for c in 0..16 {
            for r in 2..31 {
                for col in 2..31 {
                    assert_eq!(a.at(&[c, r, col]), b.at(&[c, r + 1, col + 1]));
                }
            }
        }
    }

    #[test]
    fn conv_weight_gradient_passes_finite_difference() {
        let bb = Backbone::new("lid", [3, 16, 16], &[4, 6]);
        let mut store = ParamStore::<f64>::new();
        bb.init(&mut store, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        for name in ["lid.stage0.bias", "lid.stage1.bias"] {
            let n = store.tensor(name).unwrap().numel();
            store.set(name, Tensor::from_fn(&[n], |i| 0.05 * i as f64)).unwrap();
        }
        let input = Tensor::<f64>::from_fn(&[3, 16, 16], |i| ((i * 13) % 7) as f64 / 7.0);
        let report = finite_diff_check(
            |g, s| {
                let x = g.constant(input.clone());
                let p = bb.forward(g, s, x)?;
                let flat = g.reshape(p.last(), &[6 * 16])?;
                let w = g.constant(Tensor::from_fn(&[96], |i| ((i % 5) as f64) - 2.0));
                let y = g.mul(flat, w)?;
                Ok(g.sum(y))
            },
            &mut store,
            1e-5,
            Coverage::All,
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-3, "{report:?}");
    }
}
