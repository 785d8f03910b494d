//! Token construction: channel reduction, flattening, positional and sensor codes.
//!
//! Tokens are stored as `[M, c]` matrices, one row per spatial cell, in
//! row-major order of the source map (row-major over `(row, col)`).

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::Conv2d;
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const SENSOR_CAMERA: usize = 0;
pub const SENSOR_LIDAR: usize = 1;
pub const NUM_SENSORS: usize = 2;

/// Flattened feature tokens of one sensor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TokenSet {
    /// `[rows * cols, c]`.
    pub tokens: Var,
    pub sensor_id: usize,
    /// `(rows, cols)` of the map the tokens came from.
    pub spatial: (usize, usize),
}

/// 1x1 convolution to `c` channels. Requires `c <= C`.
pub fn reduce_1x1<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    conv: &Conv2d,
    f: Var,
) -> Result<Var> {
    if conv.kernel != 1 || conv.cout > conv.cin {
        return Err(Error::dim(
            "reduce_1x1",
            format!("`{}` maps {} -> {} channels with kernel {}", conv.name, conv.cin, conv.cout, conv.kernel),
        ));
    }
    if g.shape(f).first() != Some(&conv.cin) || g.shape(f).len() != 3 {
        return Err(Error::dim(
            "reduce_1x1",
            format!("`{}` expects [{}, X, Y], got {:?}", conv.name, conv.cin, g.shape(f)),
        ));
    }
    conv.forward(g, store, f)
}

/// `[c, rows, cols] -> [rows*cols, c]`.
pub fn flatten_tokens<T: Scalar>(g: &mut Graph<T>, map: Var, sensor_id: usize) -> Result<TokenSet> {
    let shape = g.shape(map).to_vec();
    let [c, rows, cols] = shape[..] else {
        return Err(Error::dim("flatten_tokens", format!("expected [c, X, Y], got {shape:?}")));
    };
    if sensor_id >= NUM_SENSORS {
        return Err(Error::Contract(format!("sensor id {sensor_id} out of range")));
    }
    let m = g.reshape(map, &[c, rows * cols])?;
    let tokens = g.transpose(m)?;
    Ok(TokenSet {
        tokens,
        sensor_id,
        spatial: (rows, cols),
    })
}

/// Inverse of [`flatten_tokens`].
pub fn unflatten_tokens<T: Scalar>(g: &mut Graph<T>, set: &TokenSet) -> Result<Var> {
    let shape = g.shape(set.tokens).to_vec();
    let (rows, cols) = set.spatial;
    if shape.len() != 2 || shape[0] != rows * cols {
        return Err(Error::dim(
            "unflatten_tokens",
            format!("{shape:?} does not hold {rows}x{cols} tokens"),
        ));
    }
    let t = g.transpose(set.tokens)?;
    g.reshape(t, &[shape[1], rows, cols])
}

/// Fixed 2D sinusoidal table `[rows*cols, c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionalEncoding {
    pub table: Tensor<f32>,
    pub rows: usize,
    pub cols: usize,
}

/// Channels `[0, c/2)` encode the column coordinate `x`, channels `[c/2, c)`
/// the row coordinate `y`. Within a half, pair `i` uses frequency
/// `10000^(-4i/c)` with `sin` on the even and `cos` on the odd channel.
pub fn sinusoidal_pe_2d(c: usize, rows: usize, cols: usize) -> Result<PositionalEncoding> {
    if c == 0 || !c.is_multiple_of(4) {
        return Err(Error::Config(format!(
            "positional encoding width must be a positive multiple of 4, got {c}"
        )));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::Config("positional encoding needs a non-empty grid".into()));
    }
    let half = c / 2;
    let freqs: Vec<f64> = (0..half / 2)
        .map(|i| 10000f64.powf(-4.0 * i as f64 / c as f64))
        .collect();
    let mut data = Vec::with_capacity(rows * cols * c);
    for y in 0..rows {
        for x in 0..cols {
            for (pos, _) in [(x, 0), (y, 1)] {
                for &w in &freqs {
                    let a = pos as f64 * w;
                    data.push(a.sin() as f32);
                    data.push(a.cos() as f32);
                }
            }
        }
    }
    Ok(PositionalEncoding {
        table: Tensor::new(vec![rows * cols, c], data)?,
        rows,
        cols,
    })
}

/// Learnable per-sensor code, one row of width `c` per sensor.
#[derive(Clone, Debug)]
pub struct SensorEncoding {
    pub name: String,
    pub sensors: usize,
    pub c: usize,
}

impl SensorEncoding {
    pub const INIT_HALF_WIDTH: f64 = 0.02;

    pub fn new(name: impl Into<String>, c: usize) -> Self {
        SensorEncoding {
            name: name.into(),
            sensors: NUM_SENSORS,
            c,
        }
    }

    pub fn init<T: Scalar, R: rand::Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
        store.insert(
            self.name.clone(),
            Tensor::uniform(&[self.sensors, self.c], Self::INIT_HALF_WIDTH, rng),
        )
    }
}

/// `v[m] = z[m] + s[sensor_id] + e[m]`.
pub fn encode_tokens<T: Scalar>(g: &mut Graph<T>, z: &TokenSet, s: Var, e: Var) -> Result<TokenSet> {
    let zs = g.shape(z.tokens).to_vec();
    let (ss, es) = (g.shape(s).to_vec(), g.shape(e).to_vec());
    if zs.len() != 2 || es != zs || ss.len() != 2 || ss[1] != zs[1] {
        return Err(Error::dim(
            "encode_tokens",
            format!("tokens {zs:?}, sensor code {ss:?}, positional code {es:?}"),
        ));
    }
    if z.sensor_id >= ss[0] {
        return Err(Error::Contract(format!(
            "sensor id {} has no row in a {}-sensor code",
            z.sensor_id, ss[0]
        )));
    }
    let row = g.slice_rows(s, z.sensor_id, 1)?;
    let v = g.add(z.tokens, row)?;
    let v = g.add(v, e)?;
    Ok(TokenSet { tokens: v, ..*z })
}

/// Row-wise concatenation plus the per-set token counts needed to split back.
pub fn concat_tokens<T: Scalar>(g: &mut Graph<T>, sets: &[TokenSet]) -> Result<(Var, Vec<usize>)> {
    let Some(first) = sets.first() else {
        return Err(Error::dim("concat_tokens", "no token sets"));
    };
    let c = g.shape(first.tokens)[1];
    let mut splits = Vec::with_capacity(sets.len());
    for s in sets {
        let shape = g.shape(s.tokens);
        if shape[1] != c {
            return Err(Error::dim(
                "concat_tokens",
                format!("token widths differ: {c} vs {}", shape[1]),
            ));
        }
        splits.push(shape[0]);
    }
    let vars: Vec<Var> = sets.iter().map(|s| s.tokens).collect();
    Ok((g.concat(&vars)?, splits))
}

/// Splits a concatenated token matrix back into per-set blocks.
pub fn split_tokens<T: Scalar>(g: &mut Graph<T>, all: Var, splits: &[usize]) -> Result<Vec<Var>> {
    let total: usize = splits.iter().sum();
    if g.shape(all).first() != Some(&total) {
        return Err(Error::dim(
            "split_tokens",
            format!("{:?} does not hold {total} tokens", g.shape(all)),
        ));
    }
    let mut start = 0;
    let mut out = Vec::with_capacity(splits.len());
    for &n in splits {
        out.push(g.slice_rows(all, start, n)?);
        start += n;
    }
    Ok(out)
}
