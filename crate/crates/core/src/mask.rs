//! Global layout feature from the per-class binary mask of all objects.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::diagram::{DiagramObject, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::params::{init_bound, ParamSet};

pub const RASTER_SIZE: usize = 64;
pub const CONV_CHANNELS: [usize; 4] = [8, 16, 32, 32];
const KERNEL: usize = 3;
const POOL: usize = 2;
/// Spatial size after the four pooling stages.
const FINAL_SIZE: usize = RASTER_SIZE >> CONV_CHANNELS.len();
const FLAT_DIM: usize = 32 * FINAL_SIZE * FINAL_SIZE;

/// `NUM_CLASSES x 64 x 64` binary occupancy grid.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskRaster {
    grid: Tensor,
}

impl MaskRaster {
    pub fn tensor(&self) -> &Tensor {
        &self.grid
    }

    pub fn get(&self, class: usize, y: usize, x: usize) -> f64 {
        self.grid.data()[(class * RASTER_SIZE + y) * RASTER_SIZE + x]
    }

    pub fn count_ones(&self, class: usize) -> usize {
        let plane = RASTER_SIZE * RASTER_SIZE;
        self.grid.data()[class * plane..(class + 1) * plane]
            .iter()
            .filter(|&&v| v == 1.0)
            .count()
    }
}

/// A cell is set when some box of that class covers the cell center
/// (half-open on the max side).
pub fn rasterize(objects: &[DiagramObject]) -> MaskRaster {
    let mut grid = Tensor::zeros(&[NUM_CLASSES, RASTER_SIZE, RASTER_SIZE]);
    let data = grid.data_mut();
    let center = |i: usize| (i as f64 + 0.5) / RASTER_SIZE as f64;
    for obj in objects {
        let b = &obj.bbox;
        let c = obj.class.index();
        for y in (0..RASTER_SIZE).filter(|&y| b.ymin <= center(y) && center(y) < b.ymax) {
            for x in (0..RASTER_SIZE).filter(|&x| b.xmin <= center(x) && center(x) < b.xmax) {
                data[(c * RASTER_SIZE + y) * RASTER_SIZE + x] = 1.0;
            }
        }
    }
    MaskRaster { grid }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub kernels: Tensor,
    pub bias: Tensor,
}

/// Four conv + max-pool stages followed by an affine map to `hidden_dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskEncoderParams {
    pub layers: Vec<ConvLayer>,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl MaskEncoderParams {
    pub fn new<R: Rng + ?Sized>(hidden_dim: usize, rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(CONV_CHANNELS.len());
        let mut in_ch = NUM_CLASSES;
        for &out_ch in &CONV_CHANNELS {
            layers.push(ConvLayer {
                kernels: Tensor::uniform(
                    &[out_ch, in_ch, KERNEL, KERNEL],
                    init_bound(in_ch * KERNEL * KERNEL),
                    rng,
                ),
                bias: Tensor::zeros(&[out_ch]),
            });
            in_ch = out_ch;
        }
        MaskEncoderParams {
            layers,
            weight: Tensor::uniform(&[hidden_dim, FLAT_DIM], init_bound(FLAT_DIM), rng),
            bias: Tensor::zeros(&[hidden_dim]),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.bias.len()
    }

    pub fn bind(&self, tape: &mut Tape) -> EncoderVars {
        EncoderVars {
            layers: self
                .layers
                .iter()
                .map(|l| (tape.param(l.kernels.clone()), tape.param(l.bias.clone())))
                .collect(),
            weight: tape.param(self.weight.clone()),
            bias: tape.param(self.bias.clone()),
        }
    }
}

impl ParamSet for MaskEncoderParams {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = self.layers.iter().flat_map(|l| [&l.kernels, &l.bias]).collect();
        v.extend([&self.weight, &self.bias]);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = self
            .layers
            .iter_mut()
            .flat_map(|l| [&mut l.kernels, &mut l.bias])
            .collect();
        v.extend([&mut self.weight, &mut self.bias]);
        v
    }
}

/// Tape handles for [`MaskEncoderParams`], in `tensors()` order.
pub struct EncoderVars {
    pub layers: Vec<(Var, Var)>,
    pub weight: Var,
    pub bias: Var,
}

impl EncoderVars {
    pub fn all(&self) -> Vec<Var> {
        let mut v: Vec<Var> = self.layers.iter().flat_map(|&(k, b)| [k, b]).collect();
        v.extend([self.weight, self.bias]);
        v
    }
}

/// Records the encoder on `tape`, returning the `hidden_dim` feature.
pub fn encode_on_tape(tape: &mut Tape, vars: &EncoderVars, raster: &MaskRaster) -> Result<Var> {
    let x = tape.constant(raster.grid.clone());
    run_layers(tape, &vars.layers, vars.weight, vars.bias, x)
}

fn run_layers(tape: &mut Tape, layers: &[(Var, Var)], weight: Var, bias: Var, mut x: Var) -> Result<Var> {
    for &(k, b) in layers {
        x = tape.conv2d_maxpool(x, k, b, POOL)?;
    }
    let flat_len = tape.value(x).len();
    let expected = tape.value(weight).shape()[1];
    if flat_len != expected {
        return Err(Error::Config(format!(
            "encoder produces {flat_len} features but the affine layer expects {expected}"
        )));
    }
    let flat = tape.reshape(x, &[flat_len])?;
    let proj = tape.matvec(weight, flat)?;
    tape.add(proj, bias)
}

/// Input of every conv stage followed by the output of the last one:
/// `CONV_CHANNELS.len() + 1` tensors, the first being the raster itself.
pub fn layer_activations(raster: &MaskRaster, params: &MaskEncoderParams) -> Result<Vec<Tensor>> {
    let mut tape = Tape::new();
    let mut x = tape.constant(raster.grid.clone());
    let mut out = vec![raster.grid.clone()];
    for l in &params.layers {
        let k = tape.constant(l.kernels.clone());
        let b = tape.constant(l.bias.clone());
        x = tape.conv2d_maxpool(x, k, b, POOL)?;
        out.push(tape.value(x).clone());
    }
    Ok(out)
}

/// Runs the encoder from conv stage `start` on a cached activation (see
/// [`layer_activations`]); `start == layers.len()` applies only the affine map.
pub fn encode_from(activation: &Tensor, start: usize, params: &MaskEncoderParams) -> Result<Vec<f64>> {
    if start > params.layers.len() {
        return Err(Error::Bounds {
            index: start,
            len: params.layers.len() + 1,
        });
    }
    let mut tape = Tape::new();
    let layers: Vec<(Var, Var)> = params.layers[start..]
        .iter()
        .map(|l| (tape.constant(l.kernels.clone()), tape.constant(l.bias.clone())))
        .collect();
    let weight = tape.constant(params.weight.clone());
    let bias = tape.constant(params.bias.clone());
    let x = tape.constant(activation.clone());
    let out = run_layers(&mut tape, &layers, weight, bias, x)?;
    Ok(tape.value(out).data().to_vec())
}

/// Global feature vector for `raster`.
pub fn encode_global(raster: &MaskRaster, params: &MaskEncoderParams) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let out = encode_on_tape(&mut tape, &vars, raster)?;
    Ok(tape.value(out).data().to_vec())
}
