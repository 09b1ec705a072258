//! Relation-graph generator: GRU cells whose previous state is read from a
//! dynamic adjacency tensor memory, plus the vanilla-GRU and
//! fully-connected baselines.

mod datm;
mod forward;
mod graph;
mod gru;

pub use datm::Datm;
pub use forward::{forward_diagram, forward_on_tape, forward_with_global, global_feature, ForwardOutput, TapeForward};
pub use graph::{assemble_graph, EDGE_THRESHOLD};
pub use gru::{gru_step, gru_step_on_tape, GruOutput, GruStepOut, GruStepVars};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::diagram::LOCAL_FEATURE_DIM;
use crate::mask::{EncoderVars, MaskEncoderParams};
use crate::params::{init_bound, ParamSet};
use crate::rng::substream;

/// Default hidden width at desk scale.
pub const DESK_HIDDEN_DIM: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Dggn,
    VanillaGru,
    FullyConnected,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dggn" => Ok(Mode::Dggn),
            "vanilla_gru" | "vanilla-gru" => Ok(Mode::VanillaGru),
            "fully_connected" | "fully-connected" => Ok(Mode::FullyConnected),
            other => Err(format!(
                "unknown mode `{other}` (expected dggn, vanilla_gru, fully_connected)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub mode: Mode,
    /// Add the mask-encoder feature to every retrieved state.
    pub use_global: bool,
    /// Weight retrieved states by edge probability (otherwise plain mean).
    pub weighted_pool: bool,
    pub hidden_dim: usize,
    pub seed: u64,
    /// Backpropagate through values read from memory instead of treating
    /// them as constants.
    pub backprop_through_memory: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            mode: Mode::Dggn,
            use_global: true,
            weighted_pool: true,
            hidden_dim: DESK_HIDDEN_DIM,
            seed: 0,
            backprop_through_memory: false,
        }
    }
}

impl ModelConfig {
    pub fn with_mode(mode: Mode) -> Self {
        ModelConfig {
            mode,
            ..ModelConfig::default()
        }
    }

    /// Whether the mask encoder participates in the forward pass.
    pub fn needs_global(&self) -> bool {
        self.use_global && self.mode != Mode::FullyConnected
    }
}

/// GRU gates plus the edge readout `a = sigmoid(W_l h + b_l)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    pub w_xr: Tensor,
    pub w_xz: Tensor,
    pub w_xh: Tensor,
    pub w_hr: Tensor,
    pub w_hz: Tensor,
    pub w_hh: Tensor,
    pub b_r: Tensor,
    pub b_z: Tensor,
    pub b_h: Tensor,
    pub w_l: Tensor,
    pub b_l: Tensor,
}

impl GruParams {
    pub fn new<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Self {
        let fx = init_bound(LOCAL_FEATURE_DIM);
        let fh = init_bound(m);
        GruParams {
            w_xr: Tensor::uniform(&[m, LOCAL_FEATURE_DIM], fx, rng),
            w_xz: Tensor::uniform(&[m, LOCAL_FEATURE_DIM], fx, rng),
            w_xh: Tensor::uniform(&[m, LOCAL_FEATURE_DIM], fx, rng),
            w_hr: Tensor::uniform(&[m, m], fh, rng),
            w_hz: Tensor::uniform(&[m, m], fh, rng),
            w_hh: Tensor::uniform(&[m, m], fh, rng),
            b_r: Tensor::zeros(&[m]),
            b_z: Tensor::zeros(&[m]),
            b_h: Tensor::zeros(&[m]),
            w_l: Tensor::uniform(&[1, m], fh, rng),
            b_l: Tensor::zeros(&[1]),
        }
    }

    pub fn zeros(m: usize) -> Self {
        let mut p = GruParams::new(m, &mut rand::rngs::mock::StepRng::new(0, 0));
        p.tensors_mut().into_iter().for_each(|t| t.data_mut().fill(0.0));
        p
    }

    pub fn hidden_dim(&self) -> usize {
        self.b_r.len()
    }

    pub fn bind(&self, tape: &mut Tape) -> GruStepVars {
        let mut p = |t: &Tensor| tape.param(t.clone());
        GruStepVars {
            w_xr: p(&self.w_xr),
            w_xz: p(&self.w_xz),
            w_xh: p(&self.w_xh),
            w_hr: p(&self.w_hr),
            w_hz: p(&self.w_hz),
            w_hh: p(&self.w_hh),
            b_r: p(&self.b_r),
            b_z: p(&self.b_z),
            b_h: p(&self.b_h),
            w_l: p(&self.w_l),
            b_l: p(&self.b_l),
        }
    }
}

impl ParamSet for GruParams {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![
            &self.w_xr, &self.w_xz, &self.w_xh, &self.w_hr, &self.w_hz, &self.w_hh, &self.b_r, &self.b_z, &self.b_h,
            &self.w_l, &self.b_l,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.w_xr,
            &mut self.w_xz,
            &mut self.w_xh,
            &mut self.w_hr,
            &mut self.w_hz,
            &mut self.w_hh,
            &mut self.b_r,
            &mut self.b_z,
            &mut self.b_h,
            &mut self.w_l,
            &mut self.b_l,
        ]
    }
}

/// Two `tanh` layers of width `m` used by the fully-connected baseline;
/// the readout is shared with [`GruParams`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FcParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl FcParams {
    pub fn new<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Self {
        FcParams {
            w1: Tensor::uniform(&[m, LOCAL_FEATURE_DIM], init_bound(LOCAL_FEATURE_DIM), rng),
            b1: Tensor::zeros(&[m]),
            w2: Tensor::uniform(&[m, m], init_bound(m), rng),
            b2: Tensor::zeros(&[m]),
        }
    }
}

impl ParamSet for FcParams {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// Every learned tensor of one relation model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub gru: GruParams,
    pub fc: FcParams,
    pub encoder: MaskEncoderParams,
}

impl Model {
    /// Seeded initialization; all modes draw from the same `init` stream in
    /// the same order, so ablations start from identical GRU weights.
    pub fn new(config: ModelConfig) -> Self {
        let mut rng = substream(config.seed, "init", 0);
        let m = config.hidden_dim;
        let gru = GruParams::new(m, &mut rng);
        let fc = FcParams::new(m, &mut rng);
        let encoder = MaskEncoderParams::new(m, &mut rng);
        Model {
            config,
            gru,
            fc,
            encoder,
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> ModelVars {
        let mut vars = self.bind_without_encoder(tape);
        vars.encoder = self.config.needs_global().then(|| self.encoder.bind(tape));
        vars
    }

    /// Binds everything except the mask encoder.
    pub fn bind_without_encoder(&self, tape: &mut Tape) -> ModelVars {
        ModelVars {
            gru: self.gru.bind(tape),
            fc: FcVars {
                w1: tape.param(self.fc.w1.clone()),
                b1: tape.param(self.fc.b1.clone()),
                w2: tape.param(self.fc.w2.clone()),
                b2: tape.param(self.fc.b2.clone()),
            },
            encoder: None,
        }
    }
}

impl ParamSet for Model {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.gru.tensors();
        v.extend(self.fc.tensors());
        v.extend(self.encoder.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.gru.tensors_mut();
        v.extend(self.fc.tensors_mut());
        v.extend(self.encoder.tensors_mut());
        v
    }
}

pub struct FcVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// Tape handles for a bound [`Model`]. The encoder is only bound when the
/// configuration uses it.
pub struct ModelVars {
    pub gru: GruStepVars,
    pub fc: FcVars,
    pub encoder: Option<EncoderVars>,
}

impl ModelVars {
    /// Handles in [`ParamSet::tensors`] order; `None` for unbound tensors.
    pub fn all(&self) -> Vec<Option<Var>> {
        let mut v: Vec<Option<Var>> = self.gru.all().into_iter().map(Some).collect();
        v.extend([self.fc.w1, self.fc.b1, self.fc.w2, self.fc.b2].map(Some));
        match &self.encoder {
            Some(e) => v.extend(e.all().into_iter().map(Some)),
            None => v.extend(std::iter::repeat(None).take(2 * crate::mask::CONV_CHANNELS.len() + 2)),
        }
        v
    }
}
