//! Relation loss, ADAM, the step-decay schedule, the training loop and
//! checkpoints.
//!
//! Only the relation term of the combined objective is live: the detection
//! weights `alpha` and `beta` are carried in [`TrainConfig`] but multiply
//! nothing, since no detector is trained here.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{relative_error, Tape, Tensor, Var};
use crate::diagram::{
    generate_candidates, match_and_sample, match_candidates, DiagramAnnotation, Label, SamplingConfig,
};
use crate::error::{Error, Result};
use crate::mask::{encode_from, layer_activations, rasterize};
use crate::model::{forward_on_tape, Model, ModelConfig};
use crate::params::ParamSet;
use crate::rng::substream;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr0: f64,
    /// Multiplier applied every `decay_every` iterations.
    pub lr_decay: f64,
    pub decay_every: u64,
    /// Diagrams per iteration.
    pub batch: usize,
    pub iterations: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Detection-loss weights; stored, not used.
    pub alpha: f64,
    pub beta: f64,
    /// Relation-loss weight.
    pub gamma: f64,
    pub sampling: SamplingConfig,
    pub seed: u64,
    pub log_every: u64,
}

impl Default for TrainConfig {
    /// Desk-scale defaults. The shorter schedule needs a larger step.
    fn default() -> Self {
        TrainConfig {
            lr0: 3e-3,
            iterations: 2000,
            batch: 4,
            ..TrainConfig::full_scale()
        }
    }
}

impl TrainConfig {
    /// Full-scale schedule.
    pub fn full_scale() -> Self {
        TrainConfig {
            lr0: 1e-4,
            lr_decay: 0.09,
            decay_every: 1000,
            batch: 32,
            iterations: 15000,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-9,
            alpha: 0.2,
            beta: 0.1,
            gamma: 1.0,
            sampling: SamplingConfig::default(),
            seed: 0,
            log_every: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be finite and non-negative");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must lie in (0, 1]");
        }
        if self.decay_every == 0 || self.batch == 0 || self.log_every == 0 {
            return bad("decay_every, batch and log_every must be positive");
        }
        if !(self.gamma > 0.0) {
            return bad("gamma must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("adam requires beta1, beta2 in [0, 1) and eps > 0");
        }
        if self.sampling.k == 0 {
            return bad("sample size k must be positive");
        }
        Ok(())
    }

    /// Learning rate in effect at `iteration` (0-based).
    pub fn lr_at(&self, iteration: u64) -> f64 {
        let steps = (iteration / self.decay_every).min(i32::MAX as u64) as i32;
        self.lr0 * self.lr_decay.powi(steps)
    }
}

/// `gamma` times the mean clamped binary cross-entropy.
pub fn relation_loss(probabilities: &[f64], labels: &[Label], gamma: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = probabilities
        .iter()
        .map(|&p| tape.constant(Tensor::scalar(p)))
        .collect();
    let loss = relation_loss_on_tape(&mut tape, &vars, labels, gamma)?;
    Ok(tape.value(loss).item())
}

pub fn relation_loss_on_tape(tape: &mut Tape, probabilities: &[Var], labels: &[Label], gamma: f64) -> Result<Var> {
    if probabilities.is_empty() {
        return Err(Error::Empty("relation loss batch"));
    }
    if probabilities.len() != labels.len() {
        return Err(Error::Dimension {
            op: "relation_loss",
            lhs: vec![probabilities.len()],
            rhs: vec![labels.len()],
        });
    }
    let terms = probabilities
        .iter()
        .zip(labels)
        .map(|(&p, l)| tape.binary_cross_entropy(p, l.target()))
        .collect::<Result<Vec<_>>>()?;
    let total = tape.sum_n(&terms)?;
    Ok(tape.scale(total, gamma / terms.len() as f64))
}

/// First and second moments, aligned with [`ParamSet::tensors`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub steps: u64,
}

impl AdamState {
    pub fn new<P: ParamSet + ?Sized>(params: &P) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            steps: 0,
        }
    }
}

/// One bias-corrected ADAM update at learning rate `lr_at(iteration)`.
pub fn adam_step<P: ParamSet + ?Sized>(
    params: &mut P,
    grads: &[Vec<f64>],
    state: &mut AdamState,
    config: &TrainConfig,
    iteration: u64,
) -> Result<()> {
    let mut tensors = params.tensors_mut();
    if tensors.len() != grads.len() || tensors.len() != state.m.len() {
        return Err(Error::Dimension {
            op: "adam_step",
            lhs: vec![tensors.len()],
            rhs: vec![grads.len()],
        });
    }
    state.steps += 1;
    let lr = config.lr_at(iteration);
    let c1 = 1.0 - config.beta1.powf(state.steps as f64);
    let c2 = 1.0 - config.beta2.powf(state.steps as f64);
    for (ti, t) in tensors.iter_mut().enumerate() {
        let (g, m, v) = (&grads[ti], &mut state.m[ti], &mut state.v[ti]);
        if g.len() != t.len() {
            return Err(Error::Dimension {
                op: "adam_step",
                lhs: t.shape().to_vec(),
                rhs: vec![g.len()],
            });
        }
        for (k, x) in t.data_mut().iter_mut().enumerate() {
            m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g[k];
            v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            *x -= lr * m_hat / (v_hat.sqrt() + config.eps);
        }
    }
    Ok(())
}

/// Everything needed to resume training exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub model: Model,
    pub adam: AdamState,
    /// Next iteration to run.
    pub iteration: u64,
    pub train: TrainConfig,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(s)?;
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                c.version
            )));
        }
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Checkpoint::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: u64,
    pub loss: f64,
    pub lr: f64,
}

/// Loss and gradients (in [`ParamSet::tensors`] order) for one diagram.
pub fn diagram_gradients(
    model: &Model,
    annotation: &DiagramAnnotation,
    sampling: &SamplingConfig,
    gamma: f64,
    shuffle: &mut impl Rng,
    sampling_rng: &mut impl Rng,
) -> Result<Option<(f64, Vec<Vec<f64>>)>> {
    let mut candidates = generate_candidates(&annotation.objects);
    if candidates.is_empty() {
        return Ok(None);
    }
    candidates.shuffle(shuffle);
    let sample = match_and_sample(&candidates, &annotation.objects, annotation, sampling, sampling_rng)?;
    let labels: Vec<Label> = sample.iter().map(|c| c.label.unwrap_or(Label::Negative)).collect();
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let out = forward_on_tape(&mut tape, &model.config, &vars, &annotation.objects, &sample, None)?;
    let loss = relation_loss_on_tape(&mut tape, &out.probabilities, &labels, gamma)?;
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    let lens: Vec<usize> = model.tensors().iter().map(|t| t.len()).collect();
    let per_tensor = vars
        .all()
        .into_iter()
        .zip(lens)
        .map(|(v, len)| v.map_or_else(|| vec![0.0; len], |v| grads.get_or_zeros(v, len)))
        .collect();
    Ok(Some((value, per_tensor)))
}

/// Stateful training loop; each iteration draws its randomness from a
/// dedicated substream, so resuming from a checkpoint continues exactly.
pub struct Trainer<'a> {
    dataset: &'a [DiagramAnnotation],
    model: Model,
    adam: AdamState,
    config: TrainConfig,
    iteration: u64,
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a [DiagramAnnotation], model_config: ModelConfig, config: TrainConfig) -> Result<Self> {
        let model = Model::new(model_config);
        let adam = AdamState::new(&model);
        Trainer::resume(
            dataset,
            Checkpoint {
                version: CHECKPOINT_VERSION,
                model,
                adam,
                iteration: 0,
                train: config,
            },
        )
    }

    pub fn resume(dataset: &'a [DiagramAnnotation], checkpoint: Checkpoint) -> Result<Self> {
        checkpoint.train.validate()?;
        if dataset.is_empty() {
            return Err(Error::Empty("training dataset"));
        }
        Ok(Trainer {
            dataset,
            model: checkpoint.model,
            adam: checkpoint.adam,
            config: checkpoint.train,
            iteration: checkpoint.iteration,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            model: self.model.clone(),
            adam: self.adam.clone(),
            iteration: self.iteration,
            train: self.config.clone(),
        }
    }

    /// Runs one iteration and returns its mean batch loss. A non-finite loss
    /// leaves the state untouched and yields [`Error::Diverged`].
    pub fn step(&mut self) -> Result<LossRecord> {
        let it = self.iteration;
        let mut shuffle = substream(self.config.seed, "shuffle", it);
        let mut sampling = substream(self.config.seed, "sampling", it);
        let batch = self.config.batch.min(self.dataset.len());
        let picks: Vec<usize> = rand::seq::index::sample(&mut shuffle, self.dataset.len(), batch).into_vec();

        let mut total = 0.0;
        let mut used = 0usize;
        let mut acc: Vec<Vec<f64>> = self.model.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        for &d in &picks {
            let Some((loss, grads)) = diagram_gradients(
                &self.model,
                &self.dataset[d],
                &self.config.sampling,
                self.config.gamma,
                &mut shuffle,
                &mut sampling,
            )?
            else {
                continue;
            };
            total += loss;
            used += 1;
            for (a, g) in acc.iter_mut().zip(&grads) {
                a.iter_mut().zip(g).for_each(|(x, y)| *x += y);
            }
        }
        if used == 0 {
            return Err(Error::Empty("training batch (every diagram has zero objects)"));
        }
        let loss = total / used as f64;
        let finite = loss.is_finite() && acc.iter().flatten().all(|g| g.is_finite());
        if !finite {
            return Err(Error::Diverged {
                iteration: it,
                checkpoint: Box::new(self.checkpoint()),
            });
        }
        let scale = 1.0 / used as f64;
        acc.iter_mut().flatten().for_each(|g| *g *= scale);
        adam_step(&mut self.model, &acc, &mut self.adam, &self.config, it)?;
        self.iteration += 1;
        Ok(LossRecord {
            iteration: it,
            loss,
            lr: self.config.lr_at(it),
        })
    }

    /// Runs until `config.iterations` have completed, calling `observe` after
    /// each iteration.
    pub fn run(&mut self, mut observe: impl FnMut(&LossRecord)) -> Result<Vec<LossRecord>> {
        let mut curve = Vec::new();
        while self.iteration < self.config.iterations {
            let rec = self.step()?;
            if rec.iteration % self.config.log_every == 0 {
                log::info!(
                    "iteration {:>6}  loss {:.6}  lr {:.3e}",
                    rec.iteration,
                    rec.loss,
                    rec.lr
                );
            }
            observe(&rec);
            curve.push(rec);
        }
        Ok(curve)
    }
}

pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    /// One record per iteration.
    pub curve: Vec<LossRecord>,
}

pub fn train(dataset: &[DiagramAnnotation], model_config: ModelConfig, config: TrainConfig) -> Result<TrainOutput> {
    let mut trainer = Trainer::new(dataset, model_config, config)?;
    let curve = trainer.run(|_| {})?;
    Ok(TrainOutput {
        checkpoint: trainer.checkpoint(),
        curve,
    })
}

/// Largest relative error between backpropagated and central-difference
/// gradients of the relation loss over every candidate of one diagram.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradientReport {
    pub gru: f64,
    pub encoder: f64,
    pub checked: usize,
}

/// Compares tape gradients with central differences for every GRU and
/// mask-encoder parameter. Memory reads are only differentiated when
/// `model.config.backprop_through_memory` is set; otherwise the tape
/// gradient is the detached one and generally differs from the numeric one.
pub fn gradient_check(model: &Model, annotation: &DiagramAnnotation, gamma: f64, h: f64) -> Result<GradientReport> {
    let objects = &annotation.objects;
    let mut candidates = generate_candidates(objects);
    let labels = match_candidates(&candidates, objects, annotation);
    for (c, l) in candidates.iter_mut().zip(&labels) {
        c.label = Some(*l);
    }

    let loss_with = |m: &Model, g: &[f64]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars = m.bind_without_encoder(&mut tape);
        let gv = tape.constant(Tensor::vector(g.to_vec()));
        let out = forward_on_tape(&mut tape, &m.config, &vars, objects, &candidates, Some(gv))?;
        let loss = relation_loss_on_tape(&mut tape, &out.probabilities, &labels, gamma)?;
        let v = tape.value(loss).item();
        if !v.is_finite() {
            return Err(Error::Evaluation(format!("non-finite loss {v}")));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let out = forward_on_tape(&mut tape, &model.config, &vars, objects, &candidates, None)?;
    let loss = relation_loss_on_tape(&mut tape, &out.probabilities, &labels, gamma)?;
    let grads = tape.backward(loss)?;

    let raster = rasterize(objects);
    let acts = layer_activations(&raster, &model.encoder)?;
    let global = |enc: &crate::mask::MaskEncoderParams, start: usize| -> Result<Vec<f64>> {
        if model.config.needs_global() {
            encode_from(&acts[start], start, enc)
        } else {
            Ok(vec![0.0; model.config.hidden_dim])
        }
    };
    let g0 = global(&model.encoder, acts.len() - 1)?;

    let mut report = GradientReport {
        gru: 0.0,
        encoder: 0.0,
        checked: 0,
    };
    let mut probe = model.clone();
    for (ti, var) in vars.gru.all().into_iter().enumerate() {
        let len = model.gru.tensors()[ti].len();
        let analytic = grads.get_or_zeros(var, len);
        for k in 0..len {
            let orig = probe.gru.tensors()[ti].data()[k];
            probe.gru.tensors_mut()[ti].data_mut()[k] = orig + h;
            let plus = loss_with(&probe, &g0)?;
            probe.gru.tensors_mut()[ti].data_mut()[k] = orig - h;
            let minus = loss_with(&probe, &g0)?;
            probe.gru.tensors_mut()[ti].data_mut()[k] = orig;
            report.gru = report.gru.max(relative_error(analytic[k], (plus - minus) / (2.0 * h)));
            report.checked += 1;
        }
    }

    let enc_vars: Vec<Option<Var>> = match &vars.encoder {
        Some(e) => e.all().into_iter().map(Some).collect(),
        None => vec![None; model.encoder.tensors().len()],
    };
    let n_conv = model.encoder.layers.len();
    let mut enc = model.encoder.clone();
    for (ti, var) in enc_vars.into_iter().enumerate() {
        // Tensors come in (kernels, bias) pairs per stage, then the affine map.
        let start = (ti / 2).min(n_conv);
        let len = model.encoder.tensors()[ti].len();
        let analytic = var.map_or_else(|| vec![0.0; len], |v| grads.get_or_zeros(v, len));
        for k in 0..len {
            let orig = enc.tensors()[ti].data()[k];
            enc.tensors_mut()[ti].data_mut()[k] = orig + h;
            let plus = loss_with(model, &global(&enc, start)?)?;
            enc.tensors_mut()[ti].data_mut()[k] = orig - h;
            let minus = loss_with(model, &global(&enc, start)?)?;
            enc.tensors_mut()[ti].data_mut()[k] = orig;
            report.encoder = report
                .encoder
                .max(relative_error(analytic[k], (plus - minus) / (2.0 * h)));
            report.checked += 1;
        }
    }
    Ok(report)
}
