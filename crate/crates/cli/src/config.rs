//! Resolved run configuration: defaults, then an optional TOML file, then
//! command-line flags.

use std::path::Path;

use anyhow::{Context, Result};
use clap::Args;
use dggn::metrics::EvalConfig;
use dggn::model::{Mode, ModelConfig};
use dggn::synth::{Family, SynthSpec};
use dggn::train::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub synth: SynthSpec,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Short SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn log(&self, command: &str) {
        log::info!(
            "{command} config {}: {}",
            self.hash(),
            serde_json::to_string(self).expect("config serializes")
        );
    }
}

#[derive(Args, Debug, Default, Clone)]
pub struct CommonArgs {
    /// TOML file with [model], [train], [eval] and [synth] tables.
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    /// Seeds every random stream (init, shuffle, sampling, synth, order).
    #[arg(long)]
    pub seed: Option<u64>,
}

impl CommonArgs {
    pub fn base(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.model.seed = s;
            cfg.train.seed = s;
            cfg.eval.seed = s;
            cfg.synth.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Args, Debug, Default, Clone)]
pub struct ModelArgs {
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub use_global: Option<bool>,
    #[arg(long)]
    pub weighted_pool: Option<bool>,
    #[arg(long)]
    pub backprop_through_memory: Option<bool>,
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    s.parse()
}

fn parse_family(s: &str) -> std::result::Result<Family, String> {
    s.parse()
}

impl ModelArgs {
    pub fn apply(&self, m: &mut ModelConfig) {
        set(&mut m.mode, self.mode);
        set(&mut m.hidden_dim, self.hidden_dim);
        set(&mut m.use_global, self.use_global);
        set(&mut m.weighted_pool, self.weighted_pool);
        set(&mut m.backprop_through_memory, self.backprop_through_memory);
    }
}

#[derive(Args, Debug, Default, Clone)]
pub struct TrainArgs {
    /// Start from the full-scale schedule instead of the desk defaults.
    #[arg(long)]
    pub full_scale: bool,
    #[arg(long)]
    pub lr0: Option<f64>,
    #[arg(long)]
    pub lr_decay: Option<f64>,
    #[arg(long)]
    pub decay_every: Option<u64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub log_every: Option<u64>,
}

impl TrainArgs {
    pub fn apply(&self, t: &mut TrainConfig) {
        if self.full_scale {
            *t = TrainConfig {
                seed: t.seed,
                ..TrainConfig::full_scale()
            };
        }
        set(&mut t.lr0, self.lr0);
        set(&mut t.lr_decay, self.lr_decay);
        set(&mut t.decay_every, self.decay_every);
        set(&mut t.batch, self.batch);
        set(&mut t.iterations, self.iterations);
        set(&mut t.beta1, self.beta1);
        set(&mut t.beta2, self.beta2);
        set(&mut t.eps, self.eps);
        set(&mut t.gamma, self.gamma);
        set(&mut t.log_every, self.log_every);
    }
}

#[derive(Args, Debug, Default, Clone)]
pub struct EvalArgs {
    #[arg(long)]
    pub edge_conf: Option<f64>,
    #[arg(long)]
    pub edge_iou_match: Option<f64>,
    #[arg(long)]
    pub order_trials: Option<usize>,
}

impl EvalArgs {
    pub fn apply(&self, e: &mut EvalConfig) {
        set(&mut e.edge_conf, self.edge_conf);
        set(&mut e.edge_iou_match, self.edge_iou_match);
        set(&mut e.order_trials, self.order_trials);
    }
}

#[derive(Args, Debug, Default, Clone)]
pub struct SynthArgs {
    #[arg(long, value_parser = parse_family)]
    pub family: Option<Family>,
    #[arg(long)]
    pub min_nodes: Option<usize>,
    #[arg(long)]
    pub max_nodes: Option<usize>,
    #[arg(long)]
    pub text_attach: Option<f64>,
    #[arg(long)]
    pub jitter: Option<u32>,
    #[arg(long)]
    pub image_size: Option<u32>,
}

impl SynthArgs {
    pub fn apply(&self, s: &mut SynthSpec) {
        set(&mut s.family, self.family);
        set(&mut s.min_nodes, self.min_nodes);
        set(&mut s.max_nodes, self.max_nodes);
        set(&mut s.text_attach, self.text_attach);
        set(&mut s.jitter, self.jitter);
        set(&mut s.image_size, self.image_size);
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}
