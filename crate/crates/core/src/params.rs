//! Uniform access to trainable tensors for optimizers and checkpoints.

use crate::autodiff::Tensor;

/// A group of trainable tensors visited in a fixed order.
pub trait ParamSet {
    fn tensors(&self) -> Vec<&Tensor>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Initialization bound `1 / sqrt(fan_in)`.
pub fn init_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

/// Adds uniform noise in `[-scale, scale]` to every entry. Zero-initialized
/// biases make max-pool windows tie exactly, where the loss has a kink;
/// finite-difference checks need a point away from those.
pub fn perturb<P: ParamSet + ?Sized, R: rand::Rng + ?Sized>(params: &mut P, scale: f64, rng: &mut R) {
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.gen_range(-scale..=scale);
        }
    }
}
