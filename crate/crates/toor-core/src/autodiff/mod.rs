//! Minimal reverse-mode differentiation over sequential layer stacks.
//!
//! Only the layer types the training pipeline needs are provided: linear,
//! ReLU, leaky-ReLU, sigmoid, softmax, inverted dropout, additive Gaussian
//! noise, and the gradient reversal layer. Everything is `f64`.
//!
//! Activations are cached on a per-call [`Tape`] rather than inside layer
//! state, so any number of forward passes may run concurrently over shared
//! parameters; parameter mutation is reserved to the optimizer.

mod adam;
mod gradcheck;
mod layers;
mod loss;

pub use adam::{AdamHyper, AdamState};
pub use gradcheck::finite_difference_check;
pub use layers::{Layer, LayerCache, LayerStack, Linear, StackGrads, Tape};
pub use loss::{softmax, softmax_cross_entropy, weighted_binary_cross_entropy, PROB_EPS};

pub(crate) use layers::standard_normal;

/// Forward-pass mode.
///
/// Dropout is active in `Train` and `Perturbed`; additive Gaussian noise is
/// active only in `Perturbed` (requested explicitly by consistency losses).
/// `Eval` is a pure function of (parameters, input).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train,
    Perturbed,
}

impl Mode {
    pub(crate) fn dropout_active(self) -> bool {
        matches!(self, Mode::Train | Mode::Perturbed)
    }

    pub(crate) fn noise_active(self) -> bool {
        matches!(self, Mode::Perturbed)
    }
}
