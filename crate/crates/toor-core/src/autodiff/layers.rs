//! Layer definitions, the sequential stack, and its forward/backward passes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Mode;
use crate::error::{Error, Result};

/// Dense affine map `y = Wx + b` with row-major weights of shape
/// `(out_dim, in_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Glorot-uniform weights in `±sqrt(6/(fan_in+fan_out))`, zero biases.
    pub fn glorot(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Linear {
            in_dim,
            out_dim,
            weights,
            bias: vec![0.0; out_dim],
        }
    }

    /// Square identity map, handy in tests.
    pub fn identity(dim: usize) -> Self {
        let mut l = Linear::zeros(dim, dim);
        for i in 0..dim {
            l.weights[i * dim + i] = 1.0;
        }
        l
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.bias.clone();
        for (i, yi) in y.iter_mut().enumerate() {
            let row = &self.weights[i * self.in_dim..(i + 1) * self.in_dim];
            *yi += row.iter().zip(x).map(|(w, xj)| w * xj).sum::<f64>();
        }
        y
    }
}

/// One layer of a [`LayerStack`].
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Linear(Linear),
    Relu,
    LeakyRelu { slope: f64 },
    Sigmoid,
    Softmax,
    /// Inverted dropout: kept activations are scaled by `1/(1-p)` at train
    /// time so that eval is the identity. Requires `p < 1`.
    Dropout { p: f64 },
    /// Additive zero-mean Gaussian noise, active only in `Mode::Perturbed`.
    GaussianNoise { sigma: f64 },
    /// Identity forward; backward multiplies the gradient by `-coeff`.
    /// `coeff` is the value used when no per-call override is supplied.
    GradReversal { coeff: f64 },
}

impl Layer {
    fn name(&self) -> &'static str {
        match self {
            Layer::Linear(_) => "linear",
            Layer::Relu => "relu",
            Layer::LeakyRelu { .. } => "leaky_relu",
            Layer::Sigmoid => "sigmoid",
            Layer::Softmax => "softmax",
            Layer::Dropout { .. } => "dropout",
            Layer::GaussianNoise { .. } => "gaussian_noise",
            Layer::GradReversal { .. } => "grad_reversal",
        }
    }

    /// Expected input dimension, if this layer constrains it.
    fn in_dim(&self) -> Option<usize> {
        match self {
            Layer::Linear(l) => Some(l.in_dim),
            _ => None,
        }
    }
}

/// Per-layer cached activations from one forward call.
#[derive(Debug, Clone)]
pub enum LayerCache {
    Linear { input: Vec<f64> },
    Relu { input: Vec<f64> },
    LeakyRelu { input: Vec<f64> },
    Sigmoid { output: Vec<f64> },
    Softmax { output: Vec<f64> },
    /// `None` when dropout was inactive (eval mode).
    Dropout { mask: Option<Vec<f64>> },
    GaussianNoise,
    GradReversal { coeff: f64 },
}

/// Cached activations for one forward pass through one stack.
#[derive(Debug, Clone)]
pub struct Tape {
    caches: Vec<LayerCache>,
    input_dim: usize,
}

/// Per-parameter-block gradients, aligned with [`LayerStack::param_blocks`].
#[derive(Debug, Clone, PartialEq)]
pub struct StackGrads(pub Vec<Vec<f64>>);

impl StackGrads {
    pub fn zeros_of(stack: &LayerStack) -> Self {
        StackGrads(
            stack
                .param_blocks()
                .iter()
                .map(|b| vec![0.0; b.len()])
                .collect(),
        )
    }

    /// `self += scale * other`. Blocks must align.
    pub fn add_scaled(&mut self, other: &StackGrads, scale: f64) {
        assert_eq!(self.0.len(), other.0.len(), "gradient block count mismatch");
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            assert_eq!(a.len(), b.len(), "gradient block length mismatch");
            for (ai, bi) in a.iter_mut().zip(b) {
                *ai += scale * bi;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for block in &mut self.0 {
            for g in block.iter_mut() {
                *g *= s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|b| b.iter().all(|g| g.is_finite()))
    }
}

/// An ordered sequence of layers. An empty stack is the identity in both
/// directions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerStack {
    pub layers: Vec<Layer>,
}

impl LayerStack {
    pub fn new(layers: Vec<Layer>) -> Self {
        LayerStack { layers }
    }

    /// Views of every parameter block in a fixed order
    /// (per linear layer: weights, then bias).
    pub fn param_blocks(&self) -> Vec<&[f64]> {
        let mut blocks = Vec::new();
        for layer in &self.layers {
            if let Layer::Linear(l) = layer {
                blocks.push(l.weights.as_slice());
                blocks.push(l.bias.as_slice());
            }
        }
        blocks
    }

    pub fn param_blocks_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut blocks = Vec::new();
        for layer in &mut self.layers {
            if let Layer::Linear(l) = layer {
                blocks.push(&mut l.weights);
                blocks.push(&mut l.bias);
            }
        }
        blocks
    }

    pub fn param_count(&self) -> usize {
        self.param_blocks().iter().map(|b| b.len()).sum()
    }

    /// Set the stored flip coefficient of every gradient reversal layer.
    pub fn set_flip_coeff(&mut self, coeff: f64) {
        for layer in &mut self.layers {
            if let Layer::GradReversal { coeff: c } = layer {
                *c = coeff;
            }
        }
    }

    /// Forward pass. Stochastic layers draw from `rng` only when active in
    /// `mode`; eval-mode forwards never touch it.
    pub fn forward(
        &self,
        input: &[f64],
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<f64>, Tape)> {
        self.forward_impl(input, mode, Some(rng), None)
    }

    /// Eval-mode forward; pure in (parameters, input).
    pub fn forward_eval(&self, input: &[f64]) -> Result<(Vec<f64>, Tape)> {
        self.forward_impl(input, Mode::Eval, None, None)
    }

    /// Forward pass overriding every gradient reversal coefficient for this
    /// call only; the override is recorded on the tape so the matching
    /// backward uses it.
    pub fn forward_with_flip(
        &self,
        input: &[f64],
        mode: Mode,
        rng: &mut ChaCha8Rng,
        flip_coeff: f64,
    ) -> Result<(Vec<f64>, Tape)> {
        self.forward_impl(input, mode, Some(rng), Some(flip_coeff))
    }

    fn forward_impl(
        &self,
        input: &[f64],
        mode: Mode,
        mut rng: Option<&mut ChaCha8Rng>,
        flip_override: Option<f64>,
    ) -> Result<(Vec<f64>, Tape)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        for (idx, layer) in self.layers.iter().enumerate() {
            if let Some(expected) = layer.in_dim() {
                if x.len() != expected {
                    return Err(Error::Config(format!(
                        "layer {idx} ({}) expects input dim {expected}, got {}",
                        layer.name(),
                        x.len()
                    )));
                }
            }
            match layer {
                Layer::Linear(l) => {
                    let y = l.apply(&x);
                    caches.push(LayerCache::Linear { input: x });
                    x = y;
                }
                Layer::Relu => {
                    let y = x.iter().map(|&v| v.max(0.0)).collect();
                    caches.push(LayerCache::Relu { input: x });
                    x = y;
                }
                Layer::LeakyRelu { slope } => {
                    let y = x.iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect();
                    caches.push(LayerCache::LeakyRelu { input: x });
                    x = y;
                }
                Layer::Sigmoid => {
                    x = x.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect();
                    caches.push(LayerCache::Sigmoid { output: x.clone() });
                }
                Layer::Softmax => {
                    x = super::loss::softmax(&x);
                    caches.push(LayerCache::Softmax { output: x.clone() });
                }
                Layer::Dropout { p } => {
                    if mode.dropout_active() && *p > 0.0 {
                        let rng = rng
                            .as_deref_mut()
                            .expect("dropout in train mode requires an rng");
                        let keep = 1.0 - p;
                        let mask: Vec<f64> = x
                            .iter()
                            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                            .collect();
                        for (v, m) in x.iter_mut().zip(&mask) {
                            *v *= m;
                        }
                        caches.push(LayerCache::Dropout { mask: Some(mask) });
                    } else {
                        caches.push(LayerCache::Dropout { mask: None });
                    }
                }
                Layer::GaussianNoise { sigma } => {
                    if mode.noise_active() && *sigma > 0.0 {
                        let rng = rng
                            .as_deref_mut()
                            .expect("gaussian noise requires an rng");
                        for v in x.iter_mut() {
                            *v += sigma * standard_normal(rng);
                        }
                    }
                    caches.push(LayerCache::GaussianNoise);
                }
                Layer::GradReversal { coeff } => {
                    caches.push(LayerCache::GradReversal {
                        coeff: flip_override.unwrap_or(*coeff),
                    });
                }
            }
        }
        Ok((
            x,
            Tape {
                caches,
                input_dim: input.len(),
            },
        ))
    }

    /// Backward pass over a tape produced by a matching forward call.
    /// Returns the input gradient and per-block parameter gradients.
    pub fn backward(&self, tape: &Tape, output_gradient: &[f64]) -> Result<(Vec<f64>, StackGrads)> {
        let mut grads = StackGrads::zeros_of(self);
        let input_grad = self.backward_into(tape, output_gradient, &mut grads, 1.0)?;
        Ok((input_grad, grads))
    }

    /// Backward pass accumulating `scale * parameter gradients` into `acc`
    /// (which must be shaped by [`StackGrads::zeros_of`] for this stack).
    /// Returns the input gradient. This is the allocation-light path batch
    /// loops use.
    pub fn backward_into(
        &self,
        tape: &Tape,
        output_gradient: &[f64],
        acc: &mut StackGrads,
        scale: f64,
    ) -> Result<Vec<f64>> {
        if tape.caches.len() != self.layers.len() {
            return Err(Error::Usage(format!(
                "tape has {} cached layers but stack has {}",
                tape.caches.len(),
                self.layers.len()
            )));
        }
        // Parameter blocks appear in forward order; walk them backwards.
        let mut block_idx = acc.0.len();
        let mut g = output_gradient.to_vec();
        for (idx, (layer, cache)) in self.layers.iter().zip(&tape.caches).enumerate().rev() {
            match (layer, cache) {
                (Layer::Linear(l), LayerCache::Linear { input }) => {
                    if g.len() != l.out_dim || input.len() != l.in_dim {
                        return Err(Error::Usage(format!(
                            "tape/gradient shape mismatch at layer {idx} (linear)"
                        )));
                    }
                    if block_idx < 2 {
                        return Err(Error::Usage(
                            "gradient accumulator has too few blocks for this stack".into(),
                        ));
                    }
                    block_idx -= 2;
                    let (dw, db) = {
                        let (head, tail) = acc.0.split_at_mut(block_idx + 1);
                        (&mut head[block_idx], &mut tail[0])
                    };
                    if dw.len() != l.in_dim * l.out_dim || db.len() != l.out_dim {
                        return Err(Error::Usage(
                            "gradient accumulator blocks do not match this stack".into(),
                        ));
                    }
                    for i in 0..l.out_dim {
                        let gi = scale * g[i];
                        let row = &mut dw[i * l.in_dim..(i + 1) * l.in_dim];
                        for (w, xj) in row.iter_mut().zip(input) {
                            *w += gi * xj;
                        }
                        db[i] += gi;
                    }
                    let mut dx = vec![0.0; l.in_dim];
                    for i in 0..l.out_dim {
                        let row = &l.weights[i * l.in_dim..(i + 1) * l.in_dim];
                        for (dxj, w) in dx.iter_mut().zip(row) {
                            *dxj += w * g[i];
                        }
                    }
                    g = dx;
                }
                (Layer::Relu, LayerCache::Relu { input }) => {
                    for (gi, &xi) in g.iter_mut().zip(input) {
                        if xi <= 0.0 {
                            *gi = 0.0;
                        }
                    }
                }
                (Layer::LeakyRelu { slope }, LayerCache::LeakyRelu { input }) => {
                    for (gi, &xi) in g.iter_mut().zip(input) {
                        if xi <= 0.0 {
                            *gi *= slope;
                        }
                    }
                }
                (Layer::Sigmoid, LayerCache::Sigmoid { output }) => {
                    for (gi, &yi) in g.iter_mut().zip(output) {
                        *gi *= yi * (1.0 - yi);
                    }
                }
                (Layer::Softmax, LayerCache::Softmax { output }) => {
                    let dot: f64 = g.iter().zip(output).map(|(gi, yi)| gi * yi).sum();
                    for (gi, &yi) in g.iter_mut().zip(output) {
                        *gi = yi * (*gi - dot);
                    }
                }
                (Layer::Dropout { .. }, LayerCache::Dropout { mask }) => {
                    if let Some(mask) = mask {
                        for (gi, m) in g.iter_mut().zip(mask) {
                            *gi *= m;
                        }
                    }
                }
                (Layer::GaussianNoise { .. }, LayerCache::GaussianNoise) => {}
                (Layer::GradReversal { .. }, LayerCache::GradReversal { coeff }) => {
                    for gi in g.iter_mut() {
                        *gi *= -coeff;
                    }
                }
                _ => {
                    return Err(Error::Usage(format!(
                        "tape does not match stack at layer {idx} ({})",
                        layer.name()
                    )));
                }
            }
        }
        if g.len() != tape.input_dim {
            return Err(Error::Usage(
                "input gradient dimension does not match taped input".into(),
            ));
        }
        Ok(g)
    }
}

/// Box-Muller standard normal draw.
pub(crate) fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = loop {
        let u = rng.gen::<f64>();
        if u > 0.0 {
            break u;
        }
    };
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn empty_stack_is_identity_both_ways() {
        let stack = LayerStack::default();
        let (y, tape) = stack.forward(&[1.0, 2.0], Mode::Train, &mut rng()).unwrap();
        assert_eq!(y, vec![1.0, 2.0]);
        let (gx, grads) = stack.backward(&tape, &[0.5, -0.5]).unwrap();
        assert_eq!(gx, vec![0.5, -0.5]);
        assert!(grads.0.is_empty());
    }

    #[test]
    fn identity_linear_passes_input_through() {
        let stack = LayerStack::new(vec![Layer::Linear(Linear::identity(2))]);
        let (y, _) = stack.forward_eval(&[3.0, -1.0]).unwrap();
        assert_eq!(y, vec![3.0, -1.0]);
    }

    #[test]
    fn relu_backward_masks_negative_inputs() {
        let stack = LayerStack::new(vec![Layer::Relu]);
        let (_, tape) = stack.forward_eval(&[-1.0, 2.0]).unwrap();
        let (gx, _) = stack.backward(&tape, &[5.0, 5.0]).unwrap();
        assert_eq!(gx, vec![0.0, 5.0]);
    }

    #[test]
    fn grl_forward_identity_backward_flip() {
        let stack = LayerStack::new(vec![Layer::GradReversal { coeff: 1.0 }]);
        let input = [0.25, -7.5];
        let (y, tape) = stack.forward_eval(&input).unwrap();
        assert_eq!(y, input.to_vec());
        let (gx, _) = stack.backward(&tape, &[2.0, -3.0]).unwrap();
        assert_eq!(gx, vec![-2.0, 3.0]);
    }

    #[test]
    fn grl_coeff_zero_kills_gradient() {
        let stack = LayerStack::new(vec![Layer::GradReversal { coeff: 0.0 }]);
        let (_, tape) = stack.forward_eval(&[1.0]).unwrap();
        let (gx, _) = stack.backward(&tape, &[123.0]).unwrap();
        assert_eq!(gx, vec![0.0]);
    }

    #[test]
    fn grl_flip_override_is_recorded_on_tape() {
        let stack = LayerStack::new(vec![Layer::GradReversal { coeff: 0.0 }]);
        let (_, tape) = stack
            .forward_with_flip(&[1.0], Mode::Eval, &mut rng(), 0.5)
            .unwrap();
        let (gx, _) = stack.backward(&tape, &[4.0]).unwrap();
        assert_eq!(gx, vec![-2.0]);
    }

    #[test]
    fn dropout_inactive_at_eval() {
        let stack = LayerStack::new(vec![Layer::Dropout { p: 0.5 }]);
        let v = [1.0, 2.0, 3.0, 4.0];
        let (y, _) = stack.forward_eval(&v).unwrap();
        assert_eq!(y, v.to_vec());
    }

    #[test]
    fn dropout_train_scales_kept_units() {
        let stack = LayerStack::new(vec![Layer::Dropout { p: 0.5 }]);
        let v = vec![1.0; 1000];
        let (y, _) = stack.forward(&v, Mode::Train, &mut rng()).unwrap();
        // Every unit is either dropped or scaled by 1/(1-p) = 2.
        assert!(y.iter().all(|&u| u == 0.0 || u == 2.0));
        let kept = y.iter().filter(|&&u| u != 0.0).count();
        assert!(kept > 380 && kept < 620, "kept {kept} of 1000");
    }

    #[test]
    fn noise_active_only_in_perturbed_mode() {
        let stack = LayerStack::new(vec![Layer::GaussianNoise { sigma: 0.15 }]);
        let v = [1.0, 2.0];
        let (y_train, _) = stack.forward(&v, Mode::Train, &mut rng()).unwrap();
        assert_eq!(y_train, v.to_vec());
        let (y_pert, _) = stack.forward(&v, Mode::Perturbed, &mut rng()).unwrap();
        assert_ne!(y_pert, v.to_vec());
    }

    #[test]
    fn dimension_mismatch_names_layer() {
        let stack = LayerStack::new(vec![Layer::Linear(Linear::zeros(3, 2))]);
        let err = stack.forward_eval(&[1.0, 2.0]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("layer 0"), "{msg}");
        assert!(msg.contains("3"), "{msg}");
    }

    #[test]
    fn mismatched_tape_is_a_usage_error() {
        let stack_a = LayerStack::new(vec![Layer::Relu]);
        let stack_b = LayerStack::new(vec![Layer::Sigmoid]);
        let (_, tape) = stack_a.forward_eval(&[1.0]).unwrap();
        assert!(matches!(
            stack_b.backward(&tape, &[1.0]),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn eval_forward_is_pure() {
        let mut r = rng();
        let stack = LayerStack::new(vec![
            Layer::Linear(Linear::glorot(3, 4, &mut r)),
            Layer::LeakyRelu { slope: 0.1 },
            Layer::Dropout { p: 0.5 },
        ]);
        let x = [0.3, -0.2, 1.4];
        let (y1, _) = stack.forward_eval(&x).unwrap();
        let (y2, _) = stack.forward_eval(&x).unwrap();
        assert_eq!(y1, y2);
    }
}
