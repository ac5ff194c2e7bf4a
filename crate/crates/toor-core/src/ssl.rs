//! Pluggable semi-supervised regularizers for the exploration term of the
//! training objective.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax, softmax_cross_entropy, Mode, StackGrads, PROB_EPS};
use crate::error::{Error, Result};
use crate::net::{classify, feature_extract, ModelBundle};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SslVariant {
    /// Consistency between two perturbed forward passes (MSE on
    /// probabilities, gradients through both passes).
    PiModel,
    /// Cross-entropy against the argmax class when the prediction is
    /// confident enough.
    PseudoLabel { threshold: f64 },
    /// Shannon entropy of the prediction.
    EntropyMin,
}

impl SslVariant {
    pub fn parse(s: &str) -> Option<SslVariant> {
        match s {
            "pi-model" => Some(SslVariant::PiModel),
            "pseudo-label" => Some(SslVariant::PseudoLabel { threshold: 0.95 }),
            "entropy-min" => Some(SslVariant::EntropyMin),
            _ => None,
        }
    }

    /// The consistency coefficient conventionally bundled with the variant.
    pub fn default_coeff(self) -> f64 {
        match self {
            SslVariant::PiModel => 20.0,
            SslVariant::PseudoLabel { .. } => 0.3,
            SslVariant::EntropyMin => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SslConfig {
    pub variant: SslVariant,
    /// Scales the regularizer; the reported SSL loss includes this factor.
    pub coeff: f64,
}

impl Default for SslConfig {
    fn default() -> Self {
        SslConfig {
            variant: SslVariant::PiModel,
            coeff: SslVariant::PiModel.default_coeff(),
        }
    }
}

impl SslConfig {
    pub fn validate(&self) -> Result<()> {
        if self.coeff < 0.0 {
            return Err(Error::Config(format!(
                "ssl coefficient must be nonnegative, got {}",
                self.coeff
            )));
        }
        if let SslVariant::PseudoLabel { threshold } = self.variant {
            if !(0.0..=1.0).contains(&threshold) {
                return Err(Error::Config(format!(
                    "pseudo-label threshold must be in [0,1], got {threshold}"
                )));
            }
        }
        Ok(())
    }
}

/// Regularizer loss and its gradients into the extractor and classifier.
///
/// `rng_a`/`rng_b` drive the stochastic draws; only the Pi-model uses both.
pub fn ssl_loss(
    bundle: &ModelBundle,
    config: &SslConfig,
    x: &[f64],
    rng_a: &mut ChaCha8Rng,
    rng_b: &mut ChaCha8Rng,
) -> Result<(f64, StackGrads, StackGrads)> {
    let mut f_grads = StackGrads::zeros_of(&bundle.extractor);
    let mut c_grads = StackGrads::zeros_of(&bundle.classifier);
    let loss = ssl_loss_into(bundle, config, x, rng_a, rng_b, &mut f_grads, &mut c_grads, 1.0)?;
    Ok((loss, f_grads, c_grads))
}

/// [`ssl_loss`] accumulating `scale * gradients` into caller-owned buffers;
/// returns the (coefficient-scaled) loss value.
#[allow(clippy::too_many_arguments)]
pub fn ssl_loss_into(
    bundle: &ModelBundle,
    config: &SslConfig,
    x: &[f64],
    rng_a: &mut ChaCha8Rng,
    rng_b: &mut ChaCha8Rng,
    f_acc: &mut StackGrads,
    c_acc: &mut StackGrads,
    scale: f64,
) -> Result<f64> {
    let s = scale * config.coeff;
    let raw = match config.variant {
        SslVariant::PiModel => pi_model_loss_into(bundle, x, rng_a, rng_b, f_acc, c_acc, s)?,
        SslVariant::PseudoLabel { threshold } => {
            pseudo_label_loss_into(bundle, x, threshold, rng_a, f_acc, c_acc, s)?
        }
        SslVariant::EntropyMin => entropy_min_loss_into(bundle, x, rng_a, f_acc, c_acc, s)?,
    };
    Ok(config.coeff * raw)
}

/// Squared L2 distance (averaged over classes) between the probability
/// outputs of two independently perturbed forward passes.
pub fn pi_model_loss(
    bundle: &ModelBundle,
    x: &[f64],
    rng_a: &mut ChaCha8Rng,
    rng_b: &mut ChaCha8Rng,
) -> Result<(f64, StackGrads, StackGrads)> {
    let mut f_grads = StackGrads::zeros_of(&bundle.extractor);
    let mut c_grads = StackGrads::zeros_of(&bundle.classifier);
    let loss = pi_model_loss_into(bundle, x, rng_a, rng_b, &mut f_grads, &mut c_grads, 1.0)?;
    Ok((loss, f_grads, c_grads))
}

fn pi_model_loss_into(
    bundle: &ModelBundle,
    x: &[f64],
    rng_a: &mut ChaCha8Rng,
    rng_b: &mut ChaCha8Rng,
    f_acc: &mut StackGrads,
    c_acc: &mut StackGrads,
    scale: f64,
) -> Result<f64> {
    let (feat_a, tape_fa) = feature_extract(bundle, x, Mode::Perturbed, rng_a)?;
    let (logits_a, tape_ca) = classify(bundle, &feat_a)?;
    let prob_a = softmax(&logits_a);
    let (feat_b, tape_fb) = feature_extract(bundle, x, Mode::Perturbed, rng_b)?;
    let (logits_b, tape_cb) = classify(bundle, &feat_b)?;
    let prob_b = softmax(&logits_b);

    let c = prob_a.len() as f64;
    let loss = prob_a
        .iter()
        .zip(&prob_b)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / c;

    // d loss / d prob, then through each softmax jacobian.
    let dprob_a: Vec<f64> = prob_a
        .iter()
        .zip(&prob_b)
        .map(|(a, b)| 2.0 * (a - b) / c)
        .collect();
    let dlogits_a = softmax_jacobian_product(&prob_a, &dprob_a);
    let dprob_b: Vec<f64> = dprob_a.iter().map(|g| -g).collect();
    let dlogits_b = softmax_jacobian_product(&prob_b, &dprob_b);

    let dfeat_a = bundle.classifier.backward_into(&tape_ca, &dlogits_a, c_acc, scale)?;
    bundle.extractor.backward_into(&tape_fa, &dfeat_a, f_acc, scale)?;
    let dfeat_b = bundle.classifier.backward_into(&tape_cb, &dlogits_b, c_acc, scale)?;
    bundle.extractor.backward_into(&tape_fb, &dfeat_b, f_acc, scale)?;
    Ok(loss)
}

fn pseudo_label_loss_into(
    bundle: &ModelBundle,
    x: &[f64],
    threshold: f64,
    rng: &mut ChaCha8Rng,
    f_acc: &mut StackGrads,
    c_acc: &mut StackGrads,
    scale: f64,
) -> Result<f64> {
    let (feat, tape_f) = feature_extract(bundle, x, Mode::Train, rng)?;
    let (logits, tape_c) = classify(bundle, &feat)?;
    let prob = softmax(&logits);
    let (best, confidence) = argmax(&prob);
    if confidence <= threshold {
        return Ok(0.0);
    }
    let (loss, dlogits) = softmax_cross_entropy(&logits, best)?;
    let dfeat = bundle.classifier.backward_into(&tape_c, &dlogits, c_acc, scale)?;
    bundle.extractor.backward_into(&tape_f, &dfeat, f_acc, scale)?;
    Ok(loss)
}

fn entropy_min_loss_into(
    bundle: &ModelBundle,
    x: &[f64],
    rng: &mut ChaCha8Rng,
    f_acc: &mut StackGrads,
    c_acc: &mut StackGrads,
    scale: f64,
) -> Result<f64> {
    let (feat, tape_f) = feature_extract(bundle, x, Mode::Train, rng)?;
    let (logits, tape_c) = classify(bundle, &feat)?;
    let prob = softmax(&logits);
    let loss = -prob
        .iter()
        .map(|&p| if p > 0.0 { p * p.ln() } else { 0.0 })
        .sum::<f64>();
    // dH/dp_i = -(ln p_i + 1), pushed through the softmax jacobian.
    let dprob: Vec<f64> = prob
        .iter()
        .map(|&p| -(p.max(PROB_EPS).ln() + 1.0))
        .collect();
    let dlogits = softmax_jacobian_product(&prob, &dprob);
    let dfeat = bundle.classifier.backward_into(&tape_c, &dlogits, c_acc, scale)?;
    bundle.extractor.backward_into(&tape_f, &dfeat, f_acc, scale)?;
    Ok(loss)
}

/// `J_softmax^T g = p ⊙ (g - <g, p>)` evaluated at probabilities `p`.
fn softmax_jacobian_product(prob: &[f64], grad: &[f64]) -> Vec<f64> {
    let dot: f64 = prob.iter().zip(grad).map(|(p, g)| p * g).sum();
    prob.iter().zip(grad).map(|(p, g)| p * (g - dot)).collect()
}

fn argmax(values: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    (best, values[best])
}
