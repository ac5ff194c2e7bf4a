//! The weighted adversarial recycling game and its ramp-up schedules.
//!
//! The discriminator is trained toward ID examples scoring 1 and OOD
//! examples scoring 0; the gradient reversal layer at its input turns that
//! minimization into a maximization for the feature extractor, scaled by the
//! flip coefficient.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{weighted_binary_cross_entropy, Mode, StackGrads};
use crate::error::{Error, Result};
use crate::exec;
use crate::net::{discriminate, feature_extract, ModelBundle};

/// `exp(-5 (1 - min(iter/horizon, 1))^2)`: 0.0067 at 0, exactly 1 from the
/// horizon on.
pub fn lambda_schedule(iter: u64, horizon: u64) -> f64 {
    assert!(horizon > 0, "ramp horizon must be positive");
    let ratio = (iter as f64 / horizon as f64).min(1.0);
    (-5.0 * (1.0 - ratio) * (1.0 - ratio)).exp()
}

/// Same ramp shape as [`lambda_schedule`] with its own (longer) horizon.
pub fn gamma_schedule(iter: u64, horizon: u64) -> f64 {
    lambda_schedule(iter, horizon)
}

/// `2 / (1 + exp(-10 (iter - pretrain_iter) / scale)) - 1`, zero through the
/// end of pretraining, asymptotically approaching 1.
pub fn flip_coefficient(iter: u64, pretrain_iter: u64, scale: u64) -> f64 {
    assert!(scale > 0, "flip scale must be positive");
    if iter < pretrain_iter {
        return 0.0;
    }
    let progress = (iter - pretrain_iter) as f64 / scale as f64;
    2.0 / (1.0 + (-10.0 * progress).exp()) - 1.0
}

/// Ramp horizons, expressed in iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleConfig {
    pub pretrain_iter: u64,
    pub lambda_horizon: u64,
    pub gamma_horizon: u64,
    pub flip_scale: u64,
}

/// The three ramp values at one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleState {
    pub iter: u64,
    pub lambda: f64,
    pub gamma: f64,
    pub kappa: f64,
}

impl ScheduleConfig {
    pub fn at(&self, iter: u64) -> ScheduleState {
        ScheduleState {
            iter,
            lambda: lambda_schedule(iter, self.lambda_horizon),
            gamma: gamma_schedule(iter, self.gamma_horizon),
            kappa: flip_coefficient(iter, self.pretrain_iter, self.flip_scale),
        }
    }
}

/// Weighted discriminator loss over one OOD mini-batch (target 0, weighted
/// by transferability) and one ID mini-batch (target 1, unweighted), each
/// averaged within its side. Returns the loss, the gradients into the
/// discriminator, and the (sign-reversed via the GRL) gradients into the
/// extractor.
///
/// An empty side contributes nothing; both sides empty is a no-op.
/// `rng_for(slot)` supplies the dropout stream of batch slot `slot`, with
/// OOD examples first.
pub fn adversarial_batch_loss<R>(
    bundle: &ModelBundle,
    ood_batch: &[(&[f64], f64)],
    id_batch: &[&[f64]],
    kappa: f64,
    rng_for: R,
) -> Result<(f64, StackGrads, StackGrads)>
where
    R: Fn(usize) -> ChaCha8Rng + Sync + Send,
{
    if ood_batch.is_empty() && id_batch.is_empty() {
        return Ok((
            0.0,
            StackGrads::zeros_of(&bundle.discriminator),
            StackGrads::zeros_of(&bundle.extractor),
        ));
    }
    if ood_batch.iter().any(|(_, w)| *w < 0.0) {
        return Err(Error::Usage("negative transferability weight".into()));
    }

    let n_ood = ood_batch.len();
    let total = n_ood + id_batch.len();
    // (input, effective BCE weight, target)
    let item = |slot: usize| -> (&[f64], f64, bool) {
        if slot < n_ood {
            let (x, w) = ood_batch[slot];
            (x, w / n_ood as f64, false)
        } else {
            (id_batch[slot - n_ood], 1.0 / id_batch.len() as f64, true)
        }
    };

    let (loss, d_grads, f_grads) = exec::try_fold_chunks(
        total,
        || {
            (
                0.0f64,
                StackGrads::zeros_of(&bundle.discriminator),
                StackGrads::zeros_of(&bundle.extractor),
            )
        },
        |acc, slot| {
            let (x, weight, target) = item(slot);
            let mut rng = rng_for(slot);
            let (feature, tape_f) = feature_extract(bundle, x, Mode::Train, &mut rng)?;
            let (prob, tape_d) = discriminate(bundle, &feature, kappa, Mode::Train, &mut rng)?;
            let (loss_i, dprob) = weighted_binary_cross_entropy(prob, target, weight)?;
            let dfeature = bundle
                .discriminator
                .backward_into(&tape_d, &[dprob], &mut acc.1, 1.0)?;
            // dfeature already carries the -kappa factor from the GRL.
            bundle
                .extractor
                .backward_into(&tape_f, &dfeature, &mut acc.2, 1.0)?;
            acc.0 += loss_i;
            Ok(())
        },
        |a, b| {
            a.0 += b.0;
            a.1.add_scaled(&b.1, 1.0);
            a.2.add_scaled(&b.2, 1.0);
        },
    )?;
    Ok((loss, d_grads, f_grads))
}
