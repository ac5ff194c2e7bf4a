//! Central finite-difference validation of backward-pass gradients.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::LayerStack;
use super::Mode;
use crate::error::{Error, Result};

/// Compare analytic parameter gradients against central finite differences.
///
/// `loss` maps the stack output to `(value, gradient w.r.t. the output)`.
/// Each forward pass reseeds its rng from `rng_seed`, so stochastic layers
/// (dropout, noise) draw identical masks at every evaluation and the mapping
/// stays differentiable. Returns the worst relative error over all
/// parameters; a parameter where both gradients are below 1e-6 in magnitude
/// counts as zero error.
pub fn finite_difference_check<L>(
    stack: &mut LayerStack,
    input: &[f64],
    mode: Mode,
    rng_seed: u64,
    loss: L,
    step: f64,
) -> Result<f64>
where
    L: Fn(&[f64]) -> (f64, Vec<f64>),
{
    if step <= 0.0 {
        return Err(Error::Usage(format!("step must be positive, got {step}")));
    }
    let eval = |stack: &LayerStack| -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let (out, _) = stack.forward(input, mode, &mut rng)?;
        let (value, _) = loss(&out);
        if !value.is_finite() {
            return Err(Error::Diagnostic(format!("non-finite loss {value}")));
        }
        Ok(value)
    };

    // Analytic gradients at the unperturbed point.
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let (out, tape) = stack.forward(input, mode, &mut rng)?;
    let (value, out_grad) = loss(&out);
    if !value.is_finite() {
        return Err(Error::Diagnostic(format!("non-finite loss {value}")));
    }
    let (_, analytic) = stack.backward(&tape, &out_grad)?;

    let set = |stack: &mut LayerStack, block: usize, i: usize, v: f64| {
        stack.param_blocks_mut()[block][i] = v;
    };

    let mut worst: f64 = 0.0;
    let n_blocks = analytic.0.len();
    for block_idx in 0..n_blocks {
        let block_len = analytic.0[block_idx].len();
        for i in 0..block_len {
            let original = stack.param_blocks()[block_idx][i];
            set(stack, block_idx, i, original + step);
            let plus = eval(stack)?;
            set(stack, block_idx, i, original - step);
            let minus = eval(stack)?;
            set(stack, block_idx, i, original);

            let fd = (plus - minus) / (2.0 * step);
            let an = analytic.0[block_idx][i];
            let denom = fd.abs().max(an.abs());
            if denom >= 1e-6 {
                worst = worst.max((fd - an).abs() / denom);
            }
        }
    }
    Ok(worst)
}
