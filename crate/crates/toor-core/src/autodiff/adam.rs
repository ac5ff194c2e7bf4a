//! Adam with bias correction, one state per layer stack.

use serde::{Deserialize, Serialize};

use super::layers::{LayerStack, StackGrads};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        AdamHyper {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators shaped like a stack's parameter blocks,
/// plus the step counter for bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub hyper: AdamHyper,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(stack: &LayerStack, hyper: AdamHyper) -> Self {
        let m: Vec<Vec<f64>> = stack
            .param_blocks()
            .iter()
            .map(|b| vec![0.0; b.len()])
            .collect();
        AdamState {
            hyper,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    /// One Adam update of `stack` from `grads`. `lr_scale` multiplies the
    /// base learning rate (used by decay schedules).
    pub fn apply(
        &mut self,
        stack: &mut LayerStack,
        grads: &StackGrads,
        lr_scale: f64,
    ) -> Result<()> {
        let mut blocks = stack.param_blocks_mut();
        if blocks.len() != grads.0.len() || blocks.len() != self.m.len() {
            return Err(Error::Usage(format!(
                "adam block count mismatch: params {}, grads {}, state {}",
                blocks.len(),
                grads.0.len(),
                self.m.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let AdamHyper { lr, beta1, beta2, eps } = self.hyper;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let rate = lr * lr_scale;
        for ((params, g), (m, v)) in blocks
            .iter_mut()
            .zip(&grads.0)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if params.len() != g.len() {
                return Err(Error::Usage(format!(
                    "adam shape mismatch: params {}, grads {}",
                    params.len(),
                    g.len()
                )));
            }
            for i in 0..params.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                params[i] -= rate * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Layer, Linear};

    fn one_param_stack(value: f64) -> LayerStack {
        let mut l = Linear::zeros(1, 1);
        l.weights[0] = value;
        // bias block exists too; both are exercised
        LayerStack::new(vec![Layer::Linear(l)])
    }

    fn grads(stack: &LayerStack, w: f64, b: f64) -> StackGrads {
        let mut g = StackGrads::zeros_of(stack);
        g.0[0][0] = w;
        g.0[1][0] = b;
        g
    }

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let mut stack = one_param_stack(1.5);
        let mut state = AdamState::new(&stack, AdamHyper::with_lr(0.1));
        let g = StackGrads::zeros_of(&stack);
        for _ in 0..5 {
            state.apply(&mut stack, &g, 1.0).unwrap();
        }
        assert_eq!(stack.param_blocks()[0][0], 1.5);
        assert_eq!(state.step, 5);
    }

    #[test]
    fn first_step_magnitude_is_about_lr() {
        // With bias correction, m_hat = g and v_hat = g^2, so the first
        // update is lr * g/(|g| + eps) = ~lr * sign(g).
        let mut stack = one_param_stack(0.0);
        let mut state = AdamState::new(&stack, AdamHyper::with_lr(0.01));
        let g = grads(&stack, 3.7, 0.0);
        state.apply(&mut stack, &g, 1.0).unwrap();
        let w = stack.param_blocks()[0][0];
        assert!((w + 0.01).abs() < 1e-6, "w = {w}");
    }

    #[test]
    fn repeated_identical_steps_are_not_idempotent() {
        let mut stack = one_param_stack(0.0);
        let mut state = AdamState::new(&stack, AdamHyper::with_lr(0.01));
        let g = grads(&stack, 1.0, 0.0);
        state.apply(&mut stack, &g, 1.0).unwrap();
        let after_one = stack.param_blocks()[0][0];
        state.apply(&mut stack, &g, 1.0).unwrap();
        let after_two = stack.param_blocks()[0][0];
        assert_ne!(after_one, after_two);
        assert!(after_two < after_one);
    }

    #[test]
    fn shape_mismatch_is_usage_error() {
        let mut stack = one_param_stack(0.0);
        let mut state = AdamState::new(&stack, AdamHyper::with_lr(0.01));
        let bad = StackGrads(vec![vec![0.0; 2], vec![0.0; 1]]);
        assert!(matches!(
            state.apply(&mut stack, &bad, 1.0),
            Err(Error::Usage(_))
        ));
    }
}
