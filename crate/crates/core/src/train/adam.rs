use serde::{Deserialize, Serialize};

use crate::error::{RacError, Result};
use crate::lm::LMParams;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Learning-rate schedule over the total number of optimizer steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Linear,
    Constant,
}

impl Schedule {
    /// Rate for 1-based `step`; linear decays from `lr` at step 1 towards 0.
    pub fn lr_at(self, lr: f64, step: u64, total_steps: u64) -> f64 {
        match self {
            Schedule::Constant => lr,
            Schedule::Linear => {
                let total = total_steps.max(1) as f64;
                lr * (1.0 - (step.saturating_sub(1)) as f64 / total)
            }
        }
    }
}

/// Adam moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    m: LMParams,
    v: LMParams,
    step: u64,
}

impl Adam {
    pub fn new(params: &LMParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update with learning rate `lr`. Rejects non-finite
    /// gradients before touching any state.
    pub fn step(&mut self, params: &mut LMParams, grads: &LMParams, lr: f64) -> Result<()> {
        if let Err(RacError::NonFinite(name)) = grads.check_finite() {
            return Err(RacError::NonFinite(format!("gradient of `{name}`")));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for (((p, g), m), v) in params
            .tensors
            .iter_mut()
            .zip(&grads.tensors)
            .zip(&mut self.m.tensors)
            .zip(&mut self.v.tensors)
        {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = BETA1 * m.data[i] + (1.0 - BETA1) * gi;
                v.data[i] = BETA2 * v.data[i] + (1.0 - BETA2) * gi * gi;
                let mhat = m.data[i] / c1;
                let vhat = v.data[i] / c2;
                p.data[i] -= lr * mhat / (vhat.sqrt() + EPSILON);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{init_params, LMConfig};

    fn params() -> LMParams {
        init_params(&LMConfig {
            vocab_size: 8,
            d_model: 4,
            n_layers: 1,
            n_heads: 1,
            context_len: 8,
            seed: 0,
        })
        .unwrap()
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = params();
        let before = p.clone();
        let g = p.zeros_like();
        let mut opt = Adam::new(&p);
        opt.step(&mut p, &g, 0.1).unwrap();
        assert!(p.bit_eq(&before));
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = params();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.tensors[0].data[0] = 1.0;
        let mut opt = Adam::new(&p);
        opt.step(&mut p, &g, 0.01).unwrap();
        let moved = before.tensors[0].data[0] - p.tensors[0].data[0];
        // mhat = 1, vhat = 1 after bias correction
        assert!((moved - 0.01 / (1.0 + EPSILON)).abs() < 1e-15);
    }

    #[test]
    fn nan_names_the_tensor() {
        let mut p = params();
        let mut g = p.zeros_like();
        g.tensors[3].data[1] = f64::NAN;
        let name = g.tensors[3].name.clone();
        let err = Adam::new(&p).step(&mut p, &g, 0.1).unwrap_err();
        assert!(err.to_string().contains(&name), "{err}");
    }

    #[test]
    fn linear_schedule_endpoints() {
        assert_eq!(Schedule::Linear.lr_at(1.0, 1, 4), 1.0);
        assert_eq!(Schedule::Linear.lr_at(1.0, 3, 4), 0.5);
        assert_eq!(Schedule::Linear.lr_at(1.0, 4, 4), 0.25);
        assert_eq!(Schedule::Constant.lr_at(0.3, 9, 4), 0.3);
    }
}
