//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// One named parameter block and its gradient, as handed to the optimizer.
pub struct ParamBlock<'a> {
    pub name: String,
    pub value: &'a mut [f32],
    pub grad: &'a [f32],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn lr(&self) -> f32 {
        self.config.lr
    }

    pub fn set_lr(&mut self, lr: f32) {
        self.config.lr = lr;
    }

    /// Moment accumulator lengths, one per parameter block.
    pub fn moment_shapes(&self) -> Vec<usize> {
        self.first.iter().map(Vec::len).collect()
    }

    /// Apply one update. Fails without touching any parameter if a gradient
    /// is non-finite or the block layout changed since the first step.
    pub fn step(&mut self, blocks: &mut [ParamBlock<'_>]) -> Result<()> {
        for b in blocks.iter() {
            if b.value.len() != b.grad.len() {
                shape_err!(
                    "parameter block '{}' has {} values but {} gradients",
                    b.name,
                    b.value.len(),
                    b.grad.len()
                );
            }
            if let Some(i) = b.grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of parameter block '{}' at index {i} is {}",
                    b.name, b.grad[i]
                )));
            }
        }
        if self.first.is_empty() {
            self.first = blocks.iter().map(|b| vec![0.0; b.value.len()]).collect();
            self.second = self.first.clone();
        } else if self.first.len() != blocks.len()
            || self
                .first
                .iter()
                .zip(blocks.iter())
                .any(|(m, b)| m.len() != b.value.len())
        {
            shape_err!("parameter blocks do not match the optimizer's accumulators");
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - f64::from(beta1).powi(t);
        let bc2 = 1.0 - f64::from(beta2).powi(t);
        let step_size = (f64::from(lr) / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;

        for ((b, m), v) in blocks.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            for (((p, &g), m), v) in b
                .value
                .iter_mut()
                .zip(b.grad)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= step_size * *m / (v.sqrt() / bc2_sqrt + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = [0.0f32];
        let g = [1.0f32];
        let mut adam = AdamState::new(AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        });
        adam.step(&mut [ParamBlock {
            name: "p".into(),
            value: &mut p,
            grad: &g,
        }])
        .unwrap();
        // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
        assert!((p[0] + 0.1).abs() < 1e-6, "{}", p[0]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn zero_grad_leaves_params() {
        let mut p = [0.5f32, -0.25];
        let g = [0.0f32; 2];
        let mut adam = AdamState::new(AdamConfig::default());
        for _ in 0..3 {
            adam.step(&mut [ParamBlock {
                name: "p".into(),
                value: &mut p,
                grad: &g,
            }])
            .unwrap();
        }
        assert_eq!(p, [0.5, -0.25]);
        assert_eq!(adam.step_count(), 3);
        assert_eq!(adam.moment_shapes(), vec![2]);
    }

    #[test]
    fn identical_blocks_update_identically() {
        let mut a = [0.1f32, 0.2, 0.3];
        let mut b = a;
        let g = [0.3f32, -1.0, 2.0];
        let mut adam = AdamState::new(AdamConfig::default());
        for _ in 0..5 {
            adam.step(&mut [
                ParamBlock {
                    name: "a".into(),
                    value: &mut a,
                    grad: &g,
                },
                ParamBlock {
                    name: "b".into(),
                    value: &mut b,
                    grad: &g,
                },
            ])
            .unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_gradient_names_block() {
        let mut p = [0.0f32; 2];
        let g = [0.0f32, f32::NAN];
        let mut adam = AdamState::new(AdamConfig::default());
        let err = adam
            .step(&mut [ParamBlock {
                name: "enc0.weight".into(),
                value: &mut p,
                grad: &g,
            }])
            .unwrap_err();
        assert!(err.to_string().contains("enc0.weight"), "{err}");
        assert_eq!(adam.step_count(), 0);
    }
}
