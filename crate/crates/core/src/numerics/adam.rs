use serde::{Deserialize, Serialize};

use super::{NumericsError, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for a fixed list of parameters.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|p| Tensor::zeros(p.rows(), p.cols()))
                .collect()
        };
        Self {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one bias-corrected Adam update. Parameters are left untouched
    /// when any gradient is non-finite.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<(), NumericsError> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(NumericsError::Shape {
                op: "adam_step",
                detail: format!(
                    "{} parameters, {} gradients, state for {}",
                    params.len(),
                    grads.len(),
                    self.first.len()
                ),
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first[i].shape() {
                return Err(NumericsError::Shape {
                    op: "adam_step",
                    detail: format!("parameter {i}: {:?} vs gradient {:?}", p.shape(), g.shape()),
                });
            }
            if let Some(k) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(NumericsError::NonFinite {
                    what: format!(
                        "gradient entry {k} of parameter {i} at step {}",
                        self.step + 1
                    ),
                });
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((w, &gk), mk), vk) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mk = beta1 * *mk + (1.0 - beta1) * gk;
                *vk = beta2 * *vk + (1.0 - beta2) * gk * gk;
                let m_hat = *mk / c1;
                let v_hat = *vk / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut params = vec![Tensor::from_rows(&[[1.0, -2.0]]).unwrap()];
        let before = params.clone();
        let mut st = AdamState::new(AdamConfig::default(), &params);
        for _ in 0..5 {
            st.step(&mut params, &[Tensor::zeros(1, 2)]).unwrap();
        }
        assert_eq!(params, before);
    }

    #[test]
    fn step_count_increments_by_one() {
        let mut params = vec![Tensor::zeros(2, 2)];
        let mut st = AdamState::new(AdamConfig::default(), &params);
        for k in 1..=3 {
            st.step(&mut params, &[Tensor::filled(2, 2, 0.1)]).unwrap();
            assert_eq!(st.step_count(), k);
        }
    }

    #[test]
    fn constant_gradient_update_approaches_lr() {
        // With a constant gradient g the bias-corrected moments are exactly g
        // and g^2, so each step moves by lr * |g| / (|g| + eps).
        let cfg = AdamConfig::default();
        let g = 0.37;
        let mut params = vec![Tensor::scalar(0.0)];
        let mut st = AdamState::new(cfg, &params);
        let mut prev = 0.0;
        for _ in 0..200 {
            st.step(&mut params, &[Tensor::scalar(g)]).unwrap();
            let now = params[0].item().unwrap();
            let delta = prev - now;
            let expect = cfg.lr * g / (g + cfg.eps);
            assert!((delta - expect).abs() < 1e-12, "{delta} vs {expect}");
            prev = now;
        }
    }

    #[test]
    fn nan_gradient_aborts() {
        let mut params = vec![Tensor::scalar(1.0)];
        let mut st = AdamState::new(AdamConfig::default(), &params);
        let err = st
            .step(&mut params, &[Tensor::scalar(f64::NAN)])
            .unwrap_err();
        assert!(err.to_string().contains("parameter 0"));
        assert_eq!(params[0].item().unwrap(), 1.0);
        assert_eq!(st.step_count(), 0);
    }
}
