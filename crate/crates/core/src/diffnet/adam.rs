use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "invalid Adam settings {self:?}"
            )))
        }
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    name: String,
    config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(name: impl Into<String>, len: usize, config: AdamConfig) -> Self {
        Self {
            name: name.into(),
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn reset(&mut self) {
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
        self.t = 0;
    }

    /// Bias-corrected Adam update. Parameters are left untouched on error.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::mismatch(
                format!("adam params for {}", self.name),
                self.m.len(),
                params.len(),
            ));
        }
        if grads.len() != self.m.len() {
            return Err(Error::mismatch(
                format!("adam grads for {}", self.name),
                self.m.len(),
                grads.len(),
            ));
        }
        if !grads.iter().all(|g| g.is_finite()) {
            return Err(Error::NonFinite {
                tensor: self.name.clone(),
            });
        }
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_reference(steps: usize, g: f64, cfg: AdamConfig) -> f64 {
        let (mut theta, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=steps {
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let mh = m / (1.0 - cfg.beta1.powi(t as i32));
            let vh = v / (1.0 - cfg.beta2.powi(t as i32));
            theta -= cfg.learning_rate * mh / (vh.sqrt() + cfg.eps);
        }
        theta
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamConfig::with_learning_rate(0.1);
        let mut state = AdamState::new("theta", 1, cfg);
        let mut p = [0.0];
        state.step(&mut p, &[1.0]).unwrap();
        assert!((p[0] + 0.1).abs() <= 1e-6);
        assert_eq!(state.steps(), 1);
    }

    #[test]
    fn two_steps_match_scalar_trace() {
        let cfg = AdamConfig::with_learning_rate(0.1);
        let mut state = AdamState::new("theta", 1, cfg);
        let mut p = [0.0];
        state.step(&mut p, &[0.7]).unwrap();
        state.step(&mut p, &[0.7]).unwrap();
        assert!((p[0] - scalar_reference(2, 0.7, cfg)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut state = AdamState::new("w", 3, AdamConfig::default());
        let mut p = [0.5, -1.0, 2.0];
        for _ in 0..50 {
            state.step(&mut p, &[0.0; 3]).unwrap();
        }
        assert_eq!(p, [0.5, -1.0, 2.0]);
    }

    #[test]
    fn non_finite_gradient_names_tensor() {
        let mut state = AdamState::new("layer 3 weight", 2, AdamConfig::default());
        let mut p = [1.0, 1.0];
        let err = state.step(&mut p, &[0.0, f64::NAN]).unwrap_err();
        assert!(err.to_string().contains("layer 3 weight"));
        assert_eq!(p, [1.0, 1.0]);
    }
}
