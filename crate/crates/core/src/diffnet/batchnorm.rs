use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BN_EPS: f64 = 1e-5;
pub const DEFAULT_BN_MOMENTUM: f64 = 0.1;

/// Which statistics a batch-norm layer normalizes with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BatchNormMode {
    /// Mean and variance of the current batch (training-mode behaviour).
    #[default]
    BatchStats,
    /// Stored running estimates (evaluation-mode behaviour).
    RunningStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub eps: f64,
    pub momentum: f64,
}

/// Intermediates kept by a forward pass for the matching backward.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub mode: BatchNormMode,
    pub x_hat: Array2<f64>,
    pub inv_std: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormGrad {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

impl BatchNormState {
    pub fn new(features: usize) -> Self {
        Self {
            gamma: Array1::ones(features),
            beta: Array1::zeros(features),
            running_mean: Array1::zeros(features),
            running_var: Array1::ones(features),
            eps: DEFAULT_BN_EPS,
            momentum: DEFAULT_BN_MOMENTUM,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.gamma.len();
        for (name, len) in [
            ("beta", self.beta.len()),
            ("running_mean", self.running_mean.len()),
            ("running_var", self.running_var.len()),
        ] {
            if len != n {
                return Err(Error::mismatch(format!("batch-norm {name}"), n, len));
            }
        }
        if n == 0 {
            return Err(Error::InvalidParameter(
                "batch-norm with zero features".into(),
            ));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidParameter("batch-norm eps must be > 0".into()));
        }
        if !(self.momentum > 0.0 && self.momentum <= 1.0) {
            return Err(Error::InvalidParameter(
                "batch-norm momentum must be in (0, 1]".into(),
            ));
        }
        if self.running_var.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidParameter("negative running variance".into()));
        }
        let all = self
            .gamma
            .iter()
            .chain(&self.beta)
            .chain(&self.running_mean)
            .chain(&self.running_var);
        if !all.clone().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                tensor: "batch-norm parameters".into(),
            });
        }
        Ok(())
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }

    /// Pure forward; never touches the running statistics.
    pub fn forward(
        &self,
        x: &Array2<f64>,
        mode: BatchNormMode,
    ) -> Result<(Array2<f64>, BatchNormCache)> {
        self.check_input(x)?;
        let (mean, var) = match mode {
            BatchNormMode::BatchStats => batch_moments(x),
            BatchNormMode::RunningStats => (self.running_mean.clone(), self.running_var.clone()),
        };
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let x_hat = (x - &mean) * &inv_std;
        let y = &x_hat * &self.gamma + &self.beta;
        Ok((
            y,
            BatchNormCache {
                mode,
                x_hat,
                inv_std,
            },
        ))
    }

    /// Batch-stats forward that also folds the batch moments into the running
    /// estimates: `μ_D ← (1−m)μ_D + m·μ_B`, likewise for the variance.
    pub fn forward_update(&mut self, x: &Array2<f64>) -> Result<(Array2<f64>, BatchNormCache)> {
        self.check_input(x)?;
        let (mean, var) = batch_moments(x);
        let m = self.momentum;
        self.running_mean = &self.running_mean * (1.0 - m) + &mean * m;
        self.running_var = &self.running_var * (1.0 - m) + &var * m;
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let x_hat = (x - &mean) * &inv_std;
        let y = &x_hat * &self.gamma + &self.beta;
        Ok((
            y,
            BatchNormCache {
                mode: BatchNormMode::BatchStats,
                x_hat,
                inv_std,
            },
        ))
    }

    pub fn backward(
        &self,
        cache: &BatchNormCache,
        upstream: &Array2<f64>,
        mode: BatchNormMode,
        with_params: bool,
    ) -> Result<(Array2<f64>, Option<BatchNormGrad>)> {
        if cache.mode != mode {
            return Err(Error::ModeMismatch {
                forward: cache.mode,
                backward: mode,
            });
        }
        if upstream.dim() != cache.x_hat.dim() {
            return Err(Error::MissingForward(format!(
                "batch-norm upstream shape {:?} differs from cached {:?}",
                upstream.dim(),
                cache.x_hat.dim()
            )));
        }
        let d_xhat = upstream * &self.gamma;
        let grad_x = match mode {
            BatchNormMode::RunningStats => d_xhat * &cache.inv_std,
            BatchNormMode::BatchStats => {
                let n = upstream.nrows() as f64;
                let sum_d = d_xhat.sum_axis(Axis(0));
                let sum_dx = (&d_xhat * &cache.x_hat).sum_axis(Axis(0));
                let inner = d_xhat * n - &sum_d - &cache.x_hat * &sum_dx;
                inner * &(&cache.inv_std / n)
            }
        };
        let grads = with_params.then(|| BatchNormGrad {
            gamma: (upstream * &cache.x_hat).sum_axis(Axis(0)),
            beta: upstream.sum_axis(Axis(0)),
        });
        Ok((grad_x, grads))
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.nrows() == 0 {
            return Err(Error::EmptyBatch);
        }
        if x.ncols() != self.features() {
            return Err(Error::mismatch(
                "batch-norm input",
                self.features(),
                x.ncols(),
            ));
        }
        Ok(())
    }
}

/// Per-feature mean and biased variance.
fn batch_moments(x: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
    let n = x.nrows() as f64;
    let mean = x.sum_axis(Axis(0)) / n;
    let centered = x - &mean;
    let var = (&centered * &centered).sum_axis(Axis(0)) / n;
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn batch_stats_output_is_standardized() {
        let bn = BatchNormState::new(2);
        let x = array![[1.0, 10.0], [2.0, -4.0], [6.0, 3.0], [-3.0, 0.5]];
        let (y, _) = bn.forward(&x, BatchNormMode::BatchStats).unwrap();
        for col in y.columns() {
            let mean = col.mean().unwrap();
            let var = col.mapv(|v| (v - mean).powi(2)).mean().unwrap();
            assert!(mean.abs() <= 1e-9);
            assert!((var - 1.0).abs() <= bn.eps);
        }
    }

    #[test]
    fn running_stats_closed_form() {
        let mut bn = BatchNormState::new(1);
        bn.gamma = array![2.0];
        bn.beta = array![1.0];
        bn.eps = 1e-12;
        let (y, _) = bn
            .forward(&array![[1.0]], BatchNormMode::RunningStats)
            .unwrap();
        assert!((y[[0, 0]] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn running_stats_never_mutates() {
        let bn = BatchNormState::new(3);
        let before = bn.clone();
        let x = array![[0.2, 0.4, 0.9]];
        let (a, _) = bn.forward(&x, BatchNormMode::RunningStats).unwrap();
        let (b, _) = bn.forward(&x, BatchNormMode::RunningStats).unwrap();
        assert_eq!(a, b);
        assert_eq!(bn, before);
    }

    #[test]
    fn update_moves_running_stats_by_momentum() {
        let mut bn = BatchNormState::new(1);
        bn.forward_update(&array![[2.0], [4.0]]).unwrap();
        assert!((bn.running_mean[0] - 0.3).abs() < 1e-12);
        assert!((bn.running_var[0] - (0.9 + 0.1)).abs() < 1e-12);
    }

    #[test]
    fn constant_feature_gradient_is_finite() {
        let bn = BatchNormState::new(2);
        let x = array![[1.0, 2.0], [1.0, 3.0], [1.0, -1.0]];
        let (_, cache) = bn.forward(&x, BatchNormMode::BatchStats).unwrap();
        let up = array![[1.0, 0.5], [-2.0, 0.1], [0.3, 0.3]];
        let (gx, _) = bn
            .backward(&cache, &up, BatchNormMode::BatchStats, false)
            .unwrap();
        assert!(gx.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let bn = BatchNormState::new(2);
        let x = array![[1.0, 2.0], [0.0, 3.0]];
        let (_, cache) = bn.forward(&x, BatchNormMode::BatchStats).unwrap();
        let (gx, g) = bn
            .backward(
                &cache,
                &Array2::zeros((2, 2)),
                BatchNormMode::BatchStats,
                true,
            )
            .unwrap();
        let g = g.unwrap();
        assert!(gx.iter().chain(&g.gamma).chain(&g.beta).all(|&v| v == 0.0));
    }

    #[test]
    fn empty_batch_and_mode_mismatch() {
        let bn = BatchNormState::new(2);
        assert!(matches!(
            bn.forward(&Array2::zeros((0, 2)), BatchNormMode::BatchStats),
            Err(Error::EmptyBatch)
        ));
        let (_, cache) = bn
            .forward(&array![[1.0, 2.0]], BatchNormMode::RunningStats)
            .unwrap();
        assert!(matches!(
            bn.backward(
                &cache,
                &array![[1.0, 1.0]],
                BatchNormMode::BatchStats,
                false
            ),
            Err(Error::ModeMismatch { .. })
        ));
    }
}
