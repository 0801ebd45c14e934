use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};

/// Weights (`out_dim × in_dim`) and bias of a fully connected layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseParams {
    pub fn new(weight: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if weight.nrows() != bias.len() {
            return Err(Error::mismatch("dense bias", weight.nrows(), bias.len()));
        }
        if weight.ncols() == 0 || weight.nrows() == 0 {
            return Err(Error::InvalidParameter(
                "dense layer with a zero dimension".into(),
            ));
        }
        if !weight.iter().chain(bias.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                tensor: "dense parameters".into(),
            });
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    /// `y = x Wᵀ + b` for each row of `x`.
    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.in_dim() {
            return Err(Error::mismatch("dense input", self.in_dim(), x.ncols()));
        }
        Ok(x.dot(&self.weight.t()) + &self.bias)
    }

    /// Returns `grad_x` and, when `with_params` is set, the parameter gradients.
    pub fn backward(
        &self,
        x: &Array2<f64>,
        upstream: &Array2<f64>,
        with_params: bool,
    ) -> Result<(Array2<f64>, Option<DenseGrad>)> {
        if x.ncols() != self.in_dim() {
            return Err(Error::mismatch("dense input", self.in_dim(), x.ncols()));
        }
        if upstream.ncols() != self.out_dim() {
            return Err(Error::mismatch(
                "dense upstream",
                self.out_dim(),
                upstream.ncols(),
            ));
        }
        if upstream.nrows() != x.nrows() {
            return Err(Error::mismatch("dense batch", x.nrows(), upstream.nrows()));
        }
        let grad_x = upstream.dot(&self.weight);
        let grads = with_params.then(|| DenseGrad {
            weight: upstream.t().dot(x),
            bias: upstream.sum_axis(Axis(0)),
        });
        Ok((grad_x, grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identity_weights_pass_input_through() {
        let layer = DenseParams::new(Array2::eye(2), Array1::zeros(2)).unwrap();
        let y = layer.forward(&array![[3.0, 4.0]]).unwrap();
        assert_eq!(y, array![[3.0, 4.0]]);
    }

    #[test]
    fn hand_computed_affine_map() {
        let layer = DenseParams::new(array![[1.0, 2.0], [0.0, 1.0]], array![1.0, 0.0]).unwrap();
        let y = layer.forward(&array![[1.0, 1.0]]).unwrap();
        assert_eq!(y, array![[4.0, 1.0]]);
    }

    #[test]
    fn zero_weights_yield_bias() {
        let layer = DenseParams::new(Array2::zeros((1, 3)), array![5.0]).unwrap();
        let y = layer.forward(&array![[0.3, -2.0, 7.0]]).unwrap();
        assert_eq!(y, array![[5.0]]);
    }

    #[test]
    fn backward_identity_and_zero_upstream() {
        let layer = DenseParams::new(Array2::eye(2), Array1::zeros(2)).unwrap();
        let x = array![[0.5, -1.0]];
        let (gx, _) = layer.backward(&x, &array![[1.0, 0.0]], false).unwrap();
        assert_eq!(gx, array![[1.0, 0.0]]);

        let (gx, g) = layer.backward(&x, &array![[0.0, 0.0]], true).unwrap();
        let g = g.unwrap();
        assert!(gx
            .iter()
            .chain(g.weight.iter())
            .chain(g.bias.iter())
            .all(|&v| v == 0.0));
    }

    #[test]
    fn shape_errors() {
        let layer = DenseParams::zeros(3, 2);
        assert!(matches!(
            layer.forward(&array![[1.0, 2.0]]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(DenseParams::new(Array2::zeros((2, 2)), Array1::zeros(3)).is_err());
    }
}
