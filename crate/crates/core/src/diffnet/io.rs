//! JSON weight files for sequential networks.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{
    Activation, BatchNormState, DenseParams, Layer, Network, DEFAULT_BN_EPS, DEFAULT_BN_MOMENTUM,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerFile {
    Dense {
        w: Vec<Vec<f64>>,
        b: Vec<f64>,
    },
    Batchnorm {
        gamma: Vec<f64>,
        beta: Vec<f64>,
        running_mean: Vec<f64>,
        running_var: Vec<f64>,
        #[serde(default = "default_eps")]
        eps: f64,
        #[serde(default = "default_momentum")]
        momentum: f64,
    },
    Activation {
        name: Activation,
    },
}

fn default_eps() -> f64 {
    DEFAULT_BN_EPS
}

fn default_momentum() -> f64 {
    DEFAULT_BN_MOMENTUM
}

/// `{"layers": [...], "input_dim": d, "output_shape": [...]}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkFile {
    pub layers: Vec<LayerFile>,
    pub input_dim: usize,
    pub output_shape: Vec<usize>,
}

impl NetworkFile {
    pub fn from_network(net: &Network, output_shape: Vec<usize>) -> Self {
        let layers = net
            .layers()
            .iter()
            .map(|layer| match layer {
                Layer::Dense(p) => LayerFile::Dense {
                    w: p.weight.rows().into_iter().map(|r| r.to_vec()).collect(),
                    b: p.bias.to_vec(),
                },
                Layer::BatchNorm(bn) => LayerFile::Batchnorm {
                    gamma: bn.gamma.to_vec(),
                    beta: bn.beta.to_vec(),
                    running_mean: bn.running_mean.to_vec(),
                    running_var: bn.running_var.to_vec(),
                    eps: bn.eps,
                    momentum: bn.momentum,
                },
                Layer::Activation(a) => LayerFile::Activation { name: *a },
            })
            .collect();
        Self {
            layers,
            input_dim: net.input_dim(),
            output_shape,
        }
    }

    /// Builds and validates the network; the product of `output_shape` must
    /// equal the final layer width.
    pub fn to_network(&self) -> Result<Network> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for (index, lf) in self.layers.iter().enumerate() {
            let layer_err = |message: String| Error::Layer { index, message };
            let layer = match lf {
                LayerFile::Dense { w, b } => {
                    let rows = w.len();
                    let cols = w.first().map_or(0, Vec::len);
                    if rows == 0 || cols == 0 {
                        return Err(layer_err("dense weight matrix is empty".into()));
                    }
                    if let Some(bad) = w.iter().position(|r| r.len() != cols) {
                        return Err(layer_err(format!(
                            "dense weight row {bad} has {} entries, expected {cols}",
                            w[bad].len()
                        )));
                    }
                    let weight = Array2::from_shape_vec((rows, cols), w.concat())
                        .map_err(|e| layer_err(e.to_string()))?;
                    let params = DenseParams::new(weight, Array1::from(b.clone()))
                        .map_err(|e| layer_err(e.to_string()))?;
                    Layer::Dense(params)
                }
                LayerFile::Batchnorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                    eps,
                    momentum,
                } => Layer::BatchNorm(BatchNormState {
                    gamma: Array1::from(gamma.clone()),
                    beta: Array1::from(beta.clone()),
                    running_mean: Array1::from(running_mean.clone()),
                    running_var: Array1::from(running_var.clone()),
                    eps: *eps,
                    momentum: *momentum,
                }),
                LayerFile::Activation { name } => Layer::Activation(*name),
            };
            layers.push(layer);
        }
        let net = Network::new(self.input_dim, layers)?;
        let expected: usize = self.output_shape.iter().product();
        if self.output_shape.is_empty() || expected != net.output_dim() {
            return Err(Error::mismatch(
                "network output_shape",
                net.output_dim(),
                expected,
            ));
        }
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn file_round_trip_is_lossless() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = Network::mlp(&[3, 5, 4], Activation::Tanh, &mut rng).unwrap();
        let mut layers = net.layers().to_vec();
        layers.insert(1, Layer::BatchNorm(BatchNormState::new(5)));
        net = Network::new(3, layers).unwrap();
        let file = NetworkFile::from_network(&net, vec![2, 2]);
        let text = serde_json::to_string(&file).unwrap();
        let back: NetworkFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_network().unwrap(), net);
    }

    #[test]
    fn layer_kinds_use_documented_tags() {
        let text = r#"{"layers":[{"kind":"dense","w":[[1.0,0.0],[0.0,1.0]],"b":[0.0,0.0]},
            {"kind":"batchnorm","gamma":[1,1],"beta":[0,0],"running_mean":[0,0],"running_var":[1,1]},
            {"kind":"activation","name":"tanh"}],"input_dim":2,"output_shape":[2]}"#;
        let file: NetworkFile = serde_json::from_str(text).unwrap();
        let net = file.to_network().unwrap();
        assert_eq!(net.layers().len(), 3);
    }

    #[test]
    fn mismatched_dims_name_layer() {
        let text = r#"{"layers":[{"kind":"dense","w":[[1.0,0.0]],"b":[0.0]},
            {"kind":"dense","w":[[1.0,0.0]],"b":[0.0]}],"input_dim":2,"output_shape":[1]}"#;
        let file: NetworkFile = serde_json::from_str(text).unwrap();
        let err = file.to_network().unwrap_err();
        assert!(matches!(err, Error::Layer { index: 1, .. }), "{err}");
    }

    #[test]
    fn ragged_weights_rejected() {
        let text = r#"{"layers":[{"kind":"dense","w":[[1.0,0.0],[1.0]],"b":[0.0,0.0]}],"input_dim":2,"output_shape":[2]}"#;
        let file: NetworkFile = serde_json::from_str(text).unwrap();
        assert!(matches!(
            file.to_network(),
            Err(Error::Layer { index: 0, .. })
        ));
    }
}
