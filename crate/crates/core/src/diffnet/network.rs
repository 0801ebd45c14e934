use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{
    Activation, AdamConfig, AdamState, BatchNormCache, BatchNormGrad, BatchNormMode,
    BatchNormState, DenseGrad, DenseParams,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(DenseParams),
    BatchNorm(BatchNormState),
    Activation(Activation),
}

/// Architecture-only view of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Dense { in_dim: usize, out_dim: usize },
    BatchNorm { dim: usize },
    Activation(Activation),
}

impl Layer {
    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Dense(p) => LayerSpec::Dense {
                in_dim: p.in_dim(),
                out_dim: p.out_dim(),
            },
            Layer::BatchNorm(bn) => LayerSpec::BatchNorm { dim: bn.features() },
            Layer::Activation(a) => LayerSpec::Activation(*a),
        }
    }

    /// `(in, out)` dims; `None` for shape-preserving activations.
    fn dims(&self) -> Option<(usize, usize)> {
        match self {
            Layer::Dense(p) => Some((p.in_dim(), p.out_dim())),
            Layer::BatchNorm(bn) => Some((bn.features(), bn.features())),
            Layer::Activation(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerGrad {
    Dense(DenseGrad),
    BatchNorm(BatchNormGrad),
    None,
}

#[derive(Debug, Clone)]
enum LayerCache {
    Plain,
    BatchNorm(BatchNormCache),
}

/// Activations recorded by [`Network::forward_traced`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    mode: BatchNormMode,
    inputs: Vec<Array2<f64>>,
    caches: Vec<LayerCache>,
    output: Array2<f64>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn mode(&self) -> BatchNormMode {
        self.mode
    }
}

#[derive(Debug, Clone)]
pub struct NetworkGrad {
    pub input: Array2<f64>,
    pub params: Option<Vec<LayerGrad>>,
}

/// A sequential stack of dense, batch-norm and activation layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    input_dim: usize,
    output_dim: usize,
}

impl Network {
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidParameter(
                "network input_dim must be >= 1".into(),
            ));
        }
        let mut dim = input_dim;
        for (index, layer) in layers.iter().enumerate() {
            if let Layer::BatchNorm(bn) = layer {
                bn.validate().map_err(|e| Error::Layer {
                    index,
                    message: e.to_string(),
                })?;
            }
            if let Some((i, o)) = layer.dims() {
                if i != dim {
                    return Err(Error::Layer {
                        index,
                        message: format!("expects input dim {i}, previous layer produces {dim}"),
                    });
                }
                dim = o;
            }
        }
        Ok(Self {
            layers,
            input_dim,
            output_dim: dim,
        })
    }

    /// Dense layers with Xavier-scaled normal weights, `hidden` activations
    /// between them and no activation after the last layer.
    pub fn mlp<R: Rng + ?Sized>(dims: &[usize], hidden: Activation, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidParameter(
                "mlp needs at least input and output dims".into(),
            ));
        }
        let mut layers = Vec::new();
        for (k, pair) in dims.windows(2).enumerate() {
            layers.push(Layer::Dense(random_dense(pair[0], pair[1], rng)));
            if k + 2 < dims.len() {
                layers.push(Layer::Activation(hidden));
            }
        }
        Self::new(dims[0], layers)
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            layers: Vec::new(),
            input_dim: dim,
            output_dim: dim,
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn has_batchnorm(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, Layer::BatchNorm(_)))
    }

    pub fn forward(&self, x: &Array2<f64>, mode: BatchNormMode) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for (index, layer) in self.layers.iter().enumerate() {
            h = match layer {
                Layer::Dense(p) => p.forward(&h),
                Layer::BatchNorm(bn) => bn.forward(&h, mode).map(|(y, _)| y),
                Layer::Activation(a) => Ok(a.forward(&h)),
            }
            .map_err(|e| Error::Layer {
                index,
                message: e.to_string(),
            })?;
        }
        Ok(h)
    }

    /// Training-mode forward: batch statistics, running estimates updated.
    pub fn forward_train(&mut self, x: &Array2<f64>) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (index, layer) in self.layers.iter_mut().enumerate() {
            let next = match layer {
                Layer::Dense(p) => p.forward(&h).map(|y| (y, LayerCache::Plain)),
                Layer::BatchNorm(bn) => bn
                    .forward_update(&h)
                    .map(|(y, c)| (y, LayerCache::BatchNorm(c))),
                Layer::Activation(a) => Ok((a.forward(&h), LayerCache::Plain)),
            }
            .map_err(|e| Error::Layer {
                index,
                message: e.to_string(),
            })?;
            inputs.push(std::mem::replace(&mut h, next.0));
            caches.push(next.1);
        }
        Ok(ForwardTrace {
            mode: BatchNormMode::BatchStats,
            inputs,
            caches,
            output: h,
        })
    }

    pub fn forward_traced(&self, x: &Array2<f64>, mode: BatchNormMode) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (index, layer) in self.layers.iter().enumerate() {
            let next = match layer {
                Layer::Dense(p) => p.forward(&h).map(|y| (y, LayerCache::Plain)),
                Layer::BatchNorm(bn) => bn
                    .forward(&h, mode)
                    .map(|(y, c)| (y, LayerCache::BatchNorm(c))),
                Layer::Activation(a) => Ok((a.forward(&h), LayerCache::Plain)),
            }
            .map_err(|e| Error::Layer {
                index,
                message: e.to_string(),
            })?;
            inputs.push(std::mem::replace(&mut h, next.0));
            caches.push(next.1);
        }
        Ok(ForwardTrace {
            mode,
            inputs,
            caches,
            output: h,
        })
    }

    /// Reverse pass through a trace produced by this network. Parameter
    /// gradients are skipped when `with_params` is false (frozen network).
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        upstream: &Array2<f64>,
        with_params: bool,
    ) -> Result<NetworkGrad> {
        if trace.inputs.len() != self.layers.len() {
            return Err(Error::MissingForward(format!(
                "trace has {} layers, network has {}",
                trace.inputs.len(),
                self.layers.len()
            )));
        }
        if upstream.dim() != trace.output.dim() {
            return Err(Error::MissingForward(format!(
                "upstream shape {:?} differs from forward output {:?}",
                upstream.dim(),
                trace.output.dim()
            )));
        }
        let mut grad = upstream.clone();
        let mut param_grads = with_params.then(|| vec![LayerGrad::None; self.layers.len()]);
        for index in (0..self.layers.len()).rev() {
            let x = &trace.inputs[index];
            let y = trace.inputs.get(index + 1).unwrap_or(&trace.output);
            let wrap = |e: Error| Error::Layer {
                index,
                message: e.to_string(),
            };
            let (gx, lg) = match (&self.layers[index], &trace.caches[index]) {
                (Layer::Dense(p), LayerCache::Plain) => {
                    let (gx, g) = p.backward(x, &grad, with_params).map_err(wrap)?;
                    (gx, g.map(LayerGrad::Dense))
                }
                (Layer::BatchNorm(bn), LayerCache::BatchNorm(cache)) => {
                    let (gx, g) = bn
                        .backward(cache, &grad, trace.mode, with_params)
                        .map_err(wrap)?;
                    (gx, g.map(LayerGrad::BatchNorm))
                }
                (Layer::Activation(a), LayerCache::Plain) => (a.backward(x, y, &grad), None),
                _ => {
                    return Err(Error::MissingForward(format!(
                        "layer {index} cache does not match its kind"
                    )))
                }
            };
            if let (Some(pg), Some(lg)) = (param_grads.as_mut(), lg) {
                pg[index] = lg;
            }
            grad = gx;
        }
        Ok(NetworkGrad {
            input: grad,
            params: param_grads,
        })
    }

    /// Forward then backward on the same input.
    pub fn grad(
        &self,
        x: &Array2<f64>,
        upstream: &Array2<f64>,
        mode: BatchNormMode,
        with_params: bool,
    ) -> Result<NetworkGrad> {
        let trace = self.forward_traced(x, mode)?;
        self.backward(&trace, upstream, with_params)
    }

    /// Named parameter tensors in layer order, flattened row-major.
    pub fn param_tensors(&self) -> Vec<(String, Vec<f64>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Dense(p) => {
                    out.push((
                        format!("layer {i} weight"),
                        p.weight.iter().copied().collect(),
                    ));
                    out.push((format!("layer {i} bias"), p.bias.to_vec()));
                }
                Layer::BatchNorm(bn) => {
                    out.push((format!("layer {i} gamma"), bn.gamma.to_vec()));
                    out.push((format!("layer {i} beta"), bn.beta.to_vec()));
                }
                Layer::Activation(_) => {}
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.param_tensors()
            .into_iter()
            .flat_map(|(_, t)| t)
            .collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.param_count();
        if flat.len() != expected {
            return Err(Error::mismatch("flat parameters", expected, flat.len()));
        }
        let mut cursor = flat;
        let mut take = |dst: &mut dyn Iterator<Item = &mut f64>| {
            for d in dst {
                *d = cursor[0];
                cursor = &cursor[1..];
            }
        };
        for layer in &mut self.layers {
            match layer {
                Layer::Dense(p) => {
                    take(&mut p.weight.iter_mut());
                    take(&mut p.bias.iter_mut());
                }
                Layer::BatchNorm(bn) => {
                    take(&mut bn.gamma.iter_mut());
                    take(&mut bn.beta.iter_mut());
                }
                Layer::Activation(_) => {}
            }
        }
        Ok(())
    }

    pub fn add_scaled_grads(acc: &mut [LayerGrad], other: &[LayerGrad], scale: f64) {
        for (a, b) in acc.iter_mut().zip(other) {
            match (a, b) {
                (LayerGrad::Dense(a), LayerGrad::Dense(b)) => {
                    a.weight.scaled_add(scale, &b.weight);
                    a.bias.scaled_add(scale, &b.bias);
                }
                (LayerGrad::BatchNorm(a), LayerGrad::BatchNorm(b)) => {
                    a.gamma.scaled_add(scale, &b.gamma);
                    a.beta.scaled_add(scale, &b.beta);
                }
                (a @ LayerGrad::None, b) => *a = scale_grad(b, scale),
                _ => {}
            }
        }
    }

    /// Flattens gradients in the same order as [`Network::flat_params`].
    pub fn flat_grads(&self, grads: &[LayerGrad]) -> Result<Vec<f64>> {
        if grads.len() != self.layers.len() {
            return Err(Error::mismatch(
                "layer gradients",
                self.layers.len(),
                grads.len(),
            ));
        }
        let mut out = Vec::with_capacity(self.param_count());
        for (index, (layer, g)) in self.layers.iter().zip(grads).enumerate() {
            match (layer, g) {
                (Layer::Dense(_), LayerGrad::Dense(g)) => {
                    out.extend(g.weight.iter());
                    out.extend(g.bias.iter());
                }
                (Layer::BatchNorm(_), LayerGrad::BatchNorm(g)) => {
                    out.extend(g.gamma.iter());
                    out.extend(g.beta.iter());
                }
                (Layer::Activation(_), LayerGrad::None) => {}
                _ => {
                    return Err(Error::Layer {
                        index,
                        message: "gradient kind does not match layer".into(),
                    })
                }
            }
        }
        Ok(out)
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.nrows() == 0 {
            return Err(Error::EmptyBatch);
        }
        if x.ncols() != self.input_dim {
            return Err(Error::mismatch("network input", self.input_dim, x.ncols()));
        }
        Ok(())
    }
}

fn scale_grad(g: &LayerGrad, scale: f64) -> LayerGrad {
    match g {
        LayerGrad::Dense(g) => LayerGrad::Dense(DenseGrad {
            weight: &g.weight * scale,
            bias: &g.bias * scale,
        }),
        LayerGrad::BatchNorm(g) => LayerGrad::BatchNorm(BatchNormGrad {
            gamma: &g.gamma * scale,
            beta: &g.beta * scale,
        }),
        LayerGrad::None => LayerGrad::None,
    }
}

pub fn random_dense<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> DenseParams {
    let std = (2.0 / (in_dim + out_dim) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    DenseParams {
        weight: Array2::from_shape_fn((out_dim, in_dim), |_| normal.sample(rng)),
        bias: Array1::zeros(out_dim),
    }
}

/// One Adam state per parameter tensor, named after its layer.
#[derive(Debug, Clone)]
pub struct NetworkOptimizer {
    states: Vec<AdamState>,
}

impl NetworkOptimizer {
    pub fn new(net: &Network, config: AdamConfig) -> Self {
        Self {
            states: net
                .param_tensors()
                .into_iter()
                .map(|(name, t)| AdamState::new(name, t.len(), config))
                .collect(),
        }
    }

    /// Applies one update to every tensor; all gradients are checked first so
    /// a non-finite tensor leaves the network unchanged.
    pub fn step(&mut self, net: &mut Network, grads: &[LayerGrad]) -> Result<()> {
        let flat_grads = net.flat_grads(grads)?;
        let tensors = net.param_tensors();
        let mut offset = 0;
        for (name, t) in &tensors {
            let g = &flat_grads[offset..offset + t.len()];
            if !g.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite {
                    tensor: name.clone(),
                });
            }
            offset += t.len();
        }
        let mut flat = net.flat_params();
        let mut offset = 0;
        for (state, (_, t)) in self.states.iter_mut().zip(&tensors) {
            let range = offset..offset + t.len();
            state.step(&mut flat[range.clone()], &flat_grads[range])?;
            offset += t.len();
        }
        net.set_flat_params(&flat)
    }
}
