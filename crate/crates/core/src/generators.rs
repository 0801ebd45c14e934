//! Differentiable generators mapping latent vectors to images.
//!
//! Two variants are provided. [`BlobGenerator`] renders soft discs whose
//! centre, radius and intensity are smooth functions of the latent vector, so
//! its range is known exactly and every image on it can be recovered by
//! latent optimization. [`MlpGenerator`] wraps a dense [`Network`] followed by
//! a sigmoid and is loaded from a weight file (or distilled from a blob
//! generator with [`distill_mlp`]).

use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffnet::{
    sigmoid, Activation, AdamConfig, BatchNormMode, BatchNormState, ForwardTrace, Layer, Network,
    NetworkFile, NetworkOptimizer,
};
use crate::error::{Error, Result};
use crate::image::Image;

/// Smoothing added under the square root of the pixel-to-centre distance so
/// the gradient stays finite when a centre lands exactly on a pixel.
const DIST_SMOOTHING: f64 = 1e-3;
const PARAMS_PER_BLOB: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct BlobGenerator {
    blobs: usize,
    sharpness: f64,
    height: usize,
    width: usize,
}

/// Geometry of one rendered blob.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobParams {
    pub center_x: f64,
    pub center_y: f64,
    pub radius: f64,
    pub intensity: f64,
}

impl BlobParams {
    /// Visual weight used to decide which blob dominates an image.
    pub fn mass(&self) -> f64 {
        self.intensity * self.radius * self.radius
    }
}

impl BlobGenerator {
    pub fn new(blobs: usize, sharpness: f64, height: usize, width: usize) -> Result<Self> {
        if blobs == 0 {
            return Err(Error::InvalidParameter(
                "blob generator needs at least one blob".into(),
            ));
        }
        if !(sharpness > 0.0 && sharpness.is_finite()) {
            return Err(Error::InvalidParameter(
                "blob sharpness must be positive".into(),
            ));
        }
        if height == 0 || width == 0 {
            return Err(Error::InvalidParameter(
                "blob generator shape has a zero side".into(),
            ));
        }
        Ok(Self {
            blobs,
            sharpness,
            height,
            width,
        })
    }

    pub fn blobs(&self) -> usize {
        self.blobs
    }

    pub fn sharpness(&self) -> f64 {
        self.sharpness
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn latent_dim(&self) -> usize {
        self.blobs * PARAMS_PER_BLOB
    }

    fn radius_range(&self) -> (f64, f64) {
        let side = self.height.min(self.width) as f64;
        (side / 10.0, side / 4.0)
    }

    /// Blob geometry for latent `z`; block `k` of four coordinates drives
    /// blob `k` as (centre x, centre y, radius, intensity), each squashed by tanh.
    pub fn blob_params(&self, z: &[f64]) -> Vec<BlobParams> {
        let (r_lo, r_hi) = self.radius_range();
        z.chunks_exact(PARAMS_PER_BLOB)
            .map(|c| BlobParams {
                center_x: self.width as f64 / 2.0 * (1.0 + c[0].tanh()),
                center_y: self.height as f64 / 2.0 * (1.0 + c[1].tanh()),
                radius: r_lo + (r_hi - r_lo) * (1.0 + c[2].tanh()) / 2.0,
                intensity: (1.0 + c[3].tanh()) / 2.0,
            })
            .collect()
    }

    /// Renders into `out`. With `only`, pixels outside it are skipped and
    /// left at zero; the rendered ones are identical to a full render.
    fn render_row(
        &self,
        z: ArrayView1<f64>,
        out: &mut [f64],
        only: Option<&[bool]>,
        cache: Option<&mut BlobCache>,
    ) {
        let z = z
            .as_slice()
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| z.to_vec());
        let params = self.blob_params(&z);
        let n_pix = self.height * self.width;
        let mut sig = vec![0.0; self.blobs * n_pix];
        let mut dist = vec![1.0; self.blobs * n_pix];
        let wanted = |pix: usize| only.is_none_or(|m| m[pix]);
        for (k, p) in params.iter().enumerate() {
            for i in 0..self.height {
                let dy = i as f64 + 0.5 - p.center_y;
                for j in 0..self.width {
                    if !wanted(i * self.width + j) {
                        continue;
                    }
                    let dx = j as f64 + 0.5 - p.center_x;
                    let d = (dx * dx + dy * dy + DIST_SMOOTHING).sqrt();
                    let idx = k * n_pix + i * self.width + j;
                    dist[idx] = d;
                    sig[idx] = sigmoid(self.sharpness * (p.radius - d));
                }
            }
        }
        for (pix, o) in out.iter_mut().enumerate() {
            if !wanted(pix) {
                *o = 0.0;
                continue;
            }
            let mut keep = 1.0;
            for (k, p) in params.iter().enumerate() {
                keep *= 1.0 - p.intensity * sig[k * n_pix + pix];
            }
            *o = 1.0 - keep;
        }
        if let Some(cache) = cache {
            cache.z = z;
            cache.params = params;
            cache.sig = sig;
            cache.dist = dist;
        }
    }

    fn latent_grad_row(&self, cache: &BlobCache, upstream: ArrayView1<f64>) -> Vec<f64> {
        let n_pix = self.height * self.width;
        let (r_lo, r_hi) = self.radius_range();
        let s = self.sharpness;
        let mut d_cx = vec![0.0; self.blobs];
        let mut d_cy = vec![0.0; self.blobs];
        let mut d_r = vec![0.0; self.blobs];
        let mut d_a = vec![0.0; self.blobs];
        let mut factors = vec![0.0; self.blobs];
        for pix in 0..n_pix {
            let g = upstream[pix];
            if g == 0.0 {
                continue;
            }
            let (i, j) = (pix / self.width, pix % self.width);
            for (k, p) in cache.params.iter().enumerate() {
                factors[k] = 1.0 - p.intensity * cache.sig[k * n_pix + pix];
            }
            for (k, p) in cache.params.iter().enumerate() {
                let others: f64 = factors
                    .iter()
                    .enumerate()
                    .filter(|&(l, _)| l != k)
                    .map(|(_, f)| f)
                    .product();
                let gb = g * others;
                let sg = cache.sig[k * n_pix + pix];
                let d = cache.dist[k * n_pix + pix];
                d_a[k] += gb * sg;
                let gu = gb * p.intensity * sg * (1.0 - sg) * s;
                d_r[k] += gu;
                let dx = j as f64 + 0.5 - p.center_x;
                let dy = i as f64 + 0.5 - p.center_y;
                d_cx[k] += gu * dx / d;
                d_cy[k] += gu * dy / d;
            }
        }
        let mut grad = vec![0.0; self.latent_dim()];
        for k in 0..self.blobs {
            let c = &cache.z[k * PARAMS_PER_BLOB..(k + 1) * PARAMS_PER_BLOB];
            let sech2 = |v: f64| 1.0 - v.tanh().powi(2);
            grad[k * PARAMS_PER_BLOB] = d_cx[k] * self.width as f64 / 2.0 * sech2(c[0]);
            grad[k * PARAMS_PER_BLOB + 1] = d_cy[k] * self.height as f64 / 2.0 * sech2(c[1]);
            grad[k * PARAMS_PER_BLOB + 2] = d_r[k] * (r_hi - r_lo) / 2.0 * sech2(c[2]);
            grad[k * PARAMS_PER_BLOB + 3] = d_a[k] * 0.5 * sech2(c[3]);
        }
        grad
    }
}

#[derive(Debug, Clone, Default)]
struct BlobCache {
    z: Vec<f64>,
    params: Vec<BlobParams>,
    sig: Vec<f64>,
    dist: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGenerator {
    net: Network,
    height: usize,
    width: usize,
}

impl MlpGenerator {
    pub fn new(net: Network, height: usize, width: usize) -> Result<Self> {
        if net.output_dim() != height * width {
            return Err(Error::mismatch(
                "mlp generator output",
                height * width,
                net.output_dim(),
            ));
        }
        Ok(Self { net, height, width })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }
}

/// Recorded forward pass of a generator batch, consumed by
/// [`Generator::backward_latent`].
#[derive(Debug, Clone)]
pub struct GeneratorTrace {
    images: Array2<f64>,
    kind: TraceKind,
}

#[derive(Debug, Clone)]
enum TraceKind {
    Blob(Vec<BlobCache>),
    Mlp(ForwardTrace),
}

impl GeneratorTrace {
    /// One flattened image per row.
    pub fn images(&self) -> &Array2<f64> {
        &self.images
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Generator {
    AnalyticBlob(BlobGenerator),
    Mlp(MlpGenerator),
}

impl Generator {
    /// 16×16 images, two blobs, latent dimension 8.
    pub fn default_blob() -> Self {
        Generator::AnalyticBlob(BlobGenerator::new(2, 4.0, 16, 16).expect("valid defaults"))
    }

    pub fn latent_dim(&self) -> usize {
        match self {
            Generator::AnalyticBlob(b) => b.latent_dim(),
            Generator::Mlp(m) => m.net.input_dim(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            Generator::AnalyticBlob(b) => (b.height, b.width),
            Generator::Mlp(m) => (m.height, m.width),
        }
    }

    pub fn pixel_count(&self) -> usize {
        let (h, w) = self.shape();
        h * w
    }

    pub fn has_batchnorm(&self) -> bool {
        matches!(self, Generator::Mlp(m) if m.net.has_batchnorm())
    }

    fn check_latent_cols(&self, cols: usize) -> Result<()> {
        if cols != self.latent_dim() {
            return Err(Error::mismatch("latent dimension", self.latent_dim(), cols));
        }
        Ok(())
    }

    pub fn generate(&self, z: &[f64]) -> Result<Image> {
        let batch = Array2::from_shape_vec((1, z.len()), z.to_vec()).expect("row vector");
        let images = self.generate_batch(&batch, BatchNormMode::RunningStats)?;
        let (h, w) = self.shape();
        Image::new(h, w, images.row(0).to_vec())
    }

    /// Images for each latent row. In batch-stats mode rows are coupled
    /// through the batch-norm statistics.
    pub fn generate_batch(&self, z: &Array2<f64>, mode: BatchNormMode) -> Result<Array2<f64>> {
        self.check_latent_cols(z.ncols())?;
        if z.nrows() == 0 {
            return Err(Error::EmptyBatch);
        }
        match self {
            Generator::AnalyticBlob(b) => {
                let mut out = Array2::zeros((z.nrows(), self.pixel_count()));
                for (row, mut dst) in z.rows().into_iter().zip(out.rows_mut()) {
                    b.render_row(row, dst.as_slice_mut().expect("contiguous row"), None, None);
                }
                Ok(out)
            }
            Generator::Mlp(m) => Ok(m.net.forward(z, mode)?.mapv(sigmoid)),
        }
    }

    pub fn generate_images(&self, z: &Array2<f64>, mode: BatchNormMode) -> Result<Vec<Image>> {
        let (h, w) = self.shape();
        self.generate_batch(z, mode)?
            .rows()
            .into_iter()
            .map(|r| Image::new(h, w, r.to_vec()))
            .collect()
    }

    pub fn forward_traced(&self, z: &Array2<f64>, mode: BatchNormMode) -> Result<GeneratorTrace> {
        self.forward_traced_on(z, mode, None)
    }

    /// True when every output pixel depends on its own latent row alone, so
    /// a partial render agrees exactly with a full one.
    pub fn is_pixelwise(&self) -> bool {
        matches!(self, Generator::AnalyticBlob(_))
    }

    /// Like [`Generator::forward_traced`], but a pixelwise generator only
    /// renders the pixels set in `only`; the rest are zero. Other generators
    /// ignore `only`.
    pub fn forward_traced_on(
        &self,
        z: &Array2<f64>,
        mode: BatchNormMode,
        only: Option<&[bool]>,
    ) -> Result<GeneratorTrace> {
        self.check_latent_cols(z.ncols())?;
        if let Some(m) = only {
            if m.len() != self.pixel_count() {
                return Err(Error::mismatch("render mask", self.pixel_count(), m.len()));
            }
        }
        if z.nrows() == 0 {
            return Err(Error::EmptyBatch);
        }
        match self {
            Generator::AnalyticBlob(b) => {
                let mut images = Array2::zeros((z.nrows(), self.pixel_count()));
                let mut caches = Vec::with_capacity(z.nrows());
                for (row, mut dst) in z.rows().into_iter().zip(images.rows_mut()) {
                    let mut cache = BlobCache::default();
                    b.render_row(
                        row,
                        dst.as_slice_mut().expect("contiguous row"),
                        only,
                        Some(&mut cache),
                    );
                    caches.push(cache);
                }
                Ok(GeneratorTrace {
                    images,
                    kind: TraceKind::Blob(caches),
                })
            }
            Generator::Mlp(m) => {
                let trace = m.net.forward_traced(z, mode)?;
                Ok(GeneratorTrace {
                    images: trace.output().mapv(sigmoid),
                    kind: TraceKind::Mlp(trace),
                })
            }
        }
    }

    /// Gradient of `Σ upstream ∘ G(z)` with respect to each latent row. The
    /// generator's parameters are never touched.
    pub fn backward_latent(
        &self,
        trace: &GeneratorTrace,
        upstream: &Array2<f64>,
    ) -> Result<Array2<f64>> {
        if upstream.dim() != trace.images.dim() {
            return Err(Error::MissingForward(format!(
                "upstream shape {:?} differs from generated batch {:?}",
                upstream.dim(),
                trace.images.dim()
            )));
        }
        match (self, &trace.kind) {
            (Generator::AnalyticBlob(b), TraceKind::Blob(caches)) => {
                let mut grad = Array2::zeros((upstream.nrows(), b.latent_dim()));
                for ((cache, up), mut dst) in
                    caches.iter().zip(upstream.rows()).zip(grad.rows_mut())
                {
                    let g = b.latent_grad_row(cache, up);
                    dst.iter_mut().zip(g).for_each(|(d, v)| *d = v);
                }
                Ok(grad)
            }
            (Generator::Mlp(m), TraceKind::Mlp(net_trace)) => {
                let y = &trace.images;
                let pre = upstream * &y.mapv(|v| v * (1.0 - v));
                Ok(m.net.backward(net_trace, &pre, false)?.input)
            }
            _ => Err(Error::MissingForward(
                "trace was produced by a different generator".into(),
            )),
        }
    }

    pub fn grad_wrt_latent(&self, z: &[f64], upstream: &Image) -> Result<Vec<f64>> {
        if upstream.len() != self.pixel_count() {
            return Err(Error::mismatch(
                "upstream image",
                self.pixel_count(),
                upstream.len(),
            ));
        }
        let batch = Array2::from_shape_vec((1, z.len()), z.to_vec()).expect("row vector");
        let trace = self.forward_traced(&batch, BatchNormMode::RunningStats)?;
        let up = Array2::from_shape_vec((1, upstream.len()), upstream.pixels().to_vec())
            .expect("row vector");
        Ok(self.backward_latent(&trace, &up)?.row(0).to_vec())
    }

    pub fn to_file(&self) -> GeneratorFile {
        match self {
            Generator::AnalyticBlob(b) => GeneratorFile::AnalyticBlob(BlobFile {
                variant: "analytic-blob".into(),
                blobs: b.blobs,
                sharpness: b.sharpness,
                shape: [b.height, b.width],
                latent_dim: b.latent_dim(),
            }),
            Generator::Mlp(m) => GeneratorFile::Mlp(MlpFile {
                variant: Some("mlp".into()),
                network: NetworkFile::from_network(&m.net, vec![m.height, m.width]),
            }),
        }
    }

    pub fn from_file(file: &GeneratorFile) -> Result<Self> {
        match file {
            GeneratorFile::AnalyticBlob(f) => {
                let b = BlobGenerator::new(f.blobs, f.sharpness, f.shape[0], f.shape[1])?;
                if f.latent_dim != b.latent_dim() {
                    return Err(Error::mismatch(
                        "analytic-blob latent_dim (4 per blob)",
                        b.latent_dim(),
                        f.latent_dim,
                    ));
                }
                Ok(Generator::AnalyticBlob(b))
            }
            GeneratorFile::Mlp(f) => {
                let net = f.network.to_network()?;
                match f.network.output_shape.as_slice() {
                    &[h, w] => Ok(Generator::Mlp(MlpGenerator::new(net, h, w)?)),
                    other => Err(Error::Format(format!(
                        "mlp generator output_shape must be [H, W], got {other:?}"
                    ))),
                }
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let variant = value
            .get("variant")
            .and_then(|v| v.as_str())
            .unwrap_or("mlp");
        let file = match variant {
            "analytic-blob" => GeneratorFile::AnalyticBlob(serde_json::from_value(value)?),
            "mlp" => GeneratorFile::Mlp(serde_json::from_value(value)?),
            other => {
                return Err(Error::Format(format!(
                    "unknown generator variant {other:?}"
                )))
            }
        };
        Self::from_file(&file)
    }
}

pub fn save_generator(model: &Generator, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, model.to_json()?)?;
    Ok(())
}

pub fn load_generator(path: impl AsRef<Path>) -> Result<Generator> {
    Generator::from_json(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobFile {
    pub variant: String,
    pub blobs: usize,
    pub sharpness: f64,
    pub shape: [usize; 2],
    pub latent_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    #[serde(flatten)]
    pub network: NetworkFile,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum GeneratorFile {
    AnalyticBlob(BlobFile),
    Mlp(MlpFile),
}

/// Settings for fitting an MLP generator to another generator's outputs.
#[derive(Debug, Clone)]
pub struct DistillConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub batchnorm: bool,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            activation: Activation::Tanh,
            batchnorm: true,
            steps: 1500,
            batch_size: 64,
            learning_rate: 3e-3,
        }
    }
}

/// Fits an MLP generator to `source` by pixelwise regression on latents drawn
/// from N(0, I). Batch-norm layers train on batch statistics and accumulate
/// running estimates as they go. Returns the generator and per-step losses.
pub fn distill_mlp<R: Rng + ?Sized>(
    source: &Generator,
    cfg: &DistillConfig,
    rng: &mut R,
) -> Result<(Generator, Vec<f64>)> {
    let d = source.latent_dim();
    let (h, w) = source.shape();
    let mut dims = vec![d];
    dims.extend(&cfg.hidden);
    dims.push(h * w);
    let base = Network::mlp(&dims, cfg.activation, rng)?;
    let mut layers = Vec::new();
    for layer in base.layers() {
        let is_hidden_act = matches!(layer, Layer::Activation(_));
        if is_hidden_act && cfg.batchnorm {
            let width = match layers.last() {
                Some(Layer::Dense(p)) => p.out_dim(),
                _ => unreachable!("activations follow dense layers"),
            };
            layers.push(Layer::BatchNorm(BatchNormState::new(width)));
        }
        layers.push(layer.clone());
    }
    let mut net = Network::new(d, layers)?;
    let mut opt = NetworkOptimizer::new(&net, AdamConfig::with_learning_rate(cfg.learning_rate));
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let z = Array2::from_shape_fn((cfg.batch_size, d), |_| {
            rng.sample::<f64, _>(StandardNormal)
        });
        let target = source.generate_batch(&z, BatchNormMode::RunningStats)?;
        let trace = net.forward_train(&z)?;
        let y = trace.output().mapv(sigmoid);
        let diff = &y - &target;
        let n = diff.len() as f64;
        losses.push(diff.iter().map(|v| v * v).sum::<f64>() / n);
        let up = diff * 2.0 / n * &y.mapv(|v| v * (1.0 - v));
        let grads = net
            .backward(&trace, &up, true)?
            .params
            .expect("param grads requested");
        opt.step(&mut net, &grads)?;
    }
    Ok((Generator::Mlp(MlpGenerator::new(net, h, w)?), losses))
}
