//! Diverse encoder: a network that maps a masked image to `N` candidate
//! latents, trained so each one reconstructs the anchored pixels while the
//! set stays spread out at pairwise distance `t`.

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffnet::{
    Activation, AdamConfig, BatchNormMode, LayerGrad, Network, NetworkFile, NetworkOptimizer,
};
use crate::error::{Error, Result};
use crate::generators::Generator;
use crate::image::{check_same_shape, BinaryMask, Image};
use crate::segmentation::{random_segment_mask, SegmentMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiversityParams {
    /// Weight λ of the pairwise term.
    pub lambda: f64,
    /// Target pairwise distance `t`.
    pub target_distance: f64,
    /// Weight ρ of the L2 penalty on encodings.
    pub l2: f64,
}

impl Default for DiversityParams {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            target_distance: 10.0,
            l2: 0.0,
        }
    }
}

impl DiversityParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !(self.target_distance > 0.0) || !(self.l2 >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "need lambda >= 0, t > 0 and l2 >= 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiverseEncoder {
    net: Network,
    n_encodings: usize,
    latent_dim: usize,
    params: DiversityParams,
}

impl DiverseEncoder {
    pub fn new(
        net: Network,
        n_encodings: usize,
        latent_dim: usize,
        params: DiversityParams,
    ) -> Result<Self> {
        params.validate()?;
        if n_encodings == 0 || latent_dim == 0 {
            return Err(Error::InvalidParameter(
                "encoder needs N >= 1 and d >= 1".into(),
            ));
        }
        if net.output_dim() != n_encodings * latent_dim {
            return Err(Error::mismatch(
                "encoder output",
                n_encodings * latent_dim,
                net.output_dim(),
            ));
        }
        Ok(Self {
            net,
            n_encodings,
            latent_dim,
            params,
        })
    }

    /// `pixels → hidden (tanh) → N·d`.
    pub fn mlp<R: Rng + ?Sized>(
        pixels: usize,
        hidden: usize,
        n_encodings: usize,
        latent_dim: usize,
        params: DiversityParams,
        rng: &mut R,
    ) -> Result<Self> {
        let net = Network::mlp(
            &[pixels, hidden, n_encodings * latent_dim],
            Activation::Tanh,
            rng,
        )?;
        Self::new(net, n_encodings, latent_dim, params)
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn n_encodings(&self) -> usize {
        self.n_encodings
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn params(&self) -> DiversityParams {
        self.params
    }

    pub fn set_params(&mut self, params: DiversityParams) -> Result<()> {
        params.validate()?;
        self.params = params;
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// The `N` latents for one masked image.
    pub fn encode(&self, x_masked: &Image) -> Result<Vec<Vec<f64>>> {
        if x_masked.len() != self.input_dim() {
            return Err(Error::mismatch(
                "encoder input",
                self.input_dim(),
                x_masked.len(),
            ));
        }
        let x =
            Array2::from_shape_vec((1, x_masked.len()), x_masked.pixels().to_vec()).expect("row");
        let out = self.net.forward(&x, BatchNormMode::RunningStats)?;
        Ok(out
            .row(0)
            .as_slice()
            .expect("row")
            .chunks_exact(self.latent_dim)
            .map(<[f64]>::to_vec)
            .collect())
    }

    pub fn to_file(&self) -> EncoderFile {
        EncoderFile {
            network: NetworkFile::from_network(&self.net, vec![self.n_encodings, self.latent_dim]),
            n_encodings: self.n_encodings,
            latent_dim: self.latent_dim,
            diversity: self.params,
        }
    }

    pub fn from_file(file: &EncoderFile) -> Result<Self> {
        if file.network.output_shape != [file.n_encodings, file.latent_dim] {
            return Err(Error::Format(format!(
                "encoder output_shape {:?} disagrees with n_encodings {} and latent_dim {}",
                file.network.output_shape, file.n_encodings, file.latent_dim
            )));
        }
        Self::new(
            file.network.to_network()?,
            file.n_encodings,
            file.latent_dim,
            file.diversity,
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_file())?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: EncoderFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_file(&file)
    }
}

/// Encoder weights: the network format plus `n_encodings` and `latent_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderFile {
    #[serde(flatten)]
    pub network: NetworkFile,
    pub n_encodings: usize,
    pub latent_dim: usize,
    #[serde(default)]
    pub diversity: DiversityParams,
}

/// `Σ_{i≠j} ((‖zᵢ − zⱼ‖ − t) / t)²` over ordered pairs.
pub fn diversity_penalty(latents: &[Vec<f64>], t: f64) -> f64 {
    let mut total = 0.0;
    for (i, a) in latents.iter().enumerate() {
        for (j, b) in latents.iter().enumerate() {
            if i != j {
                let d = euclid(a, b);
                total += ((d - t) / t).powi(2);
            }
        }
    }
    total
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Adds the penalty gradient for one example's latents (rows of `z`) into
/// `grad`, scaled by `scale`. Coincident latents have no defined direction;
/// they are pushed apart along `±(1,…,1)/√d`, lower index toward minus.
fn add_penalty_grad(z: &[Vec<f64>], t: f64, scale: f64, grad: &mut [Vec<f64>]) {
    let d = z.first().map_or(0, Vec::len);
    let tie = 1.0 / (d as f64).sqrt();
    for i in 0..z.len() {
        for j in 0..z.len() {
            if i == j {
                continue;
            }
            let dist = euclid(&z[i], &z[j]);
            // Both ordered pairs (i,j) and (j,i) contribute the same term.
            let c = scale * 4.0 * (dist - t) / (t * t);
            for k in 0..d {
                let dir = if dist > 0.0 {
                    (z[i][k] - z[j][k]) / dist
                } else if i < j {
                    tie
                } else {
                    -tie
                };
                grad[i][k] += c * dir;
            }
        }
    }
}

/// Euclidean norm of `y − x̂` over the anchor pixels.
pub fn anchor_residual_norm(x_hat: &[f64], mask: &[bool], y: &[f64]) -> f64 {
    x_hat
        .iter()
        .zip(y)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((a, b), _)| (b - a) * (b - a))
        .sum::<f64>()
        .sqrt()
}

/// Components of the encoder objective, averaged over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DiverseLoss {
    pub total: f64,
    pub reconstruction: f64,
    pub penalty: f64,
    pub l2: f64,
}

/// Batch-mean objective `Σᵢ ‖A∘x − A∘G(zᵢ)‖ + λ·penalty + ρ·Σᵢ‖zᵢ‖²` and
/// its gradient with respect to the encoder parameters. The generator is
/// only differentiated with respect to its input.
pub fn diverse_loss(
    enc: &DiverseEncoder,
    g: &Generator,
    images: &[Image],
    masks: &[BinaryMask],
) -> Result<(DiverseLoss, Vec<LayerGrad>)> {
    if images.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if images.len() != masks.len() {
        return Err(Error::mismatch(
            "masks per image",
            images.len(),
            masks.len(),
        ));
    }
    if g.latent_dim() != enc.latent_dim {
        return Err(Error::mismatch(
            "encoder latent dimension",
            g.latent_dim(),
            enc.latent_dim,
        ));
    }
    let (n, d, b) = (enc.n_encodings, enc.latent_dim, images.len());
    let px = g.pixel_count();
    let mut x_hat = Vec::with_capacity(b);
    let mut input = Array2::zeros((b, enc.input_dim()));
    for (k, (img, m)) in images.iter().zip(masks).enumerate() {
        check_same_shape(g.shape(), img.shape(), "encoder training image")?;
        let xm = img.masked(m)?;
        if xm.len() != enc.input_dim() {
            return Err(Error::mismatch("encoder input", enc.input_dim(), xm.len()));
        }
        input
            .row_mut(k)
            .assign(&ndarray::ArrayView1::from(xm.pixels()));
        x_hat.push(xm);
    }
    let enc_trace = enc
        .net
        .forward_traced(&input, BatchNormMode::RunningStats)?;
    let z = enc_trace
        .output()
        .to_shape((b * n, d))
        .map_err(|e| Error::Format(e.to_string()))?
        .to_owned();
    let g_trace = g.forward_traced(&z, BatchNormMode::RunningStats)?;
    let y = g_trace.images();

    let scale = 1.0 / b as f64;
    let DiversityParams {
        lambda,
        target_distance: t,
        l2,
    } = enc.params;
    let mut loss = DiverseLoss::default();
    let mut up = Array2::zeros((b * n, px));
    for k in 0..b {
        let bits = masks[k].bits();
        for i in 0..n {
            let row = k * n + i;
            let norm =
                anchor_residual_norm(x_hat[k].pixels(), bits, y.row(row).as_slice().expect("row"));
            loss.reconstruction += scale * norm;
            // The norm is not differentiable at a perfect match; use 0 there.
            if norm == 0.0 {
                continue;
            }
            for p in 0..px {
                if bits[p] {
                    up[[row, p]] = scale * (y[[row, p]] - x_hat[k].pixels()[p]) / norm;
                }
            }
        }
    }
    let mut gz = g.backward_latent(&g_trace, &up)?;

    for k in 0..b {
        let zs: Vec<Vec<f64>> = (0..n).map(|i| z.row(k * n + i).to_vec()).collect();
        if lambda > 0.0 && n > 1 {
            loss.penalty += scale * lambda * diversity_penalty(&zs, t);
            let mut pg = vec![vec![0.0; d]; n];
            add_penalty_grad(&zs, t, scale * lambda, &mut pg);
            for (i, gi) in pg.iter().enumerate() {
                for (c, v) in gi.iter().enumerate() {
                    gz[[k * n + i, c]] += v;
                }
            }
        }
        if l2 > 0.0 {
            for (i, zi) in zs.iter().enumerate() {
                loss.l2 += scale * l2 * zi.iter().map(|v| v * v).sum::<f64>();
                for (c, v) in zi.iter().enumerate() {
                    gz[[k * n + i, c]] += scale * 2.0 * l2 * v;
                }
            }
        }
    }
    loss.total = loss.reconstruction + loss.penalty + loss.l2;

    let gz = gz
        .to_shape((b, n * d))
        .map_err(|e| Error::Format(e.to_string()))?
        .to_owned();
    let grads = enc
        .net
        .backward(&enc_trace, &gz, true)?
        .params
        .expect("parameter gradients requested");
    Ok((loss, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Inclusion probability of each segment in the random training masks.
    pub mask_p: f64,
    pub learning_rate: f64,
}

impl Default for EncoderTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1,
            batch_size: 16,
            mask_p: 0.5,
            learning_rate: 3e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderTrainReport {
    /// Loss of every optimizer step, in order.
    pub losses: Vec<DiverseLoss>,
    pub steps: usize,
}

/// Trains with Adam on random segment masks. One epoch is
/// `⌈|dataset| / batch⌉` steps over a shuffled order. Aborts with the batch
/// index on a non-finite loss.
pub fn train_encoder<R: Rng + ?Sized>(
    enc: &DiverseEncoder,
    g: &Generator,
    images: &[Image],
    segmaps: &[SegmentMap],
    cfg: &EncoderTrainConfig,
    rng: &mut R,
) -> Result<(DiverseEncoder, EncoderTrainReport)> {
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::InvalidParameter(
            "epochs and batch size must be >= 1".into(),
        ));
    }
    if images.len() != segmaps.len() {
        return Err(Error::mismatch(
            "segment maps per image",
            images.len(),
            segmaps.len(),
        ));
    }
    if images.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut enc = enc.clone();
    let mut opt =
        NetworkOptimizer::new(&enc.net, AdamConfig::with_learning_rate(cfg.learning_rate));
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut report = EncoderTrainReport {
        losses: Vec::new(),
        steps: 0,
    };
    let mut batch_index = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            let imgs: Vec<Image> = chunk.iter().map(|&i| images[i].clone()).collect();
            let masks = chunk
                .iter()
                .map(|&i| random_segment_mask(&segmaps[i], cfg.mask_p, rng).map(|(_, m)| m))
                .collect::<Result<Vec<_>>>()?;
            let (loss, grads) = diverse_loss(&enc, g, &imgs, &masks)?;
            if !loss.total.is_finite() {
                return Err(Error::Diverged { batch: batch_index });
            }
            opt.step(&mut enc.net, &grads).map_err(|e| match e {
                Error::NonFinite { .. } => Error::Diverged { batch: batch_index },
                other => other,
            })?;
            report.losses.push(loss);
            report.steps += 1;
            batch_index += 1;
        }
    }
    Ok((enc, report))
}

/// Reconstruction part of the objective averaged over the best of the `N`
/// encodings for each image.
pub fn best_of_n_reconstruction(
    enc: &DiverseEncoder,
    g: &Generator,
    images: &[Image],
    masks: &[BinaryMask],
) -> Result<f64> {
    if images.is_empty() || images.len() != masks.len() {
        return Err(Error::mismatch(
            "masks per image",
            images.len(),
            masks.len(),
        ));
    }
    let mut total = 0.0;
    for (img, m) in images.iter().zip(masks) {
        let xm = img.masked(m)?;
        let mut best = f64::INFINITY;
        for z in enc.encode(&xm)? {
            let y = g.generate(&z)?;
            best = best.min(anchor_residual_norm(xm.pixels(), m.bits(), y.pixels()));
        }
        total += best;
    }
    Ok(total / images.len() as f64)
}

/// Mean reconstruction term of the objective (summed over encodings, averaged
/// over images), without the diversity or L2 parts.
pub fn reconstruction_loss(
    enc: &DiverseEncoder,
    g: &Generator,
    images: &[Image],
    masks: &[BinaryMask],
) -> Result<f64> {
    let mut plain = enc.clone();
    plain.params = DiversityParams {
        lambda: 0.0,
        l2: 0.0,
        ..enc.params
    };
    Ok(diverse_loss(&plain, g, images, masks)?.0.reconstruction)
}

/// Mean pairwise distance between the encodings of each image, averaged over
/// images.
pub fn mean_pairwise_distance(
    enc: &DiverseEncoder,
    images: &[Image],
    masks: &[BinaryMask],
) -> Result<f64> {
    if enc.n_encodings < 2 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (img, m) in images.iter().zip(masks) {
        let zs = enc.encode(&img.masked(m)?)?;
        for i in 0..zs.len() {
            for j in i + 1..zs.len() {
                total += euclid(&zs[i], &zs[j]);
                count += 1;
            }
        }
    }
    Ok(if count == 0 {
        0.0
    } else {
        total / count as f64
    })
}

/// `count` starting latents: the encodings in turn, each plus independent
/// `N(0, σ²)` noise.
pub fn seeded_init<R: Rng + ?Sized>(
    enc: &DiverseEncoder,
    x_masked: &Image,
    sigma: f64,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidParameter("noise scale must be >= 0".into()));
    }
    let encodings = enc.encode(x_masked)?;
    Ok((0..count)
        .map(|k| {
            encodings[k % encodings.len()]
                .iter()
                .map(|&v| v + sigma * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect())
}
