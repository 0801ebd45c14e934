//! Datasets, image files and the dense classifier used as the black box.

mod idx;
mod imageio;

pub use idx::{
    encode_idx_images, encode_idx_labels, parse_idx_images, parse_idx_labels, quantize,
    read_idx_images, read_idx_labels, IMAGES_MAGIC, LABELS_MAGIC,
};
pub use imageio::{
    decode_label_pgm, decode_pgm, encode_label_pgm, encode_pgm, load_image, load_label_pgm,
    load_pgm, load_png, save_image, save_label_pgm, save_pgm, save_png,
};

use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::anchors::Classifier;
use crate::diffnet::{
    Activation, AdamConfig, BatchNormMode, Network, NetworkFile, NetworkOptimizer,
};
use crate::error::{Error, Result};
use crate::generators::{BlobGenerator, Generator};
use crate::image::Image;

pub const BLOB_WORLD_CLASSES: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub source: String,
    pub height: usize,
    pub width: usize,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    images: Vec<Image>,
    labels: Vec<usize>,
    classes: usize,
    meta: DatasetMeta,
    /// Generating latents, when the dataset came from a generator.
    latents: Vec<Vec<f64>>,
}

impl LabeledDataset {
    pub fn new(
        images: Vec<Image>,
        labels: Vec<usize>,
        classes: usize,
        meta: DatasetMeta,
    ) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::mismatch(
                "labels per image",
                images.len(),
                labels.len(),
            ));
        }
        if classes < 2 {
            return Err(Error::InvalidParameter(
                "a dataset needs at least two classes".into(),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Format(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        if let Some(img) = images
            .iter()
            .find(|i| i.shape() != (meta.height, meta.width))
        {
            return Err(Error::Format(format!(
                "image shape {:?} differs from dataset shape {:?}",
                img.shape(),
                (meta.height, meta.width)
            )));
        }
        Ok(Self {
            images,
            labels,
            classes,
            meta,
            latents: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.meta.height, self.meta.width)
    }

    /// Empty unless the dataset was generated.
    pub fn latents(&self) -> &[Vec<f64>] {
        &self.latents
    }

    /// Splits off the last `fraction` of examples.
    pub fn split(&self, fraction: f64) -> (LabeledDataset, LabeledDataset) {
        let n_tail = ((self.len() as f64) * fraction.clamp(0.0, 1.0)).round() as usize;
        let cut = self.len() - n_tail;
        let part = |r: std::ops::Range<usize>| LabeledDataset {
            images: self.images[r.clone()].to_vec(),
            labels: self.labels[r.clone()].to_vec(),
            classes: self.classes,
            meta: self.meta.clone(),
            latents: if self.latents.is_empty() {
                Vec::new()
            } else {
                self.latents[r].to_vec()
            },
        };
        (part(0..cut), part(cut..self.len()))
    }

    /// First example of each class, in class order.
    pub fn class_representatives(&self) -> Vec<Option<usize>> {
        (0..self.classes)
            .map(|c| self.labels.iter().position(|&l| l == c))
            .collect()
    }
}

/// Quadrant `2·bottom + right` of the blob with the largest
/// `intensity · radius²`; a centre exactly on a dividing line counts as
/// top/left, and equal masses go to the lower blob index.
pub fn blob_world_label(generator: &BlobGenerator, z: &[f64]) -> usize {
    let params = generator.blob_params(z);
    let mut best = 0;
    for (k, p) in params.iter().enumerate() {
        if p.mass() > params[best].mass() {
            best = k;
        }
    }
    let p = &params[best];
    let (h, w) = (generator.height() as f64, generator.width() as f64);
    let right = usize::from(p.center_x > w / 2.0);
    let bottom = usize::from(p.center_y > h / 2.0);
    2 * bottom + right
}

/// `n` renders of the default blob generator at `z ~ N(0, I)`.
pub fn gen_blob_world(n: usize, seed: u64) -> Result<LabeledDataset> {
    let g = Generator::default_blob();
    let Generator::AnalyticBlob(blob) = &g else {
        unreachable!("default generator is analytic")
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = g.shape();
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut latents = Vec::with_capacity(n);
    for _ in 0..n {
        let z: Vec<f64> = (0..g.latent_dim())
            .map(|_| rng.sample(StandardNormal))
            .collect();
        images.push(g.generate(&z)?);
        labels.push(blob_world_label(blob, &z));
        latents.push(z);
    }
    let meta = DatasetMeta {
        source: "blob-world".into(),
        height: h,
        width: w,
        seed: Some(seed),
    };
    let mut ds = LabeledDataset::new(images, labels, BLOB_WORLD_CLASSES, meta)?;
    ds.latents = latents;
    Ok(ds)
}

/// Reads an IDX image/label pair; the class count is `max label + 1`
/// (at least two).
pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<LabeledDataset> {
    let images = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if images.len() != labels.len() {
        return Err(Error::Format(format!(
            "count mismatch: {} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    let (h, w) = images.first().map_or((0, 0), Image::shape);
    let classes = labels.iter().max().map_or(2, |m| (m + 1).max(2));
    LabeledDataset::new(
        images,
        labels,
        classes,
        DatasetMeta {
            source: "idx".into(),
            height: h,
            width: w,
            seed: None,
        },
    )
}

pub fn save_idx(
    ds: &LabeledDataset,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    std::fs::write(images_path, encode_idx_images(ds.images())?)?;
    std::fs::write(labels_path, encode_idx_labels(ds.labels())?)?;
    Ok(())
}

/// Dense network ending in class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    net: Network,
    shape: (usize, usize),
}

impl ClassifierModel {
    pub fn new(net: Network, shape: (usize, usize)) -> Result<Self> {
        if net.input_dim() != shape.0 * shape.1 {
            return Err(Error::mismatch(
                "classifier input",
                shape.0 * shape.1,
                net.input_dim(),
            ));
        }
        if net.output_dim() < 2 {
            return Err(Error::InvalidParameter(
                "classifier needs at least two logits".into(),
            ));
        }
        Ok(Self { net, shape })
    }

    /// `H·W → hidden… → classes` with ReLU between layers.
    pub fn mlp<R: Rng + ?Sized>(
        shape: (usize, usize),
        hidden: &[usize],
        classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut dims = vec![shape.0 * shape.1];
        dims.extend_from_slice(hidden);
        dims.push(classes);
        Self::new(Network::mlp(&dims, Activation::Relu, rng)?, shape)
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn classes(&self) -> usize {
        self.net.output_dim()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn logits(&self, images: &[Image]) -> Result<Array2<f64>> {
        let x = stack(images, self.net.input_dim())?;
        self.net.forward(&x, BatchNormMode::RunningStats)
    }

    pub fn predict_batch(&self, images: &[Image]) -> Result<Vec<usize>> {
        Ok(self
            .logits(images)?
            .rows()
            .into_iter()
            .map(|r| argmax(r.iter().copied()))
            .collect())
    }

    pub fn accuracy(&self, ds: &LabeledDataset) -> Result<f64> {
        if ds.is_empty() {
            return Ok(0.0);
        }
        let pred = self.predict_batch(ds.images())?;
        let hits = pred.iter().zip(ds.labels()).filter(|(p, l)| p == l).count();
        Ok(hits as f64 / ds.len() as f64)
    }

    pub fn to_file(&self) -> NetworkFile {
        NetworkFile::from_network(&self.net, vec![self.classes()])
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = ClassifierFile {
            network: self.to_file(),
            image_shape: [self.shape.0, self.shape.1],
        };
        std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: ClassifierFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::new(
            file.network.to_network()?,
            (file.image_shape[0], file.image_shape[1]),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ClassifierFile {
    #[serde(flatten)]
    network: NetworkFile,
    image_shape: [usize; 2],
}

impl Classifier for ClassifierModel {
    fn predict(&self, image: &Image) -> usize {
        self.predict_batch(std::slice::from_ref(image))
            .ok()
            .and_then(|v| v.first().copied())
            .unwrap_or(0)
    }
}

/// Index of the largest value; the first wins ties.
fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

fn stack(images: &[Image], dim: usize) -> Result<Array2<f64>> {
    if images.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut x = Array2::zeros((images.len(), dim));
    for (mut row, img) in x.rows_mut().into_iter().zip(images) {
        if img.len() != dim {
            return Err(Error::mismatch("classifier input", dim, img.len()));
        }
        row.assign(&ndarray::ArrayView1::from(img.pixels()));
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierTrainConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Fraction of the dataset held out for validation.
    pub validation_fraction: f64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32],
            epochs: 5,
            batch_size: 32,
            learning_rate: 3e-3,
            validation_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierTrainReport {
    pub train_accuracy: f64,
    pub validation_accuracy: f64,
    /// Mean cross-entropy per epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

/// Softmax cross-entropy with Adam over shuffled mini-batches.
pub fn train_classifier<R: Rng + ?Sized>(
    ds: &LabeledDataset,
    cfg: &ClassifierTrainConfig,
    rng: &mut R,
) -> Result<(ClassifierModel, ClassifierTrainReport)> {
    if cfg.batch_size == 0 {
        return Err(Error::InvalidParameter("batch size must be >= 1".into()));
    }
    let (train, val) = ds.split(cfg.validation_fraction);
    if train.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut model = ClassifierModel::mlp(ds.shape(), &cfg.hidden, ds.classes(), rng)?;
    let mut opt = NetworkOptimizer::new(
        &model.net,
        AdamConfig::with_learning_rate(cfg.learning_rate),
    );
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_losses = Vec::new();
    let mut steps = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let imgs: Vec<Image> = chunk.iter().map(|&i| train.images[i].clone()).collect();
            let x = stack(&imgs, model.net.input_dim())?;
            let trace = model.net.forward_traced(&x, BatchNormMode::BatchStats)?;
            let logits = trace.output();
            let mut up = Array2::zeros(logits.dim());
            let b = chunk.len() as f64;
            for (r, (row, &i)) in logits.axis_iter(Axis(0)).zip(chunk).enumerate() {
                let max = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
                let exp: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
                let z: f64 = exp.iter().sum();
                let label = train.labels[i];
                total += -(exp[label] / z).ln();
                for (c, e) in exp.iter().enumerate() {
                    up[[r, c]] = (e / z - f64::from(u8::from(c == label))) / b;
                }
            }
            let grads = model
                .net
                .backward(&trace, &up, true)?
                .params
                .expect("params requested");
            opt.step(&mut model.net, &grads)?;
            steps += 1;
        }
        epoch_losses.push(total / train.len() as f64);
    }
    let report = ClassifierTrainReport {
        train_accuracy: model.accuracy(&train)?,
        validation_accuracy: model.accuracy(&val)?,
        epoch_losses,
        steps,
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_dataset() {
        assert_eq!(
            gen_blob_world(20, 4).unwrap(),
            gen_blob_world(20, 4).unwrap()
        );
        assert_ne!(
            gen_blob_world(20, 4).unwrap(),
            gen_blob_world(20, 5).unwrap()
        );
    }

    #[test]
    fn origin_goes_to_top_left() {
        let g = BlobGenerator::new(2, 4.0, 16, 16).unwrap();
        assert_eq!(blob_world_label(&g, &[0.0; 8]), 0);
        // Second blob larger and in the bottom-right.
        let z = [0.0, 0.0, -1.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        assert_eq!(blob_world_label(&g, &z), 3);
    }

    #[test]
    fn zero_epochs_leave_init_untouched() {
        let ds = gen_blob_world(40, 1).unwrap();
        let cfg = ClassifierTrainConfig {
            epochs: 0,
            ..ClassifierTrainConfig::default()
        };
        let (model, report) =
            train_classifier(&ds, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let fresh =
            ClassifierModel::mlp((16, 16), &cfg.hidden, 4, &mut ChaCha8Rng::seed_from_u64(2))
                .unwrap();
        assert_eq!(model, fresh);
        assert_eq!(report.steps, 0);
    }

    #[test]
    fn argmax_first_wins() {
        assert_eq!(argmax([1.0, 3.0, 3.0].into_iter()), 1);
    }
}
