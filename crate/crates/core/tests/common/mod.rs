#![allow(dead_code)]

use std::sync::OnceLock;

use latent_anchors::cli::segment_image;
use latent_anchors::config::RunConfig;
use latent_anchors::dataio::{
    gen_blob_world, train_classifier, ClassifierModel, ClassifierTrainConfig, LabeledDataset,
};
use latent_anchors::encoder::{train_encoder, DiverseEncoder, DiversityParams, EncoderTrainConfig};
use latent_anchors::generators::Generator;
use latent_anchors::segmentation::SegmentMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const WORLD_SIZE: usize = 10_000;
pub const WORLD_SEED: u64 = 7;

pub struct World {
    pub dataset: LabeledDataset,
    pub classifier: ClassifierModel,
    pub validation_accuracy: f64,
}

impl World {
    /// Held-out tail of the dataset, never seen by the classifier.
    pub fn test_indices(&self) -> std::ops::Range<usize> {
        (self.dataset.len() * 9 / 10)..self.dataset.len()
    }
}

pub fn world() -> &'static World {
    static WORLD: OnceLock<World> = OnceLock::new();
    WORLD.get_or_init(|| {
        let dataset = gen_blob_world(WORLD_SIZE, WORLD_SEED).expect("dataset");
        let mut rng = ChaCha8Rng::seed_from_u64(WORLD_SEED);
        let (classifier, report) =
            train_classifier(&dataset, &ClassifierTrainConfig::default(), &mut rng)
                .expect("classifier");
        World {
            dataset,
            classifier,
            validation_accuracy: report.validation_accuracy,
        }
    })
}

/// Segment maps of the first `n` images under the blob-world preset.
pub fn segment_maps(range: std::ops::Range<usize>) -> Vec<SegmentMap> {
    let cfg = RunConfig::desk();
    world().dataset.images()[range]
        .iter()
        .map(|x| {
            segment_image(x, &cfg.segmentation)
                .expect("segmentation")
                .segmap
        })
        .collect()
}

pub const ENCODER_TRAIN_IMAGES: usize = 2000;
pub const ENCODER_EPOCHS: usize = 5;

/// Encoder trained on the head of the dataset with diversity weight `lambda`
/// and the blob-world preset otherwise. The same seed is used for every
/// `lambda`.
pub fn trained_encoder(lambda: f64) -> DiverseEncoder {
    let w = world();
    let cfg = RunConfig::desk();
    let maps = segment_maps(0..ENCODER_TRAIN_IMAGES);
    let g = Generator::default_blob();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let params = DiversityParams {
        lambda,
        ..cfg.diversity()
    };
    let init = DiverseEncoder::mlp(
        g.pixel_count(),
        cfg.encoder.hidden,
        cfg.encoder.n_encodings,
        g.latent_dim(),
        params,
        &mut rng,
    )
    .expect("encoder");
    let tc = EncoderTrainConfig {
        epochs: ENCODER_EPOCHS,
        ..cfg.encoder_train_config()
    };
    train_encoder(
        &init,
        &g,
        &w.dataset.images()[..ENCODER_TRAIN_IMAGES],
        &maps,
        &tc,
        &mut rng,
    )
    .expect("encoder training")
    .0
}

/// Central differences of `f` at `x` with step `h`.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub mod grad {
    use latent_anchors::diffnet::{Activation, BatchNormMode, BatchNormState, Layer, Network};
    use latent_anchors::encoder::{diverse_loss, DiverseEncoder, DiversityParams};
    use latent_anchors::generators::{BlobGenerator, Generator, MlpGenerator};
    use latent_anchors::image::{BinaryMask, Image};
    use ndarray::{Array1, Array2};
    use rand::Rng;
    use rand_distr::StandardNormal;

    use super::{numeric_gradient, relative_error};

    pub const H: f64 = 1e-5;

    fn normal_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
    }

    fn dot(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        (a * b).sum()
    }

    /// Relative errors of the input and parameter gradients of
    /// `Σ U ∘ net(X)` for random `X`, `U`.
    pub fn network_errors<R: Rng>(
        net: &Network,
        batch: usize,
        mode: BatchNormMode,
        rng: &mut R,
    ) -> (f64, f64) {
        let x = normal_matrix(batch, net.input_dim(), rng);
        let u = normal_matrix(batch, net.output_dim(), rng);
        let trace = net.forward_traced(&x, mode).unwrap();
        let g = net.backward(&trace, &u, true).unwrap();
        let analytic_x: Vec<f64> = g.input.iter().copied().collect();
        let analytic_p = net.flat_grads(&g.params.unwrap()).unwrap();

        let flat_x: Vec<f64> = x.iter().copied().collect();
        let numeric_x = numeric_gradient(
            |v| {
                let xv = Array2::from_shape_vec(x.dim(), v.to_vec()).unwrap();
                dot(&net.forward(&xv, mode).unwrap(), &u)
            },
            &flat_x,
            H,
        );
        let mut probe = net.clone();
        let numeric_p = numeric_gradient(
            |p| {
                probe.set_flat_params(p).unwrap();
                dot(&probe.forward(&x, mode).unwrap(), &u)
            },
            &net.flat_params(),
            H,
        );
        (
            relative_error(&analytic_x, &numeric_x),
            relative_error(&analytic_p, &numeric_p),
        )
    }

    pub fn random_batchnorm<R: Rng>(features: usize, rng: &mut R) -> BatchNormState {
        let mut bn = BatchNormState::new(features);
        bn.gamma = Array1::from_shape_fn(features, |_| 0.5 + rng.random::<f64>());
        bn.beta = Array1::from_shape_fn(features, |_| rng.sample(StandardNormal));
        bn.running_mean = Array1::from_shape_fn(features, |_| rng.sample(StandardNormal));
        bn.running_var = Array1::from_shape_fn(features, |_| 0.5 + rng.random::<f64>());
        bn
    }

    pub fn dense_net<R: Rng>(rng: &mut R) -> Network {
        let (i, o) = (rng.random_range(1..6), rng.random_range(1..6));
        let mut layer = latent_anchors::diffnet::random_dense(i, o, rng);
        layer.bias = Array1::from_shape_fn(o, |_| rng.sample(StandardNormal));
        Network::new(i, vec![Layer::Dense(layer)]).unwrap()
    }

    pub fn batchnorm_net<R: Rng>(rng: &mut R) -> Network {
        let f = rng.random_range(1..5);
        Network::new(f, vec![Layer::BatchNorm(random_batchnorm(f, rng))]).unwrap()
    }

    /// Dense → activation → dense; ReLU kinks are vanishingly unlikely
    /// within one finite-difference step of a random pre-activation.
    pub fn activation_net<R: Rng>(act: Activation, rng: &mut R) -> Network {
        let mut layer = latent_anchors::diffnet::random_dense(3, 4, rng);
        layer.bias = Array1::from_shape_fn(4, |_| rng.sample(StandardNormal));
        Network::new(
            3,
            vec![
                Layer::Dense(layer),
                Layer::Activation(act),
                Layer::Dense(latent_anchors::diffnet::random_dense(4, 2, rng)),
            ],
        )
        .unwrap()
    }

    pub fn composed_net<R: Rng>(rng: &mut R) -> Network {
        Network::new(
            4,
            vec![
                Layer::Dense(latent_anchors::diffnet::random_dense(4, 5, rng)),
                Layer::BatchNorm(random_batchnorm(5, rng)),
                Layer::Activation(Activation::Tanh),
                Layer::Dense(latent_anchors::diffnet::random_dense(5, 3, rng)),
                Layer::Activation(Activation::Sigmoid),
            ],
        )
        .unwrap()
    }

    /// Gradient of `Σ U ∘ G(Z)` with respect to the latent batch.
    pub fn generator_error<R: Rng>(
        g: &Generator,
        batch: usize,
        mode: BatchNormMode,
        rng: &mut R,
    ) -> f64 {
        let z = normal_matrix(batch, g.latent_dim(), rng);
        let u = normal_matrix(batch, g.pixel_count(), rng);
        let trace = g.forward_traced(&z, mode).unwrap();
        let analytic: Vec<f64> = g
            .backward_latent(&trace, &u)
            .unwrap()
            .iter()
            .copied()
            .collect();
        let numeric = numeric_gradient(
            |v| {
                let zv = Array2::from_shape_vec(z.dim(), v.to_vec()).unwrap();
                dot(&g.generate_batch(&zv, mode).unwrap(), &u)
            },
            &z.iter().copied().collect::<Vec<_>>(),
            H,
        );
        relative_error(&analytic, &numeric)
    }

    pub fn small_blob<R: Rng>(rng: &mut R) -> Generator {
        let blobs = rng.random_range(1..4);
        Generator::AnalyticBlob(
            BlobGenerator::new(blobs, 2.0 + 4.0 * rng.random::<f64>(), 8, 8).unwrap(),
        )
    }

    pub fn small_mlp_generator<R: Rng>(rng: &mut R) -> Generator {
        let net = Network::new(
            3,
            vec![
                Layer::Dense(latent_anchors::diffnet::random_dense(3, 6, rng)),
                Layer::BatchNorm(random_batchnorm(6, rng)),
                Layer::Activation(Activation::Tanh),
                Layer::Dense(latent_anchors::diffnet::random_dense(6, 16, rng)),
            ],
        )
        .unwrap();
        Generator::Mlp(MlpGenerator::new(net, 4, 4).unwrap())
    }

    /// Encoder objective over its parameters: d = 4, N = 2, 8×8 images.
    pub fn encoder_error<R: Rng>(rng: &mut R) -> f64 {
        let g = Generator::AnalyticBlob(BlobGenerator::new(1, 4.0, 8, 8).unwrap());
        let params = DiversityParams {
            lambda: rng.random::<f64>() * 2.0,
            target_distance: 0.5 + rng.random::<f64>() * 2.0,
            l2: rng.random::<f64>() * 0.1,
        };
        let enc = DiverseEncoder::mlp(64, 5, 2, 4, params, rng).unwrap();
        let b = 3;
        let images: Vec<Image> = (0..b)
            .map(|_| Image::new(8, 8, (0..64).map(|_| rng.random::<f64>()).collect()).unwrap())
            .collect();
        let masks: Vec<BinaryMask> = (0..b)
            .map(|_| {
                BinaryMask::new(8, 8, (0..64).map(|_| rng.random::<f64>() < 0.5).collect()).unwrap()
            })
            .collect();
        let (_, grads) = diverse_loss(&enc, &g, &images, &masks).unwrap();
        let analytic = enc.network().flat_grads(&grads).unwrap();
        let mut probe = enc.clone();
        let numeric = numeric_gradient(
            |p| {
                probe.network_mut().set_flat_params(p).unwrap();
                diverse_loss(&probe, &g, &images, &masks).unwrap().0.total
            },
            &enc.network().flat_params(),
            H,
        );
        relative_error(&analytic, &numeric)
    }
}
