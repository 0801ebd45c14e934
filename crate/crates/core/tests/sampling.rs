use latent_anchors::diffnet::{BatchNormMode, DenseParams, Layer, Network};
use latent_anchors::encoder::{DiverseEncoder, DiversityParams};
use latent_anchors::generators::Generator;
use latent_anchors::perturb::{
    anchor_mse, patch_up, stitch_sample, GanSampler, InitSource, PerturbationSampler,
    SamplerConfig, SamplerRng, StitchSampler,
};
use latent_anchors::{BinaryMask, Image};
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

fn latent(g: &Generator, seed: u64) -> Vec<f64> {
    let mut rng = SamplerRng::seed_from_u64(seed);
    (0..g.latent_dim())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect()
}

fn left_half(h: usize, w: usize) -> BinaryMask {
    BinaryMask::new(h, w, (0..h * w).map(|i| i % w < w / 2).collect()).unwrap()
}

/// An encoder that ignores its input and always proposes `z`.
fn constant_encoder(z: &[f64], pixels: usize) -> DiverseEncoder {
    let dense =
        DenseParams::new(Array2::zeros((z.len(), pixels)), Array1::from(z.to_vec())).unwrap();
    let net = Network::new(pixels, vec![Layer::Dense(dense)]).unwrap();
    DiverseEncoder::new(net, 1, z.len(), DiversityParams::default()).unwrap()
}

#[test]
fn full_mask_recovers_a_generated_image_near_its_latent() {
    let g = Generator::default_blob();
    let (h, w) = g.shape();
    let mask = BinaryMask::ones(h, w);
    let cfg = SamplerConfig {
        init: InitSource::EncoderSeeded,
        init_noise: 0.1,
        ..SamplerConfig::default()
    };
    for seed in 0..5 {
        let z_star = latent(&g, seed);
        let x = g.generate(&z_star).unwrap();
        let enc = constant_encoder(&z_star, g.pixel_count());
        let sampler = GanSampler::with_encoder(&g, cfg.clone(), &enc).unwrap();
        let mut rng = SamplerRng::seed_from_u64(100 + seed);
        let s = sampler
            .sample_single_with_threshold(&x, &mask, 1e-4, &mut rng)
            .unwrap();
        assert!(s.anchor_mse < 1e-4, "seed {seed}: {}", s.anchor_mse);
        assert!(anchor_mse(&x, &mask, &s.generated).unwrap() < 1e-4);
    }
}

#[test]
fn same_seed_same_samples() {
    let g = Generator::default_blob();
    let (h, w) = g.shape();
    let x = g.generate(&latent(&g, 1)).unwrap();
    let mask = left_half(h, w);
    let sampler = GanSampler::new(&g, SamplerConfig::default()).unwrap();
    let draw = |seed| {
        let mut rng = SamplerRng::seed_from_u64(seed);
        sampler.draw(&x, &mask, 8, &mut rng).unwrap()
    };
    assert_eq!(draw(4), draw(4));
    assert_ne!(draw(4), draw(5));
}

#[test]
fn batch_of_one_matches_single_sampling() {
    let g = Generator::default_blob();
    let (h, w) = g.shape();
    let x = g.generate(&latent(&g, 2)).unwrap();
    let mask = left_half(h, w);
    let x_hat = x.masked(&mask).unwrap();
    let cfg = SamplerConfig {
        batch_size: 1,
        threshold_sampling: false,
        bn_mode: BatchNormMode::RunningStats,
        ..SamplerConfig::default()
    };
    let sampler = GanSampler::new(&g, cfg.clone()).unwrap();
    let single = sampler
        .sample_single(&x_hat, &mask, &mut SamplerRng::seed_from_u64(8))
        .unwrap();
    let batch = sampler
        .sample_batch(
            &x_hat,
            &mask,
            &[cfg.max_threshold],
            &mut SamplerRng::seed_from_u64(8),
        )
        .unwrap();
    assert_eq!(batch.len(), 1);
    assert_eq!(batch[0].latent, single.latent);
    assert_eq!(batch[0].image, single.image);
}

#[test]
fn batch_samples_meet_their_thresholds() {
    let g = Generator::default_blob();
    let (h, w) = g.shape();
    let x = g.generate(&latent(&g, 3)).unwrap();
    let mask = left_half(h, w);
    let x_hat = x.masked(&mask).unwrap();
    let sampler = GanSampler::new(&g, SamplerConfig::default()).unwrap();
    let mut rng = SamplerRng::seed_from_u64(1);
    let thr = sampler.thresholds(16, &mut rng).unwrap();
    let out = sampler.sample_batch(&x_hat, &mask, &thr, &mut rng).unwrap();
    assert_eq!(out.len(), 16);
    for s in &out {
        assert!(s.anchor_mse <= s.threshold);
        assert!(anchor_mse(&x_hat, &mask, &s.image).unwrap() <= 1e-24);
        let back = patch_up(&mask, &s.generated, &x_hat).unwrap();
        assert_eq!(back, s.image);
    }
    let mut used: Vec<f64> = out.iter().map(|s| s.threshold).collect();
    let mut want = thr.clone();
    used.sort_by(f64::total_cmp);
    want.sort_by(f64::total_cmp);
    assert_eq!(used, want);
}

#[test]
fn stitch_takes_the_whole_background_from_one_pool_image() {
    let pool: Vec<Image> = (0..5)
        .map(|k| Image::filled(6, 6, 0.1 * (k + 1) as f64))
        .collect();
    let x = Image::filled(6, 6, 0.95);
    let mask = left_half(6, 6);
    let sampler = StitchSampler::new(pool.clone()).unwrap();
    let mut rng = SamplerRng::seed_from_u64(0);
    for y in sampler.draw(&x, &mask, 50, &mut rng).unwrap() {
        let bg: Vec<f64> = y
            .pixels()
            .iter()
            .zip(mask.bits())
            .filter(|(_, &a)| !a)
            .map(|(&v, _)| v)
            .collect();
        assert!(pool.iter().any(|b| b.pixels()[0] == bg[0]));
        assert!(bg.iter().all(|&v| v == bg[0]));
        for (v, &a) in y.pixels().iter().zip(mask.bits()) {
            if a {
                assert_eq!(*v, 0.95);
            }
        }
    }
}

fn mask_and_images() -> impl Strategy<Value = (BinaryMask, Image, Image)> {
    (1usize..10, 1usize..10).prop_flat_map(|(h, w)| {
        let n = h * w;
        (
            prop::collection::vec(any::<bool>(), n),
            prop::collection::vec(0.0f64..=1.0, n),
            prop::collection::vec(0.0f64..=1.0, n),
        )
            .prop_map(move |(bits, a, b)| {
                (
                    BinaryMask::new(h, w, bits).unwrap(),
                    Image::new(h, w, a).unwrap(),
                    Image::new(h, w, b).unwrap(),
                )
            })
    })
}

proptest! {
    #[test]
    fn patch_up_keeps_anchor_and_background((mask, generated, x) in mask_and_images()) {
        let x_hat = x.masked(&mask).unwrap();
        let y = patch_up(&mask, &generated, &x_hat).unwrap();
        for i in 0..y.len() {
            let want = if mask.bits()[i] { x.pixels()[i] } else { generated.pixels()[i] };
            prop_assert_eq!(y.pixels()[i], want);
        }
        prop_assert_eq!(anchor_mse(&x_hat, &mask, &y).unwrap(), 0.0);
    }

    #[test]
    fn stitch_is_a_partition((mask, x, b) in mask_and_images(), seed in 0u64..100) {
        let mut rng = SamplerRng::seed_from_u64(seed);
        let y = stitch_sample(&x, &mask, std::slice::from_ref(&b), &mut rng).unwrap();
        for i in 0..y.len() {
            let want = if mask.bits()[i] { x.pixels()[i] } else { b.pixels()[i] };
            prop_assert_eq!(y.pixels()[i], want);
        }
    }
}
