use latent_anchors::dataio::{
    gen_blob_world, load_idx, load_image, save_idx, save_image, train_classifier, ClassifierModel,
    ClassifierTrainConfig,
};
use latent_anchors::diffnet::BatchNormMode;
use latent_anchors::generators::{
    distill_mlp, load_generator, save_generator, DistillConfig, Generator,
};
use latent_anchors::Image;
use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn latents(d: usize, n: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, d), |_| StandardNormal.sample(&mut rng))
}

#[test]
fn generators_survive_save_and_load_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = DistillConfig {
        steps: 20,
        ..DistillConfig::default()
    };
    let (mlp, _) = distill_mlp(&Generator::default_blob(), &cfg, &mut rng).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for (k, g) in [Generator::default_blob(), mlp].into_iter().enumerate() {
        let path = dir.path().join(format!("g{k}.json"));
        save_generator(&g, &path).unwrap();
        let back = load_generator(&path).unwrap();
        let z = latents(g.latent_dim(), 100, 1);
        for mode in [BatchNormMode::RunningStats, BatchNormMode::BatchStats] {
            let (a, b) = (
                g.generate_batch(&z, mode).unwrap(),
                back.generate_batch(&z, mode).unwrap(),
            );
            assert!(a
                .iter()
                .zip(b.iter())
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}

#[test]
fn truncated_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let g_path = dir.path().join("g.json");
    save_generator(&Generator::default_blob(), &g_path).unwrap();
    let text = std::fs::read(&g_path).unwrap();
    std::fs::write(&g_path, &text[..text.len() / 2]).unwrap();
    assert!(load_generator(&g_path).is_err());

    let ds = gen_blob_world(5, 1).unwrap();
    let (img, lbl) = (dir.path().join("i.idx"), dir.path().join("l.idx"));
    save_idx(&ds, &img, &lbl).unwrap();
    let bytes = std::fs::read(&img).unwrap();
    std::fs::write(&img, &bytes[..bytes.len() - 3]).unwrap();
    assert!(load_idx(&img, &lbl).is_err());

    let pgm = dir.path().join("x.pgm");
    save_image(&ds.images()[0], &pgm).unwrap();
    let bytes = std::fs::read(&pgm).unwrap();
    std::fs::write(&pgm, &bytes[..bytes.len() - 1]).unwrap();
    assert!(load_image(&pgm).is_err());
}

#[test]
fn dataset_and_classifier_are_reproducible() {
    let (a, b) = (
        gen_blob_world(300, 4).unwrap(),
        gen_blob_world(300, 4).unwrap(),
    );
    assert_eq!(a.images(), b.images());
    assert_eq!(a.labels(), b.labels());
    assert_ne!(gen_blob_world(300, 5).unwrap().images(), a.images());
    let cfg = ClassifierTrainConfig {
        epochs: 2,
        ..ClassifierTrainConfig::default()
    };
    let train = |seed| train_classifier(&a, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let ((m1, r1), (m2, r2)) = (train(9), train(9));
    assert_eq!(m1, m2);
    assert_eq!(r1, r2);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clf.json");
    m1.save(&path).unwrap();
    let back = ClassifierModel::load(&path).unwrap();
    assert_eq!(
        back.predict_batch(a.images()).unwrap(),
        m1.predict_batch(a.images()).unwrap()
    );
}

#[test]
fn idx_round_trip_quantizes_once() {
    let ds = gen_blob_world(20, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (img, lbl) = (dir.path().join("i.idx"), dir.path().join("l.idx"));
    save_idx(&ds, &img, &lbl).unwrap();
    let back = load_idx(&img, &lbl).unwrap();
    assert_eq!(back.labels(), ds.labels());
    for (x, y) in ds.images().iter().zip(back.images()) {
        assert!(x.max_abs_diff(y) <= 0.5 / 255.0 + 1e-12);
    }
    save_idx(&back, &img, &lbl).unwrap();
    assert_eq!(load_idx(&img, &lbl).unwrap().images(), back.images());
}

fn image_strategy() -> impl Strategy<Value = Image> {
    (1usize..20, 1usize..20).prop_flat_map(|(h, w)| {
        prop::collection::vec(0.0f64..=1.0, h * w).prop_map(move |px| Image::new(h, w, px).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pgm_and_png_errors_stay_within_half_a_level(img in image_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        for ext in ["pgm", "png"] {
            let path = dir.path().join(format!("x.{ext}"));
            save_image(&img, &path).unwrap();
            let back = load_image(&path).unwrap();
            prop_assert_eq!(back.shape(), img.shape());
            prop_assert!(img.max_abs_diff(&back) <= 0.5 / 255.0 + 1e-12);
            save_image(&back, &path).unwrap();
            prop_assert_eq!(load_image(&path).unwrap(), back);
        }
    }
}
