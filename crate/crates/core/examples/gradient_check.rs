//! Compares analytic latent gradients of a batch-norm MLP generator and the
//! blob renderer against central differences.

use latent_anchors::diffnet::BatchNormMode;
use latent_anchors::generators::{distill_mlp, DistillConfig, Generator};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn check(name: &str, g: &Generator, mode: BatchNormMode, rng: &mut ChaCha8Rng) {
    let (n, d, px) = (4, g.latent_dim(), g.pixel_count());
    let z = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.5..1.5));
    let up = Array2::from_shape_fn((n, px), |_| rng.random_range(-1.0..1.0));
    let objective = |z: &Array2<f64>| (&g.generate_batch(z, mode).unwrap() * &up).sum();
    let trace = g.forward_traced(&z, mode).unwrap();
    let analytic = g.backward_latent(&trace, &up).unwrap();
    let h = 1e-5;
    let (mut num, mut diff) = (0.0f64, 0.0f64);
    for i in 0..n {
        for k in 0..d {
            let mut plus = z.clone();
            plus[[i, k]] += h;
            let mut minus = z.clone();
            minus[[i, k]] -= h;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            num += fd * fd;
            diff += (fd - analytic[[i, k]]).powi(2);
        }
    }
    println!(
        "{name:<28} {mode:?}: relative error {:.2e}",
        (diff / num.max(1e-300)).sqrt()
    );
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let blob = Generator::default_blob();
    let cfg = DistillConfig {
        steps: 50,
        ..DistillConfig::default()
    };
    let (mlp, _) = distill_mlp(&blob, &cfg, &mut rng).expect("distill");
    check(
        "blob renderer",
        &blob,
        BatchNormMode::RunningStats,
        &mut rng,
    );
    for mode in [BatchNormMode::BatchStats, BatchNormMode::RunningStats] {
        check("batch-norm MLP generator", &mlp, mode, &mut rng);
    }
}
