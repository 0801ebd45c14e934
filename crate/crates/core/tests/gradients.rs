mod common;

use common::grad::*;
use latent_anchors::diffnet::{Activation, BatchNormMode};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-5;

#[test]
fn dense_layer_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let net = dense_net(&mut rng);
        let (ex, ep) = network_errors(&net, 4, BatchNormMode::RunningStats, &mut rng);
        assert!(ex <= TOL && ep <= TOL, "{ex} {ep}");
    }
}

#[test]
fn batchnorm_both_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for mode in [BatchNormMode::BatchStats, BatchNormMode::RunningStats] {
        for _ in 0..20 {
            let net = batchnorm_net(&mut rng);
            let (ex, ep) = network_errors(&net, 8, mode, &mut rng);
            assert!(ex <= TOL && ep <= TOL, "{mode:?}: {ex} {ep}");
        }
    }
}

#[test]
fn activations() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for act in [
        Activation::Tanh,
        Activation::Sigmoid,
        Activation::Relu,
        Activation::Identity,
    ] {
        for _ in 0..10 {
            let net = activation_net(act, &mut rng);
            let (ex, ep) = network_errors(&net, 3, BatchNormMode::RunningStats, &mut rng);
            assert!(ex <= TOL && ep <= TOL, "{act:?}: {ex} {ep}");
        }
    }
}

#[test]
fn composed_network_in_both_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for mode in [BatchNormMode::BatchStats, BatchNormMode::RunningStats] {
        for _ in 0..10 {
            let net = composed_net(&mut rng);
            let (ex, ep) = network_errors(&net, 6, mode, &mut rng);
            assert!(ex <= TOL && ep <= TOL, "{mode:?}: {ex} {ep}");
        }
    }
}

#[test]
fn generators_latent_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let g = small_blob(&mut rng);
        let e = generator_error(&g, 2, BatchNormMode::RunningStats, &mut rng);
        assert!(e <= TOL, "blob {e}");
    }
    for mode in [BatchNormMode::BatchStats, BatchNormMode::RunningStats] {
        for _ in 0..10 {
            let g = small_mlp_generator(&mut rng);
            let e = generator_error(&g, 3, mode, &mut rng);
            assert!(e <= TOL, "mlp {mode:?} {e}");
        }
    }
}

#[test]
fn encoder_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..5 {
        let e = encoder_error(&mut rng);
        assert!(e <= 1e-4, "{e}");
    }
}
