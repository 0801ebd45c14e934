use latent_anchors::bandit::{
    bernoulli_kl, beta_schedule, kl_lower_bound, kl_lucb_top, kl_upper_bound, BanditArmState,
    LucbConfig,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #[test]
    fn bounds_sandwich_the_mean(n in 1u64..5000, frac in 0.0f64..=1.0, beta in 0.01f64..20.0) {
        let s = (frac * n as f64).round() as u64;
        let p = s as f64 / n as f64;
        let lb = kl_lower_bound(p, n, beta);
        let ub = kl_upper_bound(p, n, beta);
        prop_assert!(0.0 <= lb && lb <= p + 1e-12, "lb {lb} p {p}");
        prop_assert!(p - 1e-12 <= ub && ub <= 1.0, "ub {ub} p {p}");
        prop_assert!(n as f64 * bernoulli_kl(p, lb) <= beta + 1e-4);
        prop_assert!(n as f64 * bernoulli_kl(p, ub) <= beta + 1e-4);
    }

    #[test]
    fn bounds_are_tight_away_from_the_edges(n in 1u64..5000, p in 0.05f64..0.95, beta in 0.01f64..5.0) {
        let ub = kl_upper_bound(p, n, beta);
        let lb = kl_lower_bound(p, n, beta);
        // Nudging a bound outward by more than the bisection tolerance must
        // cross the level, unless the bound already sits at the interval edge.
        let step = 2e-6;
        prop_assert!(ub + step > 1.0 || n as f64 * bernoulli_kl(p, ub + step) > beta);
        prop_assert!(lb - step < 0.0 || n as f64 * bernoulli_kl(p, lb - step) > beta);
    }

    #[test]
    fn width_shrinks_with_more_pulls(n in 1u64..2000, p in 0.0f64..=1.0, beta in 0.1f64..10.0) {
        let w1 = kl_upper_bound(p, n, beta) - kl_lower_bound(p, n, beta);
        let w2 = kl_upper_bound(p, 4 * n, beta) - kl_lower_bound(p, 4 * n, beta);
        prop_assert!(w2 <= w1 + 1e-9, "{w1} -> {w2}");
    }

    #[test]
    fn arm_state_bounds_contain_mean(pulls in 1u64..1000, frac in 0.0f64..=1.0, t in 1u64..500) {
        let mut arm = BanditArmState::new();
        arm.record((frac * pulls as f64) as u64, pulls);
        arm.update_bounds(beta_schedule(t, 10, 0.05));
        prop_assert!(arm.lb <= arm.mean() && arm.mean() <= arm.ub);
    }
}

#[test]
fn beta_grows_with_rounds_and_arms_and_confidence() {
    let mut prev = beta_schedule(1, 5, 0.1);
    for t in 2..200 {
        let b = beta_schedule(t, 5, 0.1);
        assert!(b > prev);
        prev = b;
    }
    assert!(beta_schedule(10, 6, 0.1) > beta_schedule(10, 5, 0.1));
    assert!(beta_schedule(10, 5, 0.01) > beta_schedule(10, 5, 0.1));
}

#[test]
fn identical_arms_terminate_within_epsilon() {
    let cfg = LucbConfig {
        top: 1,
        delta: 0.05,
        epsilon: 0.2,
        batch_per_pull: 10,
        max_samples: 1_000_000,
    };
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut arms = vec![BanditArmState::new(); 2];
        let out = kl_lucb_top(&mut arms, &cfg, |_, n| {
            let hits = (0..n).filter(|_| rng.random::<f64>() < 0.5).count() as u64;
            Ok((hits, n))
        })
        .unwrap();
        assert!(out.certified, "seed {seed}");
        assert!(out.samples_drawn < 1_000_000);
    }
}

#[test]
fn top_two_of_four_separated_arms() {
    let means = [0.9, 0.2, 0.8, 0.3];
    let cfg = LucbConfig {
        top: 2,
        delta: 0.05,
        epsilon: 0.05,
        ..LucbConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut arms = vec![BanditArmState::new(); 4];
    let out = kl_lucb_top(&mut arms, &cfg, |a, n| {
        let hits = (0..n).filter(|_| rng.random::<f64>() < means[a]).count() as u64;
        Ok((hits, n))
    })
    .unwrap();
    assert!(out.certified);
    assert_eq!(out.selected, vec![0, 2]);
}

#[test]
fn budget_exhaustion_is_reported() {
    let cfg = LucbConfig {
        top: 1,
        delta: 0.01,
        epsilon: 0.001,
        batch_per_pull: 10,
        max_samples: 200,
    };
    let mut arms = vec![BanditArmState::new(); 3];
    let out = kl_lucb_top(&mut arms, &cfg, |a, n| Ok((n * a as u64 / 4, n))).unwrap();
    assert!(!out.certified);
    assert!(out.samples_drawn <= 200);
    assert_eq!(out.selected.len(), 1);
}
