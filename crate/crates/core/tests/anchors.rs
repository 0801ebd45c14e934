use std::collections::BTreeSet;

use latent_anchors::anchors::{
    explain, fresh_precision, AnchorResult, CoveragePool, ExplainConfig,
};
use latent_anchors::perturb::{stitch_sample, PerturbationSampler, SamplerRng, StitchSampler};
use latent_anchors::segmentation::{mask_from_anchor, AnchorSet, SegmentMap};
use latent_anchors::Image;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

/// 8×8 image cut into a 4×4 grid of 2×2 segments.
fn grid() -> SegmentMap {
    let raw: Vec<usize> = (0..64).map(|i| (i / 8 / 2) * 4 + (i % 8) / 2).collect();
    SegmentMap::from_raw_labels(8, 8, &raw).unwrap()
}

fn noise_pool(n: usize, seed: u64) -> Vec<Image> {
    let mut rng = SamplerRng::seed_from_u64(seed);
    (0..n)
        .map(|_| Image::new(8, 8, (0..64).map(|_| rng.random::<f64>()).collect()).unwrap())
        .collect()
}

fn left_half_bright(img: &Image) -> usize {
    let mut sum = 0.0;
    for r in 0..8 {
        for c in 0..4 {
            sum += img.get(r, c);
        }
    }
    usize::from(sum / 32.0 > 0.6)
}

fn bright_left() -> Image {
    let mut x = Image::zeros(8, 8);
    for r in 0..8 {
        for c in 0..4 {
            x.set(r, c, 1.0);
        }
    }
    x
}

fn run(seed: u64) -> AnchorResult {
    let sampler = StitchSampler::new(noise_pool(200, 1)).unwrap();
    let cfg = ExplainConfig {
        seed,
        ..ExplainConfig::default()
    };
    explain(&bright_left(), &left_half_bright, &grid(), &sampler, &cfg).unwrap()
}

#[test]
fn same_seed_same_explanation() {
    let (a, b) = (run(3), run(3));
    assert_eq!(a.anchor, b.anchor);
    assert_eq!(a.precision, b.precision);
    assert_eq!(a.samples, b.samples);
    assert_eq!(a.beams, b.beams);
}

#[test]
fn beams_are_bounded_and_distinct() {
    let res = run(0);
    for (size, beam) in res.beams.iter().enumerate() {
        assert!(!beam.is_empty() && beam.len() <= 4);
        let distinct: BTreeSet<_> = beam.iter().collect();
        assert_eq!(distinct.len(), beam.len());
        assert!(beam.iter().all(|a| a.len() == size + 1));
    }
}

#[test]
fn left_half_anchor_holds_on_fresh_samples() {
    let res = run(1);
    assert!(!res.best_effort);
    assert!(res.precision_lb >= 0.95 || res.precision >= 0.95);
    let sampler = StitchSampler::new(noise_pool(200, 99)).unwrap();
    let mut rng = SamplerRng::seed_from_u64(5);
    let fresh = fresh_precision(
        &res.anchor,
        &bright_left(),
        &left_half_bright,
        &grid(),
        &sampler,
        2000,
        &mut rng,
    )
    .unwrap();
    assert!(fresh >= 0.95, "fresh precision {fresh}");
    // Only left-half segments carry information.
    assert!(res.anchor.ids().iter().all(|&id| id % 4 < 2));
}

#[test]
fn full_anchor_reproduces_the_input() {
    let x = bright_left();
    let seg = grid();
    let mask = mask_from_anchor(&seg, &AnchorSet::full(seg.count()));
    let sampler = StitchSampler::new(noise_pool(20, 2)).unwrap();
    let mut rng = SamplerRng::seed_from_u64(0);
    for z in sampler.draw(&x, &mask, 20, &mut rng).unwrap() {
        assert_eq!(z, x);
    }
}

#[test]
fn reported_precision_matches_brute_force_under_parity() {
    // Label is the parity of bright cells among the four corner segments, so
    // no proper subset of them pins the label.
    let corners = [(0, 0), (0, 7), (7, 0), (7, 7)];
    let parity = move |img: &Image| {
        corners
            .iter()
            .filter(|&&(r, c)| img.get(r, c) > 0.5)
            .count()
            % 2
    };
    let x = Image::filled(8, 8, 0.9);
    let pool = noise_pool(300, 4);
    let sampler = StitchSampler::new(pool.clone()).unwrap();
    let seg = grid();
    let target = parity(&x);
    for seed in 0..3 {
        let cfg = ExplainConfig {
            seed,
            ..ExplainConfig::default()
        };
        let res = explain(&x, &parity, &seg, &sampler, &cfg).unwrap();
        let mask = mask_from_anchor(&seg, &res.anchor);
        let exact = pool
            .iter()
            .filter(|b| {
                let mut rng = SamplerRng::seed_from_u64(0);
                let y = stitch_sample(&x, &mask, std::slice::from_ref(*b), &mut rng).unwrap();
                parity(&y) == target
            })
            .count() as f64
            / pool.len() as f64;
        assert!(
            (res.precision - exact).abs() <= 0.07,
            "seed {seed}: reported {} exact {exact}",
            res.precision
        );
    }
}

proptest! {
    #[test]
    fn coverage_shrinks_as_anchors_grow(ids in prop::collection::btree_set(0usize..12, 0..6), extra in 0usize..12, seed in 0u64..50) {
        let mut rng = SamplerRng::seed_from_u64(seed);
        let pool = CoveragePool::random(12, 200, 0.5, &mut rng).unwrap();
        let a = AnchorSet::new(ids, 12).unwrap();
        prop_assert_eq!(pool.coverage(&AnchorSet::empty()), 1.0);
        if let Some(b) = a.with(extra) {
            prop_assert!(pool.coverage(&b) <= pool.coverage(&a));
        }
    }
}
