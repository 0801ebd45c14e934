//! SLIC superpixels for grayscale images.

use std::collections::VecDeque;

use super::SegmentMap;
use crate::error::{Error, Result};
use crate::image::Image;

const LIGHTNESS_SCALE: f64 = 100.0;
const ITERATIONS: usize = 10;

#[derive(Debug, Clone, Copy)]
struct Center {
    row: f64,
    col: f64,
    value: f64,
}

/// k-means over `(intensity, row, col)` seeded on a regular grid, with
/// distance `D² = (ΔL / m)² + (d_xy / S)²` where `L` is intensity on a 0–100
/// scale, `m` the compactness and `S` the grid step. Disconnected fragments
/// are merged into a neighbour afterwards; the result has at most
/// `n_segments` segments.
pub fn slic(image: &Image, n_segments: usize, compactness: f64) -> Result<SegmentMap> {
    if n_segments == 0 {
        return Err(Error::InvalidParameter("n_segments must be >= 1".into()));
    }
    if !(compactness > 0.0) {
        return Err(Error::InvalidParameter("compactness must be > 0".into()));
    }
    if !image.is_finite() {
        return Err(Error::NonFinite {
            tensor: "slic input image".into(),
        });
    }
    let (h, w) = image.shape();
    let n = h * w;
    let n_segments = n_segments.min(n);

    let cols =
        ((n_segments as f64 * w as f64 / h as f64).sqrt().round() as usize).clamp(1, n_segments);
    let rows = (n_segments / cols).max(1);
    let step_r = h as f64 / rows as f64;
    let step_c = w as f64 / cols as f64;
    let step = (n as f64 / (rows * cols) as f64).sqrt();
    let lum = |i: usize| LIGHTNESS_SCALE * image.pixels()[i];

    let mut centers: Vec<Center> = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r, c)))
        .map(|(r, c)| {
            let row = (r as f64 + 0.5) * step_r;
            let col = (c as f64 + 0.5) * step_c;
            let idx = (row.floor() as usize).min(h - 1) * w + (col.floor() as usize).min(w - 1);
            Center {
                row,
                col,
                value: lum(idx),
            }
        })
        .collect();

    let mut assign = vec![0usize; n];
    for _ in 0..ITERATIONS {
        for (i, a) in assign.iter_mut().enumerate() {
            let (pr, pc) = ((i / w) as f64 + 0.5, (i % w) as f64 + 0.5);
            let v = lum(i);
            let mut best = (f64::INFINITY, 0);
            for (k, c) in centers.iter().enumerate() {
                let dc = (v - c.value) / compactness;
                let ds = ((pr - c.row).powi(2) + (pc - c.col).powi(2)) / (step * step);
                let d = dc * dc + ds;
                if d < best.0 {
                    best = (d, k);
                }
            }
            *a = best.1;
        }
        let mut sums = vec![(0.0, 0.0, 0.0, 0usize); centers.len()];
        for (i, &a) in assign.iter().enumerate() {
            let s = &mut sums[a];
            s.0 += (i / w) as f64 + 0.5;
            s.1 += (i % w) as f64 + 0.5;
            s.2 += lum(i);
            s.3 += 1;
        }
        for (c, s) in centers.iter_mut().zip(&sums) {
            if s.3 > 0 {
                let k = s.3 as f64;
                *c = Center {
                    row: s.0 / k,
                    col: s.1 / k,
                    value: s.2 / k,
                };
            }
        }
    }

    let mut labels = connected_components(&assign, h, w);
    let min_size = ((step * step) / 4.0).floor().max(1.0) as usize;
    merge_small(&mut labels, h, w, |count, size| {
        size < min_size || count > n_segments
    });
    SegmentMap::from_raw_labels(h, w, &labels)
}

fn neighbors(i: usize, h: usize, w: usize) -> impl Iterator<Item = usize> {
    let (r, c) = (i / w, i % w);
    [
        (r > 0).then(|| i - w),
        (r + 1 < h).then(|| i + w),
        (c > 0).then(|| i - 1),
        (c + 1 < w).then(|| i + 1),
    ]
    .into_iter()
    .flatten()
}

/// 4-connected components of equal assignment, labelled `0..C`.
fn connected_components(assign: &[usize], h: usize, w: usize) -> Vec<usize> {
    let mut labels = vec![usize::MAX; assign.len()];
    let mut next = 0;
    let mut queue = VecDeque::new();
    for start in 0..assign.len() {
        if labels[start] != usize::MAX {
            continue;
        }
        labels[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            for j in neighbors(i, h, w) {
                if labels[j] == usize::MAX && assign[j] == assign[i] {
                    labels[j] = next;
                    queue.push_back(j);
                }
            }
        }
        next += 1;
    }
    labels
}

/// Repeatedly merges the smallest component into its largest neighbour while
/// `should_merge(component_count, smallest_size)` holds.
fn merge_small(
    labels: &mut [usize],
    h: usize,
    w: usize,
    should_merge: impl Fn(usize, usize) -> bool,
) {
    loop {
        let count = labels.iter().max().map_or(0, |m| m + 1);
        let mut sizes = vec![0usize; count];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let present: Vec<usize> = (0..count).filter(|&l| sizes[l] > 0).collect();
        if present.len() <= 1 {
            return;
        }
        let smallest = *present
            .iter()
            .min_by_key(|&&l| (sizes[l], l))
            .expect("non-empty");
        if !should_merge(present.len(), sizes[smallest]) {
            return;
        }
        let mut best: Option<usize> = None;
        for i in (0..labels.len()).filter(|&i| labels[i] == smallest) {
            for j in neighbors(i, h, w) {
                let l = labels[j];
                if l != smallest
                    && best.is_none_or(|b| (sizes[l], usize::MAX - l) > (sizes[b], usize::MAX - b))
                {
                    best = Some(l);
                }
            }
        }
        let Some(target) = best else { return };
        for l in labels.iter_mut() {
            if *l == smallest {
                *l = target;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn one_segment_requested() {
        let img = Image::filled(6, 6, 0.3);
        assert_eq!(slic(&img, 1, 20.0).unwrap().count(), 1);
    }

    #[test]
    fn constant_image_splits_into_quadrants() {
        let img = Image::filled(16, 16, 0.5);
        let seg = slic(&img, 4, 20.0).unwrap();
        assert_eq!(seg.count(), 4);
        for size in seg.segment_sizes() {
            assert!((48..=80).contains(&size), "size {size}");
        }
        assert_ne!(seg.label(0, 0), seg.label(15, 15));
    }

    #[test]
    fn labels_complete_on_random_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let px: Vec<f64> = (0..20 * 14).map(|_| rng.random()).collect();
            let img = Image::new(20, 14, px).unwrap();
            let seg = slic(&img, 10, 20.0).unwrap();
            assert!(seg.count() >= 1 && seg.count() <= 10);
            assert!(seg.segment_sizes().iter().all(|&s| s > 0));
        }
    }
}
