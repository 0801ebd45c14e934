//! Quickshift mode seeking on a grayscale image.
//!
//! Each pixel is a point `(row, col, ratio · 100 · intensity)`; intensities
//! are lifted to a 0–100 lightness scale so `ratio = 1` weighs a full
//! black-to-white step like 100 pixels of spatial distance. Density is a
//! Gaussian Parzen estimate with bandwidth `kernel_size`. Every pixel points
//! at its nearest neighbour of strictly higher rank, where rank orders by
//! density and breaks ties toward the smaller pixel index, so the links form
//! a single tree. Cutting links longer than `max_dist` leaves a forest whose
//! trees are the segments. The links do not depend on `max_dist`, so the
//! segment count is non-increasing in it.

use std::cmp::Ordering;

use super::SegmentMap;
use crate::error::{Error, Result};
use crate::image::Image;

const LIGHTNESS_SCALE: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuickshiftParams {
    pub kernel_size: f64,
    pub ratio: f64,
}

impl Default for QuickshiftParams {
    fn default() -> Self {
        Self {
            kernel_size: 2.0,
            ratio: 1.0,
        }
    }
}

/// Density-ordered parent links, independent of `max_dist`.
#[derive(Debug, Clone)]
pub struct QuickshiftForest {
    height: usize,
    width: usize,
    parent: Vec<Option<usize>>,
    parent_dist: Vec<f64>,
}

impl QuickshiftForest {
    /// Number of segments produced by [`QuickshiftForest::cut`] at `max_dist`.
    pub fn count_at(&self, max_dist: f64) -> usize {
        self.parent
            .iter()
            .zip(&self.parent_dist)
            .filter(|(p, &d)| p.is_none() || d > max_dist)
            .count()
    }

    pub fn cut(&self, max_dist: f64) -> SegmentMap {
        let n = self.parent.len();
        let linked = |i: usize| match self.parent[i] {
            Some(p) if self.parent_dist[i] <= max_dist => Some(p),
            _ => None,
        };
        let mut root = vec![usize::MAX; n];
        let mut path = Vec::new();
        for start in 0..n {
            let mut cur = start;
            while root[cur] == usize::MAX {
                path.push(cur);
                match linked(cur) {
                    Some(p) => cur = p,
                    None => {
                        root[cur] = cur;
                        break;
                    }
                }
            }
            let r = root[cur];
            for &p in &path {
                root[p] = r;
            }
            path.clear();
        }
        SegmentMap::from_raw_labels(self.height, self.width, &root)
            .expect("forest covers the image")
    }
}

pub fn quickshift_forest(image: &Image, params: QuickshiftParams) -> Result<QuickshiftForest> {
    if !image.is_finite() {
        return Err(Error::NonFinite {
            tensor: "quickshift input image".into(),
        });
    }
    if !(params.kernel_size > 0.0) || !(params.ratio >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "quickshift needs kernel_size > 0 and ratio >= 0, got {params:?}"
        )));
    }
    let (h, w) = image.shape();
    let n = h * w;
    let scale = params.ratio * LIGHTNESS_SCALE;
    let feat: Vec<[f64; 3]> = (0..n)
        .map(|i| [(i / w) as f64, (i % w) as f64, scale * image.pixels()[i]])
        .collect();
    let dist2 = |a: usize, b: usize| {
        let (fa, fb) = (feat[a], feat[b]);
        (fa[0] - fb[0]).powi(2) + (fa[1] - fb[1]).powi(2) + (fa[2] - fb[2]).powi(2)
    };

    let sigma2 = params.kernel_size * params.kernel_size;
    let window = (3.0 * params.kernel_size).ceil() as isize;
    let mut density = vec![0.0; n];
    for (i, d) in density.iter_mut().enumerate() {
        let (r, c) = ((i / w) as isize, (i % w) as isize);
        for rr in (r - window).max(0)..=(r + window).min(h as isize - 1) {
            for cc in (c - window).max(0)..=(c + window).min(w as isize - 1) {
                let j = rr as usize * w + cc as usize;
                *d += (-dist2(i, j) / (2.0 * sigma2)).exp();
            }
        }
    }

    // Strict total order: higher density first, then smaller index.
    let ranks_above = |j: usize, i: usize| match density[j].partial_cmp(&density[i]) {
        Some(Ordering::Greater) => true,
        Some(Ordering::Equal) => j < i,
        _ => false,
    };

    let mut parent = vec![None; n];
    let mut parent_dist = vec![f64::INFINITY; n];
    for i in 0..n {
        let mut best: Option<(f64, usize)> = None;
        for j in 0..n {
            if j == i || !ranks_above(j, i) {
                continue;
            }
            let d = dist2(i, j);
            // Equal distances keep the smaller index (first seen).
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, j));
            }
        }
        if let Some((d, j)) = best {
            parent[i] = Some(j);
            parent_dist[i] = d.sqrt();
        }
    }
    Ok(QuickshiftForest {
        height: h,
        width: w,
        parent,
        parent_dist,
    })
}

/// Quickshift with the default intensity ratio.
pub fn quickshift(image: &Image, kernel_size: f64, max_dist: f64) -> Result<SegmentMap> {
    if !(max_dist > 0.0) {
        return Err(Error::InvalidParameter(
            "quickshift max_dist must be > 0".into(),
        ));
    }
    let params = QuickshiftParams {
        kernel_size,
        ..QuickshiftParams::default()
    };
    Ok(quickshift_forest(image, params)?.cut(max_dist))
}

/// Outcome of the segment-count search.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxDistSearch {
    pub max_dist: f64,
    pub count: usize,
    /// False when no probed `max_dist` produced exactly the target count.
    pub exact: bool,
    /// Every `(max_dist, count)` pair probed, in probe order.
    pub trajectory: Vec<(f64, usize)>,
}

const SEARCH_ITERATIONS: usize = 64;

/// Bisects `max_dist ∈ [0.5, 2·diagonal]` for a quickshift segmentation with
/// `target_count` segments. Falls back to the closest count seen, flagged
/// inexact, when the count jumps over the target.
pub fn find_max_dist_for_count(
    image: &Image,
    target_count: usize,
    params: QuickshiftParams,
) -> Result<MaxDistSearch> {
    if target_count == 0 {
        return Err(Error::InvalidParameter(
            "target segment count must be >= 1".into(),
        ));
    }
    let forest = quickshift_forest(image, params)?;
    let (h, w) = image.shape();
    let mut lo = 0.5;
    let mut hi = 2.0 * ((h * h + w * w) as f64).sqrt();
    let mut trajectory = Vec::new();
    let probe = |d: f64, traj: &mut Vec<(f64, usize)>| {
        let c = forest.count_at(d);
        traj.push((d, c));
        c
    };
    let c_lo = probe(lo, &mut trajectory);
    let c_hi = probe(hi, &mut trajectory);
    let done = |d: f64, c: usize, traj: Vec<(f64, usize)>| MaxDistSearch {
        max_dist: d,
        count: c,
        exact: c == target_count,
        trajectory: traj,
    };
    if c_lo <= target_count {
        return Ok(done(lo, c_lo, trajectory));
    }
    if c_hi >= target_count {
        return Ok(done(hi, c_hi, trajectory));
    }
    for _ in 0..SEARCH_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        let c = probe(mid, &mut trajectory);
        match c.cmp(&target_count) {
            Ordering::Equal => return Ok(done(mid, c, trajectory)),
            Ordering::Greater => lo = mid,
            Ordering::Less => hi = mid,
        }
    }
    let &(d, c) = trajectory
        .iter()
        .min_by(|a, b| {
            let da = a.1.abs_diff(target_count);
            let db = b.1.abs_diff(target_count);
            da.cmp(&db).then(b.1.cmp(&a.1))
        })
        .expect("at least two probes");
    Ok(done(d, c, trajectory))
}
