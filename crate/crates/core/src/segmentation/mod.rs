//! Superpixel segmentation and anchor masks.

mod quickshift;
mod slic;

pub use quickshift::{
    find_max_dist_for_count, quickshift, quickshift_forest, MaxDistSearch, QuickshiftForest,
    QuickshiftParams,
};
pub use slic::slic;

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::BinaryMask;

/// Per-pixel segment labels, always exactly `{0, …, count−1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentMap {
    height: usize,
    width: usize,
    labels: Vec<usize>,
    count: usize,
}

impl SegmentMap {
    /// Relabels arbitrary ids to `0..S` in raster order of first appearance.
    pub fn from_raw_labels(height: usize, width: usize, raw: &[usize]) -> Result<Self> {
        if raw.len() != height * width || raw.is_empty() {
            return Err(Error::mismatch("segment labels", height * width, raw.len()));
        }
        let mut remap: HashMap<usize, usize> = HashMap::new();
        let labels = raw
            .iter()
            .map(|&r| {
                let next = remap.len();
                *remap.entry(r).or_insert(next)
            })
            .collect();
        Ok(Self {
            height,
            width,
            labels,
            count: remap.len(),
        })
    }

    /// Accepts labels that already form a contiguous `0..S` range.
    pub fn new(height: usize, width: usize, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != height * width || labels.is_empty() {
            return Err(Error::mismatch(
                "segment labels",
                height * width,
                labels.len(),
            ));
        }
        let count = labels.iter().max().map_or(0, |m| m + 1);
        let mut seen = vec![false; count];
        for &l in &labels {
            seen[l] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Format(format!(
                "segment label {missing} has no pixels"
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
            count,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, row: usize, col: usize) -> usize {
        self.labels[row * self.width + col]
    }

    pub fn segment_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.count];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

/// A set of segment ids, kept sorted and duplicate-free.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnchorSet(Vec<usize>);

impl AnchorSet {
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn new(ids: impl IntoIterator<Item = usize>, segment_count: usize) -> Result<Self> {
        let mut v: Vec<usize> = ids.into_iter().collect();
        v.sort_unstable();
        if let Some(w) = v.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidParameter(format!(
                "duplicate segment id {}",
                w[0]
            )));
        }
        if let Some(&bad) = v.iter().find(|&&id| id >= segment_count) {
            return Err(Error::InvalidParameter(format!(
                "segment id {bad} out of range for {segment_count} segments"
            )));
        }
        Ok(Self(v))
    }

    pub fn full(segment_count: usize) -> Self {
        Self((0..segment_count).collect())
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, id: usize) -> bool {
        self.0.binary_search(&id).is_ok()
    }

    pub fn is_subset_of(&self, other: &AnchorSet) -> bool {
        self.0.iter().all(|&id| other.contains(id))
    }

    /// This set plus `id`; `None` when already present.
    pub fn with(&self, id: usize) -> Option<AnchorSet> {
        match self.0.binary_search(&id) {
            Ok(_) => None,
            Err(pos) => {
                let mut v = self.0.clone();
                v.insert(pos, id);
                Some(AnchorSet(v))
            }
        }
    }

    pub fn complement(&self, segment_count: usize) -> AnchorSet {
        AnchorSet(
            (0..segment_count)
                .filter(|&id| !self.contains(id))
                .collect(),
        )
    }
}

impl std::fmt::Display for AnchorSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(usize::to_string).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

pub fn mask_from_anchor(segmap: &SegmentMap, anchor: &AnchorSet) -> BinaryMask {
    let mut member = vec![false; segmap.count];
    for &id in anchor.ids() {
        if id < member.len() {
            member[id] = true;
        }
    }
    let bits = segmap.labels.iter().map(|&l| member[l]).collect();
    BinaryMask::new(segmap.height, segmap.width, bits).expect("segment map shape")
}

/// Includes each segment independently with probability `p`.
pub fn random_segment_mask<R: Rng + ?Sized>(
    segmap: &SegmentMap,
    p: f64,
    rng: &mut R,
) -> Result<(AnchorSet, BinaryMask)> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!(
            "inclusion probability {p} outside [0, 1]"
        )));
    }
    let ids: Vec<usize> = (0..segmap.count())
        .filter(|_| rng.random::<f64>() < p)
        .collect();
    let anchor = AnchorSet(ids);
    let mask = mask_from_anchor(segmap, &anchor);
    Ok((anchor, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn stripes() -> SegmentMap {
        SegmentMap::from_raw_labels(2, 3, &[7, 7, 3, 9, 9, 3]).unwrap()
    }

    #[test]
    fn raw_labels_become_contiguous() {
        let s = stripes();
        assert_eq!(s.labels(), &[0, 0, 1, 2, 2, 1]);
        assert_eq!(s.count(), 3);
        assert!(SegmentMap::new(1, 3, vec![0, 2, 2]).is_err());
    }

    #[test]
    fn full_and_empty_anchor_masks() {
        let s = stripes();
        assert!(mask_from_anchor(&s, &AnchorSet::full(3)).is_all_one());
        assert!(mask_from_anchor(&s, &AnchorSet::empty()).is_all_zero());
    }

    #[test]
    fn single_segment_mask_area() {
        let s = stripes();
        let sizes = s.segment_sizes();
        for id in 0..3 {
            let m = mask_from_anchor(&s, &AnchorSet::new([id], 3).unwrap());
            assert_eq!(m.area(), sizes[id]);
        }
    }

    #[test]
    fn anchor_and_complement_partition_pixels() {
        let s = stripes();
        let a = AnchorSet::new([0, 2], 3).unwrap();
        let m = mask_from_anchor(&s, &a);
        let mc = mask_from_anchor(&s, &a.complement(3));
        assert!(m.union(&mc).is_all_one());
        assert!(m.intersection(&mc).is_all_zero());
    }

    #[test]
    fn anchor_set_validation() {
        assert!(AnchorSet::new([1, 1], 3).is_err());
        assert!(AnchorSet::new([3], 3).is_err());
        assert_eq!(AnchorSet::new([2, 0], 3).unwrap().ids(), &[0, 2]);
        assert_eq!(AnchorSet::new([0], 3).unwrap().with(0), None);
    }

    #[test]
    fn random_mask_extremes() {
        let s = stripes();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(random_segment_mask(&s, 1.0, &mut rng)
            .unwrap()
            .1
            .is_all_one());
        assert!(random_segment_mask(&s, 0.0, &mut rng)
            .unwrap()
            .1
            .is_all_zero());
        assert!(random_segment_mask(&s, 1.5, &mut rng).is_err());
    }
}
