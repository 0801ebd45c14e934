//! Anchor search: precision by sampling, acceptance by KL bounds, and a beam
//! search that maximizes coverage among accepted anchors.

use std::collections::{BTreeSet, HashMap};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bandit::{beta_schedule, kl_lucb_top, BanditArmState, LucbConfig};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::perturb::{PerturbationSampler, SamplerRng};
use crate::segmentation::{mask_from_anchor, AnchorSet, SegmentMap};

/// A black-box model over images.
pub trait Classifier {
    fn predict(&self, image: &Image) -> usize;
}

impl<F: Fn(&Image) -> usize> Classifier for F {
    fn predict(&self, image: &Image) -> usize {
        self(image)
    }
}

/// Random segment subsets used to estimate coverage.
#[derive(Debug, Clone, PartialEq)]
pub struct CoveragePool {
    members: Vec<Vec<bool>>,
    segment_count: usize,
}

pub const MIN_POOL_SIZE: usize = 100;

impl CoveragePool {
    /// `size` subsets, each segment included independently with probability `p`.
    pub fn random<R: Rng + ?Sized>(
        segment_count: usize,
        size: usize,
        p: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if size < MIN_POOL_SIZE {
            return Err(Error::InvalidParameter(format!(
                "coverage pool needs at least {MIN_POOL_SIZE} members, got {size}"
            )));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!(
                "inclusion probability {p} outside [0, 1]"
            )));
        }
        let members = (0..size)
            .map(|_| {
                (0..segment_count)
                    .map(|_| rng.random::<f64>() < p)
                    .collect()
            })
            .collect();
        Ok(Self {
            members,
            segment_count,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn segment_count(&self) -> usize {
        self.segment_count
    }

    /// Fraction of members that contain every segment of `anchor`.
    pub fn coverage(&self, anchor: &AnchorSet) -> f64 {
        if self.members.is_empty() {
            return 0.0;
        }
        let hits = self
            .members
            .iter()
            .filter(|m| {
                anchor
                    .ids()
                    .iter()
                    .all(|&id| m.get(id).copied().unwrap_or(false))
            })
            .count();
        hits as f64 / self.members.len() as f64
    }
}

pub fn coverage(anchor: &AnchorSet, pool: &CoveragePool) -> f64 {
    pool.coverage(anchor)
}

/// Every beam member extended by each segment it lacks, deduplicated and
/// sorted.
pub fn extend_candidates(beam: &[AnchorSet], segment_count: usize) -> Vec<AnchorSet> {
    let mut out = BTreeSet::new();
    for a in beam {
        for id in 0..segment_count {
            if let Some(c) = a.with(id) {
                out.insert(c);
            }
        }
    }
    out.into_iter().collect()
}

/// One Bernoulli outcome: whether a perturbation under `anchor` keeps the
/// label `target`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_precision_outcome(
    anchor: &AnchorSet,
    x: &Image,
    f: &dyn Classifier,
    target: usize,
    segmap: &SegmentMap,
    sampler: &dyn PerturbationSampler,
    rng: &mut SamplerRng,
) -> Result<bool> {
    let mask = mask_from_anchor(segmap, anchor);
    let z = sampler.draw(x, &mask, 1, rng)?;
    let z = z
        .first()
        .ok_or_else(|| Error::InvalidParameter("sampler returned no image".into()))?;
    Ok(f.predict(z) == target)
}

/// Agreement rate of up to `count` fresh perturbations under `anchor`. A
/// batch the sampler could not finish is scored on what it produced.
pub fn fresh_precision(
    anchor: &AnchorSet,
    x: &Image,
    f: &dyn Classifier,
    segmap: &SegmentMap,
    sampler: &dyn PerturbationSampler,
    count: usize,
    rng: &mut SamplerRng,
) -> Result<f64> {
    if count == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    let target = f.predict(x);
    let mask = mask_from_anchor(segmap, anchor);
    let images = match sampler.draw(x, &mask, count, rng) {
        Ok(v) => v,
        Err(Error::BatchIncomplete { partial, .. }) if !partial.is_empty() => {
            partial.into_iter().map(|s| s.image).collect()
        }
        Err(e) => return Err(e),
    };
    let hits = images.iter().filter(|z| f.predict(z) == target).count();
    Ok(hits as f64 / images.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainConfig {
    /// Precision target τ.
    pub tau: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub beam_width: usize,
    /// Largest anchor considered; `None` means the segment count.
    pub max_anchor_size: Option<usize>,
    pub batch_per_pull: u64,
    /// Total sample budget for one explanation.
    pub max_samples: u64,
    /// Samples one candidate may hold before its test against τ is given up
    /// as undecided.
    pub max_validation_samples: u64,
    pub coverage_pool_size: usize,
    pub coverage_p: f64,
    pub seed: u64,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            tau: 0.95,
            delta: 0.1,
            epsilon: 0.1,
            beam_width: 4,
            max_anchor_size: None,
            batch_per_pull: 10,
            max_samples: 100_000,
            max_validation_samples: 2_500,
            coverage_pool_size: 1000,
            coverage_p: 0.5,
            seed: 0,
        }
    }
}

impl ExplainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad(format!("tau {} outside (0, 1)", self.tau));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta {} outside (0, 1)", self.delta));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon {} outside (0, 1)", self.epsilon));
        }
        if self.beam_width == 0
            || self.batch_per_pull == 0
            || self.max_samples == 0
            || self.max_validation_samples == 0
        {
            return bad("beam width, batch per pull and sample budgets must be >= 1".into());
        }
        if self.max_anchor_size == Some(0) {
            return bad("max anchor size must be >= 1".into());
        }
        if self.coverage_pool_size < MIN_POOL_SIZE {
            return bad(format!("coverage pool size must be >= {MIN_POOL_SIZE}"));
        }
        if !(self.coverage_p > 0.0 && self.coverage_p < 1.0) {
            return bad(format!("coverage p {} outside (0, 1)", self.coverage_p));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorResult {
    pub anchor: AnchorSet,
    pub target_label: usize,
    pub precision: f64,
    pub precision_lb: f64,
    pub coverage: f64,
    pub samples: u64,
    pub wall_time_secs: f64,
    pub tau: f64,
    pub delta: f64,
    /// Set when no candidate reached the lower bound τ.
    pub best_effort: bool,
    pub segment_count: usize,
    /// Beam kept at each anchor size, smallest size first.
    pub beams: Vec<Vec<AnchorSet>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Verdict {
    Valid,
    Invalid,
    Undecided,
}

struct Candidate {
    arm: BanditArmState,
    rng: SamplerRng,
    rounds: u64,
}

struct Search<'a> {
    x: &'a Image,
    f: &'a dyn Classifier,
    target: usize,
    segmap: &'a SegmentMap,
    sampler: &'a dyn PerturbationSampler,
    cfg: &'a ExplainConfig,
    drawn: u64,
    candidates: HashMap<AnchorSet, Candidate>,
}

fn splitmix(mut v: u64) -> u64 {
    v = v.wrapping_add(0x9E37_79B9_7F4A_7C15);
    v = (v ^ (v >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    v = (v ^ (v >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    v ^ (v >> 31)
}

/// Seed for a candidate's private sample stream.
fn candidate_seed(seed: u64, anchor: &AnchorSet) -> u64 {
    anchor
        .ids()
        .iter()
        .fold(splitmix(seed ^ 0xA5A5_A5A5), |h, &id| {
            splitmix(h ^ (id as u64 + 1))
        })
}

impl Search<'_> {
    fn remaining(&self) -> u64 {
        self.cfg.max_samples.saturating_sub(self.drawn)
    }

    fn candidate(&mut self, anchor: &AnchorSet) -> &mut Candidate {
        let seed = candidate_seed(self.cfg.seed, anchor);
        self.candidates
            .entry(anchor.clone())
            .or_insert_with(|| Candidate {
                arm: BanditArmState::new(),
                rng: SamplerRng::seed_from_u64(seed),
                rounds: 0,
            })
    }

    /// Draws up to `n` samples for `anchor`; a sampler that runs out of
    /// iterations contributes whatever it produced.
    fn sample(&mut self, anchor: &AnchorSet, n: u64) -> Result<(u64, u64)> {
        let n = n.min(self.remaining());
        if n == 0 {
            return Ok((0, 0));
        }
        let mask = mask_from_anchor(self.segmap, anchor);
        let (x, sampler) = (self.x, self.sampler);
        let cand = self.candidate(anchor);
        cand.rounds += 1;
        let images = match sampler.draw(x, &mask, n as usize, &mut cand.rng) {
            Ok(v) => v,
            Err(Error::BatchIncomplete { partial, .. }) => {
                partial.into_iter().map(|s| s.image).collect()
            }
            Err(Error::BudgetExhausted { .. }) => Vec::new(),
            Err(e) => return Err(e),
        };
        self.drawn += n;
        let hits = images
            .iter()
            .filter(|z| self.f.predict(z) == self.target)
            .count() as u64;
        let cand = self.candidate(anchor);
        cand.arm.record(hits, images.len() as u64);
        Ok((hits, images.len() as u64))
    }

    /// Pulls until the lower bound clears τ, the upper bound falls below τ,
    /// or either budget runs out. A candidate whose precision sits right at τ
    /// would otherwise soak up the whole budget.
    fn validate(&mut self, anchor: &AnchorSet, arms: usize, delta: f64) -> Result<Verdict> {
        let tau = self.cfg.tau;
        let cap = self.cfg.max_validation_samples;
        loop {
            let cand = self.candidate(anchor);
            let beta = beta_schedule(cand.rounds.max(1), arms, delta);
            cand.arm.update_bounds(beta);
            if cand.arm.pulls > 0 && cand.arm.lb >= tau {
                return Ok(Verdict::Valid);
            }
            if cand.arm.pulls > 0 && cand.arm.ub < tau {
                return Ok(Verdict::Invalid);
            }
            let capped = cand.arm.pulls >= cap;
            if capped || self.remaining() == 0 {
                return Ok(Verdict::Undecided);
            }
            let (_, got) = self.sample(anchor, self.cfg.batch_per_pull)?;
            if got == 0 && self.remaining() == 0 {
                return Ok(Verdict::Undecided);
            }
        }
    }
}

/// Finds a high-coverage anchor whose precision lower bound reaches `τ`.
///
/// The confidence budget δ is split evenly over the empty-anchor check and
/// one bandit round per anchor size. At each size the beam is extended by
/// one segment, candidates that cannot beat the best accepted coverage are
/// dropped, KL-LUCB keeps the best `B` by precision, and each kept candidate
/// is tested against τ. Candidates draw from private sample streams seeded
/// by `(seed, segments)`, so the search is reproducible.
pub fn explain(
    x: &Image,
    f: &dyn Classifier,
    segmap: &SegmentMap,
    sampler: &dyn PerturbationSampler,
    cfg: &ExplainConfig,
) -> Result<AnchorResult> {
    cfg.validate()?;
    if x.shape() != segmap.shape() {
        return Err(Error::InvalidParameter(format!(
            "image shape {:?} differs from segment map {:?}",
            x.shape(),
            segmap.shape()
        )));
    }
    let start = Instant::now();
    let s = segmap.count();
    let max_size = cfg.max_anchor_size.unwrap_or(s).min(s);
    let delta_level = cfg.delta / (max_size as f64 + 1.0);
    let mut pool_rng = ChaCha8Rng::seed_from_u64(splitmix(cfg.seed));
    let pool = CoveragePool::random(s, cfg.coverage_pool_size, cfg.coverage_p, &mut pool_rng)?;

    let mut search = Search {
        x,
        f,
        target: f.predict(x),
        segmap,
        sampler,
        cfg,
        drawn: 0,
        candidates: HashMap::new(),
    };

    let empty = AnchorSet::empty();
    let mut valid: Vec<AnchorSet> = Vec::new();
    let mut evaluated: Vec<AnchorSet> = vec![empty.clone()];
    let mut beams = Vec::new();
    if search.validate(&empty, 1, delta_level)? == Verdict::Valid {
        valid.push(empty.clone());
    } else {
        let mut beam = vec![empty];
        for _size in 1..=max_size {
            let best_cov = valid
                .iter()
                .map(|a| pool.coverage(a))
                .fold(f64::NEG_INFINITY, f64::max);
            let cands: Vec<AnchorSet> = extend_candidates(&beam, s)
                .into_iter()
                .filter(|c| pool.coverage(c) >= best_cov)
                .collect();
            if cands.is_empty() || search.remaining() == 0 {
                break;
            }
            let mut arms: Vec<BanditArmState> =
                cands.iter().map(|c| search.candidate(c).arm).collect();
            let lucb = LucbConfig {
                top: cfg.beam_width.min(cands.len()),
                delta: delta_level,
                epsilon: cfg.epsilon,
                batch_per_pull: cfg.batch_per_pull,
                max_samples: search.remaining(),
            };
            let outcome = kl_lucb_top(&mut arms, &lucb, |i, n| search.sample(&cands[i], n))?;
            beam = outcome.selected.iter().map(|&i| cands[i].clone()).collect();
            for c in &beam {
                evaluated.push(c.clone());
                if search.validate(c, cands.len(), delta_level)? == Verdict::Valid {
                    valid.push(c.clone());
                }
            }
            beams.push(beam.clone());
        }
    }

    let lb_of = |search: &Search, a: &AnchorSet| search.candidates.get(a).map_or(0.0, |c| c.arm.lb);
    let (anchor, best_effort) = if valid.is_empty() {
        let pick = evaluated
            .iter()
            .max_by(|a, b| {
                lb_of(&search, a)
                    .total_cmp(&lb_of(&search, b))
                    .then(b.len().cmp(&a.len()))
                    .then(b.cmp(a))
            })
            .expect("empty anchor is always evaluated")
            .clone();
        (pick, true)
    } else {
        let pick = valid
            .iter()
            .max_by(|a, b| {
                pool.coverage(a)
                    .total_cmp(&pool.coverage(b))
                    .then(lb_of(&search, a).total_cmp(&lb_of(&search, b)))
                    .then(b.len().cmp(&a.len()))
                    .then(b.cmp(a))
            })
            .expect("non-empty")
            .clone();
        (pick, false)
    };
    let arm = search
        .candidates
        .get(&anchor)
        .map(|c| c.arm)
        .unwrap_or_default();
    Ok(AnchorResult {
        coverage: pool.coverage(&anchor),
        anchor,
        target_label: search.target,
        precision: arm.mean(),
        precision_lb: arm.lb,
        samples: search.drawn,
        wall_time_secs: start.elapsed().as_secs_f64(),
        tau: cfg.tau,
        delta: cfg.delta,
        best_effort,
        segment_count: s,
        beams,
    })
}
