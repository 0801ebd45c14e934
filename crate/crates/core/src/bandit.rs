//! Bernoulli KL confidence bounds and KL-LUCB top-arm identification.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const Q_CLAMP: f64 = 1e-12;
const BOUND_TOL: f64 = 1e-6;

/// `kl(p, q) = p ln(p/q) + (1−p) ln((1−p)/(1−q))` with `0 ln 0 = 0` and `q`
/// clamped into `[1e-12, 1 − 1e-12]`.
pub fn bernoulli_kl(p: f64, q: f64) -> f64 {
    let p = p.clamp(0.0, 1.0);
    let q = q.clamp(Q_CLAMP, 1.0 - Q_CLAMP);
    let term = |a: f64, b: f64| if a == 0.0 { 0.0 } else { a * (a / b).ln() };
    (term(p, q) + term(1.0 - p, 1.0 - q)).max(0.0)
}

/// Largest `q ∈ [p̂, 1]` with `n · kl(p̂, q) ≤ β`.
pub fn kl_upper_bound(p_hat: f64, n: u64, beta: f64) -> f64 {
    let p = p_hat.clamp(0.0, 1.0);
    if n == 0 {
        return 1.0;
    }
    let level = beta.max(0.0) / n as f64;
    if bernoulli_kl(p, 1.0) <= level {
        return 1.0;
    }
    let (mut lo, mut hi) = (p, 1.0);
    while hi - lo > BOUND_TOL {
        let mid = 0.5 * (lo + hi);
        if bernoulli_kl(p, mid) <= level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Smallest `q ∈ [0, p̂]` with `n · kl(p̂, q) ≤ β`.
pub fn kl_lower_bound(p_hat: f64, n: u64, beta: f64) -> f64 {
    let p = p_hat.clamp(0.0, 1.0);
    if n == 0 {
        return 0.0;
    }
    let level = beta.max(0.0) / n as f64;
    if bernoulli_kl(p, 0.0) <= level {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, p);
    while hi - lo > BOUND_TOL {
        let mid = 0.5 * (lo + hi);
        if bernoulli_kl(p, mid) <= level {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Exploration rate `ln(K · t^1.1 / δ)` for round `t ≥ 1`.
pub fn beta_schedule(t: u64, arms: usize, delta: f64) -> f64 {
    let t = t.max(1) as f64;
    (arms as f64 * t.powf(1.1) / delta).ln()
}

/// Running statistics of one arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BanditArmState {
    pub pulls: u64,
    pub successes: u64,
    pub lb: f64,
    pub ub: f64,
}

impl Default for BanditArmState {
    fn default() -> Self {
        Self {
            pulls: 0,
            successes: 0,
            lb: 0.0,
            ub: 1.0,
        }
    }
}

impl BanditArmState {
    pub fn new() -> Self {
        Self::default()
    }

    /// `s / n`, or 0 before the first pull.
    pub fn mean(&self) -> f64 {
        if self.pulls == 0 {
            0.0
        } else {
            self.successes as f64 / self.pulls as f64
        }
    }

    /// Mean used for ranking: an unpulled arm is optimistic at 1.
    pub fn ranking_mean(&self) -> f64 {
        if self.pulls == 0 {
            1.0
        } else {
            self.mean()
        }
    }

    pub fn record(&mut self, successes: u64, trials: u64) {
        debug_assert!(successes <= trials);
        self.successes += successes.min(trials);
        self.pulls += trials;
    }

    pub fn update_bounds(&mut self, beta: f64) {
        if self.pulls == 0 {
            self.lb = 0.0;
            self.ub = 1.0;
            return;
        }
        let p = self.mean();
        self.lb = kl_lower_bound(p, self.pulls, beta).min(p);
        self.ub = kl_upper_bound(p, self.pulls, beta).max(p);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LucbConfig {
    /// Number of winners `J`.
    pub top: usize,
    pub delta: f64,
    pub epsilon: f64,
    /// Samples drawn per arm pull.
    pub batch_per_pull: u64,
    /// Sample budget across all arms, initial pulls included.
    pub max_samples: u64,
}

impl Default for LucbConfig {
    fn default() -> Self {
        Self {
            top: 1,
            delta: 0.1,
            epsilon: 0.1,
            batch_per_pull: 10,
            max_samples: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LucbOutcome {
    /// Winners ordered by empirical mean, best first.
    pub selected: Vec<usize>,
    /// False when the sample budget ran out before separation.
    pub certified: bool,
    pub samples_drawn: u64,
    pub rounds: u64,
}

/// KL-LUCB: pulls the weakest member of the provisional top-`J` (lowest lower
/// bound) and the strongest outsider (highest upper bound) until the
/// outsider's upper bound is within `ε` of the weakest lower bound.
///
/// `sample_fn(arm, n)` returns `(successes, trials)`; `trials` may fall short
/// of `n` when the sampler gives up early.
pub fn kl_lucb_top<F>(
    arms: &mut [BanditArmState],
    cfg: &LucbConfig,
    mut sample_fn: F,
) -> Result<LucbOutcome>
where
    F: FnMut(usize, u64) -> Result<(u64, u64)>,
{
    let k = arms.len();
    if cfg.top == 0 || cfg.top > k {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= top ({}) <= arm count ({k})",
            cfg.top
        )));
    }
    if !(cfg.delta > 0.0 && cfg.delta < 1.0) || !(cfg.epsilon > 0.0) || cfg.batch_per_pull == 0 {
        return Err(Error::InvalidParameter(format!(
            "invalid KL-LUCB settings {cfg:?}"
        )));
    }
    let mut drawn = 0u64;
    let mut pull = |arm: usize, arms: &mut [BanditArmState], drawn: &mut u64| -> Result<()> {
        let (s, n) = sample_fn(arm, cfg.batch_per_pull)?;
        arms[arm].record(s, n);
        *drawn += cfg.batch_per_pull;
        Ok(())
    };
    for a in 0..k {
        if arms[a].pulls == 0 {
            pull(a, arms, &mut drawn)?;
        }
    }

    let mut t = 1u64;
    loop {
        let beta = beta_schedule(t, k, cfg.delta);
        arms.iter_mut().for_each(|a| a.update_bounds(beta));
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| {
            arms[b]
                .ranking_mean()
                .total_cmp(&arms[a].ranking_mean())
                .then(a.cmp(&b))
        });
        let (top, rest) = order.split_at(cfg.top);
        let done = |certified: bool, t: u64, drawn: u64| LucbOutcome {
            selected: top.to_vec(),
            certified,
            samples_drawn: drawn,
            rounds: t,
        };
        if rest.is_empty() {
            return Ok(done(true, t, drawn));
        }
        let weakest = *top
            .iter()
            .min_by(|&&a, &&b| arms[a].lb.total_cmp(&arms[b].lb).then(a.cmp(&b)))
            .expect("top is non-empty");
        let challenger = *rest
            .iter()
            .max_by(|&&a, &&b| arms[a].ub.total_cmp(&arms[b].ub).then(b.cmp(&a)))
            .expect("rest is non-empty");
        if arms[challenger].ub - arms[weakest].lb < cfg.epsilon {
            return Ok(done(true, t, drawn));
        }
        if drawn + 2 * cfg.batch_per_pull > cfg.max_samples {
            return Ok(done(false, t, drawn));
        }
        pull(weakest, arms, &mut drawn)?;
        pull(challenger, arms, &mut drawn)?;
        t += 1;
    }
}
