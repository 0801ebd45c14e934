use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Draw cap for [`sample_threshold`].
pub const MAX_THRESHOLD_DRAWS: usize = 1_000_000;

/// Draws a per-sample threshold `ξ' ∈ (0, ξ]`.
///
/// `g ~ N(ξ, ξ/6)`; draws outside `(0, 2ξ)` are thrown away and draws above
/// `ξ` are reflected to `2ξ − g`, so the density peaks at `ξ` and thins out
/// toward 0.
pub fn sample_threshold<R: Rng + ?Sized>(xi: f64, rng: &mut R) -> Result<f64> {
    if !(xi > 0.0 && xi.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "threshold {xi} must be finite and > 0"
        )));
    }
    let normal = Normal::new(xi, xi / 6.0).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    for _ in 0..MAX_THRESHOLD_DRAWS {
        let g = normal.sample(rng);
        if g <= 0.0 || g >= 2.0 * xi {
            continue;
        }
        let t = if g > xi { 2.0 * xi - g } else { g };
        // 2ξ − g can round to exactly 0 or just above ξ; keep the support strict.
        if t > 0.0 && t <= xi {
            return Ok(t);
        }
    }
    Err(Error::ThresholdSampling(MAX_THRESHOLD_DRAWS))
}
