use std::cell::Cell;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{
    mse_denominator, mse_slice, patch_up, sample_threshold, InitSource, PerturbationSample,
    PerturbationSampler, SamplerConfig, SamplerRng,
};
use crate::diffnet::{AdamConfig, AdamState, BatchNormMode};
use crate::encoder::DiverseEncoder;
use crate::error::{Error, Result};
use crate::generators::Generator;
use crate::image::{check_same_shape, BinaryMask, Image};

/// Where fresh and restarted latents come from.
#[derive(Debug, Clone)]
pub enum LatentSource {
    StandardNormal {
        dim: usize,
    },
    /// Cycles through fixed encodings, adding `N(0, sigma²)` noise to each.
    Seeded {
        encodings: Vec<Vec<f64>>,
        sigma: f64,
        next: usize,
    },
}

impl LatentSource {
    pub fn draw<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        match self {
            LatentSource::StandardNormal { dim } => {
                (0..*dim).map(|_| rng.sample(StandardNormal)).collect()
            }
            LatentSource::Seeded {
                encodings,
                sigma,
                next,
            } => {
                let base = &encodings[*next % encodings.len()];
                *next += 1;
                base.iter()
                    .map(|&b| b + *sigma * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            }
        }
    }
}

/// Counters accumulated across calls on one sampler.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SamplerStats {
    /// Adam steps summed over latents.
    pub latent_steps: u64,
    /// Generator forward passes over a whole batch.
    pub batch_iterations: u64,
    pub restarts: u64,
    pub samples: u64,
    /// Iterations consumed by accepted samples, summed.
    pub accepted_iterations: u64,
}

impl SamplerStats {
    /// Mean per-sample iterations to acceptance.
    pub fn mean_iterations(&self) -> f64 {
        if self.samples == 0 {
            0.0
        } else {
            self.accepted_iterations as f64 / self.samples as f64
        }
    }
}

/// Latent-space optimization sampler over a frozen generator.
#[derive(Debug)]
pub struct GanSampler<'a> {
    generator: &'a Generator,
    config: SamplerConfig,
    encoder: Option<&'a DiverseEncoder>,
    stats: Cell<SamplerStats>,
}

/// Pairs latents (by ascending loss) with thresholds (by descending value)
/// and returns the accepted `(latent, threshold)` index pairs. Only the first
/// `min(|losses|, |thresholds|)` ranks are compared; matching stops at the
/// first failing rank since every later rank fails too.
pub fn sort_match(losses: &[f64], thresholds: &[f64]) -> Vec<(usize, usize)> {
    let mut by_loss: Vec<usize> = (0..losses.len()).collect();
    by_loss.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
    let mut by_thr: Vec<usize> = (0..thresholds.len()).collect();
    by_thr.sort_by(|&a, &b| thresholds[b].total_cmp(&thresholds[a]).then(a.cmp(&b)));
    by_loss
        .into_iter()
        .zip(by_thr)
        .take_while(|&(l, t)| losses[l] <= thresholds[t])
        .collect()
}

impl<'a> GanSampler<'a> {
    pub fn new(generator: &'a Generator, config: SamplerConfig) -> Result<Self> {
        config.validate()?;
        if config.init == InitSource::EncoderSeeded {
            return Err(Error::InvalidParameter(
                "encoder-seeded initialization needs an encoder; use GanSampler::with_encoder"
                    .into(),
            ));
        }
        Ok(Self {
            generator,
            config,
            encoder: None,
            stats: Cell::new(SamplerStats::default()),
        })
    }

    pub fn with_encoder(
        generator: &'a Generator,
        config: SamplerConfig,
        encoder: &'a DiverseEncoder,
    ) -> Result<Self> {
        config.validate()?;
        if encoder.latent_dim() != generator.latent_dim() {
            return Err(Error::mismatch(
                "encoder latent dimension",
                generator.latent_dim(),
                encoder.latent_dim(),
            ));
        }
        Ok(Self {
            generator,
            config,
            encoder: Some(encoder),
            stats: Cell::new(SamplerStats::default()),
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn generator(&self) -> &Generator {
        self.generator
    }

    pub fn stats(&self) -> SamplerStats {
        self.stats.get()
    }

    pub fn reset_stats(&self) {
        self.stats.set(SamplerStats::default());
    }

    fn bump(&self, f: impl FnOnce(&mut SamplerStats)) {
        let mut s = self.stats.get();
        f(&mut s);
        self.stats.set(s);
    }

    fn source(&self, x_hat: &Image) -> Result<LatentSource> {
        match (self.config.init, self.encoder) {
            (InitSource::EncoderSeeded, Some(enc)) => Ok(LatentSource::Seeded {
                encodings: enc.encode(x_hat)?,
                sigma: self.config.init_noise,
                next: 0,
            }),
            (InitSource::EncoderSeeded, None) => Err(Error::InvalidParameter(
                "encoder-seeded initialization without an encoder".into(),
            )),
            (InitSource::StandardNormal, _) => Ok(LatentSource::StandardNormal {
                dim: self.generator.latent_dim(),
            }),
        }
    }

    fn check_inputs(&self, x_hat: &Image, mask: &BinaryMask) -> Result<()> {
        check_same_shape(self.generator.shape(), x_hat.shape(), "sampler target")?;
        check_same_shape(x_hat.shape(), mask.shape(), "sampler mask")?;
        if !x_hat.is_finite() {
            return Err(Error::NonFinite {
                tensor: "masked target".into(),
            });
        }
        let outside = x_hat
            .pixels()
            .iter()
            .zip(mask.bits())
            .any(|(&v, &a)| !a && v != 0.0);
        if outside {
            return Err(Error::InvalidParameter(
                "masked target must be zero outside the anchor".into(),
            ));
        }
        Ok(())
    }

    /// Upstream gradient of `scale · anchor_mse` with respect to `y`.
    fn mse_upstream(&self, x_hat: &[f64], mask: &[bool], y: &[f64], scale: f64, out: &mut [f64]) {
        let denom = mse_denominator(mask, self.config.mse);
        if denom == 0 {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let c = 2.0 * scale / denom as f64;
        for (((o, &xh), &yv), &a) in out.iter_mut().zip(x_hat).zip(y).zip(mask) {
            *o = if a { c * (yv - xh) } else { 0.0 };
        }
    }

    fn accept(
        &self,
        x_hat: &Image,
        mask: &BinaryMask,
        z: &[f64],
        y: &[f64],
        loss: f64,
        thr: f64,
        iters: usize,
    ) -> Result<PerturbationSample> {
        let (h, w) = self.generator.shape();
        let generated = if self.generator.is_pixelwise() {
            // Optimization only rendered the anchor.
            self.generator.generate(z)?
        } else {
            Image::new(h, w, y.to_vec())?
        };
        let image = patch_up(mask, &generated, x_hat)?;
        self.bump(|s| {
            s.samples += 1;
            s.accepted_iterations += iters as u64;
        });
        Ok(PerturbationSample {
            image,
            generated,
            latent: z.to_vec(),
            anchor_mse: loss,
            threshold: thr,
            iterations: iters,
        })
    }

    /// One sample at the full threshold ξ.
    pub fn sample_single(
        &self,
        x_hat: &Image,
        mask: &BinaryMask,
        rng: &mut SamplerRng,
    ) -> Result<PerturbationSample> {
        self.sample_single_with_threshold(x_hat, mask, self.config.max_threshold, rng)
    }

    /// Optimizes one latent until its anchor MSE is at most `threshold`.
    ///
    /// A lone latent has no meaningful batch statistics, so the generator
    /// always runs with running statistics here.
    pub fn sample_single_with_threshold(
        &self,
        x_hat: &Image,
        mask: &BinaryMask,
        threshold: f64,
        rng: &mut SamplerRng,
    ) -> Result<PerturbationSample> {
        self.check_inputs(x_hat, mask)?;
        check_threshold(threshold)?;
        let mut source = self.source(x_hat)?;
        let d = self.generator.latent_dim();
        let adam_cfg = AdamConfig::with_learning_rate(self.config.learning_rate);
        let mut adam = AdamState::new("latent", d, adam_cfg);
        let mut z = Array2::from_shape_vec((1, d), source.draw(rng)).expect("row");
        let mut upstream = Array2::zeros((1, self.generator.pixel_count()));
        let mut age = 0;
        let mut best = f64::INFINITY;
        for it in 0.. {
            let trace = self.generator.forward_traced_on(
                &z,
                BatchNormMode::RunningStats,
                Some(mask.bits()),
            )?;
            self.bump(|s| s.batch_iterations += 1);
            let y = trace.images().row(0);
            let y = y.as_slice().expect("contiguous");
            let loss = mse_slice(x_hat.pixels(), mask.bits(), y, self.config.mse);
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    tensor: "anchor loss".into(),
                });
            }
            best = best.min(loss);
            if loss <= threshold {
                return self.accept(
                    x_hat,
                    mask,
                    z.row(0).as_slice().expect("row"),
                    y,
                    loss,
                    threshold,
                    it,
                );
            }
            if it >= self.config.max_iters {
                return Err(Error::BudgetExhausted {
                    iterations: it,
                    best_mse: best,
                });
            }
            if age >= self.config.restart_interval {
                z.row_mut(0)
                    .assign(&ndarray::Array1::from(source.draw(rng)));
                adam.reset();
                age = 0;
                self.bump(|s| s.restarts += 1);
            } else {
                self.mse_upstream(
                    x_hat.pixels(),
                    mask.bits(),
                    y,
                    1.0,
                    upstream.as_slice_mut().expect("contiguous"),
                );
                let g = self.generator.backward_latent(&trace, &upstream)?;
                adam.step(
                    z.as_slice_mut().expect("contiguous"),
                    g.as_slice().expect("contiguous"),
                )?;
                age += 1;
                self.bump(|s| s.latent_steps += 1);
            }
        }
        unreachable!("loop only exits by return")
    }

    /// Batch sampling: one accepted sample per entry of `thresholds`.
    ///
    /// Keeps `min(batch_size, thresholds.len())` latents alive and optimizes
    /// the unaccepted ones jointly under their mean anchor MSE. Each
    /// iteration sorts losses ascending against the unmet thresholds
    /// descending and accepts every matched pair whose loss is within its
    /// threshold; accepted latents are replaced by fresh draws. Samples are
    /// returned in acceptance order.
    pub fn sample_batch(
        &self,
        x_hat: &Image,
        mask: &BinaryMask,
        thresholds: &[f64],
        rng: &mut SamplerRng,
    ) -> Result<Vec<PerturbationSample>> {
        self.check_inputs(x_hat, mask)?;
        for &t in thresholds {
            check_threshold(t)?;
        }
        if thresholds.is_empty() {
            return Ok(Vec::new());
        }
        let mut source = self.source(x_hat)?;
        let d = self.generator.latent_dim();
        let live = self.config.batch_size.min(thresholds.len());
        let adam_cfg = AdamConfig::with_learning_rate(self.config.learning_rate);
        let mut z = Array2::zeros((live, d));
        for mut row in z.rows_mut() {
            row.assign(&ndarray::Array1::from(source.draw(rng)));
        }
        let mut adams: Vec<AdamState> = (0..live)
            .map(|i| AdamState::new(format!("latent {i}"), d, adam_cfg))
            .collect();
        let mut ages = vec![0usize; live];
        let mut iters = vec![0usize; live];
        let mut remaining = thresholds.to_vec();
        let mut out = Vec::with_capacity(thresholds.len());
        let mut upstream = Array2::zeros((live, self.generator.pixel_count()));

        for round in 0.. {
            let trace =
                self.generator
                    .forward_traced_on(&z, self.config.bn_mode, Some(mask.bits()))?;
            self.bump(|s| s.batch_iterations += 1);
            let images = trace.images();
            let losses: Vec<f64> = images
                .rows()
                .into_iter()
                .map(|r| {
                    mse_slice(
                        x_hat.pixels(),
                        mask.bits(),
                        r.as_slice().expect("row"),
                        self.config.mse,
                    )
                })
                .collect();
            if let Some(i) = losses.iter().position(|l| !l.is_finite()) {
                return Err(Error::NonFinite {
                    tensor: format!("anchor loss of latent {i}"),
                });
            }

            let pairs = sort_match(&losses, &remaining);
            let mut accepted = vec![false; live];
            let mut used = vec![false; remaining.len()];
            for &(i, t) in &pairs {
                accepted[i] = true;
                used[t] = true;
                let y = images.row(i);
                out.push(self.accept(
                    x_hat,
                    mask,
                    z.row(i).as_slice().expect("row"),
                    y.as_slice().expect("row"),
                    losses[i],
                    remaining[t],
                    iters[i],
                )?);
            }
            let mut keep = used.iter().map(|u| !u);
            remaining.retain(|_| keep.next().expect("same length"));
            if remaining.is_empty() {
                return Ok(out);
            }
            if round >= self.config.batch_iter_budget {
                return Err(Error::BatchIncomplete {
                    partial: Box::new(out),
                    unmet: remaining,
                });
            }

            let n_open = accepted.iter().filter(|a| !**a).count();
            for (i, mut up) in upstream.rows_mut().into_iter().enumerate() {
                let dst = up.as_slice_mut().expect("row");
                if accepted[i] {
                    dst.iter_mut().for_each(|v| *v = 0.0);
                } else {
                    let y = images.row(i);
                    self.mse_upstream(
                        x_hat.pixels(),
                        mask.bits(),
                        y.as_slice().expect("row"),
                        1.0 / n_open as f64,
                        dst,
                    );
                }
            }
            let grads = if n_open > 0 {
                Some(self.generator.backward_latent(&trace, &upstream)?)
            } else {
                None
            };

            for i in 0..live {
                if accepted[i] {
                    z.row_mut(i)
                        .assign(&ndarray::Array1::from(source.draw(rng)));
                    adams[i].reset();
                    ages[i] = 0;
                    iters[i] = 0;
                } else if ages[i] >= self.config.restart_interval {
                    z.row_mut(i)
                        .assign(&ndarray::Array1::from(source.draw(rng)));
                    adams[i].reset();
                    ages[i] = 0;
                    iters[i] += 1;
                    self.bump(|s| s.restarts += 1);
                } else {
                    let g = grads
                        .as_ref()
                        .expect("open latents have gradients")
                        .row(i)
                        .to_vec();
                    let mut row = z.row(i).to_vec();
                    adams[i].step(&mut row, &g)?;
                    z.row_mut(i).assign(&ndarray::Array1::from(row));
                    ages[i] += 1;
                    iters[i] += 1;
                    self.bump(|s| s.latent_steps += 1);
                }
            }
        }
        unreachable!("loop only exits by return")
    }

    /// Per-sample thresholds for a request of `count` samples.
    pub fn thresholds(&self, count: usize, rng: &mut SamplerRng) -> Result<Vec<f64>> {
        if self.config.threshold_sampling {
            (0..count)
                .map(|_| sample_threshold(self.config.max_threshold, rng))
                .collect()
        } else {
            Ok(vec![self.config.max_threshold; count])
        }
    }
}

fn check_threshold(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "threshold {t} must be finite and > 0"
        )));
    }
    Ok(())
}

impl PerturbationSampler for GanSampler<'_> {
    fn draw(
        &self,
        x: &Image,
        mask: &BinaryMask,
        count: usize,
        rng: &mut SamplerRng,
    ) -> Result<Vec<Image>> {
        let x_hat = x.masked(mask)?;
        let thresholds = self.thresholds(count, rng)?;
        Ok(self
            .sample_batch(&x_hat, mask, &thresholds, rng)?
            .into_iter()
            .map(|s| s.image)
            .collect())
    }

    fn name(&self) -> &str {
        "gan"
    }
}
