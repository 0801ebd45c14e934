use rand::Rng;

use super::{PerturbationSampler, SamplerRng};
use crate::error::{Error, Result};
use crate::image::{check_same_shape, BinaryMask, Image};

/// `A∘x + (1−A)∘b` for a uniformly chosen pool image `b`.
pub fn stitch_sample<R: Rng + ?Sized>(
    x: &Image,
    mask: &BinaryMask,
    pool: &[Image],
    rng: &mut R,
) -> Result<Image> {
    check_same_shape(x.shape(), mask.shape(), "stitch mask")?;
    if pool.is_empty() {
        return Err(Error::InvalidParameter(
            "stitching needs a non-empty image pool".into(),
        ));
    }
    let b = &pool[rng.random_range(0..pool.len())];
    check_same_shape(x.shape(), b.shape(), "stitch background")?;
    let pixels = x
        .pixels()
        .iter()
        .zip(b.pixels())
        .zip(mask.bits())
        .map(|((&xv, &bv), &a)| if a { xv } else { bv })
        .collect();
    Image::new(x.height(), x.width(), pixels)
}

/// Random-stitching baseline over a fixed background pool.
#[derive(Debug, Clone)]
pub struct StitchSampler {
    pool: Vec<Image>,
}

impl StitchSampler {
    pub fn new(pool: Vec<Image>) -> Result<Self> {
        let Some(first) = pool.first() else {
            return Err(Error::InvalidParameter(
                "stitching needs a non-empty image pool".into(),
            ));
        };
        for img in &pool {
            check_same_shape(first.shape(), img.shape(), "stitch pool")?;
        }
        Ok(Self { pool })
    }

    pub fn pool(&self) -> &[Image] {
        &self.pool
    }
}

impl PerturbationSampler for StitchSampler {
    fn draw(
        &self,
        x: &Image,
        mask: &BinaryMask,
        count: usize,
        rng: &mut SamplerRng,
    ) -> Result<Vec<Image>> {
        (0..count)
            .map(|_| stitch_sample(x, mask, &self.pool, rng))
            .collect()
    }

    fn name(&self) -> &str {
        "stitch"
    }
}
