use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentParams {
    /// Crop side as a fraction of the image side, sampled uniformly.
    pub crop_scale_min: f64,
    pub crop_scale_max: f64,
    pub flip_prob: f64,
    /// Additive brightness offset drawn from `±brightness`.
    pub brightness: f64,
    /// Contrast factor drawn from `1 ± contrast`, applied around the image mean.
    pub contrast: f64,
}

impl AugmentParams {
    pub fn strong() -> Self {
        Self {
            crop_scale_min: 0.6,
            crop_scale_max: 1.0,
            flip_prob: 0.5,
            brightness: 0.3,
            contrast: 0.3,
        }
    }

    pub fn weak() -> Self {
        Self {
            crop_scale_min: 1.0,
            crop_scale_max: 1.0,
            flip_prob: 0.5,
            brightness: 0.1,
            contrast: 0.1,
        }
    }

    pub fn identity() -> Self {
        Self {
            crop_scale_min: 1.0,
            crop_scale_max: 1.0,
            flip_prob: 0.0,
            brightness: 0.0,
            contrast: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.crop_scale_min > 0.0
            && self.crop_scale_min <= self.crop_scale_max
            && self.crop_scale_max <= 1.0
            && (0.0..=1.0).contains(&self.flip_prob)
            && self.brightness >= 0.0
            && (0.0..1.0).contains(&self.contrast);
        if ok {
            Ok(())
        } else {
            Err(Error::contract(format!(
                "invalid augmentation parameters {self:?}"
            )))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strength {
    Strong,
    Weak,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub strong: AugmentParams,
    pub weak: AugmentParams,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            strong: AugmentParams::strong(),
            weak: AugmentParams::weak(),
        }
    }
}

impl AugmentConfig {
    pub fn params(&self, strength: Strength) -> &AugmentParams {
        match strength {
            Strength::Strong => &self.strong,
            Strength::Weak => &self.weak,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.strong.validate()?;
        self.weak.validate()
    }
}

fn symmetric<R: Rng + ?Sized>(rng: &mut R, half: f64) -> f64 {
    if half > 0.0 {
        rng.random_range(-half..=half)
    } else {
        0.0
    }
}

fn bilinear(plane: &[f64], w: usize, h: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (tx, ty) = (x - x0 as f64, y - y0 as f64);
    let top = plane[y0 * w + x0] * (1.0 - tx) + plane[y0 * w + x1] * tx;
    let bottom = plane[y1 * w + x0] * (1.0 - tx) + plane[y1 * w + x1] * tx;
    top * (1.0 - ty) + bottom * ty
}

/// Crop-resize, horizontal flip and brightness/contrast jitter, clipped to `[−1, 1]`.
pub fn augment<R: Rng + ?Sized>(
    image: &Tensor,
    params: &AugmentParams,
    rng: &mut R,
) -> Result<Tensor> {
    params.validate()?;
    let (c, h, w) = match image.shape() {
        [c, h, w] => (*c, *h, *w),
        s => {
            return Err(Error::shape(format!(
                "augment: expected [C×H×W], got {s:?}"
            )))
        }
    };

    let scale = if params.crop_scale_max > params.crop_scale_min {
        rng.random_range(params.crop_scale_min..=params.crop_scale_max)
    } else {
        params.crop_scale_min
    };
    let (cw, ch) = (scale * w as f64, scale * h as f64);
    let ox = if w as f64 > cw {
        rng.random_range(0.0..=(w as f64 - cw))
    } else {
        0.0
    };
    let oy = if h as f64 > ch {
        rng.random_range(0.0..=(h as f64 - ch))
    } else {
        0.0
    };
    let flip = rng.random_bool(params.flip_prob);
    let shift = symmetric(rng, params.brightness);
    let gain = 1.0 + symmetric(rng, params.contrast);

    let src = image.data();
    let plane = h * w;
    let mut out = vec![0.0; c * plane];
    for ci in 0..c {
        let sp = &src[ci * plane..(ci + 1) * plane];
        for y in 0..h {
            let sy = oy + (y as f64 + 0.5) * ch / h as f64 - 0.5;
            for x in 0..w {
                let xx = if flip { w - 1 - x } else { x };
                let sx = ox + (xx as f64 + 0.5) * cw / w as f64 - 0.5;
                out[ci * plane + y * w + x] = bilinear(sp, w, h, sx, sy);
            }
        }
    }
    let mean = out.iter().sum::<f64>() / out.len() as f64;
    for v in &mut out {
        *v = (gain * *v + (1.0 - gain) * mean + shift).clamp(-1.0, 1.0);
    }
    Tensor::new(&[c, h, w], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp() -> Tensor {
        let data = (0..3 * 8 * 8)
            .map(|i| ((i % 17) as f64 / 8.0) - 1.0)
            .collect();
        Tensor::new(&[3, 8, 8], data).unwrap()
    }

    #[test]
    fn degenerate_parameters_are_identity() {
        let img = ramp();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = augment(&img, &AugmentParams::identity(), &mut rng).unwrap();
        assert_eq!(out.data(), img.data());
    }

    #[test]
    fn forced_flip_mirrors_columns() {
        let img = ramp();
        let params = AugmentParams {
            flip_prob: 1.0,
            ..AugmentParams::identity()
        };
        let out = augment(&img, &params, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(out.data()[y * 8 + x], img.data()[y * 8 + 7 - x]);
            }
        }
    }

    #[test]
    fn outputs_stay_in_range() {
        let img = Tensor::full(&[3, 8, 8], 0.95);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let out = augment(&img, &AugmentParams::strong(), &mut rng).unwrap();
            assert_eq!(out.shape(), img.shape());
            assert!(out.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let bad = AugmentParams {
            crop_scale_min: 0.0,
            ..AugmentParams::strong()
        };
        assert!(augment(&ramp(), &bad, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
