//! Random training-time augmentation.
//!
//! Transforms run in a fixed order: rotation, random resized crop,
//! horizontal flip, color jitter, then a rand-augment round. Geometric
//! transforms fill exposed regions by reflecting the image at its edges.
//! Every draw comes from one generator seeded by the caller, so a
//! `(patch, policy, seed)` triple always yields the same output.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::imageops::{
    self, affine, clamp_unit, flip_horizontal, gray, hsv_to_rgb, resize_window, rgb_to_hsv, rotate, Border,
};
use super::{DataError, LabeledPatch};
use crate::tensor::Tensor;

const CROP_ATTEMPTS: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct ColorJitter {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Hue shift bound in turns; at most 0.5.
    pub hue: f64,
}

impl Default for ColorJitter {
    fn default() -> Self {
        Self {
            brightness: 0.2,
            contrast: 0.2,
            saturation: 0.2,
            hue: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RandAugment {
    /// Operations drawn (with replacement) per image.
    pub ops: usize,
    /// Strength on a 0..=30 scale.
    pub magnitude: f64,
}

impl Default for RandAugment {
    fn default() -> Self {
        Self { ops: 2, magnitude: 9.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentPolicy {
    /// Rotation angle drawn from `±rotation_degrees`; 0 disables.
    pub rotation_degrees: f64,
    /// Area fraction range of the random resized crop; `None` disables.
    pub crop_scale: Option<(f64, f64)>,
    /// Aspect-ratio range of the crop, sampled log-uniformly.
    pub crop_ratio: (f64, f64),
    pub hflip_prob: f64,
    pub jitter: Option<ColorJitter>,
    pub rand_augment: Option<RandAugment>,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            rotation_degrees: 20.0,
            crop_scale: Some((0.6, 1.0)),
            crop_ratio: (3.0 / 4.0, 4.0 / 3.0),
            hflip_prob: 0.5,
            jitter: Some(ColorJitter::default()),
            rand_augment: Some(RandAugment::default()),
        }
    }
}

impl AugmentPolicy {
    /// Every transform disabled.
    pub fn identity() -> Self {
        Self {
            rotation_degrees: 0.0,
            crop_scale: None,
            crop_ratio: (1.0, 1.0),
            hflip_prob: 0.0,
            jitter: None,
            rand_augment: None,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::Policy(m));
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return bad(format!("flip probability {} outside [0, 1]", self.hflip_prob));
        }
        if !(0.0..=180.0).contains(&self.rotation_degrees) {
            return bad(format!("rotation {} outside [0, 180]", self.rotation_degrees));
        }
        if let Some((lo, hi)) = self.crop_scale {
            if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
                return bad(format!("crop scale ({lo}, {hi}) not within (0, 1]"));
            }
            let (rlo, rhi) = self.crop_ratio;
            if !(rlo > 0.0 && rlo <= rhi) {
                return bad(format!("crop ratio ({rlo}, {rhi}) is not an increasing positive range"));
            }
        }
        if let Some(j) = &self.jitter {
            if [j.brightness, j.contrast, j.saturation]
                .iter()
                .any(|v| !(0.0..1.0).contains(v))
                || !(0.0..=0.5).contains(&j.hue)
            {
                return bad("color jitter strengths must lie in [0, 1), hue in [0, 0.5]".into());
            }
        }
        if let Some(r) = &self.rand_augment {
            if !(0.0..=30.0).contains(&r.magnitude) {
                return bad(format!("rand-augment magnitude {} outside [0, 30]", r.magnitude));
            }
        }
        Ok(())
    }
}

/// Augments one patch; the label and dimensions never change.
pub fn augment(patch: &LabeledPatch, policy: &AugmentPolicy, seed: u64) -> LabeledPatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LabeledPatch {
        pixels: augment_pixels(&patch.pixels, policy, &mut rng),
        ..patch.clone()
    }
}

pub fn augment_pixels<R: Rng>(img: &Tensor, policy: &AugmentPolicy, rng: &mut R) -> Tensor {
    let mut img = img.clone();
    if policy.rotation_degrees > 0.0 {
        let angle = rng.gen_range(-policy.rotation_degrees..=policy.rotation_degrees);
        img = rotate(&img, angle, Border::Reflect);
    }
    if let Some(scale) = policy.crop_scale {
        img = random_resized_crop(&img, scale, policy.crop_ratio, rng);
    }
    if policy.hflip_prob > 0.0 && rng.gen_bool(policy.hflip_prob) {
        img = flip_horizontal(&img);
    }
    if let Some(j) = &policy.jitter {
        img = color_jitter(&img, j, rng);
    }
    if let Some(r) = &policy.rand_augment {
        img = rand_augment(&img, r, rng);
    }
    img
}

fn factor<R: Rng>(strength: f64, rng: &mut R) -> f64 {
    if strength > 0.0 {
        rng.gen_range(1.0 - strength..=1.0 + strength)
    } else {
        1.0
    }
}

/// Crops a random window of the given area fraction and aspect ratio and
/// resizes it back to the input size. Windows that do not fit are redrawn;
/// after repeated failures the full frame is used.
pub fn random_resized_crop<R: Rng>(img: &Tensor, scale: (f64, f64), ratio: (f64, f64), rng: &mut R) -> Tensor {
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let area = (h * w) as f64;
    let (log_lo, log_hi) = (ratio.0.ln(), ratio.1.ln());
    for _ in 0..CROP_ATTEMPTS {
        let target = area * rng.gen_range(scale.0..=scale.1);
        let aspect = rng.gen_range(log_lo..=log_hi).exp();
        let cw = (target * aspect).sqrt().round();
        let ch = (target / aspect).sqrt().round();
        if cw >= 1.0 && ch >= 1.0 && cw <= w as f64 && ch <= h as f64 {
            let top = rng.gen_range(0..=(h - ch as usize)) as f64;
            let left = rng.gen_range(0..=(w - cw as usize)) as f64;
            return resize_window(img, top, left, ch, cw, h, w);
        }
    }
    img.clone()
}

fn blend(img: &Tensor, other: impl Fn(&[f64], usize) -> f64, f: f64) -> Tensor {
    let c = img.shape()[2];
    let mut out = img.clone();
    for px in out.data_mut().chunks_mut(c) {
        let orig: Vec<f64> = px.to_vec();
        for (k, v) in px.iter_mut().enumerate() {
            let o = other(&orig, k);
            *v = o + f * (orig[k] - o);
        }
    }
    clamp_unit(&mut out);
    out
}

fn adjust_brightness(img: &Tensor, f: f64) -> Tensor {
    blend(img, |_, _| 0.0, f)
}

fn adjust_contrast(img: &Tensor, f: f64) -> Tensor {
    let c = img.shape()[2];
    let n = (img.len() / c) as f64;
    let mean = img.data().chunks(c).map(gray).sum::<f64>() / n;
    blend(img, |_, _| mean, f)
}

fn adjust_saturation(img: &Tensor, f: f64) -> Tensor {
    blend(img, |px, _| gray(px), f)
}

fn adjust_hue(img: &Tensor, shift: f64) -> Tensor {
    let mut out = img.clone();
    for px in out.data_mut().chunks_mut(3) {
        let [h, s, v] = rgb_to_hsv(px);
        px.copy_from_slice(&hsv_to_rgb(h + shift, s, v));
    }
    out
}

/// Blends with a 3×3 smoothed copy: `f < 1` blurs, `f > 1` sharpens.
fn adjust_sharpness(img: &Tensor, f: f64) -> Tensor {
    let (h, w, c) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let src = img.data();
    let mut smooth = src.to_vec();
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            for k in 0..c {
                let mut acc = 4.0 * src[(y * w + x) * c + k];
                for (dy, dx) in [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)] {
                    let (yy, xx) = ((y as isize + dy) as usize, (x as isize + dx) as usize);
                    acc += src[(yy * w + xx) * c + k];
                }
                smooth[(y * w + x) * c + k] = acc / 12.0;
            }
        }
    }
    let mut out = img.clone();
    out.data_mut()
        .iter_mut()
        .zip(&smooth)
        .for_each(|(v, s)| *v = (s + f * (*v - s)).clamp(0.0, 1.0));
    out
}

pub fn color_jitter<R: Rng>(img: &Tensor, j: &ColorJitter, rng: &mut R) -> Tensor {
    let mut out = adjust_brightness(img, factor(j.brightness, rng));
    out = adjust_contrast(&out, factor(j.contrast, rng));
    out = adjust_saturation(&out, factor(j.saturation, rng));
    if j.hue > 0.0 && out.shape()[2] == 3 {
        out = adjust_hue(&out, rng.gen_range(-j.hue..=j.hue));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RandOp {
    Rotate,
    Shear,
    Translate,
    Brightness,
    Contrast,
    Saturation,
    Sharpness,
}

impl RandOp {
    pub const POOL: [RandOp; 7] = [
        RandOp::Rotate,
        RandOp::Shear,
        RandOp::Translate,
        RandOp::Brightness,
        RandOp::Contrast,
        RandOp::Saturation,
        RandOp::Sharpness,
    ];

    /// Applies the op at `level` in `[0, 1]` of its maximum strength, signed by `sign`.
    pub fn apply(self, img: &Tensor, level: f64, sign: f64) -> Tensor {
        let s = level * sign;
        match self {
            RandOp::Rotate => rotate(img, 30.0 * s, Border::Reflect),
            RandOp::Shear => affine(img, [[1.0, 0.0], [0.3 * s, 1.0]], [0.0, 0.0], Border::Reflect),
            RandOp::Translate => {
                let shift = 0.45 * s * img.shape()[1] as f64;
                affine(img, [[1.0, 0.0], [0.0, 1.0]], [0.0, shift], Border::Reflect)
            }
            RandOp::Brightness => adjust_brightness(img, 1.0 + 0.9 * s),
            RandOp::Contrast => adjust_contrast(img, 1.0 + 0.9 * s),
            RandOp::Saturation => adjust_saturation(img, 1.0 + 0.9 * s),
            RandOp::Sharpness => adjust_sharpness(img, 1.0 + 0.9 * s),
        }
    }
}

pub fn rand_augment<R: Rng>(img: &Tensor, r: &RandAugment, rng: &mut R) -> Tensor {
    let level = r.magnitude / 30.0;
    let mut out = img.clone();
    for _ in 0..r.ops {
        let op = *RandOp::POOL.choose(rng).expect("non-empty pool");
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        out = op.apply(&out, level, sign);
    }
    imageops::clamp_unit(&mut out);
    out
}
