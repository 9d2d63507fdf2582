//! Procedural stand-in for field imagery: five plant classes drawn on a
//! shared soil texture.
//!
//! | class          | geometry                                   | colour              |
//! |----------------|--------------------------------------------|---------------------|
//! | weed           | thin strokes scattered over the frame      | yellow-green        |
//! | beet           | rosette of 5–8 elliptic leaves             | red                 |
//! | off_type_beet  | the same rosette                           | mid green           |
//! | parsley        | dense cluster of small frilly lobes        | bright lime green   |
//! | spinach        | 3–5 broad smooth lobes                     | dark bluish green   |
//!
//! Size, position, leaf count and colour ranges overlap between classes and
//! the soil varies per image, so raw pixels alone separate them only partly.
//! Every image is drawn from its own generator stream keyed by
//! `(seed, class, index)` and quantized to 8 bits, so what is written to
//! disk and read back is exactly what [`generate_synthetic`] returns.

use std::f64::consts::TAU;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::imageops::hsv_to_rgb;
use super::{io_err, to_byte, write_image, DataError, DatasetIndex, Label, LabeledPatch, PATCH_SIZE};
use crate::tensor::Tensor;

pub const GENERATOR_VERSION: u32 = 1;

const N: usize = PATCH_SIZE;

struct Canvas {
    px: Vec<[f64; 3]>,
}

impl Canvas {
    fn soil<R: Rng>(rng: &mut R) -> Self {
        let hue = rng.gen_range(0.05..0.10);
        let sat = rng.gen_range(0.35..0.55);
        let val = rng.gen_range(0.36..0.46);
        let waves: Vec<(f64, f64, f64, f64)> = (0..4)
            .map(|_| {
                let angle = rng.gen_range(0.0..TAU);
                let freq = rng.gen_range(0.05..0.3);
                (
                    angle.cos() * freq,
                    angle.sin() * freq,
                    rng.gen_range(0.0..TAU),
                    rng.gen_range(0.01..0.04),
                )
            })
            .collect();
        let speckle = Normal::new(0.0, 0.025).expect("valid normal");
        let mut px = Vec::with_capacity(N * N);
        for y in 0..N {
            for x in 0..N {
                let wave: f64 = waves
                    .iter()
                    .map(|&(fy, fx, phase, amp)| amp * (fy * y as f64 + fx * x as f64 + phase).sin())
                    .sum();
                let v = (val + wave + speckle.sample(rng)).clamp(0.0, 1.0);
                px.push(hsv_to_rgb(hue, sat, v));
            }
        }
        let mut canvas = Self { px };
        for _ in 0..rng.gen_range(0..6) {
            let (cy, cx) = (rng.gen_range(0.0..N as f64), rng.gen_range(0.0..N as f64));
            let r = rng.gen_range(0.8..2.2);
            let color = hsv_to_rgb(hue, sat * 0.5, val + 0.15);
            canvas.ellipse(cy, cx, r, r * 0.8, rng.gen_range(0.0..TAU), |_| color);
        }
        canvas
    }

    /// Paints an antialiased rotated ellipse with semi-axes `a` (along
    /// `angle`) and `b`. `color` receives the normalized radius in `[0, 1]`.
    fn ellipse(&mut self, cy: f64, cx: f64, a: f64, b: f64, angle: f64, color: impl Fn(f64) -> [f64; 3]) {
        let (s, c) = angle.sin_cos();
        let reach = a.max(b) + 1.0;
        if cy + reach < 0.0 || cx + reach < 0.0 {
            return;
        }
        let y0 = (cy - reach).floor().max(0.0) as usize;
        let y1 = ((cy + reach).ceil() as usize).min(N - 1);
        let x0 = (cx - reach).floor().max(0.0) as usize;
        let x1 = ((cx + reach).ceil() as usize).min(N - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                let u = dx * c + dy * s;
                let v = -dx * s + dy * c;
                let r = ((u / a).powi(2) + (v / b).powi(2)).sqrt();
                let cover = ((1.0 - r) * b.min(a) + 0.5).clamp(0.0, 1.0);
                if cover <= 0.0 {
                    continue;
                }
                let col = color(r.min(1.0));
                let p = &mut self.px[y * N + x];
                for k in 0..3 {
                    p[k] = p[k] * (1.0 - cover) + col[k] * cover;
                }
            }
        }
    }

    fn into_tensor(self) -> Tensor {
        let data = self
            .px
            .into_iter()
            .flatten()
            .map(|v| to_byte(v) as f64 / 255.0)
            .collect();
        Tensor::new(&[N, N, 3], data).expect("canvas shape")
    }
}

/// A leaf colour: `(hue, saturation, value)` with darker edges and a paler midrib.
fn leaf_shade(hue: f64, sat: f64, val: f64) -> impl Fn(f64) -> [f64; 3] {
    move |r| hsv_to_rgb(hue, sat, (val * (1.1 - 0.3 * r)).clamp(0.0, 1.0))
}

fn rosette<R: Rng>(canvas: &mut Canvas, rng: &mut R, hue: f64, sat: f64, val: f64) {
    let (cy, cx) = (rng.gen_range(22.0..42.0), rng.gen_range(22.0..42.0));
    let leaves = rng.gen_range(5..=8);
    let offset = rng.gen_range(0.0..TAU);
    for i in 0..leaves {
        let angle = offset + TAU * i as f64 / leaves as f64 + rng.gen_range(-0.25..0.25);
        let a = rng.gen_range(7.0..13.0);
        let b = rng.gen_range(3.0..5.5);
        let (ly, lx) = (cy + angle.sin() * a * 0.9, cx + angle.cos() * a * 0.9);
        let h = hue + rng.gen_range(-0.015..0.015);
        canvas.ellipse(ly, lx, a, b, angle, leaf_shade(h, sat, val));
    }
}

fn draw_plant<R: Rng>(canvas: &mut Canvas, label: Label, rng: &mut R) {
    match label {
        Label::Weed => {
            let hue = rng.gen_range(0.14..0.20);
            let (sat, val) = (rng.gen_range(0.55..0.8), rng.gen_range(0.45..0.7));
            for _ in 0..rng.gen_range(5..=10) {
                let (cy, cx) = (rng.gen_range(6.0..58.0), rng.gen_range(6.0..58.0));
                let a = rng.gen_range(4.0..9.0);
                let b = rng.gen_range(0.8..1.8);
                canvas.ellipse(cy, cx, a, b, rng.gen_range(0.0..TAU), leaf_shade(hue, sat, val));
            }
        }
        Label::Beet => {
            let hue = rng.gen_range(-0.06..0.02f64).rem_euclid(1.0);
            let (sat, val) = (rng.gen_range(0.5..0.75), rng.gen_range(0.4..0.65));
            rosette(canvas, rng, hue, sat, val);
        }
        Label::OffTypeBeet => {
            let hue = rng.gen_range(0.28..0.33);
            let (sat, val) = (rng.gen_range(0.5..0.75), rng.gen_range(0.45..0.62));
            rosette(canvas, rng, hue, sat, val);
        }
        Label::Parsley => {
            let hue = rng.gen_range(0.21..0.26);
            let (sat, val) = (rng.gen_range(0.6..0.85), rng.gen_range(0.62..0.85));
            let (cy, cx) = (rng.gen_range(22.0..42.0), rng.gen_range(22.0..42.0));
            let spread = rng.gen_range(6.0..10.0);
            let jitter = Normal::new(0.0, spread).expect("valid normal");
            for _ in 0..rng.gen_range(40..=70) {
                let (ly, lx) = (cy + jitter.sample(rng), cx + jitter.sample(rng));
                let r = rng.gen_range(1.2..2.6);
                // bright centre, dark rim: a curled, frilly lobe
                canvas.ellipse(
                    ly,
                    lx,
                    r,
                    r * rng.gen_range(0.6..1.0),
                    rng.gen_range(0.0..TAU),
                    move |d| hsv_to_rgb(hue, sat, (val * (1.0 - 0.6 * d * d)).clamp(0.0, 1.0)),
                );
            }
        }
        Label::Spinach => {
            let hue = rng.gen_range(0.35..0.42);
            let (sat, val) = (rng.gen_range(0.55..0.8), rng.gen_range(0.24..0.4));
            let (cy, cx) = (rng.gen_range(22.0..42.0), rng.gen_range(22.0..42.0));
            let lobes = rng.gen_range(3..=5);
            let offset = rng.gen_range(0.0..TAU);
            for i in 0..lobes {
                let angle = offset + TAU * i as f64 / lobes as f64 + rng.gen_range(-0.3..0.3);
                let a = rng.gen_range(10.0..16.0);
                let b = rng.gen_range(7.0..11.0);
                let (ly, lx) = (cy + angle.sin() * a * 0.7, cx + angle.cos() * a * 0.7);
                canvas.ellipse(ly, lx, a, b, angle, leaf_shade(hue, sat, val));
            }
        }
    }
}

/// Draws one image of `label`; `(seed, label, index)` fully determine it.
pub fn synthesize(label: Label, index: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((label.index() as u64) << 32) | index as u64);
    let mut canvas = Canvas::soil(&mut rng);
    draw_plant(&mut canvas, label, &mut rng);
    canvas.into_tensor()
}

pub fn file_name(label: Label, index: usize) -> String {
    format!("{}_{index:05}.png", label.name())
}

/// `per_class` images of each of the five classes.
pub fn generate_synthetic(per_class: usize, seed: u64) -> DatasetIndex {
    let mut index = DatasetIndex::new();
    for label in Label::ALL {
        for i in 0..per_class {
            let id = format!("{}/{}", label.name(), file_name(label, i));
            index.push(LabeledPatch::new(synthesize(label, i, seed), label, id));
        }
    }
    index
}

/// Writes `root/<class>/<file>.png` for every patch plus `root/manifest.tsv`.
pub fn write_dataset(index: &DatasetIndex, root: &Path, seed: u64) -> Result<(), DataError> {
    let mut manifest = String::from("filename\tlabel\tseed\tgenerator_version\n");
    for label in Label::ALL {
        let dir = root.join(label.name());
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for (i, patch) in index.class(label).iter().enumerate() {
            let name = file_name(label, i);
            write_image(&dir.join(&name), &patch.pixels)?;
            manifest.push_str(&format!(
                "{}/{name}\t{label}\t{seed}\t{GENERATOR_VERSION}\n",
                label.name()
            ));
        }
    }
    let path = root.join("manifest.tsv");
    let mut f = std::fs::File::create(&path).map_err(io_err(&path))?;
    f.write_all(manifest.as_bytes()).map_err(io_err(&path))
}
