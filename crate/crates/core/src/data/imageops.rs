//! Pixel-level helpers on `H × W × C` tensors.

use crate::tensor::Tensor;

/// How sample coordinates outside the image are mapped back inside.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Border {
    Clamp,
    /// Mirror about the edge pixels (`…2 1 0 1 2…`).
    Reflect,
}

fn fold(i: isize, n: usize, border: Border) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    match border {
        Border::Clamp => i.clamp(0, n - 1) as usize,
        Border::Reflect => {
            let period = 2 * (n - 1);
            let m = i.rem_euclid(period);
            (if m < n { m } else { period - m }) as usize
        }
    }
}

/// Bilinear sample at continuous pixel-centre coordinates `(y, x)` into `out`.
pub fn sample(img: &Tensor, y: f64, x: f64, border: Border, out: &mut [f64]) {
    let (h, w, c) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let (y0, x0) = (y0 as isize, x0 as isize);
    let data = img.data();
    out.iter_mut().for_each(|v| *v = 0.0);
    for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
        if wy == 0.0 {
            continue;
        }
        let yy = fold(y0 + dy, h, border);
        for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
            if wx == 0.0 {
                continue;
            }
            let xx = fold(x0 + dx, w, border);
            let base = (yy * w + xx) * c;
            for (k, o) in out.iter_mut().enumerate() {
                *o += wy * wx * data[base + k];
            }
        }
    }
}

/// Builds an `out_h × out_w` image whose pixel `(y, x)` is sampled from
/// `img` at `map(y, x)`.
pub fn warp(img: &Tensor, out_h: usize, out_w: usize, border: Border, map: impl Fn(f64, f64) -> (f64, f64)) -> Tensor {
    let c = img.shape()[2];
    let mut data = vec![0.0; out_h * out_w * c];
    for y in 0..out_h {
        for x in 0..out_w {
            let (sy, sx) = map(y as f64, x as f64);
            let at = (y * out_w + x) * c;
            sample(img, sy, sx, border, &mut data[at..at + c]);
        }
    }
    Tensor::new(&[out_h, out_w, c], data).expect("warp output shape")
}

/// Bilinear resize of the window `[top, top+height) × [left, left+width)`
/// to `out_h × out_w`, with half-pixel centres. A same-size window is copied exactly.
pub fn resize_window(img: &Tensor, top: f64, left: f64, height: f64, width: f64, out_h: usize, out_w: usize) -> Tensor {
    let (sy, sx) = (height / out_h as f64, width / out_w as f64);
    warp(img, out_h, out_w, Border::Clamp, |y, x| {
        (top + (y + 0.5) * sy - 0.5, left + (x + 0.5) * sx - 0.5)
    })
}

pub fn resize(img: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let (h, w) = (img.shape()[0], img.shape()[1]);
    resize_window(img, 0.0, 0.0, h as f64, w as f64, out_h, out_w)
}

/// Affine transform about the image centre. `m` maps output offsets from
/// the centre to source offsets: `[dy', dx'] = m · [dy, dx] + t`.
pub fn affine(img: &Tensor, m: [[f64; 2]; 2], t: [f64; 2], border: Border) -> Tensor {
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    warp(img, h, w, border, |y, x| {
        let (dy, dx) = (y - cy, x - cx);
        (
            cy + m[0][0] * dy + m[0][1] * dx + t[0],
            cx + m[1][0] * dy + m[1][1] * dx + t[1],
        )
    })
}

/// Rotation by `degrees` (counter-clockwise on screen) about the centre.
pub fn rotate(img: &Tensor, degrees: f64, border: Border) -> Tensor {
    let (s, c) = degrees.to_radians().sin_cos();
    // Inverse rotation, with y pointing down.
    affine(img, [[c, s], [-s, c]], [0.0, 0.0], border)
}

pub fn flip_horizontal(img: &Tensor) -> Tensor {
    let (h, w, c) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let src = img.data();
    let mut out = Vec::with_capacity(src.len());
    for y in 0..h {
        for x in (0..w).rev() {
            let at = (y * w + x) * c;
            out.extend_from_slice(&src[at..at + c]);
        }
    }
    Tensor::new(img.shape(), out).expect("same shape")
}

/// Luma of an RGB pixel.
pub fn gray(px: &[f64]) -> f64 {
    0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]
}

pub fn rgb_to_hsv(px: &[f64]) -> [f64; 3] {
    let (r, g, b) = (px[0], px[1], px[2]);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta <= 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max <= 0.0 { 0.0 } else { delta / max };
    [h, s, max]
}

/// `h` in turns (wrapped), `s` and `v` in `[0, 1]`.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

pub fn clamp_unit(img: &mut Tensor) {
    img.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
}
