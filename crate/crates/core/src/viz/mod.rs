//! Class-token attention maps: per-layer head averages, attention rollout
//! and heatmap rendering.

mod colormap;

use std::path::Path;

use thiserror::Error;

pub use colormap::VIRIDIS;

use crate::data::imageops::{self, Border};
use crate::data::{write_image, DataError};
use crate::model::{Model, ModelError, Network};
use crate::tensor::{Tape, Tensor, TensorError};
use crate::transformer::Pass;

#[derive(Debug, Error)]
pub enum VizError {
    #[error("attention maps require a transformer model")]
    NotTransformer,
    #[error("layer {layer} out of range for a {depth}-layer model")]
    Layer { layer: usize, depth: usize },
    #[error("{weights} weights do not fill a {rows}x{cols} patch grid")]
    Grid { weights: usize, rows: usize, cols: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Attention scores of one image: per layer a `[heads, T, T]` tensor,
/// `T = N + 1` with the class token first.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRecord {
    pub layers: Vec<Tensor>,
}

impl AttentionRecord {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Head-averaged `[T, T]` matrix of `layer`.
    pub fn head_average(&self, layer: usize) -> Result<Tensor, VizError> {
        let s = self.layers.get(layer).ok_or(VizError::Layer {
            layer,
            depth: self.depth(),
        })?;
        let (h, t) = (s.shape()[0], s.shape()[1]);
        let mut avg = vec![0.0; t * t];
        for head in s.data().chunks(t * t) {
            avg.iter_mut().zip(head).for_each(|(a, v)| *a += v / h as f64);
        }
        Ok(Tensor::new(&[t, t], avg)?)
    }
}

/// Runs a diagnostic forward pass over a normalized `[B, H, W, C]` batch.
/// Returns one record per image and the `[B, classes]` logits.
pub fn capture_attention(model: &Model, images: &Tensor) -> Result<(Vec<AttentionRecord>, Tensor), VizError> {
    if !matches!(model.network, Network::Vit(..)) {
        return Err(VizError::NotTransformer);
    }
    let mut captured = Vec::new();
    let mut tape = Tape::new();
    let mut pass = Pass {
        capture: Some(&mut captured),
        dropout: None,
    };
    let f = model
        .forward(&mut tape, images, false, &mut pass)
        .map_err(ModelError::from)?;
    let logits = tape.value(f.logits).clone();
    let batch = images.shape()[0];
    let mut records = vec![AttentionRecord { layers: Vec::new() }; batch];
    for layer in captured {
        let (h, t) = (layer.shape()[1], layer.shape()[2]);
        for (b, chunk) in layer.data().chunks(h * t * t).enumerate() {
            records[b].layers.push(Tensor::new(&[h, t, t], chunk.to_vec())?);
        }
    }
    Ok((records, logits))
}

/// Class-token row of a `[T, T]` matrix without its class column, scaled to sum to 1.
fn class_row(m: &Tensor) -> Vec<f64> {
    let row = &m.row(0)[1..];
    let total: f64 = row.iter().sum();
    row.iter().map(|v| v / total).collect()
}

/// Head-averaged class-token attention over the `N` patches of `layer`.
pub fn layer_attention_map(record: &AttentionRecord, layer: usize) -> Result<Vec<f64>, VizError> {
    Ok(class_row(&record.head_average(layer)?))
}

/// Attention rollout: each head-averaged layer is mixed half-and-half
/// with the identity, row-normalized, and the layers are multiplied from
/// the first to the last. Returns the class-token row over the patches.
pub fn rollout(record: &AttentionRecord) -> Result<Vec<f64>, VizError> {
    let mut joint: Option<Tensor> = None;
    for layer in 0..record.depth() {
        let avg = record.head_average(layer)?;
        let t = avg.shape()[0];
        let mut a = avg.clone();
        for i in 0..t {
            let row = &mut a.data_mut()[i * t..(i + 1) * t];
            row.iter_mut().for_each(|v| *v *= 0.5);
            row[i] += 0.5;
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        joint = Some(match joint {
            None => a,
            Some(prev) => a.matmul(&prev)?,
        });
    }
    let joint = joint.ok_or(VizError::Layer { layer: 0, depth: 0 })?;
    Ok(class_row(&joint))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Upsample {
    Bilinear,
    Nearest,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Layout {
    /// The colored map alone.
    Heatmap,
    /// The map blended over the image with the given map opacity.
    Overlay(f64),
    /// The image on the left, the map on the right.
    SideBySide,
}

/// Colors patch weights scaled by their maximum and upsamples them to the
/// size of `base` (`H × W × 3` in `[0, 1]`).
pub fn render_heatmap(
    weights: &[f64],
    grid: (usize, usize),
    base: &Tensor,
    upsample: Upsample,
    layout: Layout,
) -> Result<Tensor, VizError> {
    let (rows, cols) = grid;
    if weights.len() != rows * cols || rows == 0 {
        return Err(VizError::Grid {
            weights: weights.len(),
            rows,
            cols,
        });
    }
    let (h, w) = (base.shape()[0], base.shape()[1]);
    let max = weights.iter().cloned().fold(f64::MIN, f64::max);
    let scaled: Vec<f64> = weights.iter().map(|v| if max > 0.0 { v / max } else { 0.0 }).collect();
    let grid_img = Tensor::new(&[rows, cols, 1], scaled)?;
    let up = match upsample {
        Upsample::Bilinear => imageops::resize(&grid_img, h, w),
        Upsample::Nearest => imageops::warp(&grid_img, h, w, Border::Clamp, |y, x| {
            (
                (y * rows as f64 / h as f64).floor(),
                (x * cols as f64 / w as f64).floor(),
            )
        }),
    };
    let mut heat = Vec::with_capacity(h * w * 3);
    for &v in up.data() {
        let c = VIRIDIS[(v.clamp(0.0, 1.0) * 255.0).round() as usize];
        heat.extend(c.iter().map(|&b| b as f64 / 255.0));
    }
    let heat = Tensor::new(&[h, w, 3], heat)?;
    Ok(match layout {
        Layout::Heatmap => heat,
        Layout::Overlay(alpha) => {
            let data = heat
                .data()
                .iter()
                .zip(base.data())
                .map(|(m, b)| alpha * m + (1.0 - alpha) * b)
                .collect();
            Tensor::new(&[h, w, 3], data)?
        }
        Layout::SideBySide => {
            let mut data = Vec::with_capacity(h * w * 6);
            for y in 0..h {
                data.extend_from_slice(&base.data()[y * w * 3..(y + 1) * w * 3]);
                data.extend_from_slice(&heat.data()[y * w * 3..(y + 1) * w * 3]);
            }
            Tensor::new(&[h, 2 * w, 3], data)?
        }
    })
}

/// Output name for a map: `<stem>.layer<L>.<ext>` with `L` counted from 1,
/// or `<stem>.rollout.<ext>` when `layer` is None.
pub fn heatmap_file_name(stem: &str, layer: Option<usize>, ext: &str) -> String {
    match layer {
        Some(l) => format!("{stem}.layer{}.{ext}", l + 1),
        None => format!("{stem}.rollout.{ext}"),
    }
}

/// Writes a rendered heatmap as PNG or PPM, chosen by extension.
pub fn write_heatmap(path: &Path, image: &Tensor) -> Result<(), VizError> {
    Ok(write_image(path, image)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(layers: usize, heads: usize, t: usize) -> AttentionRecord {
        AttentionRecord {
            layers: vec![Tensor::full(&[heads, t, t], 1.0 / t as f64); layers],
        }
    }

    #[test]
    fn uniform_attention_gives_uniform_maps() {
        let r = uniform(3, 2, 5);
        for m in [layer_attention_map(&r, 1).unwrap(), rollout(&r).unwrap()] {
            assert_eq!(m.len(), 4);
            assert!(m.iter().all(|v| (v - 0.25).abs() < 1e-12));
        }
        assert!(layer_attention_map(&r, 3).is_err());
    }

    #[test]
    fn colormap_ends() {
        assert_eq!(VIRIDIS[0], [68, 1, 84]);
        assert_eq!(VIRIDIS[255], [253, 231, 37]);
    }
}
