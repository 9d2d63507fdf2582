//! The Vision Transformer classifier.
//!
//! An `H × W × C` image is cut into `N = HW / P²` non-overlapping patches in
//! raster order. Each flattened patch is projected by `E`, a learnable class
//! token is prepended, learned positional embeddings are added, and the
//! sequence runs through `depth` encoder blocks. The head reads only the
//! class-token row.

use rand::Rng;

use crate::init::trunc_normal;
use crate::tensor::{Result, Tape, Tensor, TensorError, Var};
use crate::transformer::{check_heads, encoder_block, EncoderBlockParams, Pass, LAYER_NORM_EPS};
use crate::ConfigError;

const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct ViTConfig {
    pub image_height: usize,
    pub image_width: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub d_model: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_dim: usize,
    pub num_classes: usize,
    pub dropout: f64,
}

impl Default for ViTConfig {
    fn default() -> Self {
        Self {
            image_height: 64,
            image_width: 64,
            channels: 3,
            patch_size: 16,
            d_model: 64,
            depth: 4,
            heads: 4,
            mlp_dim: 256,
            num_classes: 5,
            dropout: 0.0,
        }
    }
}

impl ViTConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let p = self.patch_size;
        if p == 0 || !self.image_height.is_multiple_of(p) || !self.image_width.is_multiple_of(p) {
            return Err(ConfigError(format!(
                "image {}x{} is not divisible into {p}x{p} patches",
                self.image_height, self.image_width
            )));
        }
        if self.image_height == 0 || self.image_width == 0 || self.channels == 0 {
            return Err(ConfigError("image dimensions must be positive".into()));
        }
        check_heads(self.d_model, self.heads)?;
        if self.depth == 0 || self.mlp_dim == 0 || self.num_classes == 0 {
            return Err(ConfigError("depth, mlp_dim and num_classes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ConfigError(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Patch tokens per image, excluding the class token.
    pub fn num_patches(&self) -> usize {
        (self.image_height * self.image_width) / (self.patch_size * self.patch_size)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    /// Side lengths of the patch grid (rows, columns).
    pub fn grid(&self) -> (usize, usize) {
        (self.image_height / self.patch_size, self.image_width / self.patch_size)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViTParams<T = Tensor> {
    /// `E`: `(P²·C) × d_model`.
    pub patch_projection: T,
    /// `1 × d_model`.
    pub class_token: T,
    /// `(N + 1) × d_model`.
    pub positional_embedding: T,
    pub blocks: Vec<EncoderBlockParams<T>>,
    pub head_norm_gain: T,
    pub head_norm_bias: T,
    /// `d_model × num_classes`.
    pub head_weight: T,
    pub head_bias: T,
}

impl ViTParams<Tensor> {
    pub fn init<R: Rng>(config: &ViTConfig, rng: &mut R) -> Result<Self, ConfigError> {
        config.validate()?;
        let d = config.d_model;
        let blocks = (0..config.depth)
            .map(|_| EncoderBlockParams::init(d, config.heads, config.mlp_dim, rng))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            patch_projection: trunc_normal(&[config.patch_dim(), d], INIT_STD, rng),
            class_token: Tensor::zeros(&[1, d]),
            positional_embedding: trunc_normal(&[config.num_patches() + 1, d], INIT_STD, rng),
            blocks,
            head_norm_gain: Tensor::ones(&[d]),
            head_norm_bias: Tensor::zeros(&[d]),
            head_weight: trunc_normal(&[d, config.num_classes], INIT_STD, rng),
            head_bias: Tensor::zeros(&[config.num_classes]),
        })
    }
}

impl<T> ViTParams<T> {
    pub fn map<U>(&self, f: &mut dyn FnMut(&str, &T) -> U) -> ViTParams<U> {
        ViTParams {
            patch_projection: f("patch_projection", &self.patch_projection),
            class_token: f("class_token", &self.class_token),
            positional_embedding: f("positional_embedding", &self.positional_embedding),
            blocks: self
                .blocks
                .iter()
                .enumerate()
                .map(|(i, b)| b.map(&format!("blocks.{i}"), f))
                .collect(),
            head_norm_gain: f("head_norm_gain", &self.head_norm_gain),
            head_norm_bias: f("head_norm_bias", &self.head_norm_bias),
            head_weight: f("head_weight", &self.head_weight),
            head_bias: f("head_bias", &self.head_bias),
        }
    }
}

fn indivisible(h: usize, w: usize, p: usize) -> TensorError {
    TensorError::Shape {
        op: "patchify",
        lhs: vec![h, w],
        rhs: vec![p, p],
    }
}

/// Cuts an `H × W × C` image into `N × (P²·C)` rows in raster order; each
/// row is the row-major flattening of one `P × P × C` patch.
pub fn patchify(image: &Tensor, patch: usize) -> Result<Tensor> {
    let &[h, w, c] = image.shape() else {
        return Err(TensorError::Shape {
            op: "patchify",
            lhs: image.shape().to_vec(),
            rhs: vec![patch],
        });
    };
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(indivisible(h, w, patch));
    }
    let (gh, gw) = (h / patch, w / patch);
    let src = image.data();
    let mut out = Vec::with_capacity(src.len());
    for py in 0..gh {
        for px in 0..gw {
            for y in 0..patch {
                let start = ((py * patch + y) * w + px * patch) * c;
                out.extend_from_slice(&src[start..start + patch * c]);
            }
        }
    }
    Tensor::new(&[gh * gw, patch * patch * c], out)
}

/// Inverse of [`patchify`].
pub fn unpatchify(patches: &Tensor, height: usize, width: usize, channels: usize, patch: usize) -> Result<Tensor> {
    if patch == 0 || !height.is_multiple_of(patch) || !width.is_multiple_of(patch) {
        return Err(indivisible(height, width, patch));
    }
    let (gh, gw) = (height / patch, width / patch);
    if patches.shape() != [gh * gw, patch * patch * channels] {
        return Err(TensorError::Shape {
            op: "unpatchify",
            lhs: patches.shape().to_vec(),
            rhs: vec![gh * gw, patch * patch * channels],
        });
    }
    let mut out = vec![0.0; height * width * channels];
    let src = patches.data();
    let row_len = patch * channels;
    for py in 0..gh {
        for px in 0..gw {
            let token = py * gw + px;
            for y in 0..patch {
                let dst = ((py * patch + y) * width + px * patch) * channels;
                let s = token * patch * row_len + y * row_len;
                out[dst..dst + row_len].copy_from_slice(&src[s..s + row_len]);
            }
        }
    }
    Tensor::new(&[height, width, channels], out)
}

/// Patchifies every image of an `[B, H, W, C]` batch into `[B·N, P²·C]`.
pub fn patchify_batch(images: &Tensor, patch: usize) -> Result<Tensor> {
    let &[b, h, w, c] = images.shape() else {
        return Err(TensorError::Shape {
            op: "patchify_batch",
            lhs: images.shape().to_vec(),
            rhs: vec![patch],
        });
    };
    let per = h * w * c;
    let mut data = Vec::with_capacity(images.len());
    let mut rows = 0;
    for i in 0..b {
        let img = Tensor::new(&[h, w, c], images.data()[i * per..(i + 1) * per].to_vec())?;
        let p = patchify(&img, patch)?;
        rows += p.shape()[0];
        data.extend(p.into_data());
    }
    Tensor::new(&[rows, patch * patch * c], data)
}

/// Builds the token sequence `[B, N+1, d_model]`: class token first, then
/// `patches · E`, plus positional embeddings on every row.
///
/// `patches` is `[B·N, P²·C]` for `batch` images of `N` patches each.
pub fn embed_sequence(tape: &mut Tape, patches: Var, params: &ViTParams<Var>, batch: usize) -> Result<Var> {
    let rows = tape.shape(patches)[0];
    let pos_shape = tape.shape(params.positional_embedding).to_vec();
    let (tokens, d) = (pos_shape[0], pos_shape[1]);
    if batch == 0 || rows != batch * (tokens - 1) {
        return Err(TensorError::Shape {
            op: "embed_sequence",
            lhs: tape.shape(patches).to_vec(),
            rhs: pos_shape,
        });
    }
    let projected = tape.matmul(patches, params.patch_projection)?;
    let projected = tape.reshape(projected, &[batch, tokens - 1, d])?;
    let cls = tape.tile(params.class_token, batch);
    let seq = tape.concat(cls, projected, 1)?;
    let pos = tape.tile(params.positional_embedding, batch);
    tape.add(seq, pos)
}

/// Logits `[B, num_classes]` for an `[B, H, W, C]` batch.
pub fn vit_forward(
    tape: &mut Tape,
    images: &Tensor,
    params: &ViTParams<Var>,
    config: &ViTConfig,
    pass: &mut Pass,
) -> Result<Var> {
    let expected = [config.image_height, config.image_width, config.channels];
    if images.rank() != 4 || images.shape()[1..] != expected {
        return Err(TensorError::Shape {
            op: "vit_forward",
            lhs: images.shape().to_vec(),
            rhs: expected.to_vec(),
        });
    }
    let batch = images.shape()[0];
    let patches = tape.constant(patchify_batch(images, config.patch_size)?);
    let mut x = embed_sequence(tape, patches, params, batch)?;
    for block in &params.blocks {
        x = encoder_block(tape, x, block, pass)?;
    }
    let cls = tape.narrow(x, 1, 0, 1)?;
    let cls = tape.reshape(cls, &[batch, config.d_model])?;
    let cls = tape.layer_norm(cls, params.head_norm_gain, params.head_norm_bias, LAYER_NORM_EPS)?;
    let logits = tape.matmul(cls, params.head_weight)?;
    tape.add_bias(logits, params.head_bias)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn patch_counts() {
        let img = ramp(&[64, 64, 3]);
        let p16 = patchify(&img, 16).unwrap();
        assert_eq!(p16.shape(), &[16, 768]);
        let p32 = patchify(&img, 32).unwrap();
        assert_eq!(p32.shape(), &[4, 3072]);
        assert!(patchify(&img, 24).is_err());
    }

    #[test]
    fn patches_are_raster_ordered() {
        // 4x4 single-channel image, P = 2: patch 1 is the top-right block
        let img = ramp(&[4, 4, 1]);
        let p = patchify(&img, 2).unwrap();
        assert_eq!(p.row(0), &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(p.row(1), &[2.0, 3.0, 6.0, 7.0]);
        assert_eq!(p.row(2), &[8.0, 9.0, 12.0, 13.0]);
        assert_eq!(unpatchify(&p, 4, 4, 1, 2).unwrap(), img);
    }

    #[test]
    fn config_validation() {
        assert!(ViTConfig::default().validate().is_ok());
        let bad = ViTConfig {
            patch_size: 20,
            ..ViTConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ViTConfig {
            heads: 3,
            ..ViTConfig::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(ViTConfig::default().num_patches(), 16);
    }
}
