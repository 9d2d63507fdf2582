//! Small convolutional baseline: `conv → ReLU → 2×2 max-pool` stages and a
//! linear head over the flattened feature map.

use rand::Rng;

use crate::init::he_normal;
use crate::tensor::{Result, Tape, Tensor, TensorError, Var};
use crate::ConfigError;

#[derive(Clone, Debug, PartialEq)]
pub struct CnnConfig {
    pub image_height: usize,
    pub image_width: usize,
    pub channels: usize,
    /// Output channels of each conv stage.
    pub widths: Vec<usize>,
    /// Odd square kernel size; convolutions are same-padded.
    pub kernel: usize,
    /// Whether stage `i` ends with a 2×2 max-pool.
    pub pool: Vec<bool>,
    /// Width of an optional hidden dense layer before the output; 0 disables it.
    pub hidden: usize,
    pub num_classes: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            image_height: 64,
            image_width: 64,
            channels: 3,
            widths: vec![16, 32, 64],
            kernel: 3,
            pool: vec![true, true, true],
            hidden: 0,
            num_classes: 5,
        }
    }
}

impl CnnConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(ConfigError("conv widths must be non-empty and positive".into()));
        }
        if self.pool.len() != self.widths.len() {
            return Err(ConfigError(format!(
                "pooling schedule has {} entries for {} stages",
                self.pool.len(),
                self.widths.len()
            )));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(ConfigError(format!("kernel size {} must be odd", self.kernel)));
        }
        if self.num_classes == 0 || self.channels == 0 {
            return Err(ConfigError("num_classes and channels must be positive".into()));
        }
        let (h, w) = self.feature_grid();
        if h == 0 || w == 0 {
            return Err(ConfigError(format!(
                "{}x{} input pools down to nothing",
                self.image_height, self.image_width
            )));
        }
        Ok(())
    }

    /// Spatial size of the final feature map.
    pub fn feature_grid(&self) -> (usize, usize) {
        self.pool
            .iter()
            .fold((self.image_height, self.image_width), |(h, w), &p| {
                if p {
                    (h / 2, w / 2)
                } else {
                    (h, w)
                }
            })
    }

    pub fn feature_len(&self) -> usize {
        let (h, w) = self.feature_grid();
        h * w * self.widths.last().copied().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvStage<T = Tensor> {
    /// `(k·k·C_in) × C_out`, rows ordered (kernel row, kernel column, channel).
    pub kernel: T,
    pub bias: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CnnParams<T = Tensor> {
    pub stages: Vec<ConvStage<T>>,
    pub hidden: Option<(T, T)>,
    pub head_weight: T,
    pub head_bias: T,
}

impl CnnParams<Tensor> {
    pub fn init<R: Rng>(config: &CnnConfig, rng: &mut R) -> Result<Self, ConfigError> {
        config.validate()?;
        let mut c_in = config.channels;
        let mut stages = Vec::new();
        for &c_out in &config.widths {
            let fan_in = config.kernel * config.kernel * c_in;
            stages.push(ConvStage {
                kernel: he_normal(&[fan_in, c_out], fan_in, rng),
                bias: Tensor::zeros(&[c_out]),
            });
            c_in = c_out;
        }
        let mut features = config.feature_len();
        let hidden = (config.hidden > 0).then(|| {
            let w = he_normal(&[features, config.hidden], features, rng);
            features = config.hidden;
            (w, Tensor::zeros(&[config.hidden]))
        });
        Ok(Self {
            stages,
            hidden,
            head_weight: he_normal(&[features, config.num_classes], features, rng).map(|v| v * 0.5),
            head_bias: Tensor::zeros(&[config.num_classes]),
        })
    }
}

impl<T> CnnParams<T> {
    pub fn map<U>(&self, f: &mut dyn FnMut(&str, &T) -> U) -> CnnParams<U> {
        CnnParams {
            stages: self
                .stages
                .iter()
                .enumerate()
                .map(|(i, s)| ConvStage {
                    kernel: f(&format!("stages.{i}.kernel"), &s.kernel),
                    bias: f(&format!("stages.{i}.bias"), &s.bias),
                })
                .collect(),
            hidden: self
                .hidden
                .as_ref()
                .map(|(w, b)| (f("hidden.weight", w), f("hidden.bias", b))),
            head_weight: f("head_weight", &self.head_weight),
            head_bias: f("head_bias", &self.head_bias),
        }
    }
}

/// Same-padded stride-1 convolution of an NHWC batch.
pub fn conv2d(tape: &mut Tape, x: Var, stage: &ConvStage<Var>, kernel: usize) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let c_out = tape.shape(stage.kernel)[1];
    let cols = tape.im2col(x, kernel)?;
    let y = tape.matmul(cols, stage.kernel)?;
    let y = tape.add_bias(y, stage.bias)?;
    tape.reshape(y, &[shape[0], shape[1], shape[2], c_out])
}

/// Logits `[B, num_classes]` for an `[B, H, W, C]` batch.
pub fn cnn_forward(tape: &mut Tape, images: &Tensor, params: &CnnParams<Var>, config: &CnnConfig) -> Result<Var> {
    let expected = [config.image_height, config.image_width, config.channels];
    if images.rank() != 4 || images.shape()[1..] != expected {
        return Err(TensorError::Shape {
            op: "cnn_forward",
            lhs: images.shape().to_vec(),
            rhs: expected.to_vec(),
        });
    }
    let batch = images.shape()[0];
    let mut x = tape.constant(images.clone());
    for (stage, &pool) in params.stages.iter().zip(&config.pool) {
        x = conv2d(tape, x, stage, config.kernel)?;
        x = tape.relu(x);
        if pool {
            x = tape.max_pool2(x)?;
        }
    }
    let mut x = tape.reshape(x, &[batch, config.feature_len()])?;
    if let Some((w, b)) = &params.hidden {
        x = tape.matmul(x, *w)?;
        x = tape.add_bias(x, *b)?;
        x = tape.relu(x);
    }
    let logits = tape.matmul(x, params.head_weight)?;
    tape.add_bias(logits, params.head_bias)
}
