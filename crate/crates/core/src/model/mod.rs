//! Classifier models: the ViT and the convolutional baseline, behind one
//! [`Model`] type with checkpointing.

pub mod cnn;
pub mod vit;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{normalize, ChannelStats, DataError, LabeledPatch};
use crate::kv;
use crate::tensor::checkpoint::{self, CheckpointError};
use crate::tensor::{Tape, Tensor, TensorError, Var};
use crate::transformer::Pass;
use crate::ConfigError;

pub use cnn::{cnn_forward, CnnConfig, CnnParams};
pub use vit::{embed_sequence, patchify, patchify_batch, unpatchify, vit_forward, ViTConfig, ViTParams};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("parameter mismatch: {0}")]
    Parameters(String),
    #[error("config sidecar {path}: {message}")]
    Sidecar { path: String, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Vit16,
    Vit32,
    Cnn,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Vit16 => "vit16",
            ModelKind::Vit32 => "vit32",
            ModelKind::Cnn => "cnn",
        }
    }

    pub fn is_transformer(self) -> bool {
        !matches!(self, ModelKind::Cnn)
    }

    /// Desk-scale default ViT for this kind (patch size 16 or 32).
    pub fn default_vit(self) -> Option<ViTConfig> {
        let patch_size = match self {
            ModelKind::Vit16 => 16,
            ModelKind::Vit32 => 32,
            ModelKind::Cnn => return None,
        };
        Some(ViTConfig {
            patch_size,
            ..ViTConfig::default()
        })
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vit16" => Ok(ModelKind::Vit16),
            "vit32" => Ok(ModelKind::Vit32),
            "cnn" => Ok(ModelKind::Cnn),
            other => Err(format!("unknown model kind `{other}` (expected vit16, vit32 or cnn)")),
        }
    }
}

/// Architecture of a model, independent of its weights.
#[derive(Clone, Debug, PartialEq)]
pub enum Architecture {
    Vit(ViTConfig),
    Cnn(CnnConfig),
}

impl Architecture {
    pub fn validate(&self) -> Result<(), ConfigError> {
        match self {
            Architecture::Vit(c) => c.validate(),
            Architecture::Cnn(c) => c.validate(),
        }
    }

    pub fn image_shape(&self) -> [usize; 3] {
        match self {
            Architecture::Vit(c) => [c.image_height, c.image_width, c.channels],
            Architecture::Cnn(c) => [c.image_height, c.image_width, c.channels],
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Architecture::Vit(c) => c.num_classes,
            Architecture::Cnn(c) => c.num_classes,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Network {
    Vit(ViTConfig, ViTParams),
    Cnn(CnnConfig, CnnParams),
}

/// A configured classifier with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub kind: ModelKind,
    pub network: Network,
    /// Per-channel statistics applied to raw `[0, 1]` pixels before the network.
    pub input_stats: ChannelStats,
}

/// Logits of a recorded forward pass and the parameter leaves that produced them.
pub struct Forward {
    pub logits: Var,
    /// One leaf per parameter tensor, in [`Model::named_tensors`] order.
    pub params: Vec<Var>,
}

impl Model {
    pub fn init<R: Rng>(kind: ModelKind, arch: &Architecture, rng: &mut R) -> Result<Self, ConfigError> {
        let network = match arch {
            Architecture::Vit(c) => Network::Vit(c.clone(), ViTParams::init(c, rng)?),
            Architecture::Cnn(c) => Network::Cnn(c.clone(), CnnParams::init(c, rng)?),
        };
        if kind.is_transformer() != matches!(network, Network::Vit(..)) {
            return Err(ConfigError(format!(
                "model kind {kind} does not match its architecture"
            )));
        }
        let channels = arch.image_shape()[2];
        Ok(Self {
            kind,
            network,
            input_stats: ChannelStats::identity(channels),
        })
    }

    pub fn architecture(&self) -> Architecture {
        match &self.network {
            Network::Vit(c, _) => Architecture::Vit(c.clone()),
            Network::Cnn(c, _) => Architecture::Cnn(c.clone()),
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        let mut push = |name: &str, t: &Tensor| out.push((name.to_string(), t.clone()));
        match &self.network {
            Network::Vit(_, p) => {
                p.map(&mut push);
            }
            Network::Cnn(_, p) => {
                p.map(&mut push);
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Replaces every parameter, in [`Model::named_tensors`] order.
    pub fn set_tensors(&mut self, tensors: Vec<Tensor>) -> Result<(), ModelError> {
        let mut iter = tensors.into_iter();
        let mut mismatch = None;
        let mut take = |name: &str, old: &Tensor| match iter.next() {
            Some(t) if t.shape() == old.shape() => t,
            other => {
                mismatch.get_or_insert_with(|| {
                    format!(
                        "tensor `{name}`: expected shape {:?}, got {:?}",
                        old.shape(),
                        other.map(|t| t.shape().to_vec())
                    )
                });
                old.clone()
            }
        };
        let network = match &self.network {
            Network::Vit(c, p) => Network::Vit(c.clone(), p.map(&mut take)),
            Network::Cnn(c, p) => Network::Cnn(c.clone(), p.map(&mut take)),
        };
        if let Some(message) = mismatch {
            return Err(ModelError::Parameters(message));
        }
        if iter.next().is_some() {
            return Err(ModelError::Parameters("more tensors than parameters".into()));
        }
        self.network = network;
        Ok(())
    }

    /// Records a forward pass over an `[B, H, W, C]` batch.
    ///
    /// With `trainable` the parameters become gradient leaves; otherwise
    /// they are constants.
    pub fn forward(
        &self,
        tape: &mut Tape,
        images: &Tensor,
        trainable: bool,
        pass: &mut Pass,
    ) -> Result<Forward, TensorError> {
        let mut params = Vec::new();
        let mut bind = |_: &str, t: &Tensor| {
            let v = if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            };
            params.push(v);
            v
        };
        let logits = match &self.network {
            Network::Vit(c, p) => {
                let vars = p.map(&mut bind);
                vit_forward(tape, images, &vars, c, pass)?
            }
            Network::Cnn(c, p) => {
                let vars = p.map(&mut bind);
                cnn_forward(tape, images, &vars, c)?
            }
        };
        Ok(Forward { logits, params })
    }

    /// Logits `[B, num_classes]` without recording gradients.
    pub fn logits(&self, images: &Tensor) -> Result<Tensor, TensorError> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, images, false, &mut Pass::default())?;
        Ok(tape.value(f.logits).clone())
    }

    /// Writes `path` plus a `key=value` sidecar at [`sidecar_path`].
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        checkpoint::save(path, &self.named_tensors())?;
        let side = sidecar_path(path);
        std::fs::write(&side, self.sidecar()).map_err(|e| ModelError::Sidecar {
            path: side.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let side = sidecar_path(path);
        let side_err = |message: String| ModelError::Sidecar {
            path: side.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(&side).map_err(|e| side_err(e.to_string()))?;
        let (kind, arch, input_stats) = parse_sidecar(&text).map_err(side_err)?;
        let tensors = checkpoint::load(path)?;
        // Shapes only; every tensor is overwritten below.
        let mut model = Model::init(
            kind,
            &arch,
            &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0),
        )?;
        let expected = model.named_tensors();
        if expected.len() != tensors.len() || expected.iter().zip(&tensors).any(|((a, _), (b, _))| a != b) {
            return Err(ModelError::Parameters(format!(
                "{}: tensor names do not match the configured architecture",
                path.display()
            )));
        }
        model.set_tensors(tensors.into_iter().map(|(_, t)| t).collect())?;
        model.input_stats = input_stats;
        Ok(model)
    }

    /// Normalizes raw patches and stacks them into an `[B, H, W, C]` batch.
    pub fn batch<'a>(&self, patches: impl IntoIterator<Item = &'a LabeledPatch>) -> Result<Tensor, ModelError> {
        let shape = self.architecture().image_shape();
        let mut data = Vec::new();
        let mut count = 0;
        for p in patches {
            if p.pixels.shape() != shape {
                return Err(TensorError::Shape {
                    op: "batch",
                    lhs: p.pixels.shape().to_vec(),
                    rhs: shape.to_vec(),
                }
                .into());
            }
            data.extend(normalize(&p.pixels, &self.input_stats)?.into_data());
            count += 1;
        }
        Ok(Tensor::new(&[count, shape[0], shape[1], shape[2]], data)?)
    }

    fn sidecar(&self) -> String {
        let floats = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        let stats = kv::render([
            ("input_mean", floats(&self.input_stats.mean)),
            ("input_std", floats(&self.input_stats.std)),
        ]);
        self.arch_sidecar() + &stats
    }

    fn arch_sidecar(&self) -> String {
        let size = |h: usize, w: usize| if h == w { h.to_string() } else { format!("{h}x{w}") };
        match &self.network {
            Network::Vit(c, _) => kv::render([
                ("model_kind", self.kind.to_string()),
                ("image_size", size(c.image_height, c.image_width)),
                ("channels", c.channels.to_string()),
                ("patch_size", c.patch_size.to_string()),
                ("d_model", c.d_model.to_string()),
                ("depth", c.depth.to_string()),
                ("heads", c.heads.to_string()),
                ("mlp_dim", c.mlp_dim.to_string()),
                ("num_classes", c.num_classes.to_string()),
                ("dropout", c.dropout.to_string()),
            ]),
            Network::Cnn(c, _) => kv::render([
                ("model_kind", self.kind.to_string()),
                ("image_size", size(c.image_height, c.image_width)),
                ("channels", c.channels.to_string()),
                ("widths", join(&c.widths)),
                ("kernel", c.kernel.to_string()),
                ("pool", join(&c.pool.iter().map(|&p| p as usize).collect::<Vec<_>>())),
                ("hidden", c.hidden.to_string()),
                ("num_classes", c.num_classes.to_string()),
            ]),
        }
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("cfg")
}

/// Parses `64` or `64x48` into (height, width).
pub fn parse_image_size(s: &str) -> Result<(usize, usize), String> {
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("bad image size `{s}`"));
    match s.split_once('x') {
        Some((h, w)) => Ok((parse(h)?, parse(w)?)),
        None => parse(s).map(|n| (n, n)),
    }
}

fn parse_sidecar(text: &str) -> Result<(ModelKind, Architecture, ChannelStats), String> {
    let m = kv::parse(text)?;
    let kind: ModelKind = m.get("model_kind").ok_or("missing key `model_kind`")?.parse()?;
    let (image_height, image_width) = parse_image_size(m.get("image_size").ok_or("missing key `image_size`")?)?;
    let channels = kv::get(&m, "channels").unwrap_or(3);
    let num_classes = kv::get(&m, "num_classes")?;
    let list = |key: &str| -> Result<Vec<usize>, String> {
        kv::get::<String>(&m, key)?
            .split(',')
            .map(|v| v.trim().parse().map_err(|_| format!("bad list value in `{key}`")))
            .collect()
    };
    let arch = if kind.is_transformer() {
        Architecture::Vit(ViTConfig {
            image_height,
            image_width,
            channels,
            patch_size: kv::get(&m, "patch_size")?,
            d_model: kv::get(&m, "d_model")?,
            depth: kv::get(&m, "depth")?,
            heads: kv::get(&m, "heads")?,
            mlp_dim: kv::get(&m, "mlp_dim")?,
            num_classes,
            dropout: kv::get(&m, "dropout").unwrap_or(0.0),
        })
    } else {
        Architecture::Cnn(CnnConfig {
            image_height,
            image_width,
            channels,
            widths: list("widths")?,
            kernel: kv::get(&m, "kernel")?,
            pool: list("pool")?.into_iter().map(|p| p != 0).collect(),
            hidden: kv::get(&m, "hidden").unwrap_or(0),
            num_classes,
        })
    };
    arch.validate().map_err(|e| e.to_string())?;
    let floats = |key: &str| -> Result<Vec<f64>, String> {
        kv::get::<String>(&m, key)?
            .split(',')
            .map(|v| v.trim().parse().map_err(|_| format!("bad number in `{key}`")))
            .collect()
    };
    let stats = ChannelStats {
        mean: floats("input_mean")?,
        std: floats("input_std")?,
    };
    if stats.mean.len() != channels || stats.std.len() != channels {
        return Err(format!("input statistics must have {channels} channels"));
    }
    Ok((kind, arch, stats))
}

/// Index of the largest logit; ties go to the lowest index.
pub fn predict(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}
