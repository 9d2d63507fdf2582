//! Labeled image patches: folder ingestion, annotation cropping, class
//! balancing, augmentation, normalization and a synthetic generator.
//!
//! Pixels are `H × W × C` tensors with values in `[0, 1]`.

pub mod augment;
pub mod balance;
pub mod imageops;
pub mod synth;
pub mod voc;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::tensor::Tensor;

pub use augment::{augment, AugmentPolicy, ColorJitter, RandAugment};
pub use balance::{balance_minority, Dihedral};
pub use synth::{generate_synthetic, write_dataset, GENERATOR_VERSION};
pub use voc::{crop_annotations, Crops};

/// Side length of every stored patch.
pub const PATCH_SIZE: usize = 64;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset layout error under {root}: {message}")]
    Layout { root: String, message: String },
    #[error("cannot decode {path}: {message}")]
    Decode { path: String, message: String },
    #[error("unsupported image format for {0} (expected .png or .ppm)")]
    Format(String),
    #[error("malformed annotation {path} at byte {offset}: {message}")]
    Xml { path: String, offset: u64, message: String },
    #[error("class {label}: target {target} unreachable, at most {max} with dihedral variants")]
    Unreachable { label: Label, target: usize, max: usize },
    #[error("channel {channel} has zero standard deviation")]
    ZeroStd { channel: usize },
    #[error("invalid augmentation policy: {0}")]
    Policy(String),
    #[error("cannot encode {path}: {message}")]
    Encode { path: String, message: String },
}

pub(crate) fn io_err(path: &Path) -> impl Fn(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Weed,
    Beet,
    OffTypeBeet,
    Parsley,
    Spinach,
}

impl Label {
    pub const ALL: [Label; 5] = [
        Label::Weed,
        Label::Beet,
        Label::OffTypeBeet,
        Label::Parsley,
        Label::Spinach,
    ];
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Weed => "weed",
            Label::Beet => "beet",
            Label::OffTypeBeet => "off_type_beet",
            Label::Parsley => "parsley",
            Label::Spinach => "spinach",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Label::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| format!("unknown class `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPatch {
    /// `H × W × C`, values in `[0, 1]`.
    pub pixels: Tensor,
    pub label: Label,
    pub source_id: String,
    /// Set when the patch is a dihedral variant of the patch named by `source_id`.
    pub derivation: Option<Dihedral>,
}

impl LabeledPatch {
    pub fn new(pixels: Tensor, label: Label, source_id: impl Into<String>) -> Self {
        Self {
            pixels,
            label,
            source_id: source_id.into(),
            derivation: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Skipped {
    pub path: PathBuf,
    pub reason: String,
}

/// Patches grouped by class, in a fixed class order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetIndex {
    classes: [Vec<LabeledPatch>; Label::COUNT],
    /// Files that could not be ingested.
    pub skipped: Vec<Skipped>,
}

impl DatasetIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, patch: LabeledPatch) {
        self.classes[patch.label.index()].push(patch);
    }

    pub fn class(&self, label: Label) -> &[LabeledPatch] {
        &self.classes[label.index()]
    }

    pub fn counts(&self) -> [usize; Label::COUNT] {
        std::array::from_fn(|i| self.classes[i].len())
    }

    pub fn len(&self) -> usize {
        self.classes.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All patches, class by class.
    pub fn iter(&self) -> impl Iterator<Item = &LabeledPatch> {
        self.classes.iter().flatten()
    }
}

/// Reads a PNG or PPM file as an RGB tensor in `[0, 1]`.
pub fn read_image(path: &Path) -> Result<Tensor, DataError> {
    match extension(path).as_deref() {
        Some("png" | "ppm") => {}
        _ => return Err(DataError::Format(path.display().to_string())),
    }
    let decoded = image::ImageReader::open(path)
        .map_err(io_err(path))?
        .decode()
        .map_err(|e| DataError::Decode {
            path: path.display().to_string(),
            message: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = decoded.dimensions();
    let data = decoded.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
    Ok(Tensor::new(&[h as usize, w as usize, 3], data).expect("decoded buffer matches its dimensions"))
}

/// Writes an `H × W × 3` tensor in `[0, 1]` as PNG or binary PPM, chosen by extension.
pub fn write_image(path: &Path, pixels: &Tensor) -> Result<(), DataError> {
    let &[h, w, 3] = pixels.shape() else {
        return Err(DataError::Encode {
            path: path.display().to_string(),
            message: format!("expected an H×W×3 image, got {:?}", pixels.shape()),
        });
    };
    let format = match extension(path).as_deref() {
        Some("png") => image::ImageFormat::Png,
        Some("ppm") => image::ImageFormat::Pnm,
        _ => return Err(DataError::Format(path.display().to_string())),
    };
    let bytes: Vec<u8> = pixels.data().iter().map(|&v| to_byte(v)).collect();
    let img = image::RgbImage::from_raw(w as u32, h as u32, bytes).expect("buffer matches dimensions");
    img.save_with_format(path, format).map_err(|e| DataError::Encode {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub(crate) fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn extension(path: &Path) -> Option<String> {
    path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase)
}

/// Indexes `root/<class>/*.png|*.ppm`. All five class folders must exist;
/// unreadable or unsupported files land in [`DatasetIndex::skipped`].
pub fn load_folder_dataset(root: &Path) -> Result<DatasetIndex, DataError> {
    let layout = |message: String| DataError::Layout {
        root: root.display().to_string(),
        message,
    };
    if !root.is_dir() {
        return Err(layout("not a directory".into()));
    }
    for entry in std::fs::read_dir(root).map_err(io_err(root))? {
        let entry = entry.map_err(io_err(root))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if entry.path().is_dir() && !name.starts_with('.') && name.parse::<Label>().is_err() {
            return Err(layout(format!("unexpected folder `{name}`")));
        }
    }
    let mut index = DatasetIndex::new();
    for label in Label::ALL {
        let dir = root.join(label.name());
        if !dir.is_dir() {
            return Err(layout(format!("missing class folder `{}`", label.name())));
        }
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        for path in files {
            match read_image(&path) {
                Ok(pixels) => {
                    let id = format!(
                        "{}/{}",
                        label.name(),
                        path.file_name().unwrap_or_default().to_string_lossy()
                    );
                    index.push(LabeledPatch::new(pixels, label, id));
                }
                Err(e) => index.skipped.push(Skipped {
                    path,
                    reason: e.to_string(),
                }),
            }
        }
    }
    Ok(index)
}

/// Per-channel mean and population standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    /// Statistics over every pixel of every image; images must share a channel count.
    pub fn compute<'a>(images: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let mut sum = Vec::new();
        let mut count = 0usize;
        let images: Vec<&Tensor> = images.into_iter().collect();
        for img in &images {
            let c = *img.shape().last().unwrap_or(&1);
            sum.resize(c, 0.0);
            for px in img.data().chunks(c) {
                sum.iter_mut().zip(px).for_each(|(s, v)| *s += v);
            }
            count += img.len() / c.max(1);
        }
        let n = count.max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let mut var = vec![0.0; mean.len()];
        for img in &images {
            for px in img.data().chunks(mean.len().max(1)) {
                var.iter_mut()
                    .zip(px.iter().zip(&mean))
                    .for_each(|(a, (v, m))| *a += (v - m) * (v - m));
            }
        }
        let std = var.iter().map(|v| (v / n).sqrt()).collect();
        Self { mean, std }
    }

    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }
}

/// `(x − mean) / std` per channel (the last axis).
pub fn normalize(pixels: &Tensor, stats: &ChannelStats) -> Result<Tensor, DataError> {
    if let Some(channel) = stats.std.iter().position(|&s| s <= 0.0 || !s.is_finite()) {
        return Err(DataError::ZeroStd { channel });
    }
    let c = stats.mean.len();
    let mut out = pixels.clone();
    for px in out.data_mut().chunks_mut(c) {
        for (j, v) in px.iter_mut().enumerate() {
            *v = (*v - stats.mean[j]) / stats.std[j];
        }
    }
    Ok(out)
}
