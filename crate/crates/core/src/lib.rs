//! Vision Transformer and CNN crop/weed classifiers on a small reverse-mode
//! autodiff engine, with data preparation, cross-validation and attention
//! visualisation.

use thiserror::Error;

pub mod cv;
pub mod data;
pub mod init;
pub mod kv;
pub mod model;
pub mod tensor;
pub mod transformer;
pub mod viz;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid configuration: {0}")]
pub struct ConfigError(pub String);
