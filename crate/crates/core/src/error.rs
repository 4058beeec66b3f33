use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch in {layer}: {detail}")]
    Shape { layer: String, detail: String },

    #[error("no scene below the cloud threshold for tile {tile_id} in window {window}{}",
        best.map(|b| format!(" (least cloudy seen: {b:.4})")).unwrap_or_default())]
    NoScene {
        tile_id: String,
        window: String,
        best: Option<f64>,
    },

    #[error("duplicate tile id {tile_id} in {source_name}")]
    DuplicateId {
        tile_id: String,
        source_name: String,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("numerical overflow in {component}")]
    Numerical { component: String },

    #[error("provider failure: {0}")]
    Provider(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Self::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn numerical(component: impl Into<String>) -> Self {
        Self::Numerical {
            component: component.into(),
        }
    }

    pub(crate) fn shape(layer: &str, e: autograd::ShapeError) -> Self {
        Self::Shape {
            layer: layer.to_string(),
            detail: e.to_string(),
        }
    }
}
