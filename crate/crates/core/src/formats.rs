//! JSON weight and dataset files, plus the canonical JSON writer used for
//! every artifact (pretty-printed, keys sorted).
//!
//! Weight file:
//!
//! ```json
//! {"format_version": 1,
//!  "layers": [{"rows": 2, "cols": 3, "data": [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]}]}
//! ```
//!
//! Dataset file:
//!
//! ```json
//! {"inputs": [[0.1, 0.2], [0.3, -0.1]], "labels": [0, 1], "num_classes": 2}
//! ```

use std::fs;
use std::path::Path;

use serde::de::IgnoredAny;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{LinalgError, Matrix};
use crate::network::{LabeledDataset, NetworkError, ReluNetwork};

pub const WEIGHT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}, column {column}: {message}")]
    Json {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{field}: {message}")]
    Schema { field: String, message: String },
}

impl From<serde_json::Error> for FormatError {
    fn from(e: serde_json::Error) -> Self {
        FormatError::Json {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

fn schema(field: impl Into<String>, message: impl ToString) -> FormatError {
    FormatError::Schema {
        field: field.into(),
        message: message.to_string(),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWeights {
    format_version: u32,
    layers: Vec<RawLayer>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLayer {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    // accepted by the parser only so the rejection can name the layer
    #[serde(default, alias = "biases")]
    bias: Option<IgnoredAny>,
}

#[derive(Serialize)]
struct WeightsOut<'a> {
    format_version: u32,
    layers: Vec<LayerOut<'a>>,
}

#[derive(Serialize)]
struct LayerOut<'a> {
    rows: usize,
    cols: usize,
    data: &'a [f64],
}

pub fn parse_weights(text: &str) -> Result<ReluNetwork, FormatError> {
    let raw: RawWeights = serde_json::from_str(text)?;
    if raw.format_version != WEIGHT_FORMAT_VERSION {
        return Err(schema(
            "format_version",
            format!(
                "unsupported version {}, expected {WEIGHT_FORMAT_VERSION}",
                raw.format_version
            ),
        ));
    }
    if raw.layers.is_empty() {
        return Err(schema("layers", "at least one layer is required"));
    }
    let mut layers = Vec::with_capacity(raw.layers.len());
    for (i, layer) in raw.layers.into_iter().enumerate() {
        if layer.bias.is_some() {
            return Err(schema(
                format!("layers[{i}].bias"),
                "bias terms are not supported; networks must be bias-free",
            ));
        }
        let m = Matrix::new(layer.rows, layer.cols, layer.data).map_err(|e| match e {
            LinalgError::DataLength { rows, cols, found } => schema(
                format!("layers[{i}].data"),
                format!("expected {} values for {rows}x{cols}, found {found}", rows * cols),
            ),
            other => schema(format!("layers[{i}]"), other),
        })?;
        layers.push(m);
    }
    ReluNetwork::new(layers).map_err(|e| match e {
        NetworkError::BrokenChain { layer, .. } => schema(format!("layers[{layer}].cols"), e),
        other => schema("layers", other),
    })
}

pub fn weights_to_json(net: &ReluNetwork) -> String {
    let out = WeightsOut {
        format_version: WEIGHT_FORMAT_VERSION,
        layers: net
            .layers()
            .iter()
            .map(|w| LayerOut {
                rows: w.rows(),
                cols: w.cols(),
                data: w.data(),
            })
            .collect(),
    };
    to_canonical_json(&out).expect("weights serialize")
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDataset {
    inputs: Vec<Vec<f64>>,
    labels: Vec<usize>,
    num_classes: usize,
}

#[derive(Serialize)]
struct DatasetOut<'a> {
    inputs: &'a [Vec<f64>],
    labels: &'a [usize],
    num_classes: usize,
}

pub fn parse_dataset(text: &str) -> Result<LabeledDataset, FormatError> {
    let raw: RawDataset = serde_json::from_str(text)?;
    if raw.num_classes == 0 {
        return Err(schema("num_classes", "must be at least 1"));
    }
    LabeledDataset::new(raw.inputs, raw.labels, raw.num_classes).map_err(|e| match e {
        NetworkError::EmptyDataset => schema("inputs", e),
        NetworkError::LengthMismatch { .. } => schema("labels", e),
        NetworkError::RaggedInput { index, .. } | NetworkError::NonFiniteInput { index } => {
            schema(format!("inputs[{index}]"), e)
        }
        NetworkError::LabelOutOfRange { .. } => schema("labels", e),
        other => schema("dataset", other),
    })
}

pub fn dataset_to_json(data: &LabeledDataset) -> String {
    to_canonical_json(&DatasetOut {
        inputs: data.inputs(),
        labels: data.labels(),
        num_classes: data.num_classes(),
    })
    .expect("dataset serializes")
}

fn read(path: &Path) -> Result<String, FormatError> {
    fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_weights(path: &Path) -> Result<ReluNetwork, FormatError> {
    parse_weights(&read(path)?)
}

pub fn load_dataset(path: &Path) -> Result<LabeledDataset, FormatError> {
    parse_dataset(&read(path)?)
}

/// Pretty JSON with object keys in sorted order and a trailing newline.
///
/// Going through `serde_json::Value` sorts keys (its map is a `BTreeMap`).
/// Floats print in shortest round-trip form, so parsing reproduces every
/// `f64` exactly.
pub fn to_canonical_json<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let v = serde_json::to_value(value)?;
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}
