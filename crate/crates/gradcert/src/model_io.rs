//! Versioned JSON model documents. Parameters are stored row-major as
//! shortest round-trip decimals, so save/load is value-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use gradcert_core::{Activation, ConvGeometry, Layer, Network, Tensor};

use crate::error::{AppError, AppResult, FormatError};
use crate::report::write_atomic;

pub const MODEL_FORMAT: &str = "gradcert-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorDoc {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
enum LayerDoc {
    Dense {
        activation: String,
        weight: TensorDoc,
        bias: TensorDoc,
    },
    Conv2d {
        activation: String,
        in_channels: usize,
        in_height: usize,
        in_width: usize,
        filters: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
        weight: TensorDoc,
        bias: TensorDoc,
    },
    Flatten,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    format: String,
    version: u32,
    input_shape: Vec<usize>,
    layers: Vec<LayerDoc>,
}

fn tensor_doc(t: &Tensor) -> TensorDoc {
    TensorDoc { shape: t.shape().to_vec(), data: t.data().to_vec() }
}

pub fn to_json(net: &Network) -> AppResult<String> {
    if net.parameters().iter().any(|p| !p.is_finite()) {
        return Err(AppError::Runtime("cannot serialize a model with non-finite parameters".into()));
    }
    let layers = net
        .layers()
        .iter()
        .map(|l| match l {
            Layer::Dense { weight, bias, activation } => LayerDoc::Dense {
                activation: activation.name().to_string(),
                weight: tensor_doc(weight),
                bias: tensor_doc(bias),
            },
            Layer::Conv2d { geometry: g, weight, bias, activation } => LayerDoc::Conv2d {
                activation: activation.name().to_string(),
                in_channels: g.in_channels,
                in_height: g.in_height,
                in_width: g.in_width,
                filters: g.filters,
                kernel_h: g.kernel_h,
                kernel_w: g.kernel_w,
                stride: g.stride,
                padding: g.padding,
                weight: tensor_doc(weight),
                bias: tensor_doc(bias),
            },
            Layer::Flatten => LayerDoc::Flatten,
        })
        .collect();
    let doc = ModelDoc { format: MODEL_FORMAT.into(), version: MODEL_VERSION, input_shape: net.input_shape().to_vec(), layers };
    serde_json::to_string(&doc).map_err(|e| AppError::Runtime(e.to_string()))
}

pub fn from_json(text: &str, file: &str) -> Result<Network, FormatError> {
    let doc: ModelDoc = serde_json::from_str(text).map_err(|e| FormatError::in_file(file, format!("invalid model document: {e}")))?;
    if doc.format != MODEL_FORMAT {
        return Err(FormatError::in_file(file, format!("unknown format '{}'", doc.format)));
    }
    if doc.version != MODEL_VERSION {
        return Err(FormatError::in_file(file, format!("unsupported model version {}", doc.version)));
    }
    let tensor = |t: TensorDoc, what: &str| Tensor::new(t.shape, t.data).map_err(|e| FormatError::in_file(file, format!("{what}: {e}")));
    let activation = |name: &str| Activation::from_name(name).ok_or_else(|| FormatError::in_file(file, format!("unknown activation '{name}'")));
    let mut layers = Vec::with_capacity(doc.layers.len());
    for (i, l) in doc.layers.into_iter().enumerate() {
        layers.push(match l {
            LayerDoc::Dense { activation: a, weight, bias } => Layer::Dense {
                weight: tensor(weight, &format!("layer {i} weight"))?,
                bias: tensor(bias, &format!("layer {i} bias"))?,
                activation: activation(&a)?,
            },
            LayerDoc::Conv2d { activation: a, in_channels, in_height, in_width, filters, kernel_h, kernel_w, stride, padding, weight, bias } => {
                Layer::Conv2d {
                    geometry: ConvGeometry { in_channels, in_height, in_width, filters, kernel_h, kernel_w, stride, padding },
                    weight: tensor(weight, &format!("layer {i} weight"))?,
                    bias: tensor(bias, &format!("layer {i} bias"))?,
                    activation: activation(&a)?,
                }
            }
            LayerDoc::Flatten => Layer::Flatten,
        });
    }
    Network::from_layers(doc.input_shape, layers).map_err(|e| FormatError::in_file(file, e.to_string()))
}

pub fn save(net: &Network, path: &Path) -> AppResult<()> {
    write_atomic(path, to_json(net)?.as_bytes())
}

pub fn load(path: &Path) -> AppResult<Network> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::input(path, e))?;
    Ok(from_json(&text, &path.display().to_string())?)
}
