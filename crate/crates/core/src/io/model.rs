//! `model.json`: layer list with conv weights stored as sibling `.npy` files.
//!
//! ```json
//! {"layers": [
//!   {"kind": "conv", "weights_file": "w0.npy", "bias_file": "b0.npy", "stride": 1, "padding": 1},
//!   {"kind": "relu"},
//!   {"kind": "maxpool", "window": 2, "stride": 2}
//! ]}
//! ```
//!
//! Weights are `(out_c, in_c, kh, kw)`; biases hold `out_c` values in any
//! shape with that many elements.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::npy::{decode_npy, encode_npy, write_npy};
use super::{read_file, write_file};
use crate::error::{PrismError, Result};
use crate::inference::{Conv2d, Layer, LayerSpec, Model};
use crate::tensor::{Shape4, Tensor4};

pub const MODEL_FILE: &str = "model.json";

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum LayerEntry {
    Conv {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        weights_file: String,
        bias_file: String,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    Relu {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
    },
    Maxpool {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        window: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stride: Option<usize>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    layers: Vec<LayerEntry>,
}

fn load_conv(
    dir: &Path,
    index: usize,
    weights_file: &str,
    bias_file: &str,
    stride: usize,
    padding: usize,
) -> Result<Conv2d> {
    let weights = decode_npy(&read_file(dir.join(weights_file))?)?;
    let [o, i, kh, kw] = weights.shape[..] else {
        return Err(PrismError::InvalidModel(format!(
            "layer {index}: weights must be 4-D (out_c, in_c, kh, kw), got {:?}",
            weights.shape
        )));
    };
    let bias = decode_npy(&read_file(dir.join(bias_file))?)?;
    if bias.data.len() != o {
        return Err(PrismError::InvalidModel(format!(
            "layer {index}: {o} filters but bias has shape {:?}",
            bias.shape
        )));
    }
    let weights = Tensor4::new(Shape4::new(o, i, kh, kw), weights.data)?;
    Conv2d::new(weights, bias.data, stride, padding)
        .map_err(|e| PrismError::InvalidModel(format!("layer {index}: {e}")))
}

/// Loads a model description; `.npy` paths are relative to the JSON file.
pub fn read_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let file: ModelFile = serde_json::from_slice(&bytes).map_err(|source| PrismError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut layers = Vec::with_capacity(file.layers.len());
    for (index, entry) in file.layers.into_iter().enumerate() {
        let (name, spec) = match entry {
            LayerEntry::Conv {
                name,
                weights_file,
                bias_file,
                stride,
                padding,
            } => (
                name,
                LayerSpec::Conv(load_conv(
                    dir,
                    index,
                    &weights_file,
                    &bias_file,
                    stride,
                    padding,
                )?),
            ),
            LayerEntry::Relu { name } => (name, LayerSpec::Relu),
            LayerEntry::Maxpool {
                name,
                window,
                stride,
            } => {
                let stride = stride.unwrap_or(window);
                if window == 0 || stride == 0 {
                    return Err(PrismError::InvalidModel(format!(
                        "layer {index}: pool window and stride must be at least 1"
                    )));
                }
                (name, LayerSpec::MaxPool { window, stride })
            }
        };
        let name = name.unwrap_or_else(|| format!("{}{}", spec.kind(), index));
        layers.push(Layer { name, spec });
    }
    Ok(Model::new(layers))
}

/// Writes `model.json` and per-conv weight/bias files into `dir`.
pub fn write_model(dir: impl AsRef<Path>, model: &Model) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| PrismError::io(dir, e))?;
    let mut entries = Vec::with_capacity(model.layers().len());
    for (i, layer) in model.layers().iter().enumerate() {
        let name = Some(layer.name.clone());
        entries.push(match &layer.spec {
            LayerSpec::Conv(conv) => {
                let weights_file = format!("{i:02}_weights.npy");
                let bias_file = format!("{i:02}_bias.npy");
                write_file(dir.join(&weights_file), &write_npy(conv.weights()))?;
                write_file(
                    dir.join(&bias_file),
                    &encode_npy(&[conv.bias().len()], conv.bias()),
                )?;
                LayerEntry::Conv {
                    name,
                    weights_file,
                    bias_file,
                    stride: conv.stride(),
                    padding: conv.padding(),
                }
            }
            LayerSpec::Relu => LayerEntry::Relu { name },
            LayerSpec::MaxPool { window, stride } => LayerEntry::Maxpool {
                name,
                window: *window,
                stride: Some(*stride),
            },
        });
    }
    let path = dir.join(MODEL_FILE);
    let mut json =
        serde_json::to_string_pretty(&ModelFile { layers: entries }).expect("model serializes");
    json.push('\n');
    write_file(&path, json.as_bytes())?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::toy_model;

    #[test]
    fn toy_model_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let model = toy_model(9);
        let path = write_model(dir.path(), &model).unwrap();
        assert_eq!(read_model(&path).unwrap(), model);
    }

    #[test]
    fn minimal_json_uses_defaults() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("w.npy"),
            encode_npy(&[2, 1, 1, 1], &[1.0, -1.0]),
        )
        .unwrap();
        std::fs::write(dir.path().join("b.npy"), encode_npy(&[1, 2], &[0.0, 0.5])).unwrap();
        std::fs::write(
            dir.path().join(MODEL_FILE),
            r#"{"layers": [
                {"kind": "conv", "weights_file": "w.npy", "bias_file": "b.npy"},
                {"kind": "relu"},
                {"kind": "maxpool", "window": 2}
            ]}"#,
        )
        .unwrap();
        let model = read_model(dir.path().join(MODEL_FILE)).unwrap();
        let names: Vec<_> = model.layers().iter().map(|l| l.name.as_str()).collect();
        assert_eq!(names, ["conv0", "relu1", "maxpool2"]);
        match &model.layers()[0].spec {
            LayerSpec::Conv(c) => {
                assert_eq!((c.stride(), c.padding()), (1, 0));
                assert_eq!(c.bias(), &[0.0, 0.5]);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(
            model.layers()[2].spec,
            LayerSpec::MaxPool {
                window: 2,
                stride: 2
            }
        );
    }

    #[test]
    fn bias_length_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("w.npy"),
            encode_npy(&[2, 1, 1, 1], &[1.0, -1.0]),
        )
        .unwrap();
        std::fs::write(dir.path().join("b.npy"), encode_npy(&[3], &[0.0; 3])).unwrap();
        std::fs::write(
            dir.path().join(MODEL_FILE),
            r#"{"layers": [{"kind": "conv", "weights_file": "w.npy", "bias_file": "b.npy"}]}"#,
        )
        .unwrap();
        assert!(matches!(
            read_model(dir.path().join(MODEL_FILE)),
            Err(PrismError::InvalidModel(_))
        ));
    }

    #[test]
    fn unknown_kind_is_a_json_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join(MODEL_FILE),
            r#"{"layers": [{"kind": "softmax"}]}"#,
        )
        .unwrap();
        assert!(matches!(
            read_model(dir.path().join(MODEL_FILE)),
            Err(PrismError::Json { .. })
        ));
    }
}
