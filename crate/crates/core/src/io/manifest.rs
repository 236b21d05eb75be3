//! The activation manifest: a JSON index over a directory of `.npy` files,
//! one per recorded layer, plus an optional input batch.
//!
//! ```json
//! {
//!   "layers": [{"name": "conv1", "file": "00_conv1.npy", "shape": [2, 64, 224, 224]}],
//!   "input": {"file": "input.npy", "shape": [2, 3, 224, 224]}
//! }
//! ```
//!
//! Unknown top-level keys (such as exporter metadata) are preserved in
//! `metadata` and otherwise ignored.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::npy::{decode_npy, write_npy};
use super::{read_file, write_file};
use crate::error::{PrismError, Result};
use crate::inference::ActivationStack;
use crate::tensor::{Shape4, Tensor4};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const INPUT_FILE: &str = "input.npy";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestLayer {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestInput {
    pub file: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationManifest {
    pub layers: Vec<ManifestLayer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<ManifestInput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
}

/// Activations and optional source images loaded through a manifest.
#[derive(Debug, Clone)]
pub struct LoadedActivations {
    pub stack: ActivationStack,
    pub input: Option<Tensor4>,
}

fn load_tensor(dir: &Path, label: &str, file: &str, declared: &[usize]) -> Result<Tensor4> {
    let raw = decode_npy(&read_file(dir.join(file))?)?;
    if raw.shape != declared {
        return Err(PrismError::ManifestShapeMismatch {
            layer: label.to_string(),
            declared: declared.to_vec(),
            actual: raw.shape,
        });
    }
    let [n, c, h, w] = raw.shape[..] else {
        return Err(PrismError::ShapeRankUnsupported(raw.shape.len()));
    };
    Tensor4::new(Shape4::new(n, c, h, w), raw.data)
}

pub fn parse_manifest(text: &str, path: &Path) -> Result<ActivationManifest> {
    serde_json::from_str(text).map_err(|source| PrismError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads every layer listed in the manifest at `path`, shallowest first.
/// File paths are resolved relative to the manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<LoadedActivations> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let text = String::from_utf8_lossy(&bytes);
    let manifest = parse_manifest(&text, path)?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));

    let mut stack = ActivationStack::new();
    for entry in &manifest.layers {
        let tensor = load_tensor(dir, &entry.name, &entry.file, &entry.shape)?;
        stack.push(entry.name.clone(), tensor)?;
    }
    let input = match &manifest.input {
        Some(entry) => {
            let tensor = load_tensor(dir, "input", &entry.file, &entry.shape)?;
            if let Some(expected) = stack.batch_size() {
                if tensor.shape().n != expected {
                    return Err(PrismError::BatchSizeMismatch {
                        layer: "input".into(),
                        expected,
                        found: tensor.shape().n,
                    });
                }
            }
            Some(tensor)
        }
        None => None,
    };
    Ok(LoadedActivations { stack, input })
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes one `.npy` per layer (and `input.npy` when given) plus
/// `manifest.json` into `dir`, returning the manifest path.
pub fn write_activation_dir(
    dir: impl AsRef<Path>,
    stack: &ActivationStack,
    input: Option<&Tensor4>,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| PrismError::io(dir, e))?;
    let mut layers = Vec::with_capacity(stack.len());
    for (i, layer) in stack.layers().iter().enumerate() {
        let file = format!("{i:02}_{}.npy", file_stem(&layer.name));
        write_file(dir.join(&file), &write_npy(&layer.tensor))?;
        layers.push(ManifestLayer {
            name: layer.name.clone(),
            file,
            shape: layer.tensor.shape().to_vec(),
        });
    }
    let input = match input {
        Some(t) => {
            write_file(dir.join(INPUT_FILE), &write_npy(t))?;
            Some(ManifestInput {
                file: INPUT_FILE.into(),
                shape: t.shape().to_vec(),
            })
        }
        None => None,
    };
    let manifest = ActivationManifest {
        layers,
        input,
        metadata: None,
    };
    let path = dir.join(MANIFEST_FILE);
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    write_file(&path, json.as_bytes())?;
    Ok(path)
}
