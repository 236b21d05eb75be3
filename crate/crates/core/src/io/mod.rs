//! File formats: `.npy` arrays, the activation manifest, `model.json` and
//! binary PPM images.

use std::path::Path;

use crate::error::{PrismError, Result};

pub mod manifest;
pub mod model;
pub mod npy;
pub mod ppm;

pub use manifest::{read_manifest, write_activation_dir, ActivationManifest, LoadedActivations};
pub use model::{read_model, write_model};
pub use npy::{decode_npy, encode_npy, read_npy, write_npy, NpyArray, RawNpy};
pub use ppm::{encode_ppm, read_image_ppm, write_image_ppm};

pub fn read_file(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    std::fs::read(path).map_err(|e| PrismError::io(path, e))
}

pub fn write_file(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, bytes).map_err(|e| PrismError::io(path, e))
}
