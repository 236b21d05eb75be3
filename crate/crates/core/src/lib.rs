//! PRISM: principal-component feature maps for convolutional networks.
//!
//! Given the activations a convolutional network produced for a batch of
//! images, the deepest layer's per-pixel channel responses are projected onto
//! their three leading principal components. The resulting score maps are
//! upsampled back through the recorded layers, sharpened by each layer's
//! channel sums and rendered as an RGB mask. Because the principal axes are
//! computed over the whole batch, a given color marks the same feature in
//! every image of that batch.
//!
//! ```
//! use prism_core::{toy_model, PrismOptions, RecordingSession, Shape4, Tensor4};
//!
//! let images = Tensor4::from_fn(Shape4::new(2, 3, 16, 16), |b, c, y, x| {
//!     ((b + c + y * x) % 5) as f32 / 5.0
//! })
//! .unwrap();
//! let mut session = RecordingSession::new(toy_model(7));
//! session.register();
//! session.forward(&images).unwrap();
//! let maps = session.get_maps(16, 16, &PrismOptions::default()).unwrap();
//! assert_eq!(maps.maps().shape(), Shape4::new(2, 3, 16, 16));
//! ```

pub mod error;
pub mod inference;
pub mod io;
pub mod overlay;
pub mod pca;
pub mod pipeline;
pub mod selftest;
pub mod tensor;

pub use error::{PrismError, Result};
pub use inference::{
    conv2d, maxpool2d, relu, toy_model, ActivationStack, Conv2d, Layer, LayerSpec, Model,
    RecordedLayer, RecordingSession,
};
pub use overlay::{
    bilinear_resize, normalize_to_rgb, progressive_sharpen, progressive_sharpen_with, RgbMapBatch,
    SharpenMode,
};
pub use pca::{principal_scores, svd, ScoreMaps, SvdResult, RGB_COMPONENTS};
pub use pipeline::{prism_maps, stack_scores, PrismOptions};
pub use tensor::{
    center_columns, channel_sum, reshape_to_observations, ObservationMatrix, Origin, Shape4,
    Tensor4,
};
