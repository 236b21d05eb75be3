//! End-to-end PRISM computation over a recorded activation stack.

use crate::error::{PrismError, Result};
use crate::inference::ActivationStack;
use crate::overlay::{normalize_to_rgb, progressive_sharpen_with, RgbMapBatch, SharpenMode};
use crate::pca::{principal_scores, ScoreMaps, RGB_COMPONENTS};
use crate::tensor::{center_columns, reshape_to_observations};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrismOptions {
    pub sharpen: SharpenMode,
    pub components: usize,
    /// Rescale each score channel by its max-abs after every sharpening step.
    /// Only affects numerical range, not the rendered maps.
    pub rescale_each_step: bool,
}

impl Default for PrismOptions {
    fn default() -> Self {
        PrismOptions {
            sharpen: SharpenMode::Progressive,
            components: RGB_COMPONENTS,
            rescale_each_step: true,
        }
    }
}

impl PrismOptions {
    pub fn with_sharpen(mut self, sharpen: SharpenMode) -> Self {
        self.sharpen = sharpen;
        self
    }
}

/// Principal scores of the deepest recorded layer, at that layer's resolution.
pub fn stack_scores(stack: &ActivationStack, components: usize) -> Result<ScoreMaps> {
    let deepest = stack.last().ok_or(PrismError::EmptyStack)?;
    let (centered, _) = center_columns(&reshape_to_observations(deepest));
    principal_scores(&centered, components)
}

/// Reshape, center, project onto three principal axes, sharpen through the
/// stack and render at `height × width`.
pub fn prism_maps(
    stack: &ActivationStack,
    height: usize,
    width: usize,
    options: &PrismOptions,
) -> Result<RgbMapBatch> {
    if options.components != RGB_COMPONENTS {
        return Err(PrismError::UnrenderableComponents(options.components));
    }
    let scores = stack_scores(stack, RGB_COMPONENTS)?;
    let sharpened = progressive_sharpen_with(
        &scores.scores,
        stack,
        options.sharpen,
        options.rescale_each_step,
    )?;
    normalize_to_rgb(&sharpened, height, width)
}
