//! Bilinear upsampling of score maps through the recorded layers and the
//! final mapping to an RGB mask.

use std::fmt;
use std::str::FromStr;

use crate::error::{PrismError, Result};
use crate::inference::ActivationStack;
use crate::tensor::{channel_sum, Shape4, Tensor4};

/// How the score maps are multiplied by per-layer channel sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SharpenMode {
    /// Resize and multiply through every recorded layer, deepest first.
    #[default]
    Progressive,
    /// Multiply once by the deepest layer's channel sum.
    LastOnly,
}

impl fmt::Display for SharpenMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SharpenMode::Progressive => "progressive",
            SharpenMode::LastOnly => "last-only",
        })
    }
}

impl FromStr for SharpenMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "progressive" => Ok(SharpenMode::Progressive),
            "last-only" => Ok(SharpenMode::LastOnly),
            other => Err(format!(
                "unknown sharpen mode '{other}' (expected 'progressive' or 'last-only')"
            )),
        }
    }
}

/// Final PRISM masks: `(n, 3, H, W)` with every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbMapBatch {
    maps: Tensor4,
}

impl RgbMapBatch {
    pub fn new(maps: Tensor4) -> Result<Self> {
        if maps.shape().c != 3 {
            return Err(PrismError::ShapeMismatch(format!(
                "rgb maps need 3 channels, got shape {}",
                maps.shape()
            )));
        }
        if maps.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(PrismError::ShapeMismatch(
                "rgb map values must lie in [0, 1]".into(),
            ));
        }
        Ok(RgbMapBatch { maps })
    }

    pub fn maps(&self) -> &Tensor4 {
        &self.maps
    }

    pub fn into_tensor(self) -> Tensor4 {
        self.maps
    }

    pub fn len(&self) -> usize {
        self.maps.shape().n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn height(&self) -> usize {
        self.maps.shape().h
    }

    pub fn width(&self) -> usize {
        self.maps.shape().w
    }
}

/// Source taps and blend weight for one output coordinate.
#[derive(Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn taps(src: usize, dst: usize) -> Vec<Tap> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            Tap {
                lo,
                hi,
                frac: pos - lo as f64,
            }
        })
        .collect()
}

/// Bilinear resize with half-pixel centers: output pixel `(Y, X)` samples
/// source position `((Y + 0.5)·h/H − 0.5, (X + 0.5)·w/W − 0.5)`, clamped to
/// the valid range.
pub fn bilinear_resize(t: &Tensor4, height: usize, width: usize) -> Tensor4 {
    assert!(
        height >= 1 && width >= 1,
        "target size must be at least 1x1"
    );
    let s = t.shape();
    if (s.h, s.w) == (height, width) {
        return t.clone();
    }
    let rows = taps(s.h, height);
    let cols = taps(s.w, width);
    let mut out = Vec::with_capacity(s.n * s.c * height * width);
    for b in 0..s.n {
        for ch in 0..s.c {
            let src = t.plane(b, ch);
            for ty in &rows {
                let top = &src[ty.lo * s.w..(ty.lo + 1) * s.w];
                let bottom = &src[ty.hi * s.w..(ty.hi + 1) * s.w];
                for tx in &cols {
                    let upper = top[tx.lo] as f64 * (1.0 - tx.frac) + top[tx.hi] as f64 * tx.frac;
                    let lower =
                        bottom[tx.lo] as f64 * (1.0 - tx.frac) + bottom[tx.hi] as f64 * tx.frac;
                    out.push((upper * (1.0 - ty.frac) + lower * ty.frac) as f32);
                }
            }
        }
    }
    Tensor4::from_op(Shape4::new(s.n, s.c, height, width), out)
}

/// Largest absolute value of each channel across the whole batch.
pub fn channel_max_abs(t: &Tensor4) -> Vec<f32> {
    let s = t.shape();
    (0..s.c)
        .map(|ch| {
            (0..s.n)
                .flat_map(|b| t.plane(b, ch))
                .fold(0.0f32, |m, v| m.max(v.abs()))
        })
        .collect()
}

fn divide_channels_by_max_abs(t: &Tensor4) -> Tensor4 {
    let s = t.shape();
    let maxima = channel_max_abs(t);
    let plane = s.plane();
    let mut data = t.data().to_vec();
    for (i, chunk) in data.chunks_exact_mut(plane).enumerate() {
        let m = maxima[i % s.c];
        if m > 0.0 {
            chunk.iter_mut().for_each(|v| *v /= m);
        }
    }
    Tensor4::from_op(s, data)
}

fn multiply_by_channel_sum(map: &Tensor4, layer: &Tensor4) -> Result<Tensor4> {
    let weights = channel_sum(layer);
    let s = map.shape();
    let mut data = map.data().to_vec();
    for b in 0..s.n {
        let w = weights.plane(b, 0);
        for ch in 0..s.c {
            let start = (b * s.c + ch) * s.plane();
            for (v, &m) in data[start..start + s.plane()].iter_mut().zip(w) {
                *v *= m;
            }
        }
    }
    Tensor4::new(s, data)
}

/// Resizes the score maps through the recorded layers and multiplies by each
/// layer's channel sum, rescaling every channel by its batch-wide max-abs
/// after each step.
pub fn progressive_sharpen(
    scores: &Tensor4,
    stack: &ActivationStack,
    mode: SharpenMode,
) -> Result<Tensor4> {
    progressive_sharpen_with(scores, stack, mode, true)
}

/// [`progressive_sharpen`] with the per-step rescale made optional. Without
/// it, long stacks of large activations can overflow `f32`.
pub fn progressive_sharpen_with(
    scores: &Tensor4,
    stack: &ActivationStack,
    mode: SharpenMode,
    rescale_each_step: bool,
) -> Result<Tensor4> {
    let deepest = stack.last().ok_or(PrismError::EmptyStack)?;
    let (ss, ds) = (scores.shape(), deepest.shape());
    if (ss.h, ss.w) != (ds.h, ds.w) {
        return Err(PrismError::ShapeMismatch(format!(
            "score maps are {}x{} but the deepest layer is {}x{}",
            ss.h, ss.w, ds.h, ds.w
        )));
    }
    let layers: Vec<_> = match mode {
        SharpenMode::Progressive => stack.layers().iter().rev().collect(),
        SharpenMode::LastOnly => stack.layers().last().into_iter().collect(),
    };
    let mut current = scores.clone();
    for layer in layers {
        let ls = layer.tensor.shape();
        if ls.n != ss.n {
            return Err(PrismError::ShapeMismatch(format!(
                "layer '{}' has batch size {} but scores have {}",
                layer.name, ls.n, ss.n
            )));
        }
        current = bilinear_resize(&current, ls.h, ls.w);
        current = multiply_by_channel_sum(&current, &layer.tensor).map_err(|e| match e {
            PrismError::NonFinite(_) => {
                PrismError::NonFinite(format!("sharpening overflowed at layer '{}'", layer.name))
            }
            other => other,
        })?;
        if rescale_each_step {
            current = divide_channels_by_max_abs(&current);
        }
    }
    Ok(current)
}

/// Resizes to `(height, width)`, divides each channel by its batch-wide
/// max-abs, clips to `[-1, 1]` and maps affinely onto `[0, 1]`. An all-zero
/// channel becomes uniform 0.5.
pub fn normalize_to_rgb(m: &Tensor4, height: usize, width: usize) -> Result<RgbMapBatch> {
    if m.shape().c != 3 {
        return Err(PrismError::ShapeMismatch(format!(
            "expected a 3-channel map, got shape {}",
            m.shape()
        )));
    }
    let resized = bilinear_resize(m, height, width);
    let s = resized.shape();
    let maxima = channel_max_abs(&resized);
    let mut data = resized.into_data();
    for (i, chunk) in data.chunks_exact_mut(s.plane()).enumerate() {
        let m = maxima[i % 3];
        for v in chunk.iter_mut() {
            let x = if m > 0.0 { *v / m } else { 0.0 };
            *v = (x.clamp(-1.0, 1.0) + 1.0) * 0.5;
        }
    }
    Ok(RgbMapBatch {
        maps: Tensor4::from_op(s, data),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::ActivationStack;

    fn map2x2() -> Tensor4 {
        Tensor4::new(Shape4::new(1, 1, 2, 2), vec![0.0, 1.0, 2.0, 3.0]).unwrap()
    }

    #[test]
    fn constant_extends_to_any_size() {
        let t = Tensor4::filled(Shape4::new(1, 1, 1, 1), 5.0);
        let r = bilinear_resize(&t, 3, 7);
        assert_eq!(r.shape(), Shape4::new(1, 1, 3, 7));
        assert!(r.data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn same_size_is_identity() {
        let t = map2x2();
        assert_eq!(bilinear_resize(&t, 2, 2), t);
    }

    #[test]
    fn downsample_to_center_averages_corners() {
        let r = bilinear_resize(&map2x2(), 1, 1);
        assert_eq!(r.data(), &[1.5]);
    }

    #[test]
    fn upsample_half_pixel_positions() {
        // 1x2 -> 1x4: sources at -0.25 (clamped 0), 0.25, 0.75, 1.25 (clamped)
        let t = Tensor4::new(Shape4::new(1, 1, 1, 2), vec![0.0, 4.0]).unwrap();
        let r = bilinear_resize(&t, 1, 4);
        assert_eq!(r.data(), &[0.0, 1.0, 3.0, 4.0]);
    }

    #[test]
    fn normalize_formula() {
        let m = Tensor4::new(Shape4::new(1, 3, 1, 2), vec![-4.0, 2.0, 0.0, 0.0, 1.0, 1.0]).unwrap();
        let rgb = normalize_to_rgb(&m, 1, 2).unwrap();
        assert_eq!(rgb.maps().data(), &[0.0, 0.75, 0.5, 0.5, 1.0, 1.0]);
    }

    #[test]
    fn normalize_rejects_wrong_channel_count() {
        let m = Tensor4::zeros(Shape4::new(1, 2, 1, 1));
        assert!(normalize_to_rgb(&m, 1, 1).is_err());
    }

    #[test]
    fn neutral_multiplier_preserves_scores_up_to_scale() {
        let scores = Tensor4::new(
            Shape4::new(1, 3, 1, 2),
            vec![2.0, -1.0, 0.5, 0.25, 0.0, 0.0],
        )
        .unwrap();
        let mut stack = ActivationStack::new();
        stack
            .push("ones", Tensor4::filled(Shape4::new(1, 1, 1, 2), 1.0))
            .unwrap();
        let out = progressive_sharpen(&scores, &stack, SharpenMode::Progressive).unwrap();
        assert_eq!(out.data(), &[1.0, -0.5, 1.0, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn zero_multiplier_annihilates() {
        let scores = Tensor4::filled(Shape4::new(2, 3, 2, 2), 1.5);
        let mut stack = ActivationStack::new();
        stack
            .push("zeros", Tensor4::zeros(Shape4::new(2, 4, 2, 2)))
            .unwrap();
        let out = progressive_sharpen(&scores, &stack, SharpenMode::Progressive).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sharpen_checks_shapes() {
        let scores = Tensor4::zeros(Shape4::new(2, 3, 2, 2));
        let mut stack = ActivationStack::new();
        stack
            .push("a", Tensor4::zeros(Shape4::new(1, 4, 2, 2)))
            .unwrap();
        assert!(matches!(
            progressive_sharpen(&scores, &stack, SharpenMode::Progressive),
            Err(PrismError::ShapeMismatch(_))
        ));
        let mut stack = ActivationStack::new();
        stack
            .push("a", Tensor4::zeros(Shape4::new(2, 4, 3, 3)))
            .unwrap();
        assert!(progressive_sharpen(&scores, &stack, SharpenMode::Progressive).is_err());
        assert!(matches!(
            progressive_sharpen(&scores, &ActivationStack::new(), SharpenMode::Progressive),
            Err(PrismError::EmptyStack)
        ));
    }

    #[test]
    fn sharpen_mode_parses() {
        assert_eq!("last-only".parse(), Ok(SharpenMode::LastOnly));
        assert_eq!("progressive".parse(), Ok(SharpenMode::Progressive));
        assert!("both".parse::<SharpenMode>().is_err());
    }
}
