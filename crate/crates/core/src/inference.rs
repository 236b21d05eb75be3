//! A small CNN forward-pass evaluator and the session that records
//! per-layer activations while it runs.
//!
//! The session mirrors a hook-based lifecycle: [`RecordingSession::register`]
//! starts recording, [`RecordingSession::disable`] stops it,
//! [`RecordingSession::prune`] discards what was recorded and
//! [`RecordingSession::get_maps`] turns the recording into PRISM maps,
//! consuming it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{PrismError, Result};
use crate::overlay::RgbMapBatch;
use crate::pipeline::{prism_maps, PrismOptions};
use crate::tensor::{Shape4, Tensor4};

/// A 2-D convolution (cross-correlation) with zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    weights: Tensor4,
    bias: Vec<f32>,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    /// `weights` is `(out_c, in_c, kh, kw)`; `bias` has `out_c` entries.
    pub fn new(weights: Tensor4, bias: Vec<f32>, stride: usize, padding: usize) -> Result<Self> {
        let s = weights.shape();
        if bias.len() != s.n {
            return Err(PrismError::InvalidModel(format!(
                "conv has {} filters but {} bias values",
                s.n,
                bias.len()
            )));
        }
        if stride == 0 {
            return Err(PrismError::InvalidModel(
                "conv stride must be at least 1".into(),
            ));
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(PrismError::NonFinite("conv bias".into()));
        }
        Ok(Conv2d {
            weights,
            bias,
            stride,
            padding,
        })
    }

    pub fn weights(&self) -> &Tensor4 {
        &self.weights
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn padding(&self) -> usize {
        self.padding
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape().c
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape().n
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv(Conv2d),
    Relu,
    MaxPool { window: usize, stride: usize },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv(_) => "conv",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool { .. } => "maxpool",
        }
    }

    pub fn apply(&self, input: &Tensor4) -> Result<Tensor4> {
        match self {
            LayerSpec::Conv(conv) => conv2d(input, conv),
            LayerSpec::Relu => Ok(relu(input)),
            LayerSpec::MaxPool { window, stride } => maxpool2d(input, *window, *stride),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub spec: LayerSpec,
}

/// An ordered list of layers applied first to last.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Model {
    layers: Vec<Layer>,
}

impl Model {
    pub fn new(layers: Vec<Layer>) -> Self {
        Model { layers }
    }

    /// Names each layer `<kind><index>`.
    pub fn from_specs(specs: Vec<LayerSpec>) -> Self {
        let layers = specs
            .into_iter()
            .enumerate()
            .map(|(i, spec)| Layer {
                name: format!("{}{}", spec.kind(), i),
                spec,
            })
            .collect();
        Model { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn conv_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l.spec, LayerSpec::Conv(_)))
            .count()
    }

    /// Runs the model, returning its output and the recorded activations:
    /// each conv output, taken after the ReLU that immediately follows it
    /// when there is one.
    pub fn forward_recorded(&self, input: &Tensor4) -> Result<(Tensor4, Vec<(String, Tensor4)>)> {
        let mut current = input.clone();
        let mut recorded = Vec::new();
        let mut i = 0;
        while i < self.layers.len() {
            let layer = &self.layers[i];
            current = layer
                .spec
                .apply(&current)
                .map_err(|e| at_layer(i, &layer.name, e))?;
            if matches!(layer.spec, LayerSpec::Conv(_)) {
                if let Some(next) = self.layers.get(i + 1) {
                    if next.spec == LayerSpec::Relu {
                        current = relu(&current);
                        i += 1;
                    }
                }
                recorded.push((layer.name.clone(), current.clone()));
            }
            i += 1;
        }
        Ok((current, recorded))
    }

    pub fn forward(&self, input: &Tensor4) -> Result<Tensor4> {
        self.forward_recorded(input).map(|(out, _)| out)
    }
}

fn at_layer(index: usize, name: &str, e: PrismError) -> PrismError {
    match e {
        PrismError::ShapeMismatch(msg) => {
            PrismError::ShapeMismatch(format!("layer {index} ('{name}'): {msg}"))
        }
        PrismError::NonFinite(msg) => {
            PrismError::NonFinite(format!("layer {index} ('{name}'): {msg}"))
        }
        other => other,
    }
}

/// Output spatial extent of a sliding window, or `None` if the window does
/// not fit.
fn window_extent(size: usize, pad: usize, kernel: usize, stride: usize) -> Option<usize> {
    (size + 2 * pad)
        .checked_sub(kernel)
        .map(|span| span / stride + 1)
}

pub fn conv2d(input: &Tensor4, layer: &Conv2d) -> Result<Tensor4> {
    let s = input.shape();
    let k = layer.weights.shape();
    if s.c != k.c {
        return Err(PrismError::ShapeMismatch(format!(
            "conv expects {} input channels, got {}",
            k.c, s.c
        )));
    }
    let (stride, pad) = (layer.stride, layer.padding);
    let (oh, ow) = match (
        window_extent(s.h, pad, k.h, stride),
        window_extent(s.w, pad, k.w, stride),
    ) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => {
            return Err(PrismError::ShapeMismatch(format!(
                "{}x{} kernel does not fit {}x{} input with padding {}",
                k.h, k.w, s.h, s.w, pad
            )))
        }
    };
    let out_shape = Shape4::new(s.n, k.n, oh, ow);
    let mut out = vec![0.0f32; out_shape.len()];
    for b in 0..s.n {
        for oc in 0..k.n {
            let dst = &mut out[(b * k.n + oc) * oh * ow..(b * k.n + oc + 1) * oh * ow];
            dst.fill(layer.bias[oc]);
            for ic in 0..s.c {
                let src = input.plane(b, ic);
                for ky in 0..k.h {
                    for kx in 0..k.w {
                        let wv = layer.weights.get(oc, ic, ky, kx);
                        for oy in 0..oh {
                            let Some(iy) = (oy * stride + ky).checked_sub(pad).filter(|&y| y < s.h)
                            else {
                                continue;
                            };
                            let row = &src[iy * s.w..(iy + 1) * s.w];
                            let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                            for (ox, o) in out_row.iter_mut().enumerate() {
                                if let Some(ix) = (ox * stride + kx).checked_sub(pad) {
                                    if ix < s.w {
                                        *o += wv * row[ix];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor4::new(out_shape, out)
}

pub fn relu(input: &Tensor4) -> Tensor4 {
    Tensor4::from_op(
        input.shape(),
        input.data().iter().map(|&v| v.max(0.0)).collect(),
    )
}

pub fn maxpool2d(input: &Tensor4, window: usize, stride: usize) -> Result<Tensor4> {
    let s = input.shape();
    if window == 0 || stride == 0 {
        return Err(PrismError::ShapeMismatch(
            "pool window and stride must be at least 1".into(),
        ));
    }
    let (Some(oh), Some(ow)) = (
        window_extent(s.h, 0, window, stride),
        window_extent(s.w, 0, window, stride),
    ) else {
        return Err(PrismError::ShapeMismatch(format!(
            "pool window {window} exceeds {}x{} input",
            s.h, s.w
        )));
    };
    let out_shape = Shape4::new(s.n, s.c, oh, ow);
    let mut out = Vec::with_capacity(out_shape.len());
    for b in 0..s.n {
        for ch in 0..s.c {
            let src = input.plane(b, ch);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut m = f32::NEG_INFINITY;
                    for y in oy * stride..oy * stride + window {
                        for x in ox * stride..ox * stride + window {
                            m = m.max(src[y * s.w + x]);
                        }
                    }
                    out.push(m);
                }
            }
        }
    }
    Ok(Tensor4::from_op(out_shape, out))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordedLayer {
    pub name: String,
    pub tensor: Tensor4,
}

/// Activations recorded during forward passes, shallowest first. Every entry
/// has the same batch size.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActivationStack {
    layers: Vec<RecordedLayer>,
}

impl ActivationStack {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor4) -> Result<()> {
        let name = name.into();
        if let Some(first) = self.layers.first() {
            let expected = first.tensor.shape().n;
            if tensor.shape().n != expected {
                return Err(PrismError::BatchSizeMismatch {
                    layer: name,
                    expected,
                    found: tensor.shape().n,
                });
            }
        }
        self.layers.push(RecordedLayer { name, tensor });
        Ok(())
    }

    pub fn layers(&self) -> &[RecordedLayer] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn first(&self) -> Option<&Tensor4> {
        self.layers.first().map(|l| &l.tensor)
    }

    pub fn last(&self) -> Option<&Tensor4> {
        self.layers.last().map(|l| &l.tensor)
    }

    pub fn batch_size(&self) -> Option<usize> {
        self.first().map(|t| t.shape().n)
    }

    pub fn clear(&mut self) {
        self.layers.clear();
    }

    /// True when no layer is spatially larger than the one before it.
    pub fn is_spatially_nonincreasing(&self) -> bool {
        self.layers.windows(2).all(|pair| {
            let (a, b) = (pair[0].tensor.shape(), pair[1].tensor.shape());
            b.h <= a.h && b.w <= a.w
        })
    }

    /// Applies `f` to every recorded tensor.
    pub fn map_tensors(&self, mut f: impl FnMut(&Tensor4) -> Result<Tensor4>) -> Result<Self> {
        let mut out = ActivationStack::new();
        for layer in &self.layers {
            out.push(layer.name.clone(), f(&layer.tensor)?)?;
        }
        Ok(out)
    }
}

/// A model plus the activations it recorded. Single owner; not meant for
/// concurrent mutation.
#[derive(Debug, Clone)]
pub struct RecordingSession {
    model: Model,
    recording: bool,
    stack: ActivationStack,
}

impl RecordingSession {
    pub fn new(model: Model) -> Self {
        RecordingSession {
            model,
            recording: false,
            stack: ActivationStack::new(),
        }
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn register(&mut self) {
        self.recording = true;
    }

    pub fn disable(&mut self) {
        self.recording = false;
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn stack(&self) -> &ActivationStack {
        &self.stack
    }

    /// Drops recorded activations without producing maps.
    pub fn prune(&mut self) {
        self.stack.clear();
    }

    /// Runs the model. While recording, conv activations are appended to the
    /// stack; nothing is appended if any layer fails.
    pub fn forward(&mut self, input: &Tensor4) -> Result<Tensor4> {
        let (output, recorded) = self.model.forward_recorded(input)?;
        if self.recording {
            let mut next = self.stack.clone();
            for (name, tensor) in recorded {
                next.push(name, tensor)?;
            }
            self.stack = next;
        }
        Ok(output)
    }

    /// Computes PRISM maps at `height × width` from the recorded stack. The
    /// stack is emptied whether or not the computation succeeds.
    pub fn get_maps(
        &mut self,
        height: usize,
        width: usize,
        options: &PrismOptions,
    ) -> Result<RgbMapBatch> {
        let stack = std::mem::take(&mut self.stack);
        if stack.is_empty() {
            return Err(PrismError::EmptyStack);
        }
        prism_maps(&stack, height, width, options)
    }
}

/// A small VGG-style model with seeded uniform weights:
/// conv(3→6, 3×3, pad 1), ReLU, maxpool 2, conv(6→8, 3×3, pad 1), ReLU.
pub fn toy_model(seed: u64) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut conv = |out_c: usize, in_c: usize| {
        let shape = Shape4::new(out_c, in_c, 3, 3);
        let weights = (0..shape.len())
            .map(|_| rng.gen_range(-0.5f32..0.5))
            .collect();
        let bias = (0..out_c).map(|_| rng.gen_range(-0.1f32..0.1)).collect();
        let weights = Tensor4::new(shape, weights).expect("finite weights");
        LayerSpec::Conv(Conv2d::new(weights, bias, 1, 1).expect("consistent conv"))
    };
    let first = conv(6, 3);
    let second = conv(8, 6);
    Model::from_specs(vec![
        first,
        LayerSpec::Relu,
        LayerSpec::MaxPool {
            window: 2,
            stride: 2,
        },
        second,
        LayerSpec::Relu,
    ])
}
