//! Dense batch tensors and the observation-matrix view used by the PCA step.
//!
//! A [`Tensor4`] stores `f32` values contiguously in `(n, c, h, w)` row-major
//! order. An [`ObservationMatrix`] treats every spatial position of every
//! batch image as one row whose columns are the channel responses at that
//! position: tensor index `(b, ch, y, x)` maps to row `b·h·w + y·w + x`,
//! column `ch`.

use std::fmt;

use crate::error::{PrismError, Result};

/// Dimensions of a [`Tensor4`]: batch, channels, height, width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape4 { n, c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn to_vec(self) -> Vec<usize> {
        vec![self.n, self.c, self.h, self.w]
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Spatial extent of a batch, kept by [`ObservationMatrix`] so scores can be
/// folded back into image layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Origin {
    pub n: usize,
    pub h: usize,
    pub w: usize,
}

/// A batch of multi-channel 2-D maps with every value finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    shape: Shape4,
    data: Vec<f32>,
}

impl Tensor4 {
    /// Builds a tensor, rejecting zero-sized dimensions, length mismatches and
    /// non-finite values.
    pub fn new(shape: Shape4, data: Vec<f32>) -> Result<Self> {
        if shape.n == 0 || shape.c == 0 || shape.h == 0 || shape.w == 0 {
            return Err(PrismError::ShapeMismatch(format!(
                "every dimension must be at least 1, got {shape}"
            )));
        }
        if data.len() != shape.len() {
            return Err(PrismError::ShapeMismatch(format!(
                "shape {shape} needs {} values, got {}",
                shape.len(),
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(PrismError::NonFinite(format!(
                "element {pos} of tensor with shape {shape}"
            )));
        }
        Ok(Tensor4 { shape, data })
    }

    /// Constructor for results of operations on finite inputs.
    pub(crate) fn from_op(shape: Shape4, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), shape.len());
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Tensor4 { shape, data }
    }

    pub fn zeros(shape: Shape4) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: Shape4, value: f32) -> Self {
        assert!(value.is_finite());
        assert!(!shape.is_empty(), "tensor dimensions must be at least 1");
        Tensor4 {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_fn(
        shape: Shape4,
        mut f: impl FnMut(usize, usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(shape.len());
        for b in 0..shape.n {
            for ch in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(b, ch, y, x));
                    }
                }
            }
        }
        Tensor4::new(shape, data)
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, b: usize, ch: usize, y: usize, x: usize) -> usize {
        let s = self.shape;
        ((b * s.c + ch) * s.h + y) * s.w + x
    }

    #[inline]
    pub fn get(&self, b: usize, ch: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(b, ch, y, x)]
    }

    /// One `h × w` plane.
    pub fn plane(&self, b: usize, ch: usize) -> &[f32] {
        let p = self.shape.plane();
        let start = (b * self.shape.c + ch) * p;
        &self.data[start..start + p]
    }

    /// All channels of batch item `b`.
    pub fn image(&self, b: usize) -> &[f32] {
        let len = self.shape.c * self.shape.plane();
        &self.data[b * len..(b + 1) * len]
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    /// Multiplies every element by `factor`.
    pub fn scale(&self, factor: f32) -> Result<Tensor4> {
        Tensor4::new(self.shape, self.data.iter().map(|v| v * factor).collect())
    }

    /// Selects batch items in the given order; indices may repeat.
    pub fn select_batch(&self, order: &[usize]) -> Result<Tensor4> {
        let mut data = Vec::with_capacity(order.len() * self.shape.c * self.shape.plane());
        for &b in order {
            if b >= self.shape.n {
                return Err(PrismError::ShapeMismatch(format!(
                    "batch index {b} out of range for shape {}",
                    self.shape
                )));
            }
            data.extend_from_slice(self.image(b));
        }
        Tensor4::new(
            Shape4 {
                n: order.len(),
                ..self.shape
            },
            data,
        )
    }

    /// Stacks tensors of identical `(c, h, w)` along the batch axis.
    pub fn concat_batch(parts: &[Tensor4]) -> Result<Tensor4> {
        let first = parts
            .first()
            .ok_or_else(|| PrismError::ShapeMismatch("cannot concatenate an empty list".into()))?;
        let mut data = Vec::new();
        let mut n = 0;
        for (i, t) in parts.iter().enumerate() {
            let s = t.shape;
            if (s.c, s.h, s.w) != (first.shape.c, first.shape.h, first.shape.w) {
                return Err(PrismError::ShapeMismatch(format!(
                    "batch item {i} has shape {s}, expected (_, {}, {}, {})",
                    first.shape.c, first.shape.h, first.shape.w
                )));
            }
            n += s.n;
            data.extend_from_slice(&t.data);
        }
        Tensor4::new(Shape4 { n, ..first.shape }, data)
    }
}

/// A `v × c` matrix of per-position channel responses, `v = n·h·w`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
    origin: Origin,
}

impl ObservationMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>, origin: Origin) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(PrismError::ShapeMismatch(format!(
                "observation matrix must be at least 1x1, got {rows}x{cols}"
            )));
        }
        if rows * cols != data.len() {
            return Err(PrismError::ShapeMismatch(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if rows != origin.n * origin.h * origin.w {
            return Err(PrismError::ShapeMismatch(format!(
                "{rows} rows do not match origin {}x{}x{}",
                origin.n, origin.h, origin.w
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(PrismError::NonFinite(format!("matrix element {pos}")));
        }
        Ok(ObservationMatrix {
            rows,
            cols,
            data,
            origin,
        })
    }

    /// A matrix with no spatial structure: each row is its own batch item.
    pub fn from_rows(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        Self::new(
            rows,
            cols,
            data,
            Origin {
                n: rows,
                h: 1,
                w: 1,
            },
        )
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    /// Inverse of [`reshape_to_observations`].
    pub fn to_tensor(&self) -> Tensor4 {
        let Origin { n, h, w } = self.origin;
        let c = self.cols;
        let plane = h * w;
        let mut data = vec![0.0f32; self.data.len()];
        for b in 0..n {
            for p in 0..plane {
                let row = self.row(b * plane + p);
                for (ch, &v) in row.iter().enumerate() {
                    data[(b * c + ch) * plane + p] = v;
                }
            }
        }
        Tensor4::from_op(Shape4::new(n, c, h, w), data)
    }
}

/// Flattens a tensor so each `(b, y, x)` position becomes one row of channel
/// responses.
pub fn reshape_to_observations(t: &Tensor4) -> ObservationMatrix {
    let Shape4 { n, c, h, w } = t.shape();
    let plane = h * w;
    let mut data = vec![0.0f32; t.data.len()];
    for b in 0..n {
        for ch in 0..c {
            let src = t.plane(b, ch);
            for (p, &v) in src.iter().enumerate() {
                data[(b * plane + p) * c + ch] = v;
            }
        }
    }
    ObservationMatrix {
        rows: n * plane,
        cols: c,
        data,
        origin: Origin { n, h, w },
    }
}

/// Subtracts each column's mean. Means are accumulated in `f64`.
pub fn center_columns(m: &ObservationMatrix) -> (ObservationMatrix, Vec<f32>) {
    let mut sums = vec![0.0f64; m.cols];
    for row in m.data.chunks_exact(m.cols) {
        for (s, &v) in sums.iter_mut().zip(row) {
            *s += v as f64;
        }
    }
    let means: Vec<f64> = sums.iter().map(|s| s / m.rows as f64).collect();
    let mut data = Vec::with_capacity(m.data.len());
    for row in m.data.chunks_exact(m.cols) {
        data.extend(
            row.iter()
                .zip(&means)
                .map(|(&v, &mu)| (v as f64 - mu) as f32),
        );
    }
    let centered = ObservationMatrix { data, ..m.clone() };
    (centered, means.into_iter().map(|mu| mu as f32).collect())
}

/// Per-pixel sum over channels, shape `(n, 1, h, w)`.
pub fn channel_sum(t: &Tensor4) -> Tensor4 {
    let Shape4 { n, c, h, w } = t.shape();
    let plane = h * w;
    let mut acc = vec![0.0f64; n * plane];
    for b in 0..n {
        let out = &mut acc[b * plane..(b + 1) * plane];
        for ch in 0..c {
            for (o, &v) in out.iter_mut().zip(t.plane(b, ch)) {
                *o += v as f64;
            }
        }
    }
    Tensor4::from_op(
        Shape4::new(n, 1, h, w),
        acc.into_iter().map(|v| v as f32).collect(),
    )
}
