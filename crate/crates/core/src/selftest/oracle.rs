//! Straight-line `f64` reference computations used to check the library.
//!
//! Nothing here calls into the implementation being checked; tensors are
//! read through their raw data only.

use crate::inference::{LayerSpec, Model};
use crate::tensor::Tensor4;

/// A dense `f64` array in `(n, c, h, w)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct RefTensor {
    pub dims: [usize; 4],
    pub data: Vec<f64>,
}

impl RefTensor {
    pub fn zeros(dims: [usize; 4]) -> Self {
        RefTensor {
            dims,
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn from_tensor(t: &Tensor4) -> Self {
        let s = t.shape();
        RefTensor {
            dims: [s.n, s.c, s.h, s.w],
            data: t.data().iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn at(&self, b: usize, c: usize, y: usize, x: usize) -> f64 {
        let [_, cs, hs, ws] = self.dims;
        self.data[((b * cs + c) * hs + y) * ws + x]
    }

    pub fn at_mut(&mut self, b: usize, c: usize, y: usize, x: usize) -> &mut f64 {
        let [_, cs, hs, ws] = self.dims;
        &mut self.data[((b * cs + c) * hs + y) * ws + x]
    }

    /// Largest absolute difference against a single-precision tensor.
    pub fn max_abs_diff(&self, other: &Tensor4) -> f64 {
        assert_eq!(other.data().len(), self.data.len());
        self.data
            .iter()
            .zip(other.data())
            .map(|(a, &b)| (a - b as f64).abs())
            .fold(0.0, f64::max)
    }

    /// Divides every channel by its largest magnitude across the batch.
    pub fn normalize_channels(&self) -> RefTensor {
        let [n, c, h, w] = self.dims;
        let mut out = self.clone();
        for ch in 0..c {
            let mut m = 0.0f64;
            for b in 0..n {
                for y in 0..h {
                    for x in 0..w {
                        m = m.max(self.at(b, ch, y, x).abs());
                    }
                }
            }
            if m > 0.0 {
                for b in 0..n {
                    for y in 0..h {
                        for x in 0..w {
                            *out.at_mut(b, ch, y, x) /= m;
                        }
                    }
                }
            }
        }
        out
    }
}

/// Eigenvalues of a symmetric `n × n` matrix (row-major) by cyclic Jacobi
/// rotations, sorted in decreasing order.
pub fn symmetric_eigenvalues(matrix: &[f64], n: usize) -> Vec<f64> {
    assert_eq!(matrix.len(), n * n);
    let mut a = matrix.to_vec();
    for _ in 0..200 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        let diag: f64 = (0..n).map(|i| a[i * n + i] * a[i * n + i]).sum();
        if off <= 1e-30 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // A <- Jᵀ A J with J the (p, q) rotation.
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    eig.sort_by(|x, y| y.total_cmp(x));
    eig
}

/// `AᵀA` of a row-major `rows × cols` matrix.
pub fn gram(data: &[f32], rows: usize, cols: usize) -> Vec<f64> {
    let mut g = vec![0.0; cols * cols];
    for i in 0..cols {
        for j in 0..cols {
            g[i * cols + j] = (0..rows)
                .map(|r| data[r * cols + i] as f64 * data[r * cols + j] as f64)
                .sum();
        }
    }
    g
}

pub fn conv2d(
    input: &RefTensor,
    weights: &RefTensor,
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> RefTensor {
    let [n, cin, h, w] = input.dims;
    let [cout, _, kh, kw] = weights.dims;
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = RefTensor::zeros([n, cout, oh, ow]);
    for b in 0..n {
        for (o, &b0) in bias.iter().enumerate().take(cout) {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b0;
                    for i in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let y = (oy * stride + ky) as isize - pad as isize;
                                let x = (ox * stride + kx) as isize - pad as isize;
                                if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                                    acc += weights.at(o, i, ky, kx)
                                        * input.at(b, i, y as usize, x as usize);
                                }
                            }
                        }
                    }
                    *out.at_mut(b, o, oy, ox) = acc;
                }
            }
        }
    }
    out
}

pub fn relu(input: &RefTensor) -> RefTensor {
    RefTensor {
        dims: input.dims,
        data: input
            .data
            .iter()
            .map(|&v| if v > 0.0 { v } else { 0.0 })
            .collect(),
    }
}

pub fn maxpool(input: &RefTensor, window: usize, stride: usize) -> RefTensor {
    let [n, c, h, w] = input.dims;
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = RefTensor::zeros([n, c, oh, ow]);
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut m = f64::NEG_INFINITY;
                    for dy in 0..window {
                        for dx in 0..window {
                            m = m.max(input.at(b, ch, oy * stride + dy, ox * stride + dx));
                        }
                    }
                    *out.at_mut(b, ch, oy, ox) = m;
                }
            }
        }
    }
    out
}

/// Runs a model layer by layer, returning the output and every conv
/// activation (after the directly following ReLU, if any).
pub fn forward(model: &Model, input: &Tensor4) -> (RefTensor, Vec<RefTensor>) {
    let layers = model.layers();
    let mut current = RefTensor::from_tensor(input);
    let mut recorded = Vec::new();
    let mut i = 0;
    while i < layers.len() {
        match &layers[i].spec {
            LayerSpec::Conv(conv) => {
                let weights = RefTensor::from_tensor(conv.weights());
                let bias: Vec<f64> = conv.bias().iter().map(|&b| b as f64).collect();
                current = conv2d(&current, &weights, &bias, conv.stride(), conv.padding());
                if matches!(layers.get(i + 1).map(|l| &l.spec), Some(LayerSpec::Relu)) {
                    current = relu(&current);
                    i += 1;
                }
                recorded.push(current.clone());
            }
            LayerSpec::Relu => current = relu(&current),
            LayerSpec::MaxPool { window, stride } => current = maxpool(&current, *window, *stride),
        }
        i += 1;
    }
    (current, recorded)
}

/// Half-pixel-center bilinear resize.
pub fn bilinear(input: &RefTensor, out_h: usize, out_w: usize) -> RefTensor {
    let [n, c, h, w] = input.dims;
    let coord = |o: usize, src: usize, dst: usize| -> (usize, usize, f64) {
        let mut p = (o as f64 + 0.5) * src as f64 / dst as f64 - 0.5;
        if p < 0.0 {
            p = 0.0;
        }
        let i0 = (p.floor() as usize).min(src - 1);
        let i1 = if i0 + 1 < src { i0 + 1 } else { src - 1 };
        (i0, i1, p - i0 as f64)
    };
    let mut out = RefTensor::zeros([n, c, out_h, out_w]);
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..out_h {
                let (y0, y1, fy) = coord(oy, h, out_h);
                for ox in 0..out_w {
                    let (x0, x1, fx) = coord(ox, w, out_w);
                    let v = input.at(b, ch, y0, x0) * (1.0 - fy) * (1.0 - fx)
                        + input.at(b, ch, y0, x1) * (1.0 - fy) * fx
                        + input.at(b, ch, y1, x0) * fy * (1.0 - fx)
                        + input.at(b, ch, y1, x1) * fy * fx;
                    *out.at_mut(b, ch, oy, ox) = v;
                }
            }
        }
    }
    out
}

/// Resize-and-multiply through `layers` from last to first, no rescaling.
pub fn sharpen(scores: &RefTensor, layers: &[RefTensor]) -> RefTensor {
    let mut current = scores.clone();
    for layer in layers.iter().rev() {
        let [n, c, h, w] = layer.dims;
        current = bilinear(&current, h, w);
        let k = current.dims[1];
        for b in 0..n {
            for y in 0..h {
                for x in 0..w {
                    let s: f64 = (0..c).map(|ch| layer.at(b, ch, y, x)).sum();
                    for ch in 0..k {
                        *current.at_mut(b, ch, y, x) *= s;
                    }
                }
            }
        }
    }
    current
}
