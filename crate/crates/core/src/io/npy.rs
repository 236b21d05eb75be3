//! Reading and writing the numpy `.npy` format, version 1.0.
//!
//! Only little-endian `f4`/`f8` payloads in C order are read; everything is
//! written as `<f4`. The header produced by [`encode_npy`] is byte-for-byte
//! what `numpy.save` emits for the same array.

use crate::error::{PrismError, Result};
use crate::tensor::{ObservationMatrix, Shape4, Tensor4};

pub const MAGIC: &[u8; 6] = b"\x93NUMPY";

/// Preamble: magic, two version bytes, two length bytes.
const PREAMBLE_LEN: usize = 10;
const ALIGN: usize = 64;

/// A decoded array of any rank.
#[derive(Debug, Clone, PartialEq)]
pub struct RawNpy {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NpyArray {
    Tensor(Tensor4),
    Matrix(ObservationMatrix),
}

impl NpyArray {
    pub fn into_tensor(self) -> Option<Tensor4> {
        match self {
            NpyArray::Tensor(t) => Some(t),
            NpyArray::Matrix(_) => None,
        }
    }
}

/// Arrays that can be written as `.npy`.
pub trait NpyData {
    fn npy_shape(&self) -> Vec<usize>;
    fn npy_values(&self) -> &[f32];
}

impl NpyData for Tensor4 {
    fn npy_shape(&self) -> Vec<usize> {
        self.shape().to_vec()
    }

    fn npy_values(&self) -> &[f32] {
        self.data()
    }
}

impl NpyData for ObservationMatrix {
    fn npy_shape(&self) -> Vec<usize> {
        vec![self.rows(), self.cols()]
    }

    fn npy_values(&self) -> &[f32] {
        self.data()
    }
}

fn shape_literal(shape: &[usize]) -> String {
    match shape {
        [single] => format!("({single},)"),
        dims => {
            let parts: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
            format!("({})", parts.join(", "))
        }
    }
}

/// Encodes `data` with the given shape as a version 1.0 `<f4` file.
pub fn encode_npy(shape: &[usize], data: &[f32]) -> Vec<u8> {
    debug_assert_eq!(shape.iter().product::<usize>(), data.len());
    let dict = format!(
        "{{'descr': '<f4', 'fortran_order': False, 'shape': {}, }}",
        shape_literal(shape)
    );
    // Same rule as numpy: pad with 1..=64 spaces before the newline.
    let unpadded = PREAMBLE_LEN + dict.len() + 1;
    let pad = ALIGN - unpadded % ALIGN;
    let header_len = dict.len() + pad + 1;

    let mut out = Vec::with_capacity(PREAMBLE_LEN + header_len + data.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header_len as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out.resize(out.len() + pad, b' ');
    out.push(b'\n');
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_npy<T: NpyData + ?Sized>(array: &T) -> Vec<u8> {
    encode_npy(&array.npy_shape(), array.npy_values())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dtype {
    F4,
    F8,
}

struct Header {
    dtype: Dtype,
    shape: Vec<usize>,
}

fn value_after_key<'a>(dict: &'a str, key: &str) -> Result<&'a str> {
    let quoted = format!("'{key}'");
    let start = dict
        .find(&quoted)
        .ok_or_else(|| PrismError::BadNpyHeader(format!("missing key {quoted}")))?;
    let rest = dict[start + quoted.len()..].trim_start();
    rest.strip_prefix(':')
        .map(str::trim_start)
        .ok_or_else(|| PrismError::BadNpyHeader(format!("no value for {quoted}")))
}

fn parse_header(text: &str) -> Result<Header> {
    let dict = text.trim();
    if !(dict.starts_with('{') && dict.ends_with('}')) {
        return Err(PrismError::BadNpyHeader(
            "header is not a dict literal".into(),
        ));
    }

    let descr = value_after_key(dict, "descr")?;
    let quote = descr
        .chars()
        .next()
        .filter(|c| *c == '\'' || *c == '"')
        .ok_or_else(|| PrismError::BadNpyHeader("descr is not a string".into()))?;
    let descr = &descr[1..];
    let descr = &descr[..descr
        .find(quote)
        .ok_or_else(|| PrismError::BadNpyHeader("unterminated descr".into()))?];
    let dtype = match descr {
        "<f4" => Dtype::F4,
        "<f8" => Dtype::F8,
        other => return Err(PrismError::UnsupportedDtype(other.to_string())),
    };

    let fortran = value_after_key(dict, "fortran_order")?;
    if fortran.starts_with("True") {
        return Err(PrismError::FortranOrderUnsupported);
    } else if !fortran.starts_with("False") {
        return Err(PrismError::BadNpyHeader(
            "fortran_order is not a bool".into(),
        ));
    }

    let shape = value_after_key(dict, "shape")?;
    let inner = shape
        .strip_prefix('(')
        .and_then(|s| s.split_once(')'))
        .map(|(inner, _)| inner)
        .ok_or_else(|| PrismError::BadNpyHeader("shape is not a tuple".into()))?;
    let shape = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| PrismError::BadNpyHeader(format!("bad shape entry '{s}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Header { dtype, shape })
}

/// Decodes an array of any rank.
pub fn decode_npy(bytes: &[u8]) -> Result<RawNpy> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(PrismError::BadMagic);
    }
    if bytes.len() < PREAMBLE_LEN {
        return Err(PrismError::BadNpyHeader(
            "file ends inside the preamble".into(),
        ));
    }
    let (major, minor) = (bytes[6], bytes[7]);
    if (major, minor) != (1, 0) {
        return Err(PrismError::UnsupportedVersion(major, minor));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let payload_start = PREAMBLE_LEN + header_len;
    let header_bytes = bytes
        .get(PREAMBLE_LEN..payload_start)
        .ok_or_else(|| PrismError::BadNpyHeader("file ends inside the header".into()))?;
    let text = std::str::from_utf8(header_bytes)
        .map_err(|_| PrismError::BadNpyHeader("header is not ASCII".into()))?;
    let header = parse_header(text)?;

    let count: usize = header.shape.iter().product();
    let width = match header.dtype {
        Dtype::F4 => 4,
        Dtype::F8 => 8,
    };
    let payload = &bytes[payload_start..];
    let expected = count * width;
    if payload.len() < expected {
        return Err(PrismError::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    let data = match header.dtype {
        Dtype::F4 => payload[..expected]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
        Dtype::F8 => payload[..expected]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")) as f32)
            .collect(),
    };
    Ok(RawNpy {
        shape: header.shape,
        data,
    })
}

/// Decodes a rank-4 file as a [`Tensor4`] or a rank-2 file as an
/// [`ObservationMatrix`].
pub fn read_npy(bytes: &[u8]) -> Result<NpyArray> {
    let raw = decode_npy(bytes)?;
    match raw.shape[..] {
        [n, c, h, w] => Ok(NpyArray::Tensor(Tensor4::new(
            Shape4::new(n, c, h, w),
            raw.data,
        )?)),
        [rows, cols] => Ok(NpyArray::Matrix(ObservationMatrix::from_rows(
            rows, cols, raw.data,
        )?)),
        _ => Err(PrismError::ShapeRankUnsupported(raw.shape.len())),
    }
}
