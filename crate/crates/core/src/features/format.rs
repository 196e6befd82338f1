//! The `.fft` tensor file.
//!
//! Little-endian layout:
//!
//! ```text
//! offset  size   field
//! 0       4      magic "FFTN"
//! 4       4      format version (u32) = 1
//! 8       4      dtype code (u32): 1 = f32, 2 = f64
//! 12      4      rank (u32) = 4
//! 16      32     dims n, c, h, w (4 x u64)
//! 48      4      metadata length L (u32)
//! 52      L      UTF-8 JSON metadata
//! 52+L    ...    n*c*h*w elements, row-major N-C-H-W
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Dtype, Scalar, Shape4, Tensor4};

pub const MAGIC: &[u8; 4] = b"FFTN";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 52;

/// Metadata stored alongside a tensor. Unknown keys are preserved in `extra`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TensorMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backbone_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_id: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_h: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_w: Option<usize>,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl TensorMeta {
    pub fn named(name: &str) -> Self {
        let mut meta = TensorMeta::default();
        meta.extra.insert("name".into(), name.into());
        meta
    }

    pub fn name(&self) -> Option<&str> {
        self.extra.get("name").and_then(|v| v.as_str())
    }
}

/// A decoded tensor of whichever dtype the file declared.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor4<f32>),
    F64(Tensor4<f64>),
}

impl AnyTensor {
    pub fn dtype(&self) -> Dtype {
        match self {
            AnyTensor::F32(_) => Dtype::F32,
            AnyTensor::F64(_) => Dtype::F64,
        }
    }

    pub fn shape(&self) -> Shape4 {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    /// Converts to `T`; identity when the dtype already matches.
    pub fn into_dtype<T: Scalar>(self) -> Tensor4<T> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }
}

pub fn encode_tensor<T: Scalar>(t: &Tensor4<T>, meta: &TensorMeta) -> Result<Vec<u8>> {
    let meta_json = serde_json::to_vec(meta)?;
    let meta_len = u32::try_from(meta_json.len())
        .map_err(|_| Error::invalid("metadata longer than 4 GiB"))?;
    let s = t.shape();
    let mut out = Vec::with_capacity(HEADER_LEN + meta_json.len() + t.len() * T::DTYPE.size_of());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&T::DTYPE.code().to_le_bytes());
    out.extend_from_slice(&4u32.to_le_bytes());
    for d in s.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.extend_from_slice(&meta_len.to_le_bytes());
    out.extend_from_slice(&meta_json);
    for &v in t.data() {
        v.write_le(&mut out);
    }
    Ok(out)
}

/// Bounds-checked little-endian reader that reports failure offsets.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    base: u64,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8], base: u64) -> Self {
        Reader { bytes, pos: 0, base }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.base + self.pos as u64
    }

    pub(crate) fn position(&self) -> usize {
        self.pos
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if available < n {
            return Err(Error::Corrupt {
                offset: self.offset(),
                msg: format!("truncated {what}: need {n} bytes, {available} available"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

/// Decodes one tensor record starting at the reader's position.
pub(crate) fn read_record(r: &mut Reader<'_>) -> Result<(AnyTensor, TensorMeta)> {
    let start = r.offset();
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {magic:?} at byte offset {start}, expected \"FFTN\""
        )));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported tensor file version {version}")));
    }
    let code_offset = r.offset();
    let code = r.u32("dtype code")?;
    let dtype = Dtype::from_code(code).ok_or_else(|| {
        Error::Format(format!("unknown dtype code {code} at byte offset {code_offset}"))
    })?;
    let rank = r.u32("rank")?;
    if rank != 4 {
        return Err(Error::Format(format!("unsupported rank {rank}, expected 4")));
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        let dims_offset = r.offset();
        *d = usize::try_from(r.u64("dims")?).map_err(|_| Error::Corrupt {
            offset: dims_offset,
            msg: "dimension does not fit in memory".into(),
        })?;
    }
    let shape = Shape4::new(dims[0], dims[1], dims[2], dims[3]);
    let meta_len = r.u32("metadata length")? as usize;
    let meta_offset = r.offset();
    let meta: TensorMeta = serde_json::from_slice(r.take(meta_len, "metadata")?).map_err(|e| {
        Error::Corrupt {
            offset: meta_offset,
            msg: format!("metadata is not valid JSON: {e}"),
        }
    })?;
    let numel = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Corrupt {
            offset: start + 16,
            msg: format!("invalid dims {shape}"),
        })?;
    let payload_len = numel
        .checked_mul(dtype.size_of())
        .ok_or_else(|| Error::Corrupt {
            offset: start + 16,
            msg: "payload size overflows".into(),
        })?;
    let payload = r.take(payload_len, "payload")?;
    let tensor = match dtype {
        Dtype::F32 => AnyTensor::F32(decode_payload(shape, payload)?),
        Dtype::F64 => AnyTensor::F64(decode_payload(shape, payload)?),
    };
    Ok((tensor, meta))
}

fn decode_payload<T: Scalar>(shape: Shape4, payload: &[u8]) -> Result<Tensor4<T>> {
    let data = payload
        .chunks_exact(T::DTYPE.size_of())
        .map(T::read_le)
        .collect();
    Tensor4::from_vec(shape, data)
}

/// Decodes a complete tensor file image; trailing bytes are an error.
pub fn decode_tensor(bytes: &[u8]) -> Result<(AnyTensor, TensorMeta)> {
    let mut r = Reader::new(bytes, 0);
    let out = read_record(&mut r)?;
    if r.position() != bytes.len() {
        return Err(Error::Corrupt {
            offset: r.offset(),
            msg: format!("{} trailing bytes after payload", bytes.len() - r.position()),
        });
    }
    Ok(out)
}

pub fn save_tensor<T: Scalar>(path: impl AsRef<Path>, t: &Tensor4<T>, meta: &TensorMeta) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_tensor(t, meta)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_tensor_any(path: impl AsRef<Path>) -> Result<(AnyTensor, TensorMeta)> {
    let path = path.as_ref();
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingFile(path.to_path_buf()))
        }
        Err(e) => return Err(Error::io(path, e)),
    };
    decode_tensor(&bytes)
}

/// Loads a tensor file, converting to `T` when the stored dtype differs.
pub fn load_tensor<T: Scalar>(path: impl AsRef<Path>) -> Result<(Tensor4<T>, TensorMeta)> {
    let (t, meta) = load_tensor_any(path)?;
    Ok((t.into_dtype(), meta))
}
