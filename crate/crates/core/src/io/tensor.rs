use std::path::Path;

use super::{parse_error, read_bytes, write_bytes};
use crate::error::{Error, Result};
use crate::tensor::{Dataset, Tensor};

pub const TENSOR_MAGIC: [u8; 4] = *b"PKT1";

/// `PKT1`, little-endian `u32` rank and dims, then little-endian `f64` values.
pub fn encode_tensor(t: &Tensor) -> Result<Vec<u8>> {
    let dims = t
        .shape()
        .iter()
        .map(|&d| u32::try_from(d).map_err(|_| Error::Dimension(format!("dimension {d} exceeds u32"))))
        .collect::<Result<Vec<u32>>>()?;
    let mut out = Vec::with_capacity(8 + 4 * dims.len() + 8 * t.len());
    out.extend_from_slice(&TENSOR_MAGIC);
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn decode(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let word = |at: usize| -> Result<u32> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
            .ok_or_else(|| parse_error(path, "truncated header"))
    };
    let magic: [u8; 4] = bytes.get(..4).ok_or_else(|| parse_error(path, "truncated header"))?.try_into().expect("4 bytes");
    if magic != TENSOR_MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let rank = word(4)? as usize;
    if rank == 0 {
        return Err(parse_error(path, "rank-0 tensors are not supported"));
    }
    let header = rank.checked_mul(4).and_then(|r| r.checked_add(8)).ok_or_else(|| parse_error(path, "rank too large"))?;
    if bytes.len() < header {
        return Err(parse_error(path, "truncated header"));
    }
    let dims: Vec<u32> = (0..rank).map(|i| word(8 + 4 * i)).collect::<Result<_>>()?;
    let count = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize));
    let payload = count.and_then(|c| c.checked_mul(8));
    if payload != Some(bytes.len() - header) {
        return Err(Error::DimOverflow(dims));
    }
    let data = bytes[header..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Tensor::new(dims.iter().map(|&d| d as usize).collect(), data).map_err(|e| parse_error(path, e))
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    decode(bytes, Path::new("<memory>"))
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    write_bytes(path.as_ref(), &encode_tensor(t)?)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    decode(&read_bytes(path)?, path)
}

/// Stores a dataset as one `(N, m, H, W)` tensor.
pub fn write_dataset(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let mut shape = vec![data.len()];
    shape.extend_from_slice(data.example_shape());
    let values: Vec<f64> = data.examples().iter().flat_map(|x| x.data().iter().copied()).collect();
    write_tensor(path, &Tensor::new(shape, values)?)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let t = read_tensor(path)?;
    let [n, m, h, w] = *t.shape() else {
        return Err(parse_error(path, format!("dataset tensor has shape {:?}, expected (N, m, H, W)", t.shape())));
    };
    let per = m * h * w;
    let examples = t
        .data()
        .chunks_exact(per)
        .map(|c| Tensor::new(vec![m, h, w], c.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    debug_assert_eq!(examples.len(), n);
    Dataset::new(examples)
}
