//! File formats: JSON models and reports, binary tensors, CSV heatmaps.

mod model;
mod report;
mod tensor;

pub use model::{read_manifest, read_model, write_manifest, write_model, LayerRecord, MapRecord, Model, ModelFile, SCHEMA_VERSION};
pub use report::{heatmap_rows, read_report, write_heatmap, write_report, HeatmapRow, PruneReportFile};
pub use tensor::{decode_tensor, encode_tensor, read_dataset, read_tensor, write_dataset, write_tensor, TENSOR_MAGIC};

use std::path::Path;

use crate::error::{Error, Result};

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn parse_error(path: &Path, message: impl ToString) -> Error {
    Error::Parse { path: path.to_path_buf(), message: message.to_string() }
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}
