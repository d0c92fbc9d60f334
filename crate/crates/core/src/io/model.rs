use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{parse_error, read_bytes, to_json, write_bytes};
use crate::error::{Error, Result};
use crate::synth::Manifest;
use crate::tensor::{Activation, ConvLayer, Network};

pub const SCHEMA_VERSION: u32 = 1;

/// A network together with the `(m, H, W)` input it is evaluated on.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub network: Network,
    pub input_shape: Vec<usize>,
}

/// Row-major 1x1 mixing map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapRecord {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub activation: Activation,
    /// Ordered by output channel, input channel, row, column.
    pub weights: Vec<f64>,
    pub comp: Option<MapRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerRecord>,
}

impl From<&Model> for ModelFile {
    fn from(model: &Model) -> Self {
        let layers = model
            .network
            .layers()
            .iter()
            .map(|l| LayerRecord {
                in_channels: l.in_channels(),
                out_channels: l.out_channels(),
                kernel_size: l.kernel_size(),
                activation: l.activation(),
                weights: l.weights().to_vec(),
                comp: l.comp().map(|g| MapRecord {
                    rows: g.nrows(),
                    cols: g.ncols(),
                    data: g.transpose().as_slice().to_vec(),
                }),
            })
            .collect();
        ModelFile { schema_version: SCHEMA_VERSION, input_shape: model.input_shape.clone(), layers }
    }
}

impl ModelFile {
    pub fn into_model(self) -> Result<Model> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema { found: self.schema_version, expected: SCHEMA_VERSION });
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for (c, rec) in self.layers.into_iter().enumerate() {
            let expected = rec.out_channels * rec.in_channels * rec.kernel_size * rec.kernel_size;
            if rec.weights.len() != expected {
                return Err(Error::LengthMismatch { layer: c, field: "weights", expected, found: rec.weights.len() });
            }
            let mut layer = ConvLayer::new(rec.in_channels, rec.out_channels, rec.kernel_size, rec.weights, rec.activation)?;
            if let Some(map) = rec.comp {
                if map.data.len() != map.rows * map.cols {
                    return Err(Error::LengthMismatch {
                        layer: c,
                        field: "comp",
                        expected: map.rows * map.cols,
                        found: map.data.len(),
                    });
                }
                layer = layer.with_comp(DMatrix::from_row_slice(map.rows, map.cols, &map.data))?;
            }
            layers.push(layer);
        }
        let network = Network::new(layers)?;
        match self.input_shape.as_slice() {
            [m, h, w] if *h > 0 && *w > 0 => {
                if *m != network.input_channels() {
                    return Err(Error::Chain { layer: 0, expected: network.input_channels(), found: *m });
                }
            }
            other => return Err(Error::Dimension(format!("input shape {other:?} is not (m, H, W)"))),
        }
        Ok(Model { network, input_shape: self.input_shape })
    }
}

fn check_finite(model: &Model) -> Result<()> {
    for (c, l) in model.network.layers().iter().enumerate() {
        let finite = l.weights().iter().chain(l.comp().into_iter().flat_map(|g| g.iter())).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config(format!("layer {c} has non-finite weights")));
        }
    }
    Ok(())
}

pub fn write_model(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    check_finite(model)?;
    write_bytes(path.as_ref(), &to_json(&ModelFile::from(model))?)
}

pub fn read_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let value: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| parse_error(path, e))?;
    let version = value
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| parse_error(path, "missing schema_version"))?;
    if version != u64::from(SCHEMA_VERSION) {
        return Err(Error::Schema { found: u32::try_from(version).unwrap_or(u32::MAX), expected: SCHEMA_VERSION });
    }
    let file: ModelFile = serde_json::from_value(value).map_err(|e| parse_error(path, e))?;
    file.into_model()
}

pub fn write_manifest(path: impl AsRef<Path>, manifest: &Manifest) -> Result<()> {
    write_bytes(path.as_ref(), &to_json(manifest)?)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    serde_json::from_slice(&read_bytes(path)?).map_err(|e| parse_error(path, e))
}
