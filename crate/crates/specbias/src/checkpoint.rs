//! Network checkpoints.
//!
//! Layout: the 8-byte magic `SPBCKPT1`, a little-endian `u32` header length,
//! a JSON header (dimensions, seed, layer order), then every parameter as a
//! little-endian `f64` in the order the header lists.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use specbias_core::net::{Activation, MlpConfig, MlpState};

pub const MAGIC: &[u8; 8] = b"SPBCKPT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub input_dim: usize,
    pub depth: usize,
    pub width: usize,
    pub activation: Activation,
    pub bias_scale: f64,
    pub last_layer_scale: f64,
    pub seed: u64,
    pub param_count: usize,
    pub layers: Vec<TensorEntry>,
}

impl Header {
    pub fn for_config(config: &MlpConfig) -> Self {
        let mut layers = Vec::new();
        for (i, (rows, cols)) in config.layer_shapes().into_iter().enumerate() {
            layers.push(TensorEntry {
                name: format!("layer{}.weight", i + 1),
                rows,
                cols,
            });
            layers.push(TensorEntry {
                name: format!("layer{}.bias", i + 1),
                rows,
                cols: 1,
            });
        }
        Header {
            input_dim: config.input_dim,
            depth: config.depth,
            width: config.width,
            activation: config.activation,
            bias_scale: config.bias_scale,
            last_layer_scale: config.last_layer_scale,
            seed: config.seed,
            param_count: config.param_count(),
            layers,
        }
    }

    pub fn config(&self) -> MlpConfig {
        MlpConfig {
            input_dim: self.input_dim,
            depth: self.depth,
            width: self.width,
            activation: self.activation,
            bias_scale: self.bias_scale,
            last_layer_scale: self.last_layer_scale,
            seed: self.seed,
        }
    }
}

pub fn encode(net: &MlpState) -> Vec<u8> {
    let header = serde_json::to_vec(&Header::for_config(net.config())).expect("header serializes");
    let params = net.flatten();
    let mut out = Vec::with_capacity(12 + header.len() + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

pub fn decode(bytes: &[u8]) -> io::Result<MlpState> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(invalid("not a checkpoint (bad magic)"));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = bytes
        .get(12..12 + len)
        .ok_or_else(|| invalid("truncated header"))?;
    let header: Header =
        serde_json::from_slice(body).map_err(|e| invalid(format!("header: {e}")))?;
    let config = header.config();
    if Header::for_config(&config) != header {
        return Err(invalid(
            "layer table does not match the declared dimensions",
        ));
    }
    let data = &bytes[12 + len..];
    if data.len() != 8 * header.param_count {
        return Err(invalid(format!(
            "expected {} parameters, found {} bytes",
            header.param_count,
            data.len()
        )));
    }
    let params: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    MlpState::unflatten(config, &params).map_err(|e| invalid(e.to_string()))
}

pub fn save(path: &Path, net: &MlpState) -> io::Result<()> {
    fs::write(path, encode(net))
}

pub fn load(path: &Path) -> io::Result<MlpState> {
    decode(&fs::read(path)?)
}
