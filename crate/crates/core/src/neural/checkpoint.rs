//! Checkpoint container: a text header followed by raw weights.
//!
//! ```text
//! STO-CHECKPOINT 1
//! <TOML header: metadata table and one [[network]] per network>
//! %%WEIGHTS%%
//! <little-endian f64 weights: per network, per layer, W then b>
//! ```

use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Layer, LayerSpec, Mlp, NeuralError};

const MAGIC: &str = "STO-CHECKPOINT";
const VERSION: u32 = 1;
const WEIGHTS_MARKER: &str = "%%WEIGHTS%%\n";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("not a checkpoint file (bad magic line)")]
    Magic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("malformed checkpoint header: {0}")]
    Header(String),
    #[error("weight section holds {got} bytes, header requires {expected}")]
    Size { expected: usize, got: usize },
    #[error(transparent)]
    Network(#[from] NeuralError),
    #[error("checkpoint has no network named {0:?}")]
    Missing(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkHeader {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    #[serde(default)]
    metadata: toml::Table,
    #[serde(default)]
    network: Vec<NetworkHeader>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub metadata: toml::Table,
    pub networks: Vec<(String, Mlp)>,
}

impl Checkpoint {
    pub fn new(metadata: toml::Table) -> Self {
        Self {
            metadata,
            networks: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, net: &Mlp) {
        self.networks.push((name.into(), net.clone()));
    }

    pub fn get(&self, name: &str) -> Result<&Mlp, CheckpointError> {
        self.networks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, net)| net)
            .ok_or_else(|| CheckpointError::Missing(name.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            metadata: self.metadata.clone(),
            network: self
                .networks
                .iter()
                .map(|(name, net)| NetworkHeader {
                    name: name.clone(),
                    layers: net.specs(),
                })
                .collect(),
        };
        let text = toml::to_string(&header).expect("checkpoint header serializes");
        let mut out = format!("{MAGIC} {VERSION}\n{text}{WEIGHTS_MARKER}").into_bytes();
        for (_, net) in &self.networks {
            for layer in net.layers() {
                for x in layer.w.iter().chain(&layer.b) {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let marker = WEIGHTS_MARKER.as_bytes();
        let split = bytes
            .windows(marker.len())
            .position(|w| w == marker)
            .ok_or_else(|| CheckpointError::Header("missing weight marker".into()))?;
        let text = std::str::from_utf8(&bytes[..split])
            .map_err(|e| CheckpointError::Header(e.to_string()))?;
        let (first, rest) = text.split_once('\n').ok_or(CheckpointError::Magic)?;
        let version = first
            .strip_prefix(MAGIC)
            .and_then(|v| v.trim().parse::<u32>().ok())
            .ok_or(CheckpointError::Magic)?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let header: Header = toml::from_str(rest).map_err(|e| CheckpointError::Header(e.to_string()))?;

        let body = &bytes[split + marker.len()..];
        let expected: usize = header
            .network
            .iter()
            .flat_map(|n| &n.layers)
            .map(|s| (s.input_dim + 1) * s.output_dim * 8)
            .sum();
        if body.len() != expected {
            return Err(CheckpointError::Size {
                expected,
                got: body.len(),
            });
        }
        let mut values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        let mut networks = Vec::with_capacity(header.network.len());
        for entry in header.network {
            let layers = entry
                .layers
                .iter()
                .map(|&spec| Layer {
                    spec,
                    w: values.by_ref().take(spec.input_dim * spec.output_dim).collect(),
                    b: values.by_ref().take(spec.output_dim).collect(),
                })
                .collect();
            networks.push((entry.name, Mlp::from_layers(layers)?));
        }
        Ok(Self {
            metadata: header.metadata,
            networks,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}
