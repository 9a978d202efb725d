//! `ROMNN1` container: magic, little-endian `u32` manifest length, JSON
//! manifest, then every stored number as little-endian `f64` in manifest order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::network::{Layer, LayerSpec, Sequential};

pub const MAGIC: &[u8; 6] = b"ROMNN1";

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "block", rename_all = "snake_case")]
enum BlockHeader {
    Network { name: String, layers: Vec<LayerSpec> },
    Array { name: String, shape: Vec<usize> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    meta: serde_json::Value,
    blocks: Vec<BlockHeader>,
}

#[derive(Clone, Debug)]
enum Block {
    Network(String, Sequential<f64>),
    Array(String, Vec<usize>, Vec<f64>),
}

/// Named networks and arrays plus free-form JSON metadata.
#[derive(Clone, Debug, Default)]
pub struct ModelFile {
    pub meta: serde_json::Value,
    blocks: Vec<Block>,
}

fn network_values(net: &Sequential<f64>) -> Vec<f64> {
    let mut out = Vec::new();
    for layer in &net.layers {
        out.extend_from_slice(layer.params());
        if let Layer::BatchNorm(bn) = layer {
            out.extend_from_slice(&bn.running_mean);
            out.extend_from_slice(&bn.running_var);
        }
    }
    out
}

impl ModelFile {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            meta,
            blocks: Vec::new(),
        }
    }

    pub fn add_network(&mut self, name: &str, net: &Sequential<f64>) {
        self.blocks.push(Block::Network(name.to_string(), net.clone()));
    }

    pub fn add_array(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) -> Result<()> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(NnError::Format(format!("array {name}: shape {shape:?} does not hold {} values", data.len())));
        }
        self.blocks.push(Block::Array(name.to_string(), shape, data));
        Ok(())
    }

    pub fn network(&self, name: &str) -> Result<Sequential<f64>> {
        self.blocks
            .iter()
            .find_map(|b| match b {
                Block::Network(n, net) if n == name => Some(net.clone()),
                _ => None,
            })
            .ok_or_else(|| NnError::Format(format!("missing network block {name:?}")))
    }

    pub fn array(&self, name: &str) -> Result<(&[usize], &[f64])> {
        self.blocks
            .iter()
            .find_map(|b| match b {
                Block::Array(n, s, d) if n == name => Some((s.as_slice(), d.as_slice())),
                _ => None,
            })
            .ok_or_else(|| NnError::Format(format!("missing array block {name:?}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = Manifest {
            meta: self.meta.clone(),
            blocks: self
                .blocks
                .iter()
                .map(|b| match b {
                    Block::Network(name, net) => BlockHeader::Network {
                        name: name.clone(),
                        layers: net.specs(),
                    },
                    Block::Array(name, shape, _) => BlockHeader::Array {
                        name: name.clone(),
                        shape: shape.clone(),
                    },
                })
                .collect(),
        };
        let json = serde_json::to_vec(&manifest).map_err(|e| NnError::Format(e.to_string()))?;
        let mut out = Vec::with_capacity(json.len() + 64);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for b in &self.blocks {
            let values = match b {
                Block::Network(_, net) => network_values(net),
                Block::Array(_, _, d) => d.clone(),
            };
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NnError::Format("bad magic, not a ROMNN1 file".into()));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let len = u32::from_le_bytes(len) as usize;
        if r.len() < len {
            return Err(NnError::Format("truncated manifest".into()));
        }
        let manifest: Manifest = serde_json::from_slice(&r[..len]).map_err(|e| NnError::Format(e.to_string()))?;
        r = &r[len..];
        let mut take = |n: usize| -> Result<Vec<f64>> {
            if r.len() < n * 8 {
                return Err(NnError::Format("truncated data section".into()));
            }
            let v = r[..n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            r = &r[n * 8..];
            Ok(v)
        };
        let mut blocks = Vec::new();
        for h in manifest.blocks {
            match h {
                BlockHeader::Network { name, layers } => {
                    let mut net = Sequential::from_specs(layers)?;
                    for layer in &mut net.layers {
                        let n = layer.params().len();
                        let v = take(n)?;
                        layer.params_mut().copy_from_slice(&v);
                        if let Layer::BatchNorm(bn) = layer {
                            let c = bn.spec.channels;
                            bn.running_mean = take(c)?;
                            bn.running_var = take(c)?;
                        }
                    }
                    blocks.push(Block::Network(name, net));
                }
                BlockHeader::Array { name, shape } => {
                    let v = take(shape.iter().product())?;
                    blocks.push(Block::Array(name, shape, v));
                }
            }
        }
        if !r.is_empty() {
            return Err(NnError::Format(format!("{} trailing bytes", r.len())));
        }
        Ok(Self {
            meta: manifest.meta,
            blocks,
        })
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::glorot_init;
    use crate::layers::{BatchNormSpec, DenseSpec};
    use crate::Activation;

    #[test]
    fn round_trip_is_exact() {
        let mut net = Sequential::<f64>::from_specs([
            LayerSpec::Dense(DenseSpec {
                in_width: 3,
                out_width: 2,
                activation: Activation::Tanh,
                bias: true,
            }),
            LayerSpec::BatchNorm(BatchNormSpec::new(2)),
        ])
        .unwrap();
        glorot_init(&mut net, 1);
        if let Layer::BatchNorm(bn) = &mut net.layers[1] {
            bn.running_mean = vec![0.25, -0.5];
        }
        let mut f = ModelFile::new(serde_json::json!({"kind": "test"}));
        f.add_network("enc", &net);
        f.add_array("basis", vec![2, 2], vec![1.0, 2.0, 3.0, f64::MIN_POSITIVE]).unwrap();
        let bytes = f.to_bytes().unwrap();
        let g = ModelFile::from_bytes(&bytes).unwrap();
        assert_eq!(g.to_bytes().unwrap(), bytes);
        let n2 = g.network("enc").unwrap();
        assert_eq!(n2.layers[0].params(), net.layers[0].params());
        assert_eq!(g.array("basis").unwrap().1[3], f64::MIN_POSITIVE);
        assert!(g.network("dec").is_err());
        assert!(ModelFile::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
