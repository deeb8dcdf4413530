//! Checkpoint file: a JSON manifest line followed by every tensor as
//! little-endian `f32`, in manifest order.
//!
//! ```text
//! {"config":{...},"epoch":3,"seed":1,"tensors":[{"name":"trunk.0.weight","shape":[16,3,3,3]},...]}\n
//! <payload>
//! ```

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NetConfig, Network};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: Network<f32>,
    pub epoch: usize,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    config: NetConfig,
    epoch: usize,
    seed: u64,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize, PartialEq, Debug)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

fn bad(field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::format("checkpoint", field, reason)
}

pub fn write_checkpoint<W: Write>(ckpt: &Checkpoint, mut writer: W) -> Result<()> {
    let manifest = Manifest {
        config: ckpt.network.config().clone(),
        epoch: ckpt.epoch,
        seed: ckpt.seed,
        tensors: ckpt
            .network
            .params()
            .iter()
            .map(|p| TensorEntry {
                name: p.name.clone(),
                shape: p.shape.clone(),
            })
            .collect(),
    };
    serde_json::to_writer(&mut writer, &manifest).map_err(std::io::Error::from)?;
    writer.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(ckpt.network.param_count() * 4);
    for p in ckpt.network.params() {
        for v in &p.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    writer.write_all(&buf)?;
    writer.flush()?;
    Ok(())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("manifest", "no terminating newline"))?;
    let text = std::str::from_utf8(&bytes[..newline]).map_err(|e| bad("manifest", e.to_string()))?;
    let manifest: Manifest = serde_json::from_str(text).map_err(|e| bad("manifest", e.to_string()))?;
    manifest.config.validate().map_err(|e| match e {
        Error::Config { field, reason } => bad(format!("config.{field}"), reason),
        other => other,
    })?;
    let shapes = manifest.config.param_shapes();
    if manifest.tensors.len() != shapes.len() {
        return Err(bad(
            "tensors",
            format!("expected {} tensors, found {}", shapes.len(), manifest.tensors.len()),
        ));
    }
    for (entry, (name, shape)) in manifest.tensors.iter().zip(&shapes) {
        if &entry.name != name || &entry.shape != shape {
            return Err(bad(
                "tensors",
                format!("expected {name} {shape:?}, found {} {:?}", entry.name, entry.shape),
            ));
        }
    }
    // Checked before allocating so a hostile manifest cannot request a huge network.
    let count = manifest.config.param_count().expect("validated config");
    let payload = &bytes[newline + 1..];
    if Some(payload.len()) != count.checked_mul(4) {
        return Err(bad("payload", format!("expected {count} x 4 bytes, found {}", payload.len())));
    }
    let mut network = Network::<f32>::zeros(manifest.config)?;
    let mut chunks = payload.chunks_exact(4);
    for p in network.params_mut() {
        for v in p.data.iter_mut() {
            let c = chunks.next().expect("length checked");
            *v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            if !v.is_finite() {
                return Err(bad(p.name.clone(), "non-finite value"));
            }
        }
    }
    Ok(Checkpoint {
        network,
        epoch: manifest.epoch,
        seed: manifest.seed,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint(ckpt, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}
