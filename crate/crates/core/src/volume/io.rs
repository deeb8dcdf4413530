//! Volume file format: one UTF-8 JSON header line followed by the raw
//! little-endian `f32` payload, x-fastest.
//!
//! ```text
//! {"dims":[x,y,z],"spacing":[sx,sy,sz],"dtype":"f32le","landmarks":{"name":[px,py,pz]}}\n
//! <x*y*z little-endian f32>
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Volume;
use crate::{Error, Result};

const DTYPE: &str = "f32le";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dims: [usize; 3],
    spacing: [f64; 3],
    dtype: String,
    landmarks: BTreeMap<String, [f64; 3]>,
}

fn header_err(field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::format("volume header", field, reason)
}

/// Missing and unknown keys are reported by name.
fn parse_header(line: &[u8]) -> Result<Header> {
    let text = std::str::from_utf8(line).map_err(|e| header_err("header", e.to_string()))?;
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| header_err("header", e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| header_err("header", "expected a JSON object"))?;
    for key in ["dims", "spacing", "dtype", "landmarks"] {
        if !obj.contains_key(key) {
            return Err(header_err(key, "missing"));
        }
    }
    for key in obj.keys() {
        if !matches!(key.as_str(), "dims" | "spacing" | "dtype" | "landmarks") {
            return Err(header_err(key.clone(), "unknown key"));
        }
    }
    let field = |key: &str| obj[key].clone();
    let dims: [usize; 3] =
        serde_json::from_value(field("dims")).map_err(|e| header_err("dims", e.to_string()))?;
    let spacing: [f64; 3] = serde_json::from_value(field("spacing"))
        .map_err(|e| header_err("spacing", e.to_string()))?;
    let dtype: String =
        serde_json::from_value(field("dtype")).map_err(|e| header_err("dtype", e.to_string()))?;
    let landmarks: BTreeMap<String, [f64; 3]> = serde_json::from_value(field("landmarks"))
        .map_err(|e| header_err("landmarks", e.to_string()))?;
    if dtype != DTYPE {
        return Err(header_err("dtype", format!("unsupported `{dtype}`, expected `{DTYPE}`")));
    }
    Ok(Header {
        dims,
        spacing,
        dtype,
        landmarks,
    })
}

/// Decode a complete volume file held in memory.
pub fn decode_volume(bytes: &[u8]) -> Result<Volume> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| header_err("header", "no terminating newline"))?;
    let header = parse_header(&bytes[..newline])?;
    let payload = &bytes[newline + 1..];
    let count = header
        .dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| header_err("dims", "voxel count overflows"))?
        / 4;
    if header.dims.contains(&0) {
        return Err(header_err("dims", "every axis needs at least one voxel"));
    }
    if payload.len() != count * 4 {
        return Err(Error::format(
            "volume payload",
            "data",
            format!(
                "dims {:?} need {} bytes, found {}",
                header.dims,
                count * 4,
                payload.len()
            ),
        ));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::format(
            "volume payload",
            "data",
            format!("non-finite value at voxel {i}"),
        ));
    }
    Volume::new(header.dims, header.spacing, data, header.landmarks).map_err(|e| match e {
        Error::Config { field, reason } => header_err(field, reason),
        other => other,
    })
}

pub fn read_volume<R: Read>(mut reader: R) -> Result<Volume> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    decode_volume(&bytes)
}

pub fn write_volume<W: Write>(v: &Volume, mut writer: W) -> Result<()> {
    let header = Header {
        dims: v.dims(),
        spacing: v.spacing(),
        dtype: DTYPE.to_string(),
        landmarks: v.landmarks().clone(),
    };
    serde_json::to_writer(&mut writer, &header).map_err(std::io::Error::from)?;
    writer.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(v.data().len() * 4);
    for x in v.data() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    writer.write_all(&buf)?;
    writer.flush()?;
    Ok(())
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    read_volume(BufReader::new(File::open(path)?))
}

pub fn save_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    write_volume(v, BufWriter::new(File::create(path)?))
}
