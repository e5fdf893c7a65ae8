//! Binary container shared by datasets and trajectory buffers:
//! 8-byte magic, u32 schema version, u64 header length, a JSON header, then
//! a payload of little-endian f64 values.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::{Error, Result};

pub fn encode<H: Serialize>(magic: &[u8; 8], version: u32, header: &H, payload: &[f64]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header).map_err(|e| Error::Shape(e.to_string()))?;
    let mut out = Vec::with_capacity(20 + json.len() + 8 * payload.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode<H: DeserializeOwned>(magic: &[u8; 8], version: u32, bytes: &[u8], origin: &Path) -> Result<(H, Vec<f64>)> {
    let bad = |reason: &str| Error::format(origin, reason.to_string());
    if bytes.len() < 20 || &bytes[..8] != magic {
        return Err(bad("wrong magic"));
    }
    let found = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if found != version {
        return Err(Error::format(origin, format!("schema version {found}, expected {version}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(20..).ok_or_else(|| bad("truncated"))?;
    if body.len() < len || (body.len() - len) % 8 != 0 {
        return Err(bad("truncated header or payload"));
    }
    let header = serde_json::from_slice(&body[..len]).map_err(|e| Error::format(origin, e.to_string()))?;
    let payload = body[len..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((header, payload))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}
