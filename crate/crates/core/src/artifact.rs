//! Binary container shared by model and classifier files, plus digests.
//!
//! Layout: 8-byte magic, `u32` little-endian header length, UTF-8 JSON header,
//! then a flat array of little-endian `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest.iter() {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Digest of the canonical (field-ordered, compact) JSON form of `value`.
pub fn json_digest<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config types serialize infallibly");
    sha256_hex(&bytes)
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub fn encode<H: Serialize>(magic: &[u8; 8], header: &H, values: &[f64]) -> Vec<u8> {
    let header = serde_json::to_vec(header).expect("headers serialize infallibly");
    let mut out = Vec::with_capacity(12 + header.len() + values.len() * 8);
    out.extend_from_slice(magic);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode<H: DeserializeOwned>(
    magic: &[u8; 8],
    bytes: &[u8],
    what: &str,
) -> Result<(H, Vec<f64>)> {
    if bytes.len() < 12 || &bytes[..8] != magic {
        return Err(Error::format(what, "bad magic"));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() < len || !(body.len() - len).is_multiple_of(8) {
        return Err(Error::format(what, "truncated file"));
    }
    let header = serde_json::from_slice(&body[..len]).map_err(|e| Error::format(what, e))?;
    let values = body[len..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, values))
}

pub fn write_file<H: Serialize>(
    path: &Path,
    magic: &[u8; 8],
    header: &H,
    values: &[f64],
) -> Result<()> {
    let bytes = encode(magic, header, values);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_file<H: DeserializeOwned>(
    path: &Path,
    magic: &[u8; 8],
    what: &str,
) -> Result<(H, Vec<f64>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    decode(magic, &bytes, what)
}
