//! Single-file container: 4-byte magic, `u32` format version, `u64` manifest
//! length, a JSON manifest, then a block of little-endian `f64` values.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

pub fn encode<M: Serialize>(magic: &[u8; 4], manifest: &M, data: &[f64]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(manifest)?;
    let mut out = Vec::with_capacity(16 + json.len() + 8 * data.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode<M: DeserializeOwned>(magic: &[u8; 4], bytes: &[u8]) -> Result<(M, Vec<f64>)> {
    let bad = |msg: &str| Error::Checkpoint(msg.to_string());
    let mut r = bytes;
    let mut head = [0u8; 16];
    r.read_exact(&mut head).map_err(|_| bad("truncated header"))?;
    if &head[..4] != magic {
        return Err(bad(&format!("bad magic, expected {}", String::from_utf8_lossy(magic))));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported format version {version}")));
    }
    let len = u64::from_le_bytes(head[8..16].try_into().unwrap()) as usize;
    if r.len() < len {
        return Err(bad("truncated manifest"));
    }
    let manifest = serde_json::from_slice(&r[..len])?;
    let raw = &r[len..];
    if !raw.len().is_multiple_of(8) {
        return Err(bad("data block is not a whole number of f64 values"));
    }
    let data = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((manifest, data))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

pub fn fingerprint(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_corruption() {
        let bytes = encode(b"TEST", &vec!["a", "b"], &[1.5, -0.25]).unwrap();
        let (m, d): (Vec<String>, Vec<f64>) = decode(b"TEST", &bytes).unwrap();
        assert_eq!(m, ["a", "b"]);
        assert_eq!(d, [1.5, -0.25]);
        assert!(decode::<Vec<String>>(b"NOPE", &bytes).is_err());
        assert!(decode::<Vec<String>>(b"TEST", &bytes[..bytes.len() - 3]).is_err());
        assert!(decode::<Vec<String>>(b"TEST", &bytes[..10]).is_err());
    }
}
