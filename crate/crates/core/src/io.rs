//! Single-file container shared by datasets and checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset 0   8 bytes   magic (ASCII, e.g. "MTRLDAT1")
//! offset 8   u64       header length H in bytes
//! offset 16  H bytes   UTF-8 JSON header
//! offset 16+H          payload: flat array of IEEE-754 f64, little-endian
//! ```
//!
//! The payload length is implied by the remaining bytes and must be a
//! multiple of 8. The JSON header documents the payload ordering.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn encode_container<H: Serialize>(magic: &[u8; 8], header: &H, payload: &[f64]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(16 + json.len() + payload.len() * 8);
    out.extend_from_slice(magic);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for x in payload {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_container<H: DeserializeOwned>(magic: &[u8; 8], bytes: &[u8]) -> Result<(H, Vec<f64>)> {
    if bytes.len() < 16 || &bytes[..8] != magic {
        return Err(Error::Format(format!(
            "expected magic {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() < len {
        return Err(Error::Format("truncated header".into()));
    }
    let header = serde_json::from_slice(&body[..len])?;
    let blob = &body[len..];
    if !blob.len().is_multiple_of(8) {
        return Err(Error::Format(format!(
            "payload of {} bytes is not a whole number of f64",
            blob.len()
        )));
    }
    let payload = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((header, payload))
}

/// Writes to a sibling temp file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", file_name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_round_trip() {
        let payload = vec![1.5, -0.0, f64::MIN_POSITIVE, 3.0e300];
        let bytes = encode_container(b"TESTMAG1", &serde_json::json!({"n": 4}), &payload).unwrap();
        let (h, p): (serde_json::Value, Vec<f64>) = decode_container(b"TESTMAG1", &bytes).unwrap();
        assert_eq!(h["n"], 4);
        assert_eq!(
            p.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            payload.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        let bytes = encode_container(b"TESTMAG1", &1u8, &[1.0]).unwrap();
        assert!(decode_container::<u8>(b"OTHERMAG", &bytes).is_err());
        assert!(decode_container::<u8>(b"TESTMAG1", &bytes[..bytes.len() - 3]).is_err());
    }
}
