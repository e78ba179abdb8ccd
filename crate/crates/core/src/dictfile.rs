//! Dictionary files.
//!
//! Layout:
//!
//! ```text
//! CSDICT 1\n
//! <one line of JSON header>\n
//! <F * C * P * P little-endian f64 kernel values>
//! ```
//!
//! Values are ordered `(feature, channel, row, col)`, `col` fastest. The
//! header carries the geometry, the training config, the config hash and
//! the tool version.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex_prefix, TOOL_VERSION};
use crate::conv::Dictionary;
use crate::error::{Error, Result};
use crate::learning::TrainConfig;

pub const MAGIC: &str = "CSDICT 1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictHeader {
    pub features: usize,
    pub channels: usize,
    pub patch: usize,
    pub stride: usize,
    pub lambda: f64,
    pub value_order: String,
    pub dtype: String,
    pub dict_id: String,
    pub config_hash: String,
    pub tool_version: String,
    pub train: Option<TrainConfig>,
}

/// Content hash of geometry and kernel values.
pub fn dict_id(dict: &Dictionary) -> String {
    let mut h = Sha256::new();
    for v in [dict.features(), dict.channels(), dict.patch(), dict.stride()] {
        h.update((v as u64).to_le_bytes());
    }
    for v in dict.kernels().iter() {
        h.update(v.to_le_bytes());
    }
    hex_prefix(&h.finalize(), 16)
}

pub fn encode_dictionary(
    dict: &Dictionary,
    lambda: f64,
    train: Option<&TrainConfig>,
    config_hash: &str,
) -> Vec<u8> {
    let header = DictHeader {
        features: dict.features(),
        channels: dict.channels(),
        patch: dict.patch(),
        stride: dict.stride(),
        lambda,
        value_order: "feature,channel,row,col".into(),
        dtype: "f64le".into(),
        dict_id: dict_id(dict),
        config_hash: config_hash.into(),
        tool_version: TOOL_VERSION.into(),
        train: train.copied(),
    };
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC.as_bytes());
    out.push(b'\n');
    out.extend(serde_json::to_vec(&header).expect("header serializes"));
    out.push(b'\n');
    for v in dict.kernels().iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_dictionary(bytes: &[u8]) -> std::result::Result<(DictHeader, Dictionary), String> {
    let magic_end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or("missing magic line")?;
    if &bytes[..magic_end] != MAGIC.as_bytes() {
        return Err("not a dictionary file (bad magic)".into());
    }
    let rest = &bytes[magic_end + 1..];
    let header_end = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or("missing header line")?;
    let header: DictHeader =
        serde_json::from_slice(&rest[..header_end]).map_err(|e| format!("header: {e}"))?;
    let payload = &rest[header_end + 1..];
    let len = header.channels * header.patch * header.patch;
    if payload.len() != header.features * len * 8 {
        return Err(format!(
            "payload has {} bytes, expected {}",
            payload.len(),
            header.features * len * 8
        ));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let kernels = Array2::from_shape_vec((header.features, len), values).map_err(|e| e.to_string())?;
    let dict = Dictionary::new(kernels, header.channels, header.patch, header.stride)
        .map_err(|e| e.to_string())?;
    if dict_id(&dict) != header.dict_id {
        return Err("dict_id does not match kernel contents".into());
    }
    Ok((header, dict))
}

pub fn write_dictionary(
    path: &Path,
    dict: &Dictionary,
    lambda: f64,
    train: Option<&TrainConfig>,
    config_hash: &str,
) -> Result<()> {
    std::fs::write(path, encode_dictionary(dict, lambda, train, config_hash))
        .map_err(|e| Error::io(path, e))
}

pub fn read_dictionary(path: &Path) -> Result<(DictHeader, Dictionary)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dictionary(&bytes).map_err(|m| Error::format(path, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::init_dictionary;

    #[test]
    fn round_trip_is_exact() {
        let cfg = TrainConfig {
            features: 5,
            ..TrainConfig::default()
        };
        let d = init_dictionary(&cfg).unwrap();
        let bytes = encode_dictionary(&d, 0.75, Some(&cfg), "abc");
        let (h, back) = decode_dictionary(&bytes).unwrap();
        assert_eq!(back, d);
        assert_eq!(h.lambda, 0.75);
        assert_eq!(h.train, Some(cfg));
        assert_eq!(h.config_hash, "abc");
        assert_eq!(encode_dictionary(&back, 0.75, Some(&cfg), "abc"), bytes);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let d = init_dictionary(&TrainConfig {
            features: 2,
            ..TrainConfig::default()
        })
        .unwrap();
        let bytes = encode_dictionary(&d, 0.5, None, "x");
        assert!(decode_dictionary(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_dictionary(b"NOPE\n{}\n").is_err());
        let mut flipped = bytes.clone();
        let last = flipped.len() - 1;
        flipped[last] ^= 1;
        assert!(decode_dictionary(&flipped).is_err());
    }

    #[test]
    fn id_depends_on_content() {
        let a = init_dictionary(&TrainConfig::default()).unwrap();
        let b = init_dictionary(&TrainConfig {
            init_seed: 99,
            ..TrainConfig::default()
        })
        .unwrap();
        assert_eq!(dict_id(&a), dict_id(&a.clone()));
        assert_ne!(dict_id(&a), dict_id(&b));
    }
}
