//! Binary checkpoint container.
//!
//! Layout:
//!
//! ```text
//! "AGMCKPT1"                     8 bytes, magic
//! header length                  u64 little-endian
//! header                         UTF-8 JSON
//! data                           little-endian f64, blocks back to back
//! ```
//!
//! The JSON header holds the format version, the config snapshot, the step
//! counter, the RNG state, free-form metadata, and a block directory of
//! `{name, shape, offset}` entries, with `offset` counted in bytes from the
//! start of the data section.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RngState;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AGMCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: serde_json::Value,
    pub step: u64,
    pub rng: RngState,
    pub meta: serde_json::Value,
    pub blocks: Vec<Block>,
}

impl Checkpoint {
    /// All blocks whose name starts with `prefix/`, with the prefix stripped.
    pub fn group(&self, prefix: &str) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let p = format!("{prefix}/");
        self.blocks
            .iter()
            .filter_map(|b| {
                b.name
                    .strip_prefix(&p)
                    .map(|n| (n.to_string(), b.shape.clone(), b.values.clone()))
            })
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct BlockEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: serde_json::Value,
    step: u64,
    rng: RngState,
    meta: serde_json::Value,
    blocks: Vec<BlockEntry>,
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut offset = 0u64;
    let mut entries = Vec::with_capacity(ckpt.blocks.len());
    for b in &ckpt.blocks {
        if b.shape.iter().product::<usize>() != b.values.len() {
            return Err(Error::InvalidShape {
                shape: b.shape.clone(),
                len: b.values.len(),
            });
        }
        entries.push(BlockEntry {
            name: b.name.clone(),
            shape: b.shape.clone(),
            offset,
        });
        offset += 8 * b.values.len() as u64;
    }
    let header = serde_json::to_vec(&Header {
        format_version: CHECKPOINT_VERSION,
        config: ckpt.config.clone(),
        step: ckpt.step,
        rng: ckpt.rng,
        meta: ckpt.meta.clone(),
        blocks: entries,
    })?;
    let mut out = Vec::with_capacity(16 + header.len() + offset as usize);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for b in &ckpt.blocks {
        for v in &b.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let fail = |reason: String| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 16 {
        return Err(fail(format!("truncated: {} bytes", bytes.len())));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(fail("bad magic bytes".into()));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let data_start = 16usize
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| fail("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&bytes[16..data_start]).map_err(|e| fail(format!("header: {e}")))?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(fail(format!(
            "format version {} (expected {CHECKPOINT_VERSION})",
            header.format_version
        )));
    }
    let data = &bytes[data_start..];
    let mut blocks = Vec::with_capacity(header.blocks.len());
    for e in header.blocks {
        let len = e.shape.iter().product::<usize>();
        let start = e.offset as usize;
        let end = start
            .checked_add(8 * len)
            .filter(|&end| end <= data.len())
            .ok_or_else(|| fail(format!("truncated data in block {}", e.name)))?;
        let values = data[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        blocks.push(Block {
            name: e.name,
            shape: e.shape,
            values,
        });
    }
    Ok(Checkpoint {
        config: header.config,
        step: header.step,
        rng: header.rng,
        meta: header.meta,
        blocks,
    })
}

/// Writes to a sibling temp file and renames it into place.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = encode_checkpoint(ckpt)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("partial");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::Checkpoint {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    decode_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            config: serde_json::json!({"steps": 3}),
            step: 42,
            rng: RngState([1, 2, 3, u64::MAX]),
            meta: serde_json::json!({"adam_t": 42}),
            blocks: vec![
                Block {
                    name: "drift/out.w".into(),
                    shape: vec![2, 2],
                    values: vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300],
                },
                Block {
                    name: "potential/head.b".into(),
                    shape: vec![1],
                    values: vec![std::f64::consts::PI],
                },
            ],
        }
    }

    #[test]
    fn file_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.agmckpt");
        let c = sample();
        save_checkpoint(&path, &c).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.step, 42);
        assert_eq!(back.rng, c.rng);
        for (a, b) in c.blocks.iter().zip(&back.blocks) {
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.values), bits(&b.values));
        }
        assert_eq!(back.group("drift").len(), 1);
    }

    #[test]
    fn corrupt_files_rejected() {
        let p = Path::new("mem");
        let good = encode_checkpoint(&sample()).unwrap();
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad_magic, p), Err(Error::Checkpoint { .. })));
        assert!(decode_checkpoint(&good[..good.len() - 3], p).is_err());
        assert!(decode_checkpoint(&good[..12], p).is_err());

        let needle = b"\"format_version\":1";
        let at = good.windows(needle.len()).position(|w| w == needle).unwrap();
        let mut future = good.clone();
        future[at + needle.len() - 1] = b'9';
        let err = decode_checkpoint(&future, p).unwrap_err().to_string();
        assert!(err.contains("format version"), "{err}");
    }

    proptest! {
        #[test]
        fn arbitrary_values_round_trip(values in proptest::collection::vec(any::<f64>(), 0..40), step in any::<u64>()) {
            let c = Checkpoint {
                config: serde_json::Value::Null,
                step,
                rng: RngState([step, 1, 2, 3]),
                meta: serde_json::Value::Null,
                blocks: vec![Block { name: "x".into(), shape: vec![values.len()], values: values.clone() }],
            };
            let back = decode_checkpoint(&encode_checkpoint(&c).unwrap(), Path::new("mem")).unwrap();
            let bits: Vec<u64> = back.blocks[0].values.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(bits, values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(back.step, step);
        }
    }
}
