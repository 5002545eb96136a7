//! Parameter checkpoints: a little-endian `u64` header length, a JSON
//! header mapping parameter names to shapes and element offsets, then a
//! flat payload of little-endian 32-bit reals.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Header {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<serde_json::Value>,
    params: BTreeMap<String, ParamRecord>,
}

#[derive(Serialize, Deserialize)]
struct ParamRecord {
    shape: Vec<usize>,
    /// Offset into the payload, in f32 elements.
    offset: u64,
}

pub struct Checkpoint {
    pub config: Option<serde_json::Value>,
    /// `(name, shape, data)` in the order the file was written.
    pub entries: Vec<(String, Vec<usize>, Vec<f32>)>,
}

pub fn write_checkpoint<'a>(
    path: impl AsRef<Path>,
    config: Option<serde_json::Value>,
    entries: impl IntoIterator<Item = (&'a str, &'a [usize], &'a [f32])>,
) -> Result<()> {
    let path = path.as_ref();
    let entries: Vec<(&str, &[usize], &[f32])> = entries.into_iter().collect();

    let mut records = BTreeMap::new();
    let mut offset = 0u64;
    for (name, shape, data) in &entries {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "checkpoint entry {name}: data length does not match shape"
        );
        let prior = records.insert(
            name.to_string(),
            ParamRecord {
                shape: shape.to_vec(),
                offset,
            },
        );
        assert!(prior.is_none(), "checkpoint entry {name} written twice");
        offset += data.len() as u64;
    }
    let header = serde_json::to_vec(&Header {
        config,
        params: records,
    })
    .map_err(|e| Error::Checkpoint {
        path: path.into(),
        message: e.to_string(),
    })?;

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    out.write_all(&(header.len() as u64).to_le_bytes())
        .map_err(|e| Error::io(path, e))?;
    out.write_all(&header).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::with_capacity(4096);
    for (_, _, data) in &entries {
        for v in *data {
            buf.extend_from_slice(&v.to_le_bytes());
            if buf.len() >= 4096 {
                out.write_all(&buf).map_err(|e| Error::io(path, e))?;
                buf.clear();
            }
        }
    }
    out.write_all(&buf).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let corrupt = |message: &str| Error::Checkpoint {
        path: path.into(),
        message: message.to_string(),
    };

    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut len_bytes = [0u8; 8];
    reader
        .read_exact(&mut len_bytes)
        .map_err(|e| Error::io(path, e))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    reader
        .read_exact(&mut header_bytes)
        .map_err(|e| Error::io(path, e))?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| corrupt(&format!("invalid header: {e}")))?;

    let mut payload = Vec::new();
    reader
        .read_to_end(&mut payload)
        .map_err(|e| Error::io(path, e))?;
    if payload.len() % 4 != 0 {
        return Err(corrupt("payload is not a whole number of f32 values"));
    }
    let floats: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();

    let mut ordered: Vec<(String, ParamRecord)> = header.params.into_iter().collect();
    ordered.sort_by_key(|(_, r)| r.offset);
    let mut entries = Vec::with_capacity(ordered.len());
    for (name, record) in ordered {
        let len: usize = record.shape.iter().product();
        let start = record.offset as usize;
        let end = start
            .checked_add(len)
            .filter(|&e| e <= floats.len())
            .ok_or_else(|| corrupt(&format!("entry {name} exceeds payload")))?;
        entries.push((name, record.shape, floats[start..end].to_vec()));
    }
    Ok(Checkpoint {
        config: header.config,
        entries,
    })
}
