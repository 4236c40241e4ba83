//! JSONL readers/writers and the magic-prefixed binary container used for
//! persisted indexes and models.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Reads one JSON object per line. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_jsonl<'a, T, I>(path: &Path, records: I) -> Result<()>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).expect("serializable record");
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

const CONTAINER_VERSION: u16 = 1;

/// Writes `magic`, a little-endian format version and a bincode payload.
pub fn write_binary<T: Serialize>(path: &Path, magic: &[u8; 5], value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(magic)
        .and_then(|_| w.write_all(&CONTAINER_VERSION.to_le_bytes()))
        .map_err(|e| Error::io(path, e))?;
    bincode::serialize_into(&mut w, value).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_binary<T: DeserializeOwned>(path: &Path, magic: &[u8; 5]) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut header = [0u8; 7];
    r.read_exact(&mut header).map_err(|_| Error::Format {
        path: path.to_path_buf(),
        message: "truncated header".into(),
    })?;
    if &header[..5] != magic {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!(
                "expected magic {:?}, found {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(&header[..5])
            ),
        });
    }
    let version = u16::from_le_bytes([header[5], header[6]]);
    if version != CONTAINER_VERSION {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("unsupported version {version} (expected {CONTAINER_VERSION})"),
        });
    }
    bincode::deserialize_from(r).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
