//! Line-oriented JSON persistence. Every reader error carries the 1-based
//! line number so corrupt files point at themselves.

use super::DatasetError;
use serde::de::DeserializeOwned;
use serde::Serialize;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), DatasetError> {
    let file = File::create(path).map_err(|e| DatasetError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item)
            .map_err(|e| DatasetError::Schema { line: 0, message: e.to_string() })?;
        out.write_all(line.as_bytes()).map_err(|e| DatasetError::io(path, e))?;
        out.write_all(b"\n").map_err(|e| DatasetError::io(path, e))?;
    }
    out.flush().map_err(|e| DatasetError::io(path, e))?;
    Ok(())
}

/// Read a whole JSONL file. An empty file is an empty set; any line that
/// fails to parse is an error naming that line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DatasetError> {
    let file = File::open(path).map_err(|e| DatasetError::io(path, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| DatasetError::io(path, e))?;
        let parsed = serde_json::from_str(&line)
            .map_err(|e| DatasetError::Schema { line: index + 1, message: e.to_string() })?;
        out.push(parsed);
    }
    Ok(out)
}
