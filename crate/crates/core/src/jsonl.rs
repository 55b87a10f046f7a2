//! Newline-delimited JSON files.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
}

/// Parses every nonblank line. Line numbers in errors are 1-based.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    read_jsonl_with(path, |line| serde_json::from_str(line).map_err(|e| e.to_string()))
}

pub fn read_jsonl_with<T>(path: &Path, parse: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, JsonlError> {
    let io = |source| JsonlError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = fs::File::open(path).map_err(io)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse(&line).map_err(|message| JsonlError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message,
        })?);
    }
    Ok(out)
}

pub fn to_jsonl_string<T: Serialize>(items: impl IntoIterator<Item = T>) -> String {
    let mut s = String::new();
    for item in items {
        s.push_str(&serde_json::to_string(&item).expect("serializable item"));
        s.push('\n');
    }
    s
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), JsonlError> {
    let mut f = fs::File::create(path).map_err(|source| JsonlError::Io {
        path: path.display().to_string(),
        source,
    })?;
    f.write_all(to_jsonl_string(items).as_bytes()).map_err(|source| JsonlError::Io {
        path: path.display().to_string(),
        source,
    })
}
