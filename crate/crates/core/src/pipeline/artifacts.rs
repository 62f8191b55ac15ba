//! JSON Lines artifacts. The first line of every file is a header object
//! carrying the artifact kind, the run config hash and the root seed.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{RacError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub kind: String,
    pub config_hash: String,
    pub seed: u64,
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, header: &Header, records: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, header)?;
    w.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a headed JSON Lines file. Blank lines are skipped.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<(Header, Vec<T>)> {
    let path = path.as_ref();
    let malformed = |line: usize, msg: String| RacError::Malformed {
        path: PathBuf::from(path),
        line,
        msg,
    };
    let reader = BufReader::new(File::open(path)?);
    let mut header = None;
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if header.is_none() {
            header = Some(serde_json::from_str(&line).map_err(|e| malformed(i + 1, e.to_string()))?);
        } else {
            records.push(serde_json::from_str(&line).map_err(|e| malformed(i + 1, e.to_string()))?);
        }
    }
    let header = header.ok_or_else(|| malformed(1, "missing header line".into()))?;
    Ok((header, records))
}

/// Reads JSON Lines that may or may not start with a header line, so files
/// written by this crate and hand-made inputs are both accepted.
pub fn read_records<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<(Option<Header>, Vec<T>)> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut header = None;
    let mut records = Vec::new();
    let mut first = true;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if std::mem::take(&mut first) {
            if let Ok(h) = serde_json::from_str::<Header>(&line) {
                header = Some(h);
                continue;
            }
        }
        records.push(serde_json::from_str(&line).map_err(|e| RacError::Malformed {
            path: PathBuf::from(path),
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok((header, records))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    std::fs::write(path, body)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Standard file names inside a work directory.
pub mod names {
    pub const CONFIG: &str = "config.json";
    pub const DOCUMENTS: &str = "documents.jsonl";
    pub const GOLD: &str = "gold.jsonl";
    pub const INDEX: &str = "index.bin";
    pub const VOCAB: &str = "vocab.txt";
    pub const T1: &str = "t1.jsonl";
    pub const SPLIT: &str = "split.json";
    pub const BASE: &str = "base_lm.ckpt";
    pub const GROUNDED: &str = "grounded.ckpt";
    pub const UNCOND: &str = "uncond.ckpt";
    pub const SFT_FULL: &str = "rac_sft_full.ckpt";
    pub const NEGATIVES: &str = "negatives.jsonl";
    pub const T2: &str = "t2.jsonl";
    pub const DPO: &str = "rac_dpo.ckpt";
    pub const REPORT: &str = "report.json";
}
