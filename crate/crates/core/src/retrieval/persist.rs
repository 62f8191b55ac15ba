//! On-disk index format. All integers little-endian, strings are a `u32`
//! byte length followed by UTF-8.
//!
//! ```text
//! magic        "RACIX1"
//! num_docs     u64
//! avg_doc_len  f64
//! passages     num_docs x { passage_id, doc_id, text, u32 n, n x token }
//! num_terms    u64
//! terms        num_terms x { term, u32 df, df x (u32 doc, u32 tf) }
//! checksum     SHA-256 over every preceding byte (32 bytes)
//! ```

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde_json::json;
use sha2::{Digest, Sha256};

use super::index::{InvertedIndex, Posting};
use crate::error::{RacError, Result};
use crate::text::Passage;

pub const INDEX_MAGIC: &[u8; 6] = b"RACIX1";

impl InvertedIndex {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(INDEX_MAGIC);
        buf.extend_from_slice(&(self.num_docs() as u64).to_le_bytes());
        buf.extend_from_slice(&self.avg_doc_len().to_le_bytes());
        for p in &self.passages {
            put_str(&mut buf, &p.passage_id);
            put_str(&mut buf, &p.doc_id);
            put_str(&mut buf, &p.text);
            buf.extend_from_slice(&(p.tokens.len() as u32).to_le_bytes());
            for t in &p.tokens {
                put_str(&mut buf, t);
            }
        }
        buf.extend_from_slice(&(self.postings.len() as u64).to_le_bytes());
        for (term, list) in &self.postings {
            put_str(&mut buf, term);
            buf.extend_from_slice(&(list.len() as u32).to_le_bytes());
            for p in list {
                buf.extend_from_slice(&p.doc.to_le_bytes());
                buf.extend_from_slice(&p.tf.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < INDEX_MAGIC.len() + 32 || &bytes[..6] != INDEX_MAGIC {
            return Err(RacError::CorruptHeader("missing RACIX1 magic".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(RacError::Checksum("index file".into()));
        }
        let mut r = Reader { buf: body, pos: 6 };
        let num_docs = r.u64()? as usize;
        let avg = r.f64()?;
        let mut passages = Vec::with_capacity(num_docs.min(1 << 20));
        for _ in 0..num_docs {
            let passage_id = r.string()?;
            let doc_id = r.string()?;
            let text = r.string()?;
            let n = r.u32()? as usize;
            let tokens = (0..n).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
            passages.push(Passage {
                doc_id,
                passage_id,
                tokens,
                text,
            });
        }
        let num_terms = r.u64()? as usize;
        let mut postings = BTreeMap::new();
        for _ in 0..num_terms {
            let term = r.string()?;
            let df = r.u32()? as usize;
            let mut list = Vec::with_capacity(df.min(num_docs));
            for _ in 0..df {
                let doc = r.u32()?;
                let tf = r.u32()?;
                if doc as usize >= num_docs {
                    return Err(RacError::CorruptHeader(format!("posting for `{term}` out of range")));
                }
                list.push(Posting { doc, tf });
            }
            postings.insert(term, list);
        }
        if r.pos != body.len() {
            return Err(RacError::CorruptHeader("trailing bytes after term blocks".into()));
        }
        let index = InvertedIndex::from_parts(passages, postings);
        if index.avg_doc_len().to_bits() != avg.to_bits() {
            return Err(RacError::CorruptHeader("avg_doc_len disagrees with passages".into()));
        }
        Ok(index)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Debug export: a header line then one line per term.
    pub fn export_jsonl(&self, mut out: impl Write) -> Result<()> {
        writeln!(
            out,
            "{}",
            json!({"num_docs": self.num_docs(), "avg_doc_len": self.avg_doc_len(), "num_terms": self.postings.len()})
        )?;
        for (term, list) in &self.postings {
            let entries: Vec<_> = list
                .iter()
                .map(|p| json!([self.passages[p.doc as usize].passage_id, p.tf]))
                .collect();
            writeln!(out, "{}", json!({"term": term, "df": list.len(), "postings": entries}))?;
        }
        Ok(())
    }
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| RacError::CorruptHeader("unexpected end of index".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| RacError::CorruptHeader("invalid UTF-8 in index".into()))
    }
}
