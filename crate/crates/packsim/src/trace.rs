//! Line-delimited document traces.
//!
//! Each non-blank line not starting with `#` is either a bare token count
//! (`1234`) or a JSON object `{"length": 1234, "id": 7, "arrival_batch": 0}`
//! with `id` and `arrival_batch` optional. Missing ids are assigned from the
//! line's record index. Arrival indices are informational only: the loader
//! restamps documents with the global batch that actually loads them.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use log::warn;
use packsim_core::Document;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub docs: Vec<Document>,
    /// Documents cut down to the context window.
    pub truncated: u64,
    /// Tokens removed by truncation.
    pub truncated_tokens: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    length: i64,
    id: Option<u64>,
    arrival_batch: Option<u64>,
}

/// Reads and validates a trace file, truncating lengths above `window`.
pub fn ingest_trace(path: &Path, window: u64) -> Result<Trace> {
    let file = File::open(path).map_err(|source| HarnessError::Read {
        path: path.into(),
        source,
    })?;
    parse_trace(BufReader::new(file), path, window)
}

pub fn parse_trace(reader: impl BufRead, path: &Path, window: u64) -> Result<Trace> {
    let fail = |line: usize, message: String| HarnessError::Trace {
        path: path.into(),
        line,
        message,
    };
    let mut trace = Trace::default();
    let mut seen = HashSet::new();

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|source| HarnessError::Read {
            path: path.into(),
            source,
        })?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let record = if text.starts_with('{') {
            serde_json::from_str::<Record>(text)
                .map_err(|e| fail(lineno, format!("bad record: {e}")))?
        } else {
            let length = text
                .parse::<i64>()
                .map_err(|e| fail(lineno, format!("bad length {text:?}: {e}")))?;
            Record {
                length,
                id: None,
                arrival_batch: None,
            }
        };
        if record.length <= 0 {
            return Err(fail(
                lineno,
                format!("length must be positive, got {}", record.length),
            ));
        }
        let mut length = record.length as u64;
        if length > window {
            warn!(
                "{}:{lineno}: length {length} truncated to {window}",
                path.display()
            );
            trace.truncated += 1;
            trace.truncated_tokens += length - window;
            length = window;
        }
        let id = record.id.unwrap_or(trace.docs.len() as u64);
        if !seen.insert(id) {
            return Err(fail(lineno, format!("duplicate document id {id}")));
        }
        trace
            .docs
            .push(Document::new(id, length, record.arrival_batch.unwrap_or(0)));
    }
    Ok(trace)
}

/// Writes `docs` in the JSON-object form accepted by [`parse_trace`].
pub fn write_trace(path: &Path, docs: &[Document]) -> Result<()> {
    let err = |source| HarnessError::Write {
        path: path.into(),
        source,
    };
    let mut out = std::io::BufWriter::new(File::create(path).map_err(err)?);
    for d in docs {
        let rec = Record {
            length: d.length as i64,
            id: Some(d.id),
            arrival_batch: Some(d.arrival_batch),
        };
        serde_json::to_writer(&mut out, &rec).map_err(|e| err(e.into()))?;
        out.write_all(b"\n").map_err(err)?;
    }
    out.flush().map_err(err)
}
