//! Append-only record of every model exchange the pipeline makes, one JSON
//! object per line.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    /// Assigned on append; strictly increasing.
    pub seq: u64,
    pub action: String,
    /// The agent role that made the exchange.
    pub role: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skill: Option<String>,
    pub attempt: u32,
    pub prompt_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_hash: Option<String>,
    /// `ok`, or why the attempt was not accepted.
    pub outcome: String,
    pub started_ms: u64,
    pub finished_ms: u64,
}

struct Inner {
    records: Vec<ProvenanceRecord>,
    sink: Option<BufWriter<File>>,
}

pub struct Provenance {
    inner: Mutex<Inner>,
}

impl Default for Provenance {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl Provenance {
    pub fn in_memory() -> Self {
        Provenance {
            inner: Mutex::new(Inner {
                records: Vec::new(),
                sink: None,
            }),
        }
    }

    /// Also appends each record to `path` as it happens, so a failed run
    /// still leaves its partial log behind.
    pub fn to_file(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Provenance {
            inner: Mutex::new(Inner {
                records: Vec::new(),
                sink: Some(BufWriter::new(file)),
            }),
        })
    }

    /// Stamps `record.seq` and appends it. Write errors on the file sink are
    /// returned but the in-memory record is kept.
    pub fn append(&self, mut record: ProvenanceRecord) -> std::io::Result<u64> {
        let mut inner = self.inner.lock().expect("provenance lock");
        record.seq = inner.records.len() as u64 + 1;
        let seq = record.seq;
        let line = serde_json::to_string(&record).expect("record serializes");
        inner.records.push(record);
        if let Some(sink) = inner.sink.as_mut() {
            writeln!(sink, "{line}")?;
            sink.flush()?;
        }
        Ok(seq)
    }

    pub fn records(&self) -> Vec<ProvenanceRecord> {
        self.inner.lock().expect("provenance lock").records.clone()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("provenance lock").records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_jsonl(&self) -> String {
        self.records()
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }

    pub fn parse_jsonl(text: &str) -> Result<Vec<ProvenanceRecord>, serde_json::Error> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect()
    }
}
