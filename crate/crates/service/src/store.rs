//! Append-only record log: one JSON document per line, synced to disk
//! before a write is acknowledged.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use faultloc::cluster::DbscanParams;
use faultloc::optimize::Prediction;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const STORE_FILE: &str = "store.jsonl";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{}: {}", .0.display(), .1)]
    Io(PathBuf, std::io::Error),
    #[error("{}: line {line}: {reason}", .path.display())]
    Corrupt { path: PathBuf, line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accurate,
    Inaccurate,
    Unsure,
}

impl Verdict {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "accurate" => Some(Self::Accurate),
            "inaccurate" => Some(Self::Inaccurate),
            "unsure" => Some(Self::Unsure),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationVerdict {
    pub outage_id: String,
    pub verdict: Verdict,
    pub reviewer: String,
    pub note: Option<String>,
    pub time: DateTime<Utc>,
}

/// A re-prediction as persisted. `params` is what was clustered, when
/// known; `prediction` is absent when the run failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionEntry {
    pub outage_id: String,
    pub params: Option<DbscanParams>,
    pub prediction: Option<Prediction>,
    pub failure_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StoreRecord {
    Prediction(PredictionEntry),
    Verdict(VerificationVerdict),
}

#[derive(Debug)]
pub struct Store {
    path: PathBuf,
    file: File,
}

impl Store {
    /// Opens (or creates) the log and returns every record in it. A torn
    /// final line left by a crash mid-write is dropped and truncated away;
    /// any other unreadable line is corruption.
    pub fn open(path: &Path) -> Result<(Self, Vec<StoreRecord>), StoreError> {
        let io = |e| StoreError::Io(path.to_path_buf(), e);
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(path).map_err(io)?;
        let mut records = Vec::new();
        let mut good_len = 0u64;
        let mut reader = BufReader::new(&file);
        let mut line = String::new();
        let mut line_no = 0;
        loop {
            line.clear();
            let n = reader.read_line(&mut line).map_err(io)?;
            if n == 0 {
                break;
            }
            line_no += 1;
            if !line.ends_with('\n') {
                log::warn!("{}: dropping torn final line {line_no}", path.display());
                break;
            }
            let record = serde_json::from_str::<StoreRecord>(line.trim_end()).map_err(|e| StoreError::Corrupt {
                path: path.to_path_buf(),
                line: line_no,
                reason: e.to_string(),
            })?;
            records.push(record);
            good_len += n as u64;
        }
        drop(reader);
        if file.metadata().map_err(io)?.len() != good_len {
            file.set_len(good_len).map_err(io)?;
            file.sync_all().map_err(io)?;
        }
        file.seek(SeekFrom::End(0)).map_err(io)?;
        Ok((
            Self {
                path: path.to_path_buf(),
                file,
            },
            records,
        ))
    }

    /// Writes one record and syncs it to disk.
    pub fn append(&mut self, record: &StoreRecord) -> Result<(), StoreError> {
        let mut line = serde_json::to_vec(record).expect("records serialize");
        line.push(b'\n');
        let io = |e| StoreError::Io(self.path.clone(), e);
        self.file.write_all(&line).map_err(io)?;
        self.file.sync_data().map_err(io)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub n_verified: usize,
    pub n_accurate: usize,
    pub accuracy: Option<f64>,
}

/// Verdict history plus the latest verdict per (outage, reviewer).
#[derive(Debug, Clone, Default)]
pub struct VerdictBook {
    history: Vec<VerificationVerdict>,
    latest: BTreeMap<(String, String), Verdict>,
    latest_by_outage: BTreeMap<String, Verdict>,
}

impl VerdictBook {
    pub fn record(&mut self, v: VerificationVerdict) {
        self.latest.insert((v.outage_id.clone(), v.reviewer.clone()), v.verdict);
        self.latest_by_outage.insert(v.outage_id.clone(), v.verdict);
        self.history.push(v);
    }

    pub fn history(&self, outage_id: &str) -> Vec<&VerificationVerdict> {
        self.history.iter().filter(|v| v.outage_id == outage_id).collect()
    }

    /// Most recent verdict on an outage from any reviewer.
    pub fn latest_for(&self, outage_id: &str) -> Option<Verdict> {
        self.latest_by_outage.get(outage_id).copied()
    }

    /// Each reviewer's latest verdict counts once. An outage is accurate or
    /// inaccurate by majority of those votes; ties and unsure-only outages
    /// are verified but left out of the accuracy denominator.
    pub fn stats(&self) -> Stats {
        let mut votes: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for ((outage, _), verdict) in &self.latest {
            let e = votes.entry(outage.as_str()).or_default();
            match verdict {
                Verdict::Accurate => e.0 += 1,
                Verdict::Inaccurate => e.1 += 1,
                Verdict::Unsure => {}
            }
        }
        let n_accurate = votes.values().filter(|(a, i)| a > i).count();
        let n_inaccurate = votes.values().filter(|(a, i)| i > a).count();
        let decided = n_accurate + n_inaccurate;
        Stats {
            n_verified: votes.len(),
            n_accurate,
            accuracy: (decided > 0).then(|| n_accurate as f64 / decided as f64),
        }
    }
}
