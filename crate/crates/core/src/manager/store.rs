//! Append-only persisted log: a header line carrying the initial topology,
//! then one twin [`LogEntry`] per line.

use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::twin::{LogEntry, Topology};

pub const STORE_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    kind: String,
    version: u32,
    topology: Topology,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("log i/o: {0}")]
    Io(#[from] io::Error),
    #[error("log header: {0}")]
    Header(String),
    #[error("corrupt log line {line}: {message}")]
    Corrupt { line: usize, message: String },
}

/// Contents of a persisted log.
#[derive(Debug, Clone, PartialEq)]
pub struct PersistedLog {
    pub topology: Topology,
    pub entries: Vec<LogEntry>,
    /// Bytes of complete lines; anything after is a torn write.
    pub valid_len: u64,
    pub torn_tail: bool,
}

/// Reads a persisted log. A final line without its newline is a torn
/// write from a crash and is ignored.
pub fn load_log(path: &Path) -> Result<PersistedLog, StoreError> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    let complete = text.rfind('\n').map_or(0, |i| i + 1);
    let torn_tail = complete < text.len();
    let mut lines = text[..complete].lines().enumerate();
    let header: Header = match lines.next() {
        Some((_, l)) => serde_json::from_str(l).map_err(|e| StoreError::Header(e.to_string()))?,
        None => return Err(StoreError::Header("missing header line".into())),
    };
    if header.kind != "header" {
        return Err(StoreError::Header(format!("expected a header line, found kind {:?}", header.kind)));
    }
    if header.version != STORE_VERSION {
        return Err(StoreError::Header(format!("unsupported version {}", header.version)));
    }
    let entries = lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| StoreError::Corrupt {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect::<Result<Vec<LogEntry>, _>>()?;
    Ok(PersistedLog {
        topology: header.topology,
        entries,
        valid_len: complete as u64,
        torn_tail,
    })
}

/// Writer side of the persisted log; every append is synced to disk.
#[derive(Debug)]
pub struct LogStore {
    file: File,
    path: PathBuf,
}

impl LogStore {
    /// Starts a new log at `path`, replacing any existing file.
    pub fn create(path: &Path, topology: &Topology) -> Result<Self, StoreError> {
        let mut file = File::create(path)?;
        let header = Header {
            kind: "header".into(),
            version: STORE_VERSION,
            topology: topology.clone(),
        };
        let mut line = serde_json::to_vec(&header).map_err(io::Error::other)?;
        line.push(b'\n');
        file.write_all(&line)?;
        file.sync_all()?;
        Ok(Self {
            file,
            path: path.to_path_buf(),
        })
    }

    /// Reopens an existing log for appending, cutting off a torn tail.
    pub fn reopen(path: &Path) -> Result<(Self, PersistedLog), StoreError> {
        let log = load_log(path)?;
        let mut file = OpenOptions::new().read(true).write(true).open(path)?;
        if log.torn_tail {
            file.set_len(log.valid_len)?;
            file.sync_all()?;
        }
        file.seek(SeekFrom::End(0))?;
        Ok((
            Self {
                file,
                path: path.to_path_buf(),
            },
            log,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, entries: &[LogEntry]) -> Result<(), StoreError> {
        if entries.is_empty() {
            return Ok(());
        }
        let mut w = BufWriter::new(&mut self.file);
        crate::twin::write_ndjson(&mut w, entries)?;
        w.flush()?;
        drop(w);
        self.file.sync_data()?;
        Ok(())
    }
}
