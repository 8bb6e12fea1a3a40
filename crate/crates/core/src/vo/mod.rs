//! Append-only measurement repository.
//!
//! Records live in a single JSON-lines log. A write is acknowledged only
//! after the line is on disk (`fsync`); an in-memory index is rebuilt from
//! the log on open. A torn final line left by a crash is discarded.

pub mod format;

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, ErrorCode, Result};
use crate::model::{Layer, MeasurementKind, OutputFormat, ProcessId, Row, SessionId, TaskId, TimestampUs};

pub const LOG_FILE: &str = "vo.log";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VoKey {
    pub session_id: SessionId,
    pub process_id: ProcessId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_id: Option<TaskId>,
    pub layer: Layer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VoEntry {
    pub key: VoKey,
    pub kind: MeasurementKind,
    pub rows: Vec<Row>,
    pub stored_at: TimestampUs,
}

/// Rows of one task (or of the process itself when `task_id` is `None`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RowGroup {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_id: Option<TaskId>,
    pub kind: MeasurementKind,
    pub rows: Vec<Row>,
}

type ProcessKey = (SessionId, ProcessId);
type GroupKey = (Layer, Option<TaskId>);

pub struct VoStore {
    dir: PathBuf,
    log: Mutex<File>,
    index: RwLock<BTreeMap<ProcessKey, BTreeMap<GroupKey, VoEntry>>>,
}

impl VoStore {
    /// Opens (or creates) the repository in `dir`, replaying its log.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir)?;
        let path = dir.join(LOG_FILE);
        let mut file = OpenOptions::new().create(true).read(true).append(true).open(&path)?;

        let mut index: BTreeMap<ProcessKey, BTreeMap<GroupKey, VoEntry>> = BTreeMap::new();
        let mut good_len = 0u64;
        {
            let mut reader = BufReader::new(&file);
            let mut line = String::new();
            loop {
                line.clear();
                let n = reader.read_line(&mut line)?;
                if n == 0 {
                    break;
                }
                if !line.ends_with('\n') {
                    // torn tail from an interrupted append
                    break;
                }
                let entry: VoEntry = match serde_json::from_str(line.trim_end()) {
                    Ok(e) => e,
                    Err(e) => {
                        return Err(Error::new(
                            ErrorCode::IoError,
                            format!("corrupt repository log at byte {good_len}: {e}"),
                        ))
                    }
                };
                good_len += n as u64;
                let pk = (entry.key.session_id.clone(), entry.key.process_id.clone());
                let gk = (entry.key.layer, entry.key.task_id.clone());
                index.entry(pk).or_default().insert(gk, entry);
            }
        }
        if file.metadata()?.len() != good_len {
            file.set_len(good_len)?;
            file.seek(SeekFrom::End(0))?;
            file.sync_all()?;
        }

        Ok(Self {
            dir,
            log: Mutex::new(file),
            index: RwLock::new(index),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Appends one record. Durable before it returns `Ok`.
    pub fn store(&self, key: VoKey, kind: MeasurementKind, rows: Vec<Row>) -> Result<()> {
        if rows.is_empty() {
            return Err(Error::param("refusing to store an empty row set"));
        }
        let pk = (key.session_id.clone(), key.process_id.clone());
        let gk = (key.layer, key.task_id.clone());
        let mut log = self.log.lock().expect("repository log lock poisoned");
        if self.contains_locked(&pk, &gk) {
            return Err(Error::new(ErrorCode::DuplicateKey, format!("{key:?} already stored")));
        }
        let entry = VoEntry {
            key,
            kind,
            rows,
            stored_at: crate::model::now_us(),
        };
        let mut line = serde_json::to_vec(&entry)
            .map_err(|e| Error::new(ErrorCode::Internal, e.to_string()))?;
        line.push(b'\n');
        log.write_all(&line)?;
        log.sync_data()?;
        self.index
            .write()
            .expect("repository index lock poisoned")
            .entry(pk)
            .or_default()
            .insert(gk, entry);
        Ok(())
    }

    fn contains_locked(&self, pk: &ProcessKey, gk: &GroupKey) -> bool {
        self.index
            .read()
            .expect("repository index lock poisoned")
            .get(pk)
            .is_some_and(|groups| groups.contains_key(gk))
    }

    pub fn contains(&self, key: &VoKey) -> bool {
        self.contains_locked(
            &(key.session_id.clone(), key.process_id.clone()),
            &(key.layer, key.task_id.clone()),
        )
    }

    /// All groups of one layer of a process. An unknown process yields an
    /// empty list rather than an error.
    pub fn retrieve(&self, session: &SessionId, process: &ProcessId, layer: Layer) -> Vec<RowGroup> {
        let index = self.index.read().expect("repository index lock poisoned");
        index
            .get(&(session.clone(), process.clone()))
            .map(|groups| {
                groups
                    .iter()
                    .filter(|((l, _), _)| *l == layer)
                    .map(|((_, task), e)| RowGroup {
                        task_id: task.clone(),
                        kind: e.kind,
                        rows: e.rows.clone(),
                    })
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Every (session, process) pair with stored data.
    pub fn processes(&self) -> Vec<(SessionId, ProcessId)> {
        self.index
            .read()
            .expect("repository index lock poisoned")
            .keys()
            .cloned()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.index
            .read()
            .expect("repository index lock poisoned")
            .values()
            .map(BTreeMap::len)
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes `<sessionId>/<processId>/<layer>.<csv|xml>[.gz]` under `out`
    /// for every stored layer. Returns the written paths.
    pub fn export(&self, out: impl AsRef<Path>, fmt: OutputFormat, zip: bool) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        for (session, process) in self.processes() {
            for layer in [Layer::Raw, Layer::Processed] {
                let rows = flatten_groups(&self.retrieve(&session, &process, layer));
                if rows.is_empty() {
                    continue;
                }
                let dir = out.as_ref().join(session.as_str()).join(process.as_str());
                std::fs::create_dir_all(&dir)?;
                let mut name = format!("{}.{}", layer.as_str(), fmt.extension());
                if zip {
                    name.push_str(".gz");
                }
                let path = dir.join(name);
                std::fs::write(&path, format::format_output(&rows, fmt, zip)?)?;
                written.push(path);
            }
        }
        Ok(written)
    }
}

/// Concatenates groups, prefixing each row with its `taskId` when present.
pub fn flatten_groups(groups: &[RowGroup]) -> Vec<Row> {
    let mut out = Vec::new();
    for g in groups {
        for r in &g.rows {
            match &g.task_id {
                Some(t) => {
                    let mut row = Row::new();
                    row.insert("taskId".into(), t.as_str().into());
                    row.extend(r.clone());
                    out.push(row);
                }
                None => out.push(r.clone()),
            }
        }
    }
    out
}
