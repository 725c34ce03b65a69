//! File-backed append-only record store.
//!
//! Layout: one directory per table under the store root, each holding a
//! single `rows.jsonl` file with one JSON object per line. Rows are never
//! rewritten. A line without its trailing newline is a torn write and is
//! truncated away when the store is reopened.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::IngestError;

pub const ROWS_FILE: &str = "rows.jsonl";

/// Test hook: the store accepts this many more bytes, writes the prefix of
/// the line that crosses the limit, then refuses every later write.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FaultPlan {
    pub fail_after_bytes: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RecoveryReport {
    /// Tables whose torn tail was cut, with the bytes removed.
    pub truncated: Vec<(String, u64)>,
    pub rows_loaded: usize,
}

struct Table {
    file: File,
    rows: Vec<Value>,
}

pub struct RecordStore {
    root: PathBuf,
    tables: BTreeMap<String, Table>,
    sync: bool,
    budget: Option<u64>,
    crashed: bool,
    recovery: RecoveryReport,
}

/// Table names are used as directory names.
pub fn valid_table_name(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= 128
        && !name.starts_with('.')
        && name
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

fn io_err(path: &Path, e: std::io::Error) -> IngestError {
    IngestError::Store(format!("{}: {e}", path.display()))
}

fn load_table(path: &Path) -> Result<(File, Vec<Value>, u64), IngestError> {
    let mut file = OpenOptions::new()
        .create(true)
        .read(true)
        .append(true)
        .open(path)
        .map_err(|e| io_err(path, e))?;
    let len = file.metadata().map_err(|e| io_err(path, e))?.len();
    let mut reader = BufReader::new(&file);
    let mut rows = Vec::new();
    let mut good = 0u64;
    let mut line = Vec::new();
    loop {
        line.clear();
        let n = reader
            .read_until(b'\n', &mut line)
            .map_err(|e| io_err(path, e))?;
        if n == 0 || !line.ends_with(b"\n") {
            break;
        }
        match serde_json::from_slice::<Value>(&line[..n - 1]) {
            Ok(v) => rows.push(v),
            Err(e) => {
                // a complete but unparsable line is corruption, not a torn write
                return Err(IngestError::Store(format!(
                    "{}: corrupt row at byte {good}: {e}",
                    path.display()
                )));
            }
        }
        good += n as u64;
    }
    let cut = len - good;
    if cut > 0 {
        file.set_len(good).map_err(|e| io_err(path, e))?;
        file.seek(SeekFrom::End(0)).map_err(|e| io_err(path, e))?;
    }
    Ok((file, rows, cut))
}

impl RecordStore {
    /// Opens or creates the store at `root`, recovering every table.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, IngestError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| io_err(&root, e))?;
        let mut tables = BTreeMap::new();
        let mut recovery = RecoveryReport::default();
        let mut entries: Vec<_> = fs::read_dir(&root)
            .map_err(|e| io_err(&root, e))?
            .filter_map(Result::ok)
            .filter(|e| e.path().is_dir())
            .collect();
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let name = entry.file_name().to_string_lossy().into_owned();
            if !valid_table_name(&name) {
                continue;
            }
            let path = entry.path().join(ROWS_FILE);
            if !path.exists() {
                continue;
            }
            let (file, rows, cut) = load_table(&path)?;
            if cut > 0 {
                log::warn!("table {name}: truncated {cut} byte(s) of torn write");
                recovery.truncated.push((name.clone(), cut));
            }
            recovery.rows_loaded += rows.len();
            tables.insert(name, Table { file, rows });
        }
        Ok(Self {
            root,
            tables,
            sync: false,
            budget: None,
            crashed: false,
            recovery,
        })
    }

    /// `fsync` after every append.
    pub fn with_sync(mut self, sync: bool) -> Self {
        self.sync = sync;
        self
    }

    pub fn set_fault(&mut self, plan: FaultPlan) {
        self.budget = plan.fail_after_bytes;
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn recovery(&self) -> &RecoveryReport {
        &self.recovery
    }

    pub fn tables(&self) -> impl Iterator<Item = &str> {
        self.tables.keys().map(String::as_str)
    }

    pub fn rows(&self, table: &str) -> &[Value] {
        self.tables.get(table).map_or(&[], |t| t.rows.as_slice())
    }

    fn table_mut(&mut self, name: &str) -> Result<&mut Table, IngestError> {
        if !self.tables.contains_key(name) {
            if !valid_table_name(name) {
                return Err(IngestError::Store(format!("invalid table name {name:?}")));
            }
            let dir = self.root.join(name);
            fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
            let (file, rows, _) = load_table(&dir.join(ROWS_FILE))?;
            self.tables.insert(name.to_string(), Table { file, rows });
        }
        Ok(self.tables.get_mut(name).expect("inserted above"))
    }

    /// Appends one row. The row is visible in memory only once its line,
    /// newline included, has been written.
    pub fn append(&mut self, table: &str, row: &Value) -> Result<(), IngestError> {
        if self.crashed {
            return Err(IngestError::Crashed);
        }
        let mut line = serde_json::to_vec(row).map_err(|e| IngestError::Store(e.to_string()))?;
        line.push(b'\n');
        let sync = self.sync;
        let budget = self.budget;
        let t = self.table_mut(table)?;
        if let Some(left) = budget {
            if (line.len() as u64) > left {
                let _ = t.file.write_all(&line[..left as usize]);
                let _ = t.file.flush();
                self.crashed = true;
                self.budget = Some(0);
                return Err(IngestError::Crashed);
            }
        }
        t.file
            .write_all(&line)
            .and_then(|_| t.file.flush())
            .and_then(|_| if sync { t.file.sync_data() } else { Ok(()) })
            .map_err(|e| IngestError::Store(format!("append to {table}: {e}")))?;
        t.rows.push(row.clone());
        if let Some(left) = self.budget.as_mut() {
            *left -= line.len() as u64;
        }
        Ok(())
    }

    /// Every table as its raw file bytes; two stores with equal snapshots
    /// hold identical state.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Vec<u8>>, IngestError> {
        self.tables
            .keys()
            .map(|name| {
                let path = self.root.join(name).join(ROWS_FILE);
                fs::read(&path)
                    .map(|b| (name.clone(), b))
                    .map_err(|e| io_err(&path, e))
            })
            .collect()
    }
}
