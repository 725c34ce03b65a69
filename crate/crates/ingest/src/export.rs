//! CSV dumps of store tables.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::rows::{parse_row, DataRow, DATA_SUFFIX};
use crate::store::RecordStore;
use crate::IngestError;

fn csv_err(e: csv::Error) -> IngestError {
    IngestError::Store(format!("csv: {e}"))
}

/// Data tables expand to one line per sample; other tables get one line per
/// row with a column per top-level key.
pub fn export_table_csv<W: Write>(
    store: &RecordStore,
    table: &str,
    out: W,
) -> Result<usize, IngestError> {
    let rows = store.rows(table);
    let mut w = csv::Writer::from_writer(out);
    let mut lines = 0;
    if table.ends_with(DATA_SUFFIX) {
        let mut channels: Option<Vec<String>> = None;
        for (i, v) in rows.iter().enumerate() {
            let r: DataRow = parse_row(table, i, v)?;
            let ch = channels.get_or_insert_with(|| {
                let mut head = vec!["node", "session", "seq", "sample", "t_ms"]
                    .into_iter()
                    .map(String::from)
                    .collect::<Vec<_>>();
                head.extend(r.ch.iter().cloned());
                let _ = w.write_record(&head);
                r.ch.clone()
            });
            if *ch != r.ch {
                return Err(IngestError::Store(format!(
                    "{table} row {i}: channel layout changed"
                )));
            }
            for (j, s) in r.samples.iter().enumerate() {
                let idx = r.seq as u64 * r.n as u64 + j as u64;
                let t_ms = r.t0_ms as f64 + idx as f64 * 1e3 / r.fs;
                let mut rec = vec![
                    r.node.clone(),
                    r.session.clone(),
                    r.seq.to_string(),
                    idx.to_string(),
                    format!("{t_ms:.3}"),
                ];
                rec.extend(s.iter().map(|x| format!("{x:.6}")));
                w.write_record(&rec).map_err(csv_err)?;
                lines += 1;
            }
        }
    } else {
        let keys: BTreeSet<&str> = rows
            .iter()
            .filter_map(Value::as_object)
            .flat_map(|o| o.keys().map(String::as_str))
            .collect();
        w.write_record(&keys).map_err(csv_err)?;
        for v in rows {
            let rec: Vec<String> = keys
                .iter()
                .map(|k| match v.get(*k) {
                    None | Some(Value::Null) => String::new(),
                    Some(Value::String(s)) => s.clone(),
                    Some(other) => other.to_string(),
                })
                .collect();
            w.write_record(&rec).map_err(csv_err)?;
            lines += 1;
        }
    }
    w.flush().map_err(|e| IngestError::Store(e.to_string()))?;
    Ok(lines)
}

/// Writes `<table>.csv` for every table into `dir`.
pub fn export_all(store: &RecordStore, dir: &Path) -> Result<Vec<PathBuf>, IngestError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| IngestError::Store(format!("{}: {e}", dir.display())))?;
    let tables: Vec<String> = store.tables().map(String::from).collect();
    let mut written = Vec::new();
    for t in tables {
        let path = dir.join(format!("{t}.csv"));
        let f = std::fs::File::create(&path)
            .map_err(|e| IngestError::Store(format!("{}: {e}", path.display())))?;
        export_table_csv(store, &t, std::io::BufWriter::new(f))?;
        written.push(path);
    }
    Ok(written)
}
