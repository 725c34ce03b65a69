//! Typed rows of the data, info and quarantine tables.

use std::collections::BTreeMap;

use bridgemon_core::fleetstats::AnalysisRecord;
use bridgemon_core::nodesim::Session;
use bridgemon_core::wire::{Packet, SessionState, TriggerCause};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::assembly::SessionKey;
use crate::store::RecordStore;
use crate::IngestError;

pub const DATA_SUFFIX: &str = "_data";
pub const INFO_SUFFIX: &str = "_info";
pub const QUARANTINE_SUFFIX: &str = "_quarantine";

/// Bridge prefix of a `<BRIDGE>_data` table name.
pub fn bridge_of(db: &str) -> Result<&str, IngestError> {
    db.strip_suffix(DATA_SUFFIX)
        .filter(|b| !b.is_empty() && crate::store::valid_table_name(db))
        .ok_or_else(|| IngestError::Schema(format!("db {db:?} is not a <BRIDGE>_data table")))
}

pub fn info_table(bridge: &str) -> String {
    format!("{bridge}{INFO_SUFFIX}")
}

pub fn quarantine_table(bridge: &str) -> String {
    format!("{bridge}{QUARANTINE_SUFFIX}")
}

/// One accepted packet. `samples` holds the real rows, padding removed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataRow {
    pub node: String,
    pub session: String,
    pub seq: u32,
    pub total: u32,
    pub t0_ms: i64,
    pub fs: f64,
    pub ch: Vec<String>,
    pub n: u32,
    pub pad: u32,
    pub samples: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<SessionState>,
    pub sha256: String,
    pub recv_ms: i64,
}

impl DataRow {
    pub fn from_packet(p: &Packet, sha256: String, recv_ms: i64) -> Self {
        Self {
            node: p.node.clone(),
            session: p.session.clone(),
            seq: p.seq,
            total: p.total,
            t0_ms: p.t0_ms,
            fs: p.fs,
            ch: p.ch.clone(),
            n: p.n,
            pad: p.pad,
            samples: p.samples().to_vec(),
            state: p.state.clone(),
            sha256,
            recv_ms,
        }
    }

    /// The packet this row was stored from.
    pub fn to_packet(&self, db: &str) -> Packet {
        let mut data = self.samples.clone();
        data.resize(self.n as usize, vec![0.0; self.ch.len()]);
        Packet {
            db: db.into(),
            node: self.node.clone(),
            session: self.session.clone(),
            seq: self.seq,
            total: self.total,
            last: self.seq + 1 == self.total,
            n: self.n,
            pad: self.pad,
            t0_ms: self.t0_ms,
            fs: self.fs,
            ch: self.ch.clone(),
            data,
            state: self.state.clone(),
        }
    }

    pub fn key(&self) -> SessionKey {
        SessionKey {
            node: self.node.clone(),
            session: self.session.clone(),
        }
    }
}

/// Node housekeeping reported with a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateRow {
    pub node: String,
    pub session: String,
    pub t0_ms: i64,
    pub cause: TriggerCause,
    pub battery_v: f64,
    pub solar_ma: f64,
    pub temp_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InfoRow {
    State(StateRow),
    Analysis(AnalysisRecord),
}

impl InfoRow {
    pub fn key(&self) -> SessionKey {
        let (node, session) = match self {
            InfoRow::State(s) => (&s.node, &s.session),
            InfoRow::Analysis(a) => (&a.node, &a.session),
        };
        SessionKey {
            node: node.clone(),
            session: session.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuarantineRow {
    pub node: String,
    pub session: String,
    pub seq: u32,
    pub reason: String,
    pub recv_ms: i64,
}

pub fn to_value<T: Serialize>(row: &T) -> Value {
    serde_json::to_value(row).expect("row types serialise to JSON")
}

pub fn parse_row<T: for<'de> Deserialize<'de>>(
    table: &str,
    i: usize,
    v: &Value,
) -> Result<T, IngestError> {
    T::deserialize(v).map_err(|e| IngestError::Store(format!("{table} row {i}: {e}")))
}

/// Everything stored about one session.
#[derive(Debug, Clone, Default)]
pub struct StoredSession {
    pub bridge: String,
    pub data: BTreeMap<u32, DataRow>,
    pub state: Option<StateRow>,
    pub analysis: Option<AnalysisRecord>,
    pub quarantine: Option<QuarantineRow>,
}

impl StoredSession {
    pub fn complete(&self) -> bool {
        self.data.values().next().is_some_and(|r| {
            self.data.len() == r.total as usize && self.data.keys().copied().eq(0..r.total)
        })
    }

    /// Rebuilds the conditioned session; `None` until every packet is stored.
    pub fn to_session(&self) -> Option<Session> {
        if !self.complete() {
            return None;
        }
        let first = self.data.values().next()?;
        let mut conditioned = vec![Vec::new(); first.ch.len()];
        for row in self.data.values() {
            for sample in &row.samples {
                for (c, v) in sample.iter().enumerate() {
                    conditioned[c].push(*v);
                }
            }
        }
        let state = self.state.clone().or_else(|| {
            first.state.as_ref().map(|s| StateRow {
                node: first.node.clone(),
                session: first.session.clone(),
                t0_ms: first.t0_ms,
                cause: s.cause,
                battery_v: s.battery_v,
                solar_ma: s.solar_ma,
                temp_c: s.temp_c,
            })
        });
        Some(Session {
            session_id: first.session.clone(),
            node_id: first.node.clone(),
            bridge_table: self.bridge.clone(),
            trigger_cause: state.as_ref().map_or(TriggerCause::Vibration, |s| s.cause),
            t0_ms: first.t0_ms,
            // the raw rate is not carried on the wire
            fs_raw_hz: first.fs,
            fs_hz: first.fs,
            channels: first.ch.clone(),
            raw: Vec::new(),
            conditioned,
            temperature_c: state.as_ref().map_or(0.0, |s| s.temp_c),
            battery_v: state.as_ref().map_or(0.0, |s| s.battery_v),
            solar_ma: state.as_ref().map_or(0.0, |s| s.solar_ma),
        })
    }
}

/// Groups every row of the store by session.
pub fn read_store(store: &RecordStore) -> Result<BTreeMap<SessionKey, StoredSession>, IngestError> {
    let mut out: BTreeMap<SessionKey, StoredSession> = BTreeMap::new();
    let tables: Vec<String> = store.tables().map(String::from).collect();
    for table in &tables {
        if let Some(bridge) = table.strip_suffix(DATA_SUFFIX) {
            for (i, v) in store.rows(table).iter().enumerate() {
                let row: DataRow = parse_row(table, i, v)?;
                let s = out.entry(row.key()).or_default();
                s.bridge = bridge.to_string();
                s.data.entry(row.seq).or_insert(row);
            }
        } else if let Some(bridge) = table.strip_suffix(INFO_SUFFIX) {
            for (i, v) in store.rows(table).iter().enumerate() {
                let row: InfoRow = parse_row(table, i, v)?;
                let s = out.entry(row.key()).or_default();
                s.bridge = bridge.to_string();
                match row {
                    InfoRow::State(st) => {
                        s.state.get_or_insert(st);
                    }
                    InfoRow::Analysis(a) => {
                        s.analysis.get_or_insert(a);
                    }
                }
            }
        } else if let Some(bridge) = table.strip_suffix(QUARANTINE_SUFFIX) {
            for (i, v) in store.rows(table).iter().enumerate() {
                let row: QuarantineRow = parse_row(table, i, v)?;
                let s = out
                    .entry(SessionKey {
                        node: row.node.clone(),
                        session: row.session.clone(),
                    })
                    .or_default();
                s.bridge = bridge.to_string();
                s.quarantine.get_or_insert(row);
            }
        }
    }
    Ok(out)
}

/// Analysis rows of every info table, ordered by node then start time.
pub fn read_analysis(store: &RecordStore) -> Result<Vec<AnalysisRecord>, IngestError> {
    let mut v: Vec<AnalysisRecord> = read_store(store)?
        .into_values()
        .filter_map(|s| s.analysis)
        .collect();
    v.sort_by(|a, b| (&a.node, a.t0_ms, &a.session).cmp(&(&b.node, b.t0_ms, &b.session)));
    Ok(v)
}
