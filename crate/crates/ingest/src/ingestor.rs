//! Packet intake: validate, persist exactly once, ACK, and analyse each
//! session once it is complete.
//!
//! A packet is ACKed OK only after its data row is on disk, so a crash can
//! lose at most unacknowledged work, which the node resends.

use std::collections::BTreeMap;
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use bridgemon_core::fleetstats::AnalysisRecord;
use bridgemon_core::fusion::{fuse_session, FusionConfig, ModeBasis};
use bridgemon_core::nodesim::{FrameHandler, Session};
use bridgemon_core::wire::{ack_line, decode_packet, AckStatus, Packet};
use serde::{Deserialize, Serialize};

use crate::assembly::{content_hash, Insert, SessionAssembly, SessionKey};
use crate::rows::{
    bridge_of, info_table, quarantine_table, read_store, to_value, DataRow, InfoRow, QuarantineRow,
    StateRow, StoredSession,
};
use crate::store::RecordStore;
use crate::IngestError;

pub const DEFAULT_STALE_AFTER_MS: i64 = 24 * 3_600_000;

/// Turns a complete session into its info-table analysis row.
pub trait Analyzer: Send + Sync {
    fn analyze(&self, session: &Session) -> AnalysisRecord;
}

/// Strain/acceleration fusion over a fixed gauge basis.
pub struct FusionAnalyzer {
    pub basis: ModeBasis,
    pub cfg: FusionConfig,
}

impl Analyzer for FusionAnalyzer {
    fn analyze(&self, session: &Session) -> AnalysisRecord {
        let out = fuse_session(session, &self.basis, &self.cfg);
        if let Err(e) = &out {
            log::info!("session {}: analysis failed: {e}", session.session_id);
        }
        AnalysisRecord::from_outcome(session, &out)
    }
}

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> i64;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> i64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_millis() as i64)
    }
}

/// Always reports the same instant.
pub struct FixedClock(pub i64);

impl Clock for FixedClock {
    fn now_ms(&self) -> i64 {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestConfig {
    /// Incomplete sessions idle longer than this are reported stale.
    pub stale_after_ms: i64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            stale_after_ms: DEFAULT_STALE_AFTER_MS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionStatus {
    pub node: String,
    pub session: String,
    pub bridge: String,
    pub received: usize,
    pub expected: Option<u32>,
    pub complete: bool,
    pub analyzed: bool,
    pub stale: bool,
    pub quarantined: Option<String>,
}

struct Tracked {
    asm: SessionAssembly,
    stored: StoredSession,
    dispatched: bool,
}

struct State {
    store: RecordStore,
    sessions: BTreeMap<SessionKey, Tracked>,
}

struct Pending {
    count: Mutex<usize>,
    idle: Condvar,
}

struct Shared {
    state: Mutex<State>,
    analyzer: Arc<dyn Analyzer>,
    clock: Arc<dyn Clock>,
    cfg: IngestConfig,
    pending: Pending,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn finish_one(&self) {
        let mut n = self.pending.count.lock().unwrap_or_else(|p| p.into_inner());
        *n -= 1;
        if *n == 0 {
            self.pending.idle.notify_all();
        }
    }
}

pub struct Ingestor {
    shared: Arc<Shared>,
    tx: Mutex<Option<Sender<SessionKey>>>,
    worker: Mutex<Option<JoinHandle<()>>>,
}

fn hash_hex(h: &[u8; 32]) -> String {
    hex::encode(h)
}

fn rebuild(store: RecordStore) -> Result<State, IngestError> {
    let grouped = read_store(&store)?;
    let mut sessions = BTreeMap::new();
    for (key, stored) in grouped {
        let Some(first) = stored.data.values().next() else {
            continue;
        };
        let db = format!("{}{}", stored.bridge, crate::rows::DATA_SUFFIX);
        let mut asm = SessionAssembly::new(&first.to_packet(&db), first.recv_ms);
        for row in stored.data.values() {
            let mut hash = [0u8; 32];
            hex::decode_to_slice(&row.sha256, &mut hash)
                .map_err(|e| IngestError::Store(format!("{key} seq {}: bad hash: {e}", row.seq)))?;
            asm.assemble(&row.to_packet(&db), hash, row.recv_ms)
                .map_err(|e| IngestError::Store(format!("{key}: {e}")))?;
        }
        asm.quarantined = stored.quarantine.as_ref().map(|q| q.reason.clone());
        sessions.insert(
            key,
            Tracked {
                asm,
                stored,
                dispatched: false,
            },
        );
    }
    Ok(State { store, sessions })
}

fn state_row(p: &Packet) -> Option<StateRow> {
    p.state.as_ref().map(|s| StateRow {
        node: p.node.clone(),
        session: p.session.clone(),
        t0_ms: p.t0_ms,
        cause: s.cause,
        battery_v: s.battery_v,
        solar_ma: s.solar_ma,
        temp_c: s.temp_c,
    })
}

/// Writes the derived state row if the stored seq-0 packet has one and the
/// info table does not yet.
fn ensure_state_row(store: &mut RecordStore, t: &mut Tracked) -> Result<(), IngestError> {
    if t.stored.state.is_some() {
        return Ok(());
    }
    let Some(row0) = t.stored.data.get(&0) else {
        return Ok(());
    };
    let Some(st) = state_row(&row0.to_packet("")) else {
        return Ok(());
    };
    store.append(
        &info_table(&t.stored.bridge),
        &to_value(&InfoRow::State(st.clone())),
    )?;
    t.stored.state = Some(st);
    Ok(())
}

fn worker_loop(shared: Arc<Shared>, rx: Receiver<SessionKey>) {
    for key in rx {
        let session = {
            let st = shared.lock();
            st.sessions.get(&key).and_then(|t| {
                if t.stored.analysis.is_some() || t.asm.quarantined.is_some() {
                    None
                } else {
                    t.stored.to_session()
                }
            })
        };
        if let Some(session) = session {
            let rec = shared.analyzer.analyze(&session);
            let mut st = shared.lock();
            let State { store, sessions } = &mut *st;
            if let Some(t) = sessions.get_mut(&key) {
                if t.stored.analysis.is_none() {
                    match store.append(
                        &info_table(&t.stored.bridge),
                        &to_value(&InfoRow::Analysis(rec.clone())),
                    ) {
                        Ok(()) => t.stored.analysis = Some(rec),
                        Err(e) => log::error!("{key}: analysis row not stored: {e}"),
                    }
                }
            }
        }
        shared.finish_one();
    }
}

impl Ingestor {
    /// Opens the service over `store`, replaying its contents. Complete
    /// sessions without an analysis row are queued for analysis.
    pub fn open(
        store: RecordStore,
        analyzer: Arc<dyn Analyzer>,
        clock: Arc<dyn Clock>,
        cfg: IngestConfig,
    ) -> Result<Self, IngestError> {
        let state = rebuild(store)?;
        let shared = Arc::new(Shared {
            state: Mutex::new(state),
            analyzer,
            clock,
            cfg,
            pending: Pending {
                count: Mutex::new(0),
                idle: Condvar::new(),
            },
        });
        let (tx, rx) = mpsc::channel();
        let worker = {
            let shared = Arc::clone(&shared);
            std::thread::Builder::new()
                .name("ingest-analysis".into())
                .spawn(move || worker_loop(shared, rx))
                .map_err(|e| IngestError::Store(format!("cannot start analysis worker: {e}")))?
        };
        let ing = Self {
            shared,
            tx: Mutex::new(Some(tx)),
            worker: Mutex::new(Some(worker)),
        };
        ing.recover()?;
        Ok(ing)
    }

    fn recover(&self) -> Result<(), IngestError> {
        let mut queue = Vec::new();
        {
            let mut st = self.shared.lock();
            let State { store, sessions } = &mut *st;
            for (key, t) in sessions.iter_mut() {
                ensure_state_row(store, t)?;
                if t.asm.complete && t.asm.quarantined.is_none() && t.stored.analysis.is_none() {
                    t.dispatched = true;
                    queue.push(key.clone());
                }
            }
        }
        if !queue.is_empty() {
            log::info!(
                "recovery: {} complete session(s) awaiting analysis",
                queue.len()
            );
        }
        for k in queue {
            self.dispatch(k);
        }
        Ok(())
    }

    fn dispatch(&self, key: SessionKey) {
        *self
            .shared
            .pending
            .count
            .lock()
            .unwrap_or_else(|p| p.into_inner()) += 1;
        let sent = self
            .tx
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .as_ref()
            .is_some_and(|tx| tx.send(key).is_ok());
        if !sent {
            self.shared.finish_one();
        }
    }

    /// Queues `key` for analysis again. Already analysed sessions are skipped
    /// by the worker, so this never duplicates rows.
    pub fn redispatch(&self, key: &SessionKey) {
        self.dispatch(key.clone());
    }

    /// Validates, persists and assembles one decoded packet.
    pub fn ingest(&self, p: &Packet) -> Result<Insert, IngestError> {
        let bridge = bridge_of(&p.db)?.to_string();
        let hash = content_hash(p);
        let now = self.shared.clock.now_ms();
        let key = SessionKey::of(p);
        let to_dispatch;
        let result;
        {
            let mut st = self.shared.lock();
            let State { store, sessions } = &mut *st;
            let t = sessions.entry(key.clone()).or_insert_with(|| Tracked {
                asm: SessionAssembly::new(p, now),
                stored: StoredSession {
                    bridge: bridge.clone(),
                    ..StoredSession::default()
                },
                dispatched: false,
            });
            if let Some(reason) = &t.asm.quarantined {
                return Err(IngestError::Quarantined(reason.clone()));
            }
            match t.asm.check(p, &hash) {
                Err(e) => {
                    let row = QuarantineRow {
                        node: p.node.clone(),
                        session: p.session.clone(),
                        seq: p.seq,
                        reason: e.to_string(),
                        recv_ms: now,
                    };
                    store.append(&quarantine_table(&bridge), &to_value(&row))?;
                    log::warn!("{key} quarantined: {e}");
                    t.asm.quarantined = Some(e.to_string());
                    t.stored.quarantine = Some(row);
                    return Err(IngestError::Integrity(e));
                }
                Ok(Insert::Duplicate) => {
                    t.asm.last_seen_ms = t.asm.last_seen_ms.max(now);
                    result = Insert::Duplicate;
                }
                Ok(Insert::New) => {
                    let row = DataRow::from_packet(p, hash_hex(&hash), now);
                    store.append(&p.db, &to_value(&row))?;
                    t.asm.assemble(p, hash, now).expect("checked above");
                    t.stored.data.insert(p.seq, row);
                    result = Insert::New;
                }
            }
            ensure_state_row(store, t)?;
            to_dispatch = t.asm.complete && !t.dispatched && t.stored.analysis.is_none();
            if to_dispatch {
                t.dispatched = true;
            }
        }
        if to_dispatch {
            log::info!("{key} complete; queued for analysis");
            self.dispatch(key);
        }
        Ok(result)
    }

    /// Blocks until every queued analysis has finished or `timeout` passes.
    pub fn wait_idle(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        let mut n = self
            .shared
            .pending
            .count
            .lock()
            .unwrap_or_else(|p| p.into_inner());
        while *n > 0 {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return false;
            }
            n = self
                .shared
                .pending
                .idle
                .wait_timeout(n, left)
                .unwrap_or_else(|p| p.into_inner())
                .0;
        }
        true
    }

    pub fn sessions(&self) -> Vec<SessionStatus> {
        let now = self.shared.clock.now_ms();
        let st = self.shared.lock();
        st.sessions
            .iter()
            .map(|(k, t)| SessionStatus {
                node: k.node.clone(),
                session: k.session.clone(),
                bridge: t.stored.bridge.clone(),
                received: t.asm.received.len(),
                expected: t.asm.expected,
                complete: t.asm.complete,
                analyzed: t.stored.analysis.is_some(),
                stale: t.asm.is_stale(now, self.shared.cfg.stale_after_ms),
                quarantined: t.asm.quarantined.clone(),
            })
            .collect()
    }

    /// The reassembled session, once complete.
    pub fn session(&self, key: &SessionKey) -> Option<Session> {
        self.shared.lock().sessions.get(key)?.stored.to_session()
    }

    pub fn analysis(&self, key: &SessionKey) -> Option<AnalysisRecord> {
        self.shared
            .lock()
            .sessions
            .get(key)?
            .stored
            .analysis
            .clone()
    }

    /// Runs `f` with the store locked.
    pub fn with_store<R>(&self, f: impl FnOnce(&RecordStore) -> R) -> R {
        f(&self.shared.lock().store)
    }

    pub fn set_fault(&self, plan: crate::store::FaultPlan) {
        self.shared.lock().store.set_fault(plan);
    }

    /// Stops the analysis worker after it drains its queue.
    pub fn shutdown(&self) {
        self.tx.lock().unwrap_or_else(|p| p.into_inner()).take();
        if let Some(h) = self.worker.lock().unwrap_or_else(|p| p.into_inner()).take() {
            let _ = h.join();
        }
    }
}

impl Drop for Ingestor {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Seq of a frame that failed to decode, when it can still be read.
fn salvage_seq(frame: &[u8]) -> u32 {
    let body = frame.strip_suffix(b"\r\n").unwrap_or(frame);
    hex::decode(body)
        .ok()
        .and_then(|j| serde_json::from_slice::<serde_json::Value>(&j).ok())
        .and_then(|v| v.get("seq")?.as_u64())
        .and_then(|s| u32::try_from(s).ok())
        .unwrap_or(0)
}

impl FrameHandler for Ingestor {
    fn handle(&self, frame: &[u8]) -> Vec<u8> {
        match decode_packet(frame) {
            Ok(p) => match self.ingest(&p) {
                Ok(_) => ack_line(AckStatus::Ok, p.seq),
                Err(e) => {
                    log::warn!("seq {} of {}/{} rejected: {e}", p.seq, p.node, p.session);
                    ack_line(AckStatus::Err, p.seq)
                }
            },
            Err(e) => {
                log::warn!("malformed frame ({} bytes): {e}", frame.len());
                ack_line(AckStatus::Err, salvage_seq(frame))
            }
        }
    }
}
