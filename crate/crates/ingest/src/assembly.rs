//! Reassembly of one session from its packets.

use std::collections::BTreeMap;

use bridgemon_core::wire::Packet;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub type ContentHash = [u8; 32];

/// SHA-256 of the canonical packet text.
pub fn content_hash(p: &Packet) -> ContentHash {
    Sha256::digest(p.canonical_json().as_bytes()).into()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SessionKey {
    pub node: String,
    pub session: String,
}

impl SessionKey {
    pub fn of(p: &Packet) -> Self {
        Self {
            node: p.node.clone(),
            session: p.session.clone(),
        }
    }
}

impl std::fmt::Display for SessionKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.node, self.session)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AssemblyError {
    #[error("seq {seq} received twice with different content")]
    ConflictingDuplicate { seq: u32 },
    #[error("packet header disagrees with the session: {0}")]
    Inconsistent(String),
}

/// Header fields every packet of a session must share.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub db: String,
    pub t0_ms: i64,
    pub fs: f64,
    pub ch: Vec<String>,
    pub n: u32,
    pub total: u32,
}

impl SessionHeader {
    pub fn of(p: &Packet) -> Self {
        Self {
            db: p.db.clone(),
            t0_ms: p.t0_ms,
            fs: p.fs,
            ch: p.ch.clone(),
            n: p.n,
            total: p.total,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Insert {
    New,
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionAssembly {
    pub key: SessionKey,
    pub header: SessionHeader,
    pub received: BTreeMap<u32, ContentHash>,
    /// Packet count, known once the final packet has been seen.
    pub expected: Option<u32>,
    pub first_seen_ms: i64,
    pub last_seen_ms: i64,
    pub complete: bool,
    pub quarantined: Option<String>,
}

impl SessionAssembly {
    pub fn new(p: &Packet, now_ms: i64) -> Self {
        Self {
            key: SessionKey::of(p),
            header: SessionHeader::of(p),
            received: BTreeMap::new(),
            expected: None,
            first_seen_ms: now_ms,
            last_seen_ms: now_ms,
            complete: false,
            quarantined: None,
        }
    }

    /// Checks `p` against the session without changing anything.
    pub fn check(&self, p: &Packet, hash: &ContentHash) -> Result<Insert, AssemblyError> {
        let h = SessionHeader::of(p);
        if h != self.header {
            let field = if h.db != self.header.db {
                "db"
            } else if h.t0_ms != self.header.t0_ms {
                "t0_ms"
            } else if h.fs != self.header.fs {
                "fs"
            } else if h.ch != self.header.ch {
                "ch"
            } else if h.n != self.header.n {
                "n"
            } else {
                "total"
            };
            return Err(AssemblyError::Inconsistent(format!(
                "seq {} differs in {field}",
                p.seq
            )));
        }
        match self.received.get(&p.seq) {
            Some(old) if old == hash => Ok(Insert::Duplicate),
            Some(_) => Err(AssemblyError::ConflictingDuplicate { seq: p.seq }),
            None => Ok(Insert::New),
        }
    }

    /// Inserts `p` by seq. Duplicates with equal content change nothing.
    pub fn assemble(
        &mut self,
        p: &Packet,
        hash: ContentHash,
        now_ms: i64,
    ) -> Result<Insert, AssemblyError> {
        let r = self.check(p, &hash)?;
        self.last_seen_ms = self.last_seen_ms.max(now_ms);
        if r == Insert::New {
            self.received.insert(p.seq, hash);
            if p.last {
                // the self-flagged final packet and the declared total agree by validation
                self.expected = Some(p.seq + 1);
            }
            self.complete = self.expected.is_some_and(|e| {
                self.received.len() == e as usize
                    && self.received.keys().next_back() == Some(&(e - 1))
            });
        }
        Ok(r)
    }

    pub fn missing(&self) -> Vec<u32> {
        let total = self.expected.unwrap_or(self.header.total);
        (0..total)
            .filter(|s| !self.received.contains_key(s))
            .collect()
    }

    pub fn is_stale(&self, now_ms: i64, stale_after_ms: i64) -> bool {
        !self.complete && now_ms - self.last_seen_ms > stale_after_ms
    }
}
