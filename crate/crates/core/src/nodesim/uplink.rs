//! Stop-and-wait packet upload.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::transport::{Connection, LinkError, Transport};
use super::SensorConfig;
use crate::wire::{encode_packet, parse_ack, AckStatus, Packet};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UplinkOptions {
    /// Connect budget for each (re)connect phase.
    pub max_connect_attempts: u32,
    /// Simulated wait charged for every missing ACK.
    pub ack_timeout_ms: u64,
    /// Abort after this many sends of a single packet. `None` retries forever.
    pub max_sends_per_packet: Option<u32>,
}

impl UplinkOptions {
    pub fn from_config(cfg: &SensorConfig) -> Self {
        Self {
            max_connect_attempts: cfg.max_connect_attempts,
            ack_timeout_ms: cfg.ack_timeout_ms,
            max_sends_per_packet: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UplinkOutcome {
    Delivered,
    Unreachable,
    RetryCeiling,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransmissionReport {
    pub session_id: String,
    pub packets: usize,
    /// Every frame written, first transmissions included.
    pub sends: u64,
    pub resends: u64,
    pub connect_attempts: u32,
    pub reconnects: u32,
    pub timeouts: u64,
    pub nacks: u64,
    pub acked: usize,
    /// Sum of charged ACK timeouts.
    pub sim_wait_ms: u64,
    pub outcome: UplinkOutcome,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum UplinkError {
    #[error("server unreachable after {} connect attempts", .0.connect_attempts)]
    Unreachable(TransmissionReport),
    #[error("packet {seq} not acknowledged after {sends} sends")]
    RetryCeiling {
        seq: u32,
        sends: u32,
        report: TransmissionReport,
    },
}

impl UplinkError {
    pub fn report(&self) -> &TransmissionReport {
        match self {
            UplinkError::Unreachable(r) => r,
            UplinkError::RetryCeiling { report, .. } => report,
        }
    }
}

fn connect(
    transport: &mut dyn Transport,
    opts: &UplinkOptions,
    report: &mut TransmissionReport,
) -> Result<Box<dyn Connection>, UplinkError> {
    for _ in 0..opts.max_connect_attempts {
        report.connect_attempts += 1;
        if let Ok(c) = transport.connect() {
            return Ok(c);
        }
    }
    report.outcome = UplinkOutcome::Unreachable;
    Err(UplinkError::Unreachable(report.clone()))
}

/// Sends `packets` in seq order, each repeated until its ACK OK arrives.
/// ACKs for other seqs are stale duplicates and are skipped.
pub fn uplink(
    transport: &mut dyn Transport,
    packets: &[Packet],
    opts: &UplinkOptions,
) -> Result<TransmissionReport, UplinkError> {
    let mut report = TransmissionReport {
        session_id: packets
            .first()
            .map(|p| p.session.clone())
            .unwrap_or_default(),
        packets: packets.len(),
        sends: 0,
        resends: 0,
        connect_attempts: 0,
        reconnects: 0,
        timeouts: 0,
        nacks: 0,
        acked: 0,
        sim_wait_ms: 0,
        outcome: UplinkOutcome::Delivered,
    };
    if packets.is_empty() {
        return Ok(report);
    }
    let mut conn = connect(transport, opts, &mut report)?;

    for p in packets {
        let frame = encode_packet(p);
        let mut sends_this = 0u32;
        'resend: loop {
            if let Some(ceiling) = opts.max_sends_per_packet {
                if sends_this >= ceiling {
                    report.outcome = UplinkOutcome::RetryCeiling;
                    return Err(UplinkError::RetryCeiling {
                        seq: p.seq,
                        sends: sends_this,
                        report,
                    });
                }
            }
            if sends_this > 0 {
                report.resends += 1;
            }
            sends_this += 1;
            report.sends += 1;
            if let Err(e) = conn.send(&frame) {
                log::debug!("send of seq {} failed: {e}", p.seq);
                report.reconnects += 1;
                conn = connect(transport, opts, &mut report)?;
                continue 'resend;
            }
            loop {
                match conn.recv_line(opts.ack_timeout_ms) {
                    Ok(line) => match parse_ack(&line) {
                        Ok(ack) if ack.seq != p.seq => continue,
                        Ok(ack) if ack.status == AckStatus::Ok => break 'resend,
                        Ok(_) | Err(_) => {
                            report.nacks += 1;
                            continue 'resend;
                        }
                    },
                    Err(LinkError::Timeout) => {
                        report.timeouts += 1;
                        report.sim_wait_ms += opts.ack_timeout_ms;
                        continue 'resend;
                    }
                    Err(e) => {
                        log::debug!("link lost waiting for seq {}: {e}", p.seq);
                        report.reconnects += 1;
                        conn = connect(transport, opts, &mut report)?;
                        continue 'resend;
                    }
                }
            }
        }
        report.acked += 1;
    }
    Ok(report)
}
