//! Deterministic emulation of the sensor node firmware.
//!
//! The node sleeps until the event-driven power circuit ([`eds`]) raises the
//! MCU supply on a vibration or timer trigger, then acquires 30 s of six
//! channels at 1 kHz ([`session`]), low-pass filters and decimates to 100 Hz,
//! splits the record into fixed-size packets, and pushes them one by one over
//! a stop-and-wait link ([`uplink`]).

pub mod eds;
mod pipeline;
pub mod session;
pub mod transport;
pub mod uplink;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use eds::{eds_combine, latch_step, run_trigger_loop, EdsState, TriggerEvent, WatchdogClock};
pub use pipeline::{run_node, watchdog_stream, NodeRun, SessionRun};
pub use session::{
    acquire, condition, condition_channel, depacketize, packetize, Conditioner, Session,
};
pub use transport::{
    Connection, FrameHandler, LinkError, LoopbackTransport, LossyTransport, RefusingTransport,
    TcpTransport, Transport,
};
pub use uplink::{uplink, TransmissionReport, UplinkError, UplinkOptions, UplinkOutcome};

pub use crate::wire::TriggerCause;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NodeError {
    #[error("invalid sensor config: {0}")]
    Config(String),
    #[error("acquisition error: {0}")]
    Acquisition(String),
    #[error(transparent)]
    Dsp(#[from] crate::dsp::DspError),
    #[error(transparent)]
    Sim(#[from] crate::simkit::SimError),
}

const MS_PER_DAY: i64 = 86_400_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorConfig {
    pub node_id: String,
    /// Table prefix; packets target `<bridge_table>_data`.
    pub bridge_table: String,
    pub fs_raw_hz: f64,
    pub decimation: usize,
    pub duration_s: f64,
    pub accel_channels: usize,
    pub strain_channels: usize,
    pub vib_threshold_mg: f64,
    /// Daily wall-clock trigger times, `HH:MM` UTC.
    pub timer_schedule: Vec<String>,
    pub max_connect_attempts: u32,
    pub packet_samples: usize,
    /// Simulated ACK wait before a packet is resent.
    pub ack_timeout_ms: u64,
    /// Time the MCU holds the latch low after a trigger (acquire, process,
    /// upload); further triggers inside this window are absorbed.
    pub active_time_s: f64,
    pub fir_order: usize,
    pub fir_cutoff_hz: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            node_id: "janet-01".into(),
            bridge_table: "CHEONGDAM1".into(),
            fs_raw_hz: 1000.0,
            decimation: 10,
            duration_s: 30.0,
            accel_channels: 3,
            strain_channels: 3,
            vib_threshold_mg: 200.0,
            timer_schedule: vec!["08:00".into()],
            max_connect_attempts: 10,
            packet_samples: 8,
            ack_timeout_ms: 2000,
            active_time_s: 230.0,
            fir_order: crate::dsp::DEFAULT_ORDER,
            fir_cutoff_hz: crate::dsp::DEFAULT_CUTOFF_HZ,
        }
    }
}

impl SensorConfig {
    pub fn validate(&self) -> Result<(), NodeError> {
        let bad = |m: &str| Err(NodeError::Config(m.to_string()));
        if self.node_id.is_empty() || self.bridge_table.is_empty() {
            return bad("node_id and bridge_table must be non-empty");
        }
        if !(self.fs_raw_hz > 0.0) || self.fs_raw_hz.fract() != 0.0 {
            return bad("fs_raw_hz must be a positive whole number");
        }
        if self.decimation == 0 || !(self.fs_raw_hz as u64).is_multiple_of(self.decimation as u64) {
            return bad("fs_raw_hz must be divisible by decimation");
        }
        if !(self.duration_s > 0.0) || (self.duration_s * self.fs_raw_hz).fract() != 0.0 {
            return bad("duration_s * fs_raw_hz must be a positive whole number of samples");
        }
        if !self.raw_len().is_multiple_of(self.decimation) {
            return bad("raw sample count must be divisible by decimation");
        }
        if self.accel_channels != 3 {
            return bad("the node has exactly three acceleration axes");
        }
        if !(3..=5).contains(&self.strain_channels) {
            return bad("strain_channels must be between 3 and 5");
        }
        if !(self.vib_threshold_mg > 0.0) {
            return bad("vib_threshold_mg must be positive");
        }
        if self.max_connect_attempts == 0 || self.packet_samples == 0 {
            return bad("max_connect_attempts and packet_samples must be positive");
        }
        self.schedule_ms()?;
        Ok(())
    }

    pub fn raw_len(&self) -> usize {
        (self.duration_s * self.fs_raw_hz).round() as usize
    }

    pub fn conditioned_len(&self) -> usize {
        self.raw_len() / self.decimation
    }

    pub fn fs_conditioned_hz(&self) -> f64 {
        self.fs_raw_hz / self.decimation as f64
    }

    pub fn packet_count(&self) -> usize {
        self.conditioned_len().div_ceil(self.packet_samples)
    }

    pub fn data_table(&self) -> String {
        format!("{}_data", self.bridge_table)
    }

    pub fn channel_names(&self) -> Vec<String> {
        ["ax", "ay", "az"]
            .iter()
            .map(|s| s.to_string())
            .chain((1..=self.strain_channels).map(|i| format!("s{i}")))
            .collect()
    }

    /// Timer instants as ms after midnight.
    pub fn schedule_ms(&self) -> Result<Vec<i64>, NodeError> {
        self.timer_schedule
            .iter()
            .map(|s| {
                parse_hhmm(s).ok_or_else(|| NodeError::Config(format!("bad timer time {s:?}")))
            })
            .collect()
    }

    pub fn from_json_str(text: &str) -> Result<Self, NodeError> {
        let cfg: SensorConfig =
            serde_json::from_str(text).map_err(|e| NodeError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_hhmm(s: &str) -> Option<i64> {
    let (h, m) = s.split_once(':')?;
    if h.len() != 2 || m.len() != 2 {
        return None;
    }
    let h: i64 = h.parse().ok()?;
    let m: i64 = m.parse().ok()?;
    if !(0..24).contains(&h) || !(0..60).contains(&m) {
        return None;
    }
    Some((h * 60 + m) * 60_000)
}
