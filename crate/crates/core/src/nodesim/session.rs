use serde::{Deserialize, Serialize};

use super::{NodeError, SensorConfig, TriggerCause, TriggerEvent};
use crate::dsp::{self, FirSpec};
use crate::simkit::{add_noise, GroundTruth, NodeState, NoiseKind, NoiseSpec};
use crate::wire::{quantize, Packet, SessionState};

/// One triggered measurement. Channel-major: `raw[c][i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub node_id: String,
    pub bridge_table: String,
    pub trigger_cause: TriggerCause,
    pub t0_ms: i64,
    pub fs_raw_hz: f64,
    pub fs_hz: f64,
    pub channels: Vec<String>,
    /// Acceleration in g, strain in µε, at `fs_raw_hz`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub raw: Vec<Vec<f64>>,
    /// Filtered and decimated, at `fs_hz`, six-decimal resolution.
    pub conditioned: Vec<Vec<f64>>,
    pub temperature_c: f64,
    pub battery_v: f64,
    pub solar_ma: f64,
}

impl Session {
    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        let idx = self.channels.iter().position(|c| c == name)?;
        self.conditioned.get(idx).map(Vec::as_slice)
    }

    pub fn strain_channels(&self) -> Vec<&[f64]> {
        self.channels
            .iter()
            .zip(&self.conditioned)
            .filter(|(c, _)| c.starts_with('s'))
            .map(|(_, s)| s.as_slice())
            .collect()
    }

    pub fn conditioned_len(&self) -> usize {
        self.conditioned.first().map_or(0, Vec::len)
    }
}

/// Per-channel noise seed derived from the session seed.
fn channel_seed(seed: u64, channel: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(channel as u64 + 1)
}

/// Samples the oracle over the 30 s window that starts at the trigger.
/// `truth_epoch_ms` is the wall-clock time of the first truth sample.
pub fn acquire(
    cfg: &SensorConfig,
    truth: &GroundTruth,
    truth_epoch_ms: i64,
    trigger: &TriggerEvent,
    state: &NodeState,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<Session, NodeError> {
    cfg.validate()?;
    let ratio = truth.fs_hz / cfg.fs_raw_hz;
    if ratio < 1.0 || (ratio - ratio.round()).abs() > 1e-9 {
        return Err(NodeError::Acquisition(format!(
            "truth rate {} Hz is not a multiple of the {} Hz acquisition rate",
            truth.fs_hz, cfg.fs_raw_hz
        )));
    }
    let step = ratio.round() as usize;
    let offset_ms = trigger.t_ms - truth_epoch_ms;
    if offset_ms < 0 {
        return Err(NodeError::Acquisition(
            "trigger precedes the truth record".into(),
        ));
    }
    let start = (offset_ms as f64 * truth.fs_hz / 1e3).round() as usize;
    let n = cfg.raw_len();
    if start + (n - 1) * step >= truth.len() {
        return Err(NodeError::Acquisition(format!(
            "truth covers {:.3} s but the window needs [{:.3}, {:.3}] s",
            truth.duration_s(),
            offset_ms as f64 / 1e3,
            offset_ms as f64 / 1e3 + cfg.duration_s
        )));
    }
    if truth.accel_g.is_empty() || truth.strain_ue.len() < cfg.strain_channels {
        return Err(NodeError::Acquisition(format!(
            "truth has {} accelerometer and {} gauge series; need 1 and {}",
            truth.accel_g.len(),
            truth.strain_ue.len(),
            cfg.strain_channels
        )));
    }
    let pick = |s: &[f64]| -> Vec<f64> { (0..n).map(|i| s[start + i * step]).collect() };
    let zeros = vec![0.0; n];
    let mut clean: Vec<(Vec<f64>, NoiseKind)> = vec![
        (zeros.clone(), NoiseKind::Accel(noise.accel_g)),
        (zeros, NoiseKind::Accel(noise.accel_g)),
        (pick(&truth.accel_g[0]), NoiseKind::Accel(noise.accel_g)),
    ];
    for g in &truth.strain_ue[..cfg.strain_channels] {
        clean.push((pick(g), NoiseKind::Strain(noise.strain_ue)));
    }
    let raw = clean
        .into_iter()
        .enumerate()
        .map(|(c, (s, kind))| add_noise(&s, kind, channel_seed(seed, c)))
        .collect();

    Ok(Session {
        session_id: format!("{}-{}", cfg.node_id, trigger.t_ms),
        node_id: cfg.node_id.clone(),
        bridge_table: cfg.bridge_table.clone(),
        trigger_cause: trigger.cause,
        t0_ms: trigger.t_ms,
        fs_raw_hz: cfg.fs_raw_hz,
        fs_hz: cfg.fs_conditioned_hz(),
        channels: cfg.channel_names(),
        raw,
        conditioned: Vec::new(),
        temperature_c: state.temperature_c,
        battery_v: state.battery_v,
        solar_ma: state.solar_ma,
    })
}

/// Anti-alias filter and decimation factor used by the node.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioner {
    pub filter: FirSpec,
    pub decimation: usize,
}

impl Conditioner {
    pub fn from_config(cfg: &SensorConfig) -> Result<Self, NodeError> {
        Ok(Self {
            filter: dsp::fir_lowpass_design(cfg.fs_raw_hz, cfg.fir_cutoff_hz, cfg.fir_order)?,
            decimation: cfg.decimation,
        })
    }
}

/// Filter then decimate one channel, at full precision. Linear in `series`.
pub fn condition_channel(cond: &Conditioner, series: &[f64]) -> Result<Vec<f64>, NodeError> {
    let filtered = dsp::filter_apply(&cond.filter, series)?;
    Ok(dsp::decimate(&filtered, cond.decimation)?)
}

/// Fills `conditioned` from `raw`, quantised to the wire resolution.
pub fn condition(cfg: &SensorConfig, mut session: Session) -> Result<Session, NodeError> {
    if session.raw.is_empty() {
        return Err(NodeError::Acquisition("session has no raw data".into()));
    }
    let cond = Conditioner::from_config(cfg)?;
    session.conditioned = session
        .raw
        .iter()
        .map(|ch| {
            condition_channel(&cond, ch).map(|v| v.into_iter().map(quantize).collect::<Vec<_>>())
        })
        .collect::<Result<_, _>>()?;
    session.fs_hz = cfg.fs_raw_hz / cfg.decimation as f64;
    Ok(session)
}

/// Splits the conditioned record into consecutive `packet_samples`-row
/// packets. A short final block is zero padded and declares its `pad`.
pub fn packetize(cfg: &SensorConfig, session: &Session) -> Vec<Packet> {
    let len = session.conditioned_len();
    let per = cfg.packet_samples;
    let total = len.div_ceil(per);
    (0..total)
        .map(|seq| {
            let start = seq * per;
            let end = (start + per).min(len);
            let mut data: Vec<Vec<f64>> = (start..end)
                .map(|i| session.conditioned.iter().map(|ch| ch[i]).collect())
                .collect();
            let pad = per - data.len();
            data.resize(per, vec![0.0; session.channels.len()]);
            Packet {
                db: format!("{}_data", session.bridge_table),
                node: session.node_id.clone(),
                session: session.session_id.clone(),
                seq: seq as u32,
                total: total as u32,
                last: seq + 1 == total,
                n: per as u32,
                pad: pad as u32,
                t0_ms: session.t0_ms,
                fs: session.fs_hz,
                ch: session.channels.clone(),
                data,
                state: (seq == 0).then(|| SessionState {
                    battery_v: quantize(session.battery_v),
                    cause: session.trigger_cause,
                    solar_ma: quantize(session.solar_ma),
                    temp_c: quantize(session.temperature_c),
                }),
            }
        })
        .collect()
}

/// Reassembles channel-major samples from packets given in seq order.
pub fn depacketize(packets: &[Packet]) -> Result<Vec<Vec<f64>>, NodeError> {
    let Some(first) = packets.first() else {
        return Ok(Vec::new());
    };
    let channels = first.ch.len();
    let mut out = vec![Vec::new(); channels];
    for (i, p) in packets.iter().enumerate() {
        if p.seq as usize != i || p.ch.len() != channels {
            return Err(NodeError::Acquisition(format!(
                "packet {i} out of order or with a different channel layout"
            )));
        }
        for row in p.samples() {
            for (c, v) in row.iter().enumerate() {
                out[c].push(*v);
            }
        }
    }
    Ok(out)
}
