use super::eds::{run_trigger_loop, TriggerEvent, WatchdogClock};
use super::session::{acquire, condition, packetize, Session};
use super::transport::Transport;
use super::uplink::{uplink, TransmissionReport, UplinkError, UplinkOptions};
use super::{NodeError, SensorConfig};
use crate::simkit::{GroundTruth, Scenario};
use crate::wire::Packet;

/// Watchdog accelerometer output rate.
const WATCHDOG_PERIOD_MS: f64 = 10.0;

/// Watchdog reading in mg: |az| at midspan sampled at 100 Hz, plus the
/// scenario's impulsive spikes added at their nearest sample.
pub fn watchdog_stream(scenario: &Scenario, truth: &GroundTruth) -> (Vec<f64>, WatchdogClock) {
    let step = ((truth.fs_hz * WATCHDOG_PERIOD_MS / 1e3).round() as usize).max(1);
    let period_ms = step as f64 * 1e3 / truth.fs_hz;
    let mut mg: Vec<f64> = match truth.accel_g.first() {
        Some(a) => a.iter().step_by(step).map(|g| g.abs() * 1e3).collect(),
        None => vec![0.0; truth.len().div_ceil(step)],
    };
    for spike in &scenario.watchdog_spikes {
        let i = (spike.t_s * 1e3 / period_ms).round();
        if i >= 0.0 && (i as usize) < mg.len() {
            mg[i as usize] += spike.mg;
        }
    }
    let clock = WatchdogClock {
        start_ms: scenario.epoch_ms,
        period_ms,
    };
    (mg, clock)
}

#[derive(Debug, Clone)]
pub struct SessionRun {
    pub event: TriggerEvent,
    pub session: Session,
    pub packets: Vec<Packet>,
    pub upload: Result<TransmissionReport, UplinkError>,
}

#[derive(Debug, Clone)]
pub struct NodeRun {
    pub truth: GroundTruth,
    pub events: Vec<TriggerEvent>,
    pub sessions: Vec<SessionRun>,
    /// Events whose 30 s window runs past the end of the truth record.
    pub truncated: Vec<TriggerEvent>,
}

fn session_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93)
}

/// Simulate the scenario, run the trigger circuit over it, and acquire,
/// condition, packetize and upload one session per trigger.
pub fn run_node(
    cfg: &SensorConfig,
    scenario: &Scenario,
    transport: &mut dyn Transport,
    opts: &UplinkOptions,
    seed: u64,
) -> Result<NodeRun, NodeError> {
    cfg.validate()?;
    let truth = scenario.simulate()?;
    let (mg, clock) = watchdog_stream(scenario, &truth);
    let events = run_trigger_loop(cfg, &mg, &clock);
    log::info!(
        "{} trigger(s) over {:.1} s",
        events.len(),
        truth.duration_s()
    );

    let window_ms = (cfg.duration_s * 1e3).round() as i64;
    let end_ms = scenario.epoch_ms + (truth.duration_s() * 1e3).floor() as i64;
    let mut sessions = Vec::new();
    let mut truncated = Vec::new();
    for (k, event) in events.iter().enumerate() {
        if event.t_ms + window_ms > end_ms {
            log::warn!("trigger at {} ms has no full window; skipped", event.t_ms);
            truncated.push(*event);
            continue;
        }
        let raw = acquire(
            cfg,
            &truth,
            scenario.epoch_ms,
            event,
            &scenario.node_state,
            &scenario.noise,
            session_seed(seed, k),
        )?;
        let session = condition(cfg, raw)?;
        let packets = packetize(cfg, &session);
        let upload = uplink(transport, &packets, opts);
        match &upload {
            Ok(r) => log::info!(
                "session {} uploaded: {} sends, {} resends",
                session.session_id,
                r.sends,
                r.resends
            ),
            Err(e) => log::warn!("session {} retained: {e}", session.session_id),
        }
        sessions.push(SessionRun {
            event: *event,
            session,
            packets,
            upload,
        });
    }
    Ok(NodeRun {
        truth,
        events,
        sessions,
        truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nodesim::transport::{LoopbackTransport, RefusingTransport};
    use crate::nodesim::FrameHandler;
    use crate::simkit::{BeamModel, NodeState, NoiseSpec, WatchdogSpike};
    use crate::wire::{ack_line, decode_packet, encode_packet, AckStatus};
    use std::sync::{Arc, Mutex};

    #[derive(Default)]
    struct Recorder(Mutex<Vec<Vec<u8>>>);
    impl FrameHandler for Recorder {
        fn handle(&self, frame: &[u8]) -> Vec<u8> {
            self.0.lock().unwrap().push(frame.to_vec());
            let seq = decode_packet(frame).map(|p| p.seq).unwrap_or(0);
            ack_line(AckStatus::Ok, seq)
        }
    }

    fn scenario() -> Scenario {
        Scenario {
            name: "t".into(),
            beam: BeamModel::default(),
            loads: vec![],
            duration_s: 32.0,
            fs_hz: 1000.0,
            epoch_ms: 1_626_850_000_000,
            watchdog_spikes: vec![WatchdogSpike {
                t_s: 0.5,
                mg: 260.0,
            }],
            node_state: NodeState::default(),
            noise: NoiseSpec::default(),
            ambient: None,
        }
    }

    fn cfg() -> SensorConfig {
        SensorConfig {
            timer_schedule: vec![],
            ..SensorConfig::default()
        }
    }

    #[test]
    fn spike_produces_one_uploaded_session() {
        let rec = Arc::new(Recorder::default());
        let mut t = LoopbackTransport::new(Arc::clone(&rec));
        let sc = scenario();
        let run = run_node(&cfg(), &sc, &mut t, &UplinkOptions::from_config(&cfg()), 5).unwrap();
        assert_eq!(run.sessions.len(), 1);
        let s = &run.sessions[0];
        assert_eq!(s.event.t_ms, sc.epoch_ms + 500);
        assert_eq!(s.packets.len(), 375);
        assert_eq!(s.upload.as_ref().unwrap().acked, 375);
        assert_eq!(rec.0.lock().unwrap().len(), 375);
    }

    #[test]
    fn byte_identical_streams_for_identical_inputs() {
        let run = |seed| {
            let rec = Arc::new(Recorder::default());
            let mut t = LoopbackTransport::new(Arc::clone(&rec));
            run_node(
                &cfg(),
                &scenario(),
                &mut t,
                &UplinkOptions::from_config(&cfg()),
                seed,
            )
            .unwrap();
            let frames = rec.0.lock().unwrap().clone();
            frames
        };
        let a = run(11);
        assert_eq!(a, run(11));
        assert_ne!(a, run(12));
    }

    #[test]
    fn unreachable_server_retains_session() {
        let mut t = RefusingTransport::default();
        let run = run_node(
            &cfg(),
            &scenario(),
            &mut t,
            &UplinkOptions::from_config(&cfg()),
            1,
        )
        .unwrap();
        assert!(matches!(
            run.sessions[0].upload,
            Err(UplinkError::Unreachable(_))
        ));
        assert_eq!(run.sessions[0].packets.len(), 375);
        let frame = encode_packet(&run.sessions[0].packets[0]);
        assert_eq!(decode_packet(&frame).unwrap(), run.sessions[0].packets[0]);
    }
}
