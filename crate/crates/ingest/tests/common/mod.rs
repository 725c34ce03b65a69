#![allow(dead_code)]

use std::sync::Arc;

use bridgemon_core::fusion::{BasisGeometry, FusionConfig, ModeBasis};
use bridgemon_core::nodesim::{
    run_node, LoopbackTransport, NodeRun, SensorConfig, Session, TransmissionReport, UplinkError,
    UplinkOptions,
};
use bridgemon_core::simkit::{
    AmbientExcitation, BeamModel, CrossingLoad, DynamicLoad, NodeState, NoiseSpec, Scenario,
    WatchdogSpike,
};
use bridgemon_core::wire::Packet;
use bridgemon_ingest::{FixedClock, FusionAnalyzer, IngestConfig, Ingestor, RecordStore};

pub const EPOCH_MS: i64 = 1_626_850_000_000;

pub fn sensor() -> SensorConfig {
    SensorConfig {
        timer_schedule: vec![],
        ..SensorConfig::default()
    }
}

/// One two-axle truck crossing mid-record, triggered by a joint hit.
pub fn truck_scenario(weight_kn: f64) -> Scenario {
    let loads = if weight_kn > 0.0 {
        vec![CrossingLoad {
            arrival_time_s: 8.0,
            speed_m_s: 18.0,
            axle_weights_kn: vec![0.3 * weight_kn, 0.7 * weight_kn],
            axle_spacings_m: vec![4.5],
            dynamic: Some(DynamicLoad {
                coefficient: 0.1,
                band_hz: [1.5, 20.0],
                seed: 5,
            }),
        }]
    } else {
        vec![]
    };
    Scenario {
        name: "truck".into(),
        beam: BeamModel::default(),
        loads,
        duration_s: 33.0,
        fs_hz: 1000.0,
        epoch_ms: EPOCH_MS,
        watchdog_spikes: vec![WatchdogSpike {
            t_s: 1.5,
            mg: 260.0,
        }],
        node_state: NodeState::default(),
        noise: NoiseSpec::default(),
        ambient: (weight_kn > 0.0).then_some(AmbientExcitation {
            modal_force_rms_kn: 2.0,
            seed: 9,
        }),
    }
}

/// Runs the node against a sink that accepts everything and returns the
/// session and its packets.
pub fn node_session(weight_kn: f64, seed: u64) -> (Session, Vec<Packet>) {
    struct Sink;
    impl bridgemon_core::nodesim::FrameHandler for Sink {
        fn handle(&self, frame: &[u8]) -> Vec<u8> {
            let seq = bridgemon_core::wire::decode_packet(frame)
                .map(|p| p.seq)
                .unwrap_or(0);
            bridgemon_core::wire::ack_line(bridgemon_core::wire::AckStatus::Ok, seq)
        }
    }
    let cfg = sensor();
    let mut t = LoopbackTransport::new(Arc::new(Sink));
    let run: NodeRun = run_node(
        &cfg,
        &truck_scenario(weight_kn),
        &mut t,
        &UplinkOptions::from_config(&cfg),
        seed,
    )
    .expect("node run");
    let s = run.sessions.into_iter().next().expect("one session");
    (s.session, s.packets)
}

pub fn analyzer() -> Arc<FusionAnalyzer> {
    Arc::new(FusionAnalyzer {
        basis: ModeBasis::from_geometry(&BasisGeometry::from_beam(&BeamModel::default())).unwrap(),
        cfg: FusionConfig::default(),
    })
}

pub fn open_ingestor(dir: &std::path::Path) -> Arc<Ingestor> {
    Arc::new(
        Ingestor::open(
            RecordStore::open(dir).unwrap(),
            analyzer(),
            Arc::new(FixedClock(EPOCH_MS + 60_000)),
            IngestConfig::default(),
        )
        .unwrap(),
    )
}

pub fn upload(
    ing: &Arc<Ingestor>,
    packets: &[Packet],
    opts: &UplinkOptions,
) -> Result<TransmissionReport, UplinkError> {
    let mut t = LoopbackTransport::new(Arc::clone(ing));
    bridgemon_core::nodesim::uplink(&mut t, packets, opts)
}
