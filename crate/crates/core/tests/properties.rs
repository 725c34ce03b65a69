use std::f64::consts::PI;

use bridgemon_core::dsp::{accel_to_disp, filter_apply, fir_lowpass_design, MM_PER_G};
use bridgemon_core::wire::{
    decode_packet, encode_packet, hex_frame, quantize, Packet, SessionState, TriggerCause,
};
use proptest::prelude::*;

fn packet() -> impl Strategy<Value = Packet> {
    let ch = prop::collection::vec("[a-z][a-z0-9_]{0,5}", 1..5);
    (
        ch,
        1u32..12,
        1u32..400,
        0u32..400,
        any::<bool>(),
        -1e12f64..1e12,
        1i64..2_000_000_000_000,
    )
        .prop_flat_map(|(ch, n, total, seq, with_state, scale, t0)| {
            let seq = seq % total;
            let last = seq + 1 == total;
            let pad = if last { n / 2 } else { 0 };
            let width = ch.len();
            let rows =
                prop::collection::vec(prop::collection::vec(-1.0f64..1.0, width), n as usize);
            let state = (0.0f64..5.0, -40.0f64..60.0, 0.0f64..600.0, any::<bool>());
            (rows, state).prop_map(move |(rows, (v, t, s, timer))| Packet {
                db: "CHEONGDAM1_data".into(),
                node: "janet-01".into(),
                session: format!("janet-01-{t0}"),
                seq,
                total,
                last,
                n,
                pad,
                t0_ms: t0,
                fs: 100.0,
                ch: ch.clone(),
                data: rows
                    .into_iter()
                    .map(|r| {
                        r.into_iter()
                            .map(|x| quantize(x * scale.abs().clamp(1e-6, 1e6)))
                            .collect()
                    })
                    .collect(),
                state: (with_state && seq == 0).then(|| SessionState {
                    battery_v: quantize(v),
                    cause: if timer {
                        TriggerCause::Timer
                    } else {
                        TriggerCause::Vibration
                    },
                    solar_ma: quantize(s),
                    temp_c: quantize(t),
                }),
            })
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn quantized_packets_round_trip_exactly(p in packet()) {
        let frame = encode_packet(&p);
        prop_assert_eq!(frame.len(), 2 * p.canonical_json().len() + 2);
        prop_assert!(frame.ends_with(b"\r\n"));
        let back = decode_packet(&frame).unwrap();
        prop_assert_eq!(&back, &p);
        prop_assert_eq!(encode_packet(&back), frame);
    }
}

#[test]
fn ascii_text_frames_as_uppercase_hex() {
    assert_eq!(hex_frame(b"CAU"), b"434155\r\n");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lowpass_is_linear(
        x in prop::collection::vec(-10.0f64..10.0, 400..600),
        a in -5.0f64..5.0,
        b in -5.0f64..5.0,
        seed in any::<u64>(),
    ) {
        let spec = fir_lowpass_design(1000.0, 40.0, 100).unwrap();
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| (v * 0.7 + (seed.wrapping_add(i as u64) % 13) as f64).sin()).collect();
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let (fx, fy, fm) = (filter_apply(&spec, &x).unwrap(), filter_apply(&spec, &y).unwrap(), filter_apply(&spec, &mix).unwrap());
        for i in 0..x.len() {
            prop_assert!((fm[i] - (a * fx[i] + b * fy[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn lowpass_is_shift_invariant_away_from_edges(
        x in prop::collection::vec(-10.0f64..10.0, 400..600),
        prefix in prop::collection::vec(-10.0f64..10.0, 1..50),
    ) {
        let spec = fir_lowpass_design(1000.0, 40.0, 100).unwrap();
        let shifted: Vec<f64> = prefix.iter().chain(&x).copied().collect();
        let (fx, fs) = (filter_apply(&spec, &x).unwrap(), filter_apply(&spec, &shifted).unwrap());
        let d = spec.group_delay;
        let k = prefix.len();
        for i in d..x.len() - d {
            prop_assert!((fs[i + k] - fx[i]).abs() < 1e-9);
        }
    }

    /// The second derivative of a band-limited displacement integrates back to it.
    #[test]
    fn double_integration_inverts_double_differentiation(
        amps in prop::collection::vec(0.1f64..3.0, 3),
        phases in prop::collection::vec(0.0f64..(2.0 * PI), 3),
        base in 1.0f64..4.0,
    ) {
        let fs = 100.0;
        let n = 3000;
        let freqs = [base, base * 2.3, base * 4.1];
        let t = |i: usize| i as f64 / fs;
        let u: Vec<f64> = (0..n)
            .map(|i| (0..3).map(|m| amps[m] * (2.0 * PI * freqs[m] * t(i) + phases[m]).sin()).sum())
            .collect();
        let a_g: Vec<f64> = (0..n)
            .map(|i| {
                (0..3)
                    .map(|m| -amps[m] * (2.0 * PI * freqs[m]).powi(2) * (2.0 * PI * freqs[m] * t(i) + phases[m]).sin())
                    .sum::<f64>()
                    / MM_PER_G
            })
            .collect();
        let got = accel_to_disp(&a_g, fs, 0.5).unwrap();
        // Tukey taper edges excluded
        let (lo, hi) = (n / 10, n - n / 10);
        let rms = |v: &mut dyn Iterator<Item = f64>| {
            let (s, c) = v.fold((0.0, 0), |(s, c), x| (s + x * x, c + 1));
            (s / c as f64).sqrt()
        };
        let err = rms(&mut (lo..hi).map(|i| got[i] - u[i]));
        let reference = rms(&mut (lo..hi).map(|i| u[i]));
        prop_assert!(err / reference < 0.03, "relative rms error {}", err / reference);
    }
}
