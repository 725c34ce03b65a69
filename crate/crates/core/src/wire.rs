//! Uplink wire format.
//!
//! A packet is canonical JSON (keys sorted, no whitespace, reals with exactly
//! six decimals) written as uppercase hexadecimal, two digits per byte, and
//! terminated by CRLF. The JSON text `CAU` travels as `434155`. Each packet is
//! answered by one line `ACK OK <seq>` or `ACK ERR <seq>`, also CRLF
//! terminated. See `docs/wire.md` for worked examples.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TERMINATOR: &[u8] = b"\r\n";

/// Default channel layout: three acceleration axes (g), three strain gauges (µε).
pub const DEFAULT_CHANNELS: [&str; 6] = ["ax", "ay", "az", "s1", "s2", "s3"];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("framing error: {0}")]
    Framing(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TriggerCause {
    Vibration,
    Timer,
}

impl TriggerCause {
    pub fn as_str(self) -> &'static str {
        match self {
            TriggerCause::Vibration => "vibration",
            TriggerCause::Timer => "timer",
        }
    }
}

/// Node housekeeping carried once per session, on the packet with seq 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionState {
    pub battery_v: f64,
    pub cause: TriggerCause,
    pub solar_ma: f64,
    pub temp_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Packet {
    /// Target table, e.g. `CHEONGDAM1_data`.
    pub db: String,
    pub node: String,
    pub session: String,
    pub seq: u32,
    /// Number of packets in the session.
    pub total: u32,
    /// Set on the final packet of the session only.
    pub last: bool,
    /// Rows in `data`, padding included.
    pub n: u32,
    /// Zero rows appended to the final packet to keep `n` constant.
    pub pad: u32,
    /// Epoch ms of the first sample of the session.
    pub t0_ms: i64,
    pub fs: f64,
    pub ch: Vec<String>,
    /// `n` rows of `ch.len()` values.
    pub data: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<SessionState>,
}

impl Packet {
    /// Rows that carry real samples.
    pub fn samples(&self) -> &[Vec<f64>] {
        let real = (self.n - self.pad.min(self.n)) as usize;
        &self.data[..real.min(self.data.len())]
    }

    pub fn validate(&self) -> Result<(), WireError> {
        let bad = |m: String| Err(WireError::Schema(m));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if self.pad >= self.n {
            return bad(format!("pad {} must be below n {}", self.pad, self.n));
        }
        if self.data.len() != self.n as usize {
            return bad(format!("{} data rows but n = {}", self.data.len(), self.n));
        }
        if self.ch.is_empty() {
            return bad("channel list is empty".into());
        }
        if let Some(r) = self.data.iter().position(|row| row.len() != self.ch.len()) {
            return bad(format!(
                "row {r} has {} values for {} channels",
                self.data[r].len(),
                self.ch.len()
            ));
        }
        if self.total == 0 || self.seq >= self.total {
            return bad(format!("seq {} outside total {}", self.seq, self.total));
        }
        if self.last != (self.seq + 1 == self.total) {
            return bad("last flag disagrees with seq/total".into());
        }
        if self.pad > 0 && !self.last {
            return bad("only the final packet may be padded".into());
        }
        if !(self.fs > 0.0 && self.fs.is_finite()) {
            return bad("fs must be positive".into());
        }
        if self.data.iter().flatten().any(|v| !v.is_finite()) {
            return bad("non-finite sample".into());
        }
        Ok(())
    }

    /// Canonical JSON text: sorted keys, no whitespace, six-decimal reals.
    pub fn canonical_json(&self) -> String {
        let mut s = String::with_capacity(64 + self.data.len() * self.ch.len() * 12);
        s.push_str("{\"ch\":[");
        for (i, c) in self.ch.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            push_str_lit(&mut s, c);
        }
        s.push_str("],\"data\":[");
        for (r, row) in self.data.iter().enumerate() {
            if r > 0 {
                s.push(',');
            }
            s.push('[');
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    s.push(',');
                }
                push_real(&mut s, *v);
            }
            s.push(']');
        }
        s.push_str("],\"db\":");
        push_str_lit(&mut s, &self.db);
        s.push_str(",\"fs\":");
        push_real(&mut s, self.fs);
        let _ = write!(s, ",\"last\":{},\"n\":{},\"node\":", self.last, self.n);
        push_str_lit(&mut s, &self.node);
        let _ = write!(s, ",\"pad\":{},\"seq\":{},\"session\":", self.pad, self.seq);
        push_str_lit(&mut s, &self.session);
        if let Some(st) = &self.state {
            s.push_str(",\"state\":{\"battery_v\":");
            push_real(&mut s, st.battery_v);
            let _ = write!(s, ",\"cause\":\"{}\",\"solar_ma\":", st.cause.as_str());
            push_real(&mut s, st.solar_ma);
            s.push_str(",\"temp_c\":");
            push_real(&mut s, st.temp_c);
            s.push('}');
        }
        let _ = write!(s, ",\"t0_ms\":{},\"total\":{}}}", self.t0_ms, self.total);
        s
    }
}

fn push_str_lit(out: &mut String, s: &str) {
    out.push_str(&serde_json::to_string(s).expect("string serialisation is infallible"));
}

fn push_real(out: &mut String, v: f64) {
    let _ = write!(out, "{v:.6}");
}

/// Rounds to the six-decimal wire resolution. Values produced by this
/// function survive an encode/decode cycle bit-exactly.
pub fn quantize(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

/// Uppercase hex of `bytes`, two digits per byte, no separators.
pub fn hex_frame(bytes: &[u8]) -> Vec<u8> {
    let mut out = hex::encode_upper(bytes).into_bytes();
    out.extend_from_slice(TERMINATOR);
    out
}

pub fn encode_packet(p: &Packet) -> Vec<u8> {
    hex_frame(p.canonical_json().as_bytes())
}

/// Strict inverse of [`encode_packet`]. Accepts the frame with or without the
/// trailing CRLF.
pub fn decode_packet(frame: &[u8]) -> Result<Packet, WireError> {
    let body = frame.strip_suffix(TERMINATOR).unwrap_or(frame);
    if !body.len().is_multiple_of(2) {
        return Err(WireError::Framing(format!("odd hex length {}", body.len())));
    }
    if let Some(pos) = body
        .iter()
        .position(|b| !matches!(*b, b'0'..=b'9' | b'A'..=b'F'))
    {
        return Err(WireError::Framing(format!(
            "byte {:?} at offset {pos} is not an uppercase hex digit",
            body[pos] as char
        )));
    }
    let json = hex::decode(body).map_err(|e| WireError::Framing(e.to_string()))?;
    let packet: Packet =
        serde_json::from_slice(&json).map_err(|e| WireError::Schema(e.to_string()))?;
    packet.validate()?;
    Ok(packet)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AckStatus {
    Ok,
    Err,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Ack {
    pub status: AckStatus,
    pub seq: u32,
}

pub fn ack_line(status: AckStatus, seq: u32) -> Vec<u8> {
    let word = match status {
        AckStatus::Ok => "OK",
        AckStatus::Err => "ERR",
    };
    format!("ACK {word} {seq}\r\n").into_bytes()
}

pub fn parse_ack(line: &[u8]) -> Result<Ack, WireError> {
    let err = || WireError::Protocol(format!("malformed ack {:?}", String::from_utf8_lossy(line)));
    let text = std::str::from_utf8(line).map_err(|_| err())?;
    let text = text.strip_suffix("\r\n").ok_or_else(err)?;
    let mut parts = text.split(' ');
    if parts.next() != Some("ACK") {
        return Err(err());
    }
    let status = match parts.next() {
        Some("OK") => AckStatus::Ok,
        Some("ERR") => AckStatus::Err,
        _ => return Err(err()),
    };
    let digits = parts.next().ok_or_else(err)?;
    if parts.next().is_some() || digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(err());
    }
    let seq: u32 = digits.parse().map_err(|_| err())?;
    if seq.to_string() != digits {
        return Err(err());
    }
    Ok(Ack { status, seq })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample_packet() -> Packet {
        Packet {
            db: "CHEONGDAM1_data".into(),
            node: "janet-01".into(),
            session: "janet-01-1626825600000".into(),
            seq: 0,
            total: 1,
            last: true,
            n: 8,
            pad: 0,
            t0_ms: 1_626_825_600_000,
            fs: 100.0,
            ch: DEFAULT_CHANNELS.iter().map(|s| s.to_string()).collect(),
            data: (0..8)
                .map(|r| {
                    (0..6)
                        .map(|c| quantize(r as f64 * 0.1 - c as f64 * 1.25))
                        .collect()
                })
                .collect(),
            state: None,
        }
    }

    #[test]
    fn cau_frames_as_434155() {
        assert_eq!(hex_frame(b"CAU"), b"434155\r\n");
        assert!(encode_packet(&sample_packet()).starts_with(b"7B22"));
    }

    /// The worked example of the wire format document.
    #[test]
    fn documented_final_packet_frame() {
        let p = Packet {
            db: "CHEONGDAM1_data".into(),
            node: "janet-01".into(),
            session: "janet-01-1626850801500".into(),
            seq: 2,
            total: 3,
            last: true,
            n: 2,
            pad: 1,
            t0_ms: 1_626_850_801_500,
            fs: 100.0,
            ch: vec!["ax".into(), "s1".into()],
            data: vec![vec![0.012345, -1.5], vec![0.0, 0.0]],
            state: None,
        };
        let frame = encode_packet(&p);
        assert_eq!(frame.len(), 454);
        assert_eq!(
            std::str::from_utf8(&frame).unwrap(),
            "7B226368223A5B226178222C227331225D2C2264617461223A5B5B302E3031323334352C2D312E3530303030305D2C5B302E3030303030302C302E3030303030305D5D2C226462223A224348454F4E4744414D315F64617461222C226673223A3130302E3030303030302C226C617374223A747275652C226E223A322C226E6F6465223A226A616E65742D3031222C22706164223A312C22736571223A322C2273657373696F6E223A226A616E65742D30312D31363236383530383031353030222C2274305F6D73223A313632363835303830313530302C22746F74616C223A337D\r\n"
        );
        assert_eq!(
            decode_packet(&frame).unwrap().samples(),
            &[vec![0.012345, -1.5]]
        );
    }

    #[test]
    fn canonical_json_shape() {
        let mut p = sample_packet();
        p.data = vec![vec![1.0, -0.5, 0.0, 12.345678, 0.0, 0.0]];
        p.n = 1;
        let json = p.canonical_json();
        assert!(json.starts_with(r#"{"ch":["ax","ay","az","s1","s2","s3"],"data":[[1.000000,-0.500000,0.000000,12.345678,0.000000,0.000000]],"db":"CHEONGDAM1_data","fs":100.000000,"last":true,"n":1,"node":"janet-01","pad":0,"seq":0,"#));
        assert!(json.ends_with(r#""t0_ms":1626825600000,"total":1}"#));
        assert!(!json.contains(' '));
    }

    #[test]
    fn round_trip_and_length_rule() {
        let mut p = sample_packet();
        p.state = Some(SessionState {
            battery_v: 3.91,
            cause: TriggerCause::Vibration,
            solar_ma: 120.5,
            temp_c: -3.25,
        });
        let frame = encode_packet(&p);
        assert_eq!(frame.len(), 2 * p.canonical_json().len() + 2);
        assert_eq!(decode_packet(&frame).unwrap(), p);
    }

    #[test]
    fn framing_errors() {
        assert!(matches!(
            decode_packet(b"7B2\r\n"),
            Err(WireError::Framing(_))
        ));
        assert!(matches!(
            decode_packet(b"4G\r\n"),
            Err(WireError::Framing(_))
        ));
        assert!(matches!(
            decode_packet(b"7b7d\r\n"),
            Err(WireError::Framing(_))
        ));
    }

    #[test]
    fn schema_errors() {
        let mut p = sample_packet();
        p.n = 7;
        assert!(matches!(
            decode_packet(&encode_packet(&p)),
            Err(WireError::Schema(_))
        ));

        let json = sample_packet()
            .canonical_json()
            .replacen('{', "{\"extra\":1,", 1);
        assert!(matches!(
            decode_packet(&hex_frame(json.as_bytes())),
            Err(WireError::Schema(_))
        ));

        let mut p = sample_packet();
        p.data[3].pop();
        assert!(matches!(
            decode_packet(&encode_packet(&p)),
            Err(WireError::Schema(_))
        ));

        let mut p = sample_packet();
        p.last = false;
        assert!(matches!(
            decode_packet(&encode_packet(&p)),
            Err(WireError::Schema(_))
        ));
    }

    #[test]
    fn ack_grammar() {
        assert_eq!(ack_line(AckStatus::Ok, 42), b"ACK OK 42\r\n");
        assert_eq!(
            parse_ack(b"ACK ERR 7\r\n").unwrap(),
            Ack {
                status: AckStatus::Err,
                seq: 7
            }
        );
        for bad in [
            &b"HELLO"[..],
            b"ACK OK 7",
            b"ACK OK\r\n",
            b"ACK MAYBE 1\r\n",
            b"ACK OK 07\r\n",
            b"ACK OK 1 2\r\n",
            b"ACK OK -1\r\n",
        ] {
            assert!(
                matches!(parse_ack(bad), Err(WireError::Protocol(_))),
                "{bad:?}"
            );
        }
    }

    #[test]
    fn quantize_is_idempotent() {
        for v in [0.1234567, -2.5e-7, 1234.5678915, 0.0] {
            let q = quantize(v);
            assert_eq!(quantize(q), q);
            assert_eq!(format!("{q:.6}").parse::<f64>().unwrap(), q);
        }
    }
}
