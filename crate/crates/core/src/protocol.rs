//! ASCII line protocol spoken to the speed controller and the steering
//! controller.
//!
//! ```text
//! FA:<decimal>\n      command (speed byte or steering count, per link)
//! BV\n                battery-voltage query
//! BV:<centivolts>\n   battery-voltage reply
//! HB:<millis>\n       heartbeat with a host timestamp
//! ```
//!
//! Decoding is total and stateless: any byte sequence yields exactly one
//! [`Frame`], with unparseable input preserved as [`Frame::Malformed`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TERMINATOR: u8 = b'\n';
pub const STEER_MIN: u16 = 1000;
pub const STEER_MAX: u16 = 2500;

/// Longest decimal field accepted, the width of `u64::MAX`.
const MAX_DIGITS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Endpoint {
    SpeedController,
    SteeringController,
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Endpoint::SpeedController => "speed",
            Endpoint::SteeringController => "steering",
        })
    }
}

impl FromStr for Endpoint {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "speed" | "speedcontroller" => Ok(Endpoint::SpeedController),
            "steering" | "steeringcontroller" => Ok(Endpoint::SteeringController),
            other => Err(format!("unknown endpoint `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkConfig {
    pub baud: u32,
    pub line_terminator: Vec<u8>,
    pub endpoint: Endpoint,
}

impl LinkConfig {
    pub fn new(endpoint: Endpoint) -> Self {
        Self { baud: 112_000, line_terminator: vec![TERMINATOR], endpoint }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Frame {
    SpeedCmd(u8),
    SteerCmd(u16),
    BatteryQuery,
    /// Battery voltage in centivolts.
    BatteryReply(u32),
    /// Host timestamp in milliseconds.
    Heartbeat(u64),
    /// Anything that did not parse, byte for byte (terminator stripped).
    Malformed(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("steering count {0} outside [{STEER_MIN}, {STEER_MAX}]")]
    SteerOutOfRange(u16),
    #[error("malformed frames cannot be encoded")]
    Malformed,
}

impl Frame {
    pub fn is_well_formed(&self) -> bool {
        match self {
            Frame::SteerCmd(c) => (STEER_MIN..=STEER_MAX).contains(c),
            Frame::Malformed(_) => false,
            _ => true,
        }
    }

    /// Whether `endpoint` accepts this frame kind. The steering controller
    /// has no battery monitor.
    pub fn valid_on(&self, endpoint: Endpoint) -> bool {
        match (self, endpoint) {
            (Frame::SpeedCmd(_), Endpoint::SpeedController) => true,
            (Frame::SteerCmd(c), Endpoint::SteeringController) => {
                (STEER_MIN..=STEER_MAX).contains(c)
            }
            (Frame::BatteryQuery | Frame::BatteryReply(_), Endpoint::SpeedController) => true,
            (Frame::Heartbeat(_), _) => true,
            _ => false,
        }
    }

    /// Frame text without the terminator.
    pub fn body(&self) -> Result<String, EncodeError> {
        Ok(match self {
            Frame::SpeedCmd(v) => format!("FA:{v}"),
            Frame::SteerCmd(v) if (STEER_MIN..=STEER_MAX).contains(v) => format!("FA:{v}"),
            Frame::SteerCmd(v) => return Err(EncodeError::SteerOutOfRange(*v)),
            Frame::BatteryQuery => "BV".to_owned(),
            Frame::BatteryReply(cv) => format!("BV:{cv}"),
            Frame::Heartbeat(ms) => format!("HB:{ms}"),
            Frame::Malformed(_) => return Err(EncodeError::Malformed),
        })
    }
}

pub fn encode(frame: &Frame) -> Result<Vec<u8>, EncodeError> {
    let mut out = frame.body()?.into_bytes();
    out.push(TERMINATOR);
    Ok(out)
}

/// Canonical unsigned decimal: digits only, no sign, no leading zeros.
fn parse_decimal(field: &[u8]) -> Option<u64> {
    if field.is_empty() || field.len() > MAX_DIGITS || !field.iter().all(u8::is_ascii_digit) {
        return None;
    }
    if field.len() > 1 && field[0] == b'0' {
        return None;
    }
    field.iter().try_fold(0u64, |acc, d| acc.checked_mul(10)?.checked_add(u64::from(d - b'0')))
}

/// Decodes one terminator-delimited line. A single trailing `\n` (optionally
/// preceded by `\r`) is stripped; nothing else is forgiven.
pub fn decode(line: &[u8], endpoint: Endpoint) -> Frame {
    let mut body = line;
    if let Some(rest) = body.strip_suffix(b"\n") {
        body = rest.strip_suffix(b"\r").unwrap_or(rest);
    }
    let malformed = || Frame::Malformed(body.to_vec());
    let frame = if body == b"BV" {
        Some(Frame::BatteryQuery)
    } else if let Some(field) = body.strip_prefix(b"FA:") {
        parse_decimal(field).and_then(|v| match endpoint {
            Endpoint::SpeedController => u8::try_from(v).ok().map(Frame::SpeedCmd),
            Endpoint::SteeringController => u16::try_from(v)
                .ok()
                .filter(|c| (STEER_MIN..=STEER_MAX).contains(c))
                .map(Frame::SteerCmd),
        })
    } else if let Some(field) = body.strip_prefix(b"BV:") {
        parse_decimal(field).and_then(|v| u32::try_from(v).ok()).map(Frame::BatteryReply)
    } else if let Some(field) = body.strip_prefix(b"HB:") {
        parse_decimal(field).map(Frame::Heartbeat)
    } else {
        None
    };
    match frame {
        Some(f) if f.valid_on(endpoint) => f,
        _ => malformed(),
    }
}

/// Splits a byte stream into lines, keeping the partial tail for the next
/// read. Each complete line is handed to [`decode`] independently.
#[derive(Debug, Default, Clone)]
pub struct LineBuffer {
    pending: Vec<u8>,
}

/// Lines longer than this are cut and reported as malformed.
pub const MAX_LINE: usize = 64;

impl LineBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) -> Vec<Vec<u8>> {
        let mut lines = Vec::new();
        for &b in bytes {
            self.pending.push(b);
            if b == TERMINATOR || self.pending.len() >= MAX_LINE {
                lines.push(std::mem::take(&mut self.pending));
            }
        }
        lines
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn encode_examples() {
        assert_eq!(encode(&Frame::SpeedCmd(210)).unwrap(), b"FA:210\n");
        assert_eq!(encode(&Frame::BatteryQuery).unwrap(), b"BV\n");
        assert_eq!(encode(&Frame::Heartbeat(1500)).unwrap(), b"HB:1500\n");
        assert_eq!(encode(&Frame::BatteryReply(2400)).unwrap(), b"BV:2400\n");
        assert_eq!(encode(&Frame::SteerCmd(999)), Err(EncodeError::SteerOutOfRange(999)));
        assert!(encode(&Frame::Malformed(vec![1])).is_err());
    }

    #[test]
    fn decode_examples() {
        assert_eq!(decode(b"FA:170\n", Endpoint::SpeedController), Frame::SpeedCmd(170));
        assert_eq!(decode(b"FA:1900\n", Endpoint::SteeringController), Frame::SteerCmd(1900));
        assert_eq!(
            decode(b"FA:9999\n", Endpoint::SteeringController),
            Frame::Malformed(b"FA:9999".to_vec())
        );
        // A steering count never reaches the speed path.
        assert!(matches!(decode(b"FA:1900\n", Endpoint::SpeedController), Frame::Malformed(_)));
        assert!(matches!(decode(b"BV\n", Endpoint::SteeringController), Frame::Malformed(_)));
    }

    #[test]
    fn non_canonical_numbers_are_malformed() {
        for line in [&b"FA:0170\n"[..], b"FA:+17\n", b"FA:\n", b"FA: 17\n", b"HB:-1\n", b"FA:17\n\n"] {
            assert!(matches!(decode(line, Endpoint::SpeedController), Frame::Malformed(_)));
        }
        assert_eq!(decode(b"FA:0", Endpoint::SpeedController), Frame::SpeedCmd(0));
        assert_eq!(decode(b"HB:5\r\n", Endpoint::SpeedController), Frame::Heartbeat(5));
    }

    #[test]
    fn line_buffer_keeps_tail() {
        let mut buf = LineBuffer::new();
        assert!(buf.push(b"FA:1").is_empty());
        assert_eq!(buf.push(b"70\nBV\nHB"), vec![b"FA:170\n".to_vec(), b"BV\n".to_vec()]);
        assert_eq!(buf.push(b":1\n"), vec![b"HB:1\n".to_vec()]);
    }

    fn arb_frame() -> impl Strategy<Value = (Frame, Endpoint)> {
        prop_oneof![
            any::<u8>().prop_map(|v| (Frame::SpeedCmd(v), Endpoint::SpeedController)),
            (STEER_MIN..=STEER_MAX).prop_map(|v| (Frame::SteerCmd(v), Endpoint::SteeringController)),
            Just((Frame::BatteryQuery, Endpoint::SpeedController)),
            any::<u32>().prop_map(|v| (Frame::BatteryReply(v), Endpoint::SpeedController)),
            any::<u64>().prop_map(|v| (Frame::Heartbeat(v), Endpoint::SteeringController)),
        ]
    }

    proptest! {
        #[test]
        fn round_trip((frame, ep) in arb_frame()) {
            let bytes = encode(&frame).unwrap();
            prop_assert_eq!(bytes.iter().filter(|&&b| b == TERMINATOR).count(), 1);
            prop_assert!(bytes[..bytes.len() - 1].iter().all(|b| b.is_ascii_graphic()));
            prop_assert_eq!(decode(&bytes, ep), frame);
        }

        #[test]
        fn decode_is_total(line in proptest::collection::vec(any::<u8>(), 0..40)) {
            for ep in [Endpoint::SpeedController, Endpoint::SteeringController] {
                let f = decode(&line, ep);
                if f.is_well_formed() {
                    // Well-formed output re-encodes to the canonical line.
                    let mut canon = line.clone();
                    if !canon.ends_with(b"\n") { canon.push(b'\n'); }
                    let re = encode(&f).unwrap();
                    prop_assert!(canon == re || canon.ends_with(b"\r\n"));
                }
            }
        }
    }
}
