//! Link capture files and their replay against the simulated controllers.
//!
//! One line per frame: direction, seconds since session start, frame text.
//!
//! ```text
//! # endpoint=speed
//! > 0.02000 HB:20
//! > 0.02000 BV
//! < 0.02000 BV:2400
//! ! 0.50000 ignition
//! ```
//!
//! `>` is host to controller, `<` controller to host, `!` a panel input
//! (`dmh press`, `dmh release`, `ignition`, `fuse`). Frame text is the wire
//! line without its terminator; bytes outside printable ASCII are escaped
//! as `\xNN`, and `\` as `\\`.

use std::fmt::Write as _;
use std::time::Duration;

use crate::protocol::{decode, Endpoint, TERMINATOR};
use crate::simulator::{PanelInput, SimConfig, SimVehicle};
use crate::telemetry::TelemetryRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    ToController,
    FromController,
    Panel,
}

impl Direction {
    fn marker(self) -> char {
        match self {
            Direction::ToController => '>',
            Direction::FromController => '<',
            Direction::Panel => '!',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptureEntry {
    pub direction: Direction,
    pub at: Duration,
    /// Wire line without terminator, or the panel input name.
    pub body: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Capture {
    pub endpoint: Endpoint,
    pub entries: Vec<CaptureEntry>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CaptureError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

fn escape(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len());
    for &b in bytes {
        match b {
            b'\\' => s.push_str("\\\\"),
            0x21..=0x7e | b' ' => s.push(b as char),
            _ => {
                let _ = write!(s, "\\x{b:02x}");
            }
        }
    }
    s
}

fn unescape(s: &str) -> Option<Vec<u8>> {
    let mut out = Vec::with_capacity(s.len());
    let mut it = s.bytes();
    while let Some(b) = it.next() {
        if b != b'\\' {
            out.push(b);
            continue;
        }
        match it.next()? {
            b'\\' => out.push(b'\\'),
            b'x' => {
                let hi = (it.next()? as char).to_digit(16)?;
                let lo = (it.next()? as char).to_digit(16)?;
                out.push((hi * 16 + lo) as u8);
            }
            _ => return None,
        }
    }
    Some(out)
}

pub fn panel_name(input: PanelInput) -> &'static str {
    match input {
        PanelInput::DmhPress => "dmh press",
        PanelInput::DmhRelease => "dmh release",
        PanelInput::Ignition => "ignition",
        PanelInput::BlowFuse => "fuse",
    }
}

pub fn parse_panel(name: &[u8]) -> Option<PanelInput> {
    Some(match name {
        b"dmh press" => PanelInput::DmhPress,
        b"dmh release" => PanelInput::DmhRelease,
        b"ignition" => PanelInput::Ignition,
        b"fuse" => PanelInput::BlowFuse,
        _ => return None,
    })
}

impl Capture {
    pub fn new(endpoint: Endpoint) -> Self {
        Self { endpoint, entries: Vec::new() }
    }

    /// Records every complete line in `bytes`; partial trailing lines are
    /// recorded as they are.
    pub fn record(&mut self, direction: Direction, at: Duration, bytes: &[u8]) {
        for line in bytes.split_inclusive(|b| *b == TERMINATOR) {
            let body = line.strip_suffix(&[TERMINATOR]).unwrap_or(line);
            self.entries.push(CaptureEntry { direction, at, body: body.to_vec() });
        }
    }

    pub fn record_panel(&mut self, at: Duration, input: PanelInput) {
        self.entries.push(CaptureEntry { direction: Direction::Panel, at, body: panel_name(input).into() });
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("# endpoint={}\n", self.endpoint);
        for e in &self.entries {
            let _ = writeln!(s, "{} {:.5} {}", e.direction.marker(), e.at.as_secs_f64(), escape(&e.body));
        }
        s
    }

    /// Parses capture text. Without a header the endpoint defaults to the
    /// speed link.
    pub fn parse(text: &str) -> Result<Self, CaptureError> {
        let mut cap = Capture::new(Endpoint::SpeedController);
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |message: &str| CaptureError::Parse { line, message: message.to_string() };
            if let Some(comment) = raw.strip_prefix('#') {
                if let Some(ep) = comment.trim().strip_prefix("endpoint=") {
                    cap.endpoint = ep.trim().parse().map_err(|_| err("unknown endpoint"))?;
                }
                continue;
            }
            if raw.trim().is_empty() {
                continue;
            }
            let mut parts = raw.splitn(3, ' ');
            let direction = match parts.next() {
                Some(">") => Direction::ToController,
                Some("<") => Direction::FromController,
                Some("!") => Direction::Panel,
                _ => return Err(err("expected direction '>', '<' or '!'")),
            };
            let secs: f64 = parts
                .next()
                .and_then(|t| t.parse().ok())
                .filter(|t: &f64| t.is_finite() && *t >= 0.0)
                .ok_or_else(|| err("bad timestamp"))?;
            let body = unescape(parts.next().unwrap_or("")).ok_or_else(|| err("bad escape"))?;
            if direction == Direction::Panel && parse_panel(&body).is_none() {
                return Err(err("unknown panel input"));
            }
            cap.entries.push(CaptureEntry { direction, at: Duration::from_secs_f64(secs), body });
        }
        Ok(cap)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplayReport {
    pub frames_sent: usize,
    pub replies_expected: usize,
    pub replies_produced: usize,
    /// Recorded controller lines that the replay did not reproduce, in order.
    pub mismatches: Vec<(Duration, String, String)>,
    pub telemetry: Vec<TelemetryRecord>,
}

/// Replays the host side of one or more captures into a fresh simulated
/// vehicle, merged by timestamp, and compares its replies with the recorded
/// controller lines.
pub fn replay(captures: &[Capture], cfg: SimConfig) -> ReplayReport {
    let mut events: Vec<(Duration, usize, Endpoint, &CaptureEntry)> = Vec::new();
    for cap in captures {
        for e in &cap.entries {
            events.push((e.at, events.len(), cap.endpoint, e));
        }
    }
    events.sort_by_key(|(at, seq, _, _)| (*at, *seq));

    let mut sim = SimVehicle::new(cfg);
    let mut report = ReplayReport::default();
    let mut produced: Vec<(Endpoint, Vec<u8>)> = Vec::new();
    let mut expected: Vec<(Endpoint, Duration, Vec<u8>)> = Vec::new();
    let end = events.last().map_or(Duration::ZERO, |e| e.0);

    let mut idx = 0;
    loop {
        while idx < events.len() && events[idx].0 <= sim.now() {
            let (at, _, endpoint, entry) = events[idx];
            match entry.direction {
                Direction::ToController => {
                    let mut line = entry.body.clone();
                    line.push(TERMINATOR);
                    report.frames_sent += 1;
                    let out = sim.receive(endpoint, &line);
                    for l in out.split(|b| *b == TERMINATOR).filter(|l| !l.is_empty()) {
                        produced.push((endpoint, l.to_vec()));
                    }
                }
                Direction::FromController => expected.push((endpoint, at, entry.body.clone())),
                Direction::Panel => {
                    if let Some(input) = parse_panel(&entry.body) {
                        sim.panel(input);
                    }
                }
            }
            idx += 1;
        }
        if idx >= events.len() && sim.now() >= end {
            break;
        }
        sim.advance();
        if sim.telemetry_due() {
            report.telemetry.push(sim.telemetry());
        }
    }

    report.replies_expected = expected.len();
    report.replies_produced = produced.len();
    let mut got = produced.into_iter();
    for (endpoint, at, want) in expected {
        let have = got.by_ref().find(|(ep, _)| *ep == endpoint).map(|(_, l)| l).unwrap_or_default();
        let same = decode(&have, endpoint) == decode(&want, endpoint);
        if !same {
            report.mismatches.push((at, escape(&want), escape(&have)));
        }
    }
    report
}
