//! Operator gateway: a TCP session protocol in front of a [`Stack`].
//!
//! Frames are a 4-byte big-endian length followed by that many bytes of
//! UTF-8 JSON. Every record carries `"v": 1` and a `"type"`. See
//! `protocol.md` at the repository root for the full message list.
//!
//! The session logic ([`GatewayCore`]) is synchronous and driven by the
//! control loop, so it can be tested tick by tick without sockets.
//! [`serve`] wraps it with one reader and one writer thread per client.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::bus::{ControlMode, GoalRequest, JoystickSample, OperatorEvent};
use crate::planner::GoalTolerance;
use crate::pose::Pose2D;
use crate::stack::Stack;
use crate::telemetry::TelemetryRecord;

pub const VERSION: u32 = 1;
pub const MAX_FRAME: usize = 64 * 1024;
pub const DMH_FRESHNESS: Duration = Duration::from_millis(200);

pub type SessionId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Operator,
    Observer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ClientMsg {
    Hello {
        role: Role,
    },
    /// Press state with the client's own clock, seconds.
    Dmh {
        pressed: bool,
        stamp: f64,
    },
    Joy {
        x: f64,
        y: f64,
    },
    Ignition,
    Goto {
        x: f64,
        y: f64,
        heading_deg: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tol_position: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tol_heading: Option<f64>,
    },
    Mode {
        mode: ControlMode,
    },
    Cancel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerMsg {
    Welcome { session: SessionId, role: Role },
    Telemetry { record: Box<TelemetryRecord> },
    Error { message: String },
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    v: u32,
    #[serde(flatten)]
    msg: T,
}

pub fn encode_frame<T: Serialize>(msg: &T) -> Vec<u8> {
    let body = serde_json::to_vec(&Envelope { v: VERSION, msg }).expect("messages serialize");
    let mut out = (body.len() as u32).to_be_bytes().to_vec();
    out.extend(body);
    out
}

/// Parses one frame body (without the length prefix).
pub fn decode_body<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, String> {
    let env: Envelope<T> = serde_json::from_slice(body).map_err(|e| format!("bad record: {e}"))?;
    if env.v != VERSION {
        return Err(format!("unsupported version {}", env.v));
    }
    Ok(env.msg)
}

/// Reads one length-prefixed frame body. `Ok(None)` on clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let n = u32::from_be_bytes(len) as usize;
    if n > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame of {n} bytes exceeds {MAX_FRAME}")));
    }
    let mut body = vec![0u8; n];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}

/// Dead-man's-handle authority held by the operator session. A press counts
/// only while refreshed within the freshness window.
#[derive(Debug, Clone)]
pub struct DmhArbiter {
    freshness: Duration,
    held: bool,
    last_fresh: Duration,
    last_stamp: Option<f64>,
}

impl DmhArbiter {
    pub fn new(freshness: Duration) -> Self {
        Self { freshness, held: false, last_fresh: Duration::ZERO, last_stamp: None }
    }

    pub fn held(&self) -> bool {
        self.held
    }

    /// A press-state message. Stamps that go backwards are ignored.
    pub fn update(&mut self, pressed: bool, stamp: f64, now: Duration) -> Option<OperatorEvent> {
        if !stamp.is_finite() || self.last_stamp.is_some_and(|s| stamp < s) {
            return None;
        }
        self.last_stamp = Some(stamp);
        if pressed {
            self.last_fresh = now;
            (!std::mem::replace(&mut self.held, true)).then_some(OperatorEvent::DmhPress)
        } else {
            self.release()
        }
    }

    pub fn release(&mut self) -> Option<OperatorEvent> {
        std::mem::replace(&mut self.held, false).then_some(OperatorEvent::DmhRelease)
    }

    /// Releases if no fresh press arrived within the window.
    pub fn expire(&mut self, now: Duration) -> Option<OperatorEvent> {
        if self.held && now.saturating_sub(self.last_fresh) >= self.freshness {
            self.release()
        } else {
            None
        }
    }

    /// Forgets the client clock, for a new operator session.
    pub fn reset(&mut self) -> Option<OperatorEvent> {
        self.last_stamp = None;
        self.release()
    }
}

/// Session bookkeeping and operator authority.
#[derive(Debug)]
pub struct GatewayCore {
    roles: BTreeMap<SessionId, Role>,
    operator: Option<SessionId>,
    dmh: DmhArbiter,
    errors: u64,
}

impl GatewayCore {
    pub fn new(freshness: Duration) -> Self {
        Self { roles: BTreeMap::new(), operator: None, dmh: DmhArbiter::new(freshness), errors: 0 }
    }

    pub fn operator(&self) -> Option<SessionId> {
        self.operator
    }

    pub fn sessions(&self) -> impl Iterator<Item = SessionId> + '_ {
        self.roles.keys().copied()
    }

    pub fn errors(&self) -> u64 {
        self.errors
    }

    pub fn dmh_held(&self) -> bool {
        self.dmh.held()
    }

    pub fn connect(&mut self, id: SessionId) -> ServerMsg {
        self.roles.insert(id, Role::Observer);
        ServerMsg::Welcome { session: id, role: Role::Observer }
    }

    /// A dropped session; the operator's handle is released at once.
    pub fn disconnect(&mut self, id: SessionId, stack: &mut Stack) {
        self.roles.remove(&id);
        if self.operator == Some(id) {
            self.operator = None;
            if let Some(ev) = self.dmh.reset() {
                stack.operator(ev);
            }
        }
    }

    fn error(&mut self, message: impl Into<String>) -> Vec<ServerMsg> {
        self.errors += 1;
        vec![ServerMsg::Error { message: message.into() }]
    }

    /// Handles one frame body and returns the replies for that session.
    pub fn frame(&mut self, id: SessionId, body: &[u8], stack: &mut Stack) -> Vec<ServerMsg> {
        match decode_body::<ClientMsg>(body) {
            Ok(msg) => self.message(id, msg, stack),
            Err(e) => self.error(e),
        }
    }

    pub fn message(&mut self, id: SessionId, msg: ClientMsg, stack: &mut Stack) -> Vec<ServerMsg> {
        if !self.roles.contains_key(&id) {
            return self.error("unknown session");
        }
        if let ClientMsg::Hello { role } = msg {
            return match role {
                Role::Operator if self.operator.is_some_and(|o| o != id) => {
                    self.error("operator role is held by another session")
                }
                Role::Operator => {
                    if self.operator != Some(id) {
                        self.operator = Some(id);
                        if let Some(ev) = self.dmh.reset() {
                            stack.operator(ev);
                        }
                    }
                    self.roles.insert(id, Role::Operator);
                    vec![ServerMsg::Welcome { session: id, role }]
                }
                Role::Observer => {
                    if self.operator == Some(id) {
                        self.disconnect(id, stack);
                    }
                    self.roles.insert(id, Role::Observer);
                    vec![ServerMsg::Welcome { session: id, role }]
                }
            };
        }
        if self.operator != Some(id) {
            return self.error("observer sessions cannot send commands");
        }
        let now = stack.now();
        match msg {
            ClientMsg::Hello { .. } => unreachable!("handled above"),
            ClientMsg::Dmh { pressed, stamp } => {
                if let Some(ev) = self.dmh.update(pressed, stamp, now) {
                    stack.operator(ev);
                }
            }
            ClientMsg::Joy { x, y } => stack.joystick(JoystickSample::new(x, y)),
            ClientMsg::Ignition => stack.operator(OperatorEvent::Ignition),
            ClientMsg::Mode { mode } => stack.operator(OperatorEvent::SetMode(mode)),
            ClientMsg::Cancel => stack.operator(OperatorEvent::CancelGoal),
            ClientMsg::Goto { x, y, heading_deg, tol_position, tol_heading } => {
                let d = GoalTolerance::default();
                let Some(tol) =
                    GoalTolerance::new(tol_position.unwrap_or(d.position), tol_heading.unwrap_or(d.heading))
                else {
                    return self.error("tolerances must be positive");
                };
                if ![x, y, heading_deg].iter().all(|v| v.is_finite()) {
                    return self.error("goal must be finite");
                }
                stack.goto(GoalRequest { pose: Pose2D::new(x, y, heading_deg.to_radians()), tol });
            }
        }
        Vec::new()
    }

    /// Freshness check; call once per control tick before [`Stack::tick`].
    pub fn tick(&mut self, stack: &mut Stack) {
        if let Some(ev) = self.dmh.expire(stack.now()) {
            stack.operator(ev);
        }
    }
}

enum Inbound {
    Connected(SessionId, Sender<Vec<u8>>),
    Frame(SessionId, Vec<u8>),
    Fatal(SessionId, String),
    Disconnected(SessionId),
}

fn reader(id: SessionId, mut stream: TcpStream, tx: Sender<Inbound>) {
    loop {
        match read_frame(&mut stream) {
            Ok(Some(body)) => {
                if tx.send(Inbound::Frame(id, body)).is_err() {
                    return;
                }
            }
            Ok(None) => break,
            Err(e) => {
                let _ = tx.send(Inbound::Fatal(id, e.to_string()));
                break;
            }
        }
    }
    let _ = tx.send(Inbound::Disconnected(id));
}

fn writer(mut stream: TcpStream, rx: Receiver<Vec<u8>>) {
    for frame in rx {
        if stream.write_all(&frame).is_err() {
            break;
        }
    }
    let _ = stream.shutdown(std::net::Shutdown::Both);
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub freshness: Duration,
    /// Pace ticks to wall-clock time.
    pub realtime: bool,
    /// Stop after this much simulated time.
    pub duration: Option<Duration>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self { freshness: DMH_FRESHNESS, realtime: true, duration: None }
    }
}

/// Runs the stack behind `listener` until `stop` is set or the duration
/// elapses. Every telemetry record goes to every session and to `sink`.
pub fn serve(
    stack: &mut Stack,
    listener: TcpListener,
    opts: ServeOptions,
    stop: Arc<AtomicBool>,
    mut sink: impl FnMut(&TelemetryRecord),
) -> io::Result<()> {
    let (tx, rx) = channel::<Inbound>();
    listener.set_nonblocking(true)?;
    let accept_stop = stop.clone();
    let accept = thread::spawn(move || {
        let mut next_id: SessionId = 1;
        while !accept_stop.load(Ordering::Relaxed) {
            match listener.accept() {
                Ok((stream, _)) => {
                    let _ = stream.set_nonblocking(false);
                    let _ = stream.set_nodelay(true);
                    let Ok(read_half) = stream.try_clone() else { continue };
                    let (out_tx, out_rx) = channel();
                    let id = next_id;
                    next_id += 1;
                    if tx.send(Inbound::Connected(id, out_tx)).is_err() {
                        return;
                    }
                    thread::spawn(move || writer(stream, out_rx));
                    let tx = tx.clone();
                    thread::spawn(move || reader(id, read_half, tx));
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
                Err(_) => thread::sleep(Duration::from_millis(5)),
            }
        }
    });

    let tick = Duration::from_secs_f64(stack.config().sim.dt * stack.config().sim.steps_per_tick() as f64);
    let mut core = GatewayCore::new(opts.freshness);
    let mut outbox: BTreeMap<SessionId, Sender<Vec<u8>>> = BTreeMap::new();
    let start = Instant::now();
    let end = opts.duration.map(|d| stack.now() + d);
    let mut ticks: u32 = 0;

    while !stop.load(Ordering::Relaxed) && end.is_none_or(|e| stack.now() < e) {
        for msg in rx.try_iter() {
            match msg {
                Inbound::Connected(id, out) => {
                    let _ = out.send(encode_frame(&core.connect(id)));
                    outbox.insert(id, out);
                }
                Inbound::Frame(id, body) => {
                    for reply in core.frame(id, &body, stack) {
                        if let Some(out) = outbox.get(&id) {
                            let _ = out.send(encode_frame(&reply));
                        }
                    }
                }
                Inbound::Fatal(id, message) => {
                    if let Some(out) = outbox.get(&id) {
                        let _ = out.send(encode_frame(&ServerMsg::Error { message }));
                    }
                }
                Inbound::Disconnected(id) => {
                    outbox.remove(&id);
                    core.disconnect(id, stack);
                }
            }
        }
        core.tick(stack);
        for rec in stack.tick() {
            sink(&rec);
            let frame = encode_frame(&ServerMsg::Telemetry { record: Box::new(rec) });
            outbox.retain(|_, out| out.send(frame.clone()).is_ok());
        }
        ticks += 1;
        if opts.realtime {
            let due = start + tick * ticks;
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                thread::sleep(wait);
            }
        }
    }
    stop.store(true, Ordering::Relaxed);
    drop(outbox);
    let _ = accept.join();
    Ok(())
}

/// Minimal blocking client, used by tests and tools.
pub struct Client {
    stream: TcpStream,
}

impl Client {
    pub fn connect(addr: SocketAddr) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self { stream })
    }

    pub fn send(&mut self, msg: &ClientMsg) -> io::Result<()> {
        self.stream.write_all(&encode_frame(msg))
    }

    pub fn send_raw(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.stream.write_all(bytes)
    }

    pub fn recv(&mut self) -> io::Result<Option<ServerMsg>> {
        match read_frame(&mut self.stream)? {
            Some(body) => decode_body(&body).map(Some).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e)),
            None => Ok(None),
        }
    }

    pub fn set_read_timeout(&self, t: Option<Duration>) -> io::Result<()> {
        self.stream.set_read_timeout(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::safety::Mode;
    use crate::stack::StackConfig;

    fn session() -> (GatewayCore, Stack, SessionId) {
        let mut core = GatewayCore::new(DMH_FRESHNESS);
        let stack = Stack::new(StackConfig::default());
        core.connect(1);
        (core, stack, 1)
    }

    fn hold(core: &mut GatewayCore, stack: &mut Stack, id: SessionId) {
        let stamp = stack.now().as_secs_f64();
        core.message(id, ClientMsg::Dmh { pressed: true, stamp }, stack);
    }

    #[test]
    fn wire_format_is_versioned_json_with_length_prefix() {
        let f = encode_frame(&ClientMsg::Ignition);
        assert_eq!(&f[..4], &(f.len() as u32 - 4).to_be_bytes());
        assert_eq!(&f[4..], br#"{"v":1,"type":"ignition"}"#);
        assert_eq!(decode_body::<ClientMsg>(&f[4..]).unwrap(), ClientMsg::Ignition);
        assert!(decode_body::<ClientMsg>(br#"{"v":2,"type":"ignition"}"#).is_err());
        assert!(decode_body::<ClientMsg>(b"\xff\x00").is_err());
    }

    #[test]
    fn operator_arms_with_fresh_dmh() {
        let (mut core, mut stack, id) = session();
        core.message(id, ClientMsg::Hello { role: Role::Operator }, &mut stack);
        hold(&mut core, &mut stack, id);
        core.message(id, ClientMsg::Ignition, &mut stack);
        for _ in 0..5 {
            hold(&mut core, &mut stack, id);
            core.tick(&mut stack);
            stack.tick();
        }
        assert_eq!(stack.safety_mode(), Mode::Armed);
    }

    #[test]
    fn silence_disarms_after_the_window() {
        let (mut core, mut stack, id) = session();
        core.message(id, ClientMsg::Hello { role: Role::Operator }, &mut stack);
        hold(&mut core, &mut stack, id);
        core.message(id, ClientMsg::Ignition, &mut stack);
        core.tick(&mut stack);
        stack.tick();
        assert_eq!(stack.safety_mode(), Mode::Armed);
        let silent_from = stack.now();
        while stack.safety_mode() == Mode::Armed {
            core.tick(&mut stack);
            stack.tick();
        }
        let waited = stack.now() - silent_from;
        assert!(waited <= DMH_FRESHNESS + Duration::from_millis(20), "{waited:?}");
        assert_eq!(stack.safety_mode(), Mode::PowerOff);
    }

    #[test]
    fn disconnect_disarms_next_tick() {
        let (mut core, mut stack, id) = session();
        core.message(id, ClientMsg::Hello { role: Role::Operator }, &mut stack);
        hold(&mut core, &mut stack, id);
        core.message(id, ClientMsg::Ignition, &mut stack);
        stack.tick();
        core.disconnect(id, &mut stack);
        stack.tick();
        assert_eq!(stack.safety_mode(), Mode::PowerOff);
        assert_eq!(core.operator(), None);
    }

    #[test]
    fn single_operator_and_observers_are_read_only() {
        let (mut core, mut stack, a) = session();
        core.connect(2);
        core.message(a, ClientMsg::Hello { role: Role::Operator }, &mut stack);
        let r = core.message(2, ClientMsg::Hello { role: Role::Operator }, &mut stack);
        assert!(matches!(r[0], ServerMsg::Error { .. }));
        let r = core.message(2, ClientMsg::Ignition, &mut stack);
        assert!(matches!(r[0], ServerMsg::Error { .. }));
        core.disconnect(a, &mut stack);
        let r = core.message(2, ClientMsg::Hello { role: Role::Operator }, &mut stack);
        assert_eq!(r[0], ServerMsg::Welcome { session: 2, role: Role::Operator });
    }

    #[test]
    fn malformed_frames_get_error_replies() {
        let (mut core, mut stack, id) = session();
        for body in [&b"not json"[..], br#"{"v":1}"#, br#"{"v":1,"type":"warp"}"#, br#"{"v":1,"type":"joy","x":"a"}"#] {
            let r = core.frame(id, body, &mut stack);
            assert!(matches!(r[..], [ServerMsg::Error { .. }]));
        }
        assert_eq!(core.errors(), 4);
    }

    #[test]
    fn regressing_client_stamp_does_not_refresh() {
        let mut d = DmhArbiter::new(DMH_FRESHNESS);
        assert_eq!(d.update(true, 5.0, Duration::ZERO), Some(OperatorEvent::DmhPress));
        assert_eq!(d.update(true, 4.0, Duration::from_millis(150)), None);
        assert_eq!(d.expire(Duration::from_millis(200)), Some(OperatorEvent::DmhRelease));
    }
}
