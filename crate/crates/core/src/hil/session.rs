use std::net::{TcpListener, TcpStream};
use std::sync::{mpsc, Arc};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::wire::{read_message, write_message, ByeReason, ResultStatus, WireMessage, DEFAULT_CYCLE_S, DEFAULT_MAX_FRAME, PROTOCOL_VERSION};
use super::{HilError, PlatformKind};
use crate::domain::{ControlVector, Observation};
use crate::dualsys::fallback_action;

/// Maps one observation to a control; called once per cycle.
pub type Controller = Arc<dyn Fn(&Observation) -> ControlVector + Send + Sync>;

#[derive(Debug, Clone, PartialEq)]
pub struct ServeOptions {
    pub cycle_s: f64,
    /// Wall-clock time the controller may take before the fallback is sent.
    pub budget: Duration,
    /// How long to wait for the next client message.
    pub idle_timeout: Duration,
    pub max_frame: usize,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            cycle_s: DEFAULT_CYCLE_S,
            budget: Duration::from_secs_f64(DEFAULT_CYCLE_S),
            idle_timeout: Duration::from_secs(30),
            max_frame: DEFAULT_MAX_FRAME,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Received,
    Sent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    /// Seconds since the session started.
    pub t_s: f64,
    pub direction: Direction,
    pub message: WireMessage,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionLog {
    pub peer: String,
    pub platform: Option<PlatformKind>,
    pub entries: Vec<LogEntry>,
    /// Frames whose controller call overran the budget.
    pub overruns: Vec<u64>,
    pub bye: Option<ByeReason>,
    pub error: Option<String>,
}

impl SessionLog {
    pub fn sent(&self) -> impl Iterator<Item = &WireMessage> {
        self.entries.iter().filter(|e| e.direction == Direction::Sent).map(|e| &e.message)
    }

    pub fn received(&self) -> impl Iterator<Item = &WireMessage> {
        self.entries.iter().filter(|e| e.direction == Direction::Received).map(|e| &e.message)
    }
}

struct Conn {
    stream: TcpStream,
    start: Instant,
    log: SessionLog,
    max_frame: usize,
}

impl Conn {
    fn send(&mut self, msg: WireMessage) -> Result<(), HilError> {
        write_message(&mut self.stream, &msg)?;
        self.log.entries.push(LogEntry {
            t_s: self.start.elapsed().as_secs_f64(),
            direction: Direction::Sent,
            message: msg,
        });
        Ok(())
    }

    fn recv(&mut self) -> Result<WireMessage, HilError> {
        let msg = read_message(&mut self.stream, self.max_frame)?;
        self.log.entries.push(LogEntry {
            t_s: self.start.elapsed().as_secs_f64(),
            direction: Direction::Received,
            message: msg.clone(),
        });
        Ok(msg)
    }

    /// Report a violation to the peer (best effort) and record it.
    fn abort(&mut self, err: HilError) {
        if matches!(err, HilError::Protocol(_) | HilError::Decode(_)) {
            let _ = self.send(WireMessage::Bye { reason: ByeReason::Error });
        }
        self.log.error = Some(err.to_string());
    }
}

fn run_controller(controller: &Controller, obs: Observation, budget: Duration) -> Option<ControlVector> {
    let (tx, rx) = mpsc::sync_channel(1);
    let c = Arc::clone(controller);
    std::thread::Builder::new()
        .name("hil-controller".into())
        .spawn(move || {
            let _ = tx.send(c(&obs));
        })
        .ok()?;
    rx.recv_timeout(budget).ok().filter(ControlVector::is_valid)
}

/// Run one session over an accepted connection until BYE, error or disconnect.
pub fn serve_connection(stream: TcpStream, controller: &Controller, opts: &ServeOptions) -> SessionLog {
    let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
    let _ = stream.set_nodelay(true);
    let mut conn = Conn {
        stream,
        start: Instant::now(),
        log: SessionLog {
            peer,
            ..Default::default()
        },
        max_frame: opts.max_frame,
    };
    if let Err(e) = conn.stream.set_read_timeout(Some(opts.idle_timeout)) {
        conn.log.error = Some(e.to_string());
        return conn.log;
    }
    if let Err(e) = session_loop(&mut conn, controller, opts) {
        conn.abort(e);
    }
    conn.log
}

fn session_loop(conn: &mut Conn, controller: &Controller, opts: &ServeOptions) -> Result<(), HilError> {
    match conn.recv()? {
        WireMessage::Hello {
            platform,
            protocol_version,
        } => {
            if protocol_version != PROTOCOL_VERSION {
                return Err(HilError::Protocol(format!(
                    "unsupported protocol version {protocol_version}, server speaks {PROTOCOL_VERSION}"
                )));
            }
            conn.log.platform = Some(platform);
            conn.send(WireMessage::Hello {
                platform,
                protocol_version: PROTOCOL_VERSION,
            })?;
        }
        other => return Err(HilError::Protocol(format!("expected HELLO, got {}", other.name()))),
    }

    let mut expected = 0u64;
    loop {
        match conn.recv()? {
            WireMessage::Observation {
                frame_index,
                timestamp,
                payload,
            } => {
                if frame_index != expected {
                    return Err(HilError::Protocol(format!(
                        "OBSERVATION frame {frame_index}, expected {expected}"
                    )));
                }
                let obs = Observation {
                    frame_index,
                    timestamp,
                    ego: payload.ego,
                    scene: payload.scene,
                    route_progress: payload.route_progress,
                };
                let control = match run_controller(controller, obs, opts.budget) {
                    Some(u) => u,
                    None => {
                        conn.log.overruns.push(frame_index);
                        fallback_action()
                    }
                };
                conn.send(WireMessage::Control {
                    frame_index,
                    control,
                    duration_s: opts.cycle_s,
                })?;
                match conn.recv()? {
                    WireMessage::Result { frame_index: f, status } if f == frame_index => {
                        if status == ResultStatus::Rejected {
                            return Err(HilError::Protocol(format!("client rejected CONTROL {f}")));
                        }
                    }
                    WireMessage::Bye { reason } => {
                        conn.log.bye = Some(reason);
                        return Ok(());
                    }
                    other => {
                        return Err(HilError::Protocol(format!(
                            "expected RESULT {frame_index}, got {} {:?}",
                            other.name(),
                            other.frame_index()
                        )))
                    }
                }
                expected += 1;
            }
            WireMessage::Bye { reason } => {
                conn.log.bye = Some(reason);
                return Ok(());
            }
            other => return Err(HilError::Protocol(format!("unexpected {}", other.name()))),
        }
    }
}

/// Accept one connection from `listener` and serve it.
pub fn serve_session(listener: &TcpListener, controller: &Controller, opts: &ServeOptions) -> Result<SessionLog, HilError> {
    let (stream, _) = listener.accept().map_err(HilError::from_io)?;
    Ok(serve_connection(stream, controller, opts))
}

/// Serve connections concurrently, each with isolated state, until
/// `max_sessions` have finished (or forever when `None`).
pub fn serve(
    listener: &TcpListener,
    controller_factory: &(dyn Fn() -> Controller + Sync),
    opts: &ServeOptions,
    max_sessions: Option<usize>,
    on_done: &(dyn Fn(&SessionLog) + Sync),
) -> Result<Vec<SessionLog>, HilError> {
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        let mut accepted = 0usize;
        while max_sessions.is_none_or(|m| accepted < m) {
            let (stream, _) = listener.accept().map_err(HilError::from_io)?;
            accepted += 1;
            let controller = controller_factory();
            handles.push(scope.spawn(move || {
                let log = serve_connection(stream, &controller, opts);
                on_done(&log);
                log
            }));
        }
        Ok(handles.into_iter().filter_map(|h| h.join().ok()).collect())
    })
}
