use std::fmt::Write as _;
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::platform::{map_ackermann, map_differential, PlatformParams};
use super::wire::{read_message, write_message, ByeReason, ResultStatus, VehicleReport, WireMessage, DEFAULT_CYCLE_S, DEFAULT_MAX_FRAME, PROTOCOL_VERSION};
use super::HilError;
use crate::domain::{normalize_angle, ControlVector, EgoState, ScenePayload};
use crate::sim::{Polyline, RouteSpec};

/// Round obstacle on a physical track.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalRoute {
    pub route: RouteSpec,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
}

impl PhysicalRoute {
    /// Straight desk-scale track along +x.
    pub fn straight(route_id: &str, length: f64, lane_half_width: f64) -> Self {
        Self {
            route: RouteSpec::straight(route_id, length, lane_half_width, 0.5),
            obstacles: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientOptions {
    /// Expected actuation cycle; the server is presumed dead after three of them.
    pub cycle_s: f64,
    pub max_cycles: u64,
    /// Sleep for each CONTROL's duration instead of simulating it instantly.
    pub realtime: bool,
    /// Vehicle radius used for obstacle contact.
    pub vehicle_radius: f64,
}

impl Default for ClientOptions {
    fn default() -> Self {
        Self {
            cycle_s: DEFAULT_CYCLE_S,
            max_cycles: 1000,
            realtime: false,
            vehicle_radius: 0.08,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientFrame {
    pub frame_index: u64,
    pub control: ControlVector,
    pub duration_s: f64,
    /// State after applying the control.
    pub ego: EgoState,
    pub lateral: f64,
    pub progress: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientLog {
    pub route_id: String,
    pub frames: Vec<ClientFrame>,
    pub bye: ByeReason,
    /// Progress reached before the run ended.
    pub completed_fraction: f64,
    pub diagnostic: Option<String>,
}

/// Planar motion over `t` seconds at constant forward speed `v` and yaw rate `omega`.
fn advance_arc(e: EgoState, v: f64, omega: f64, t: f64) -> EgoState {
    let (x, y) = if omega.abs() < 1e-12 {
        (e.x + v * t * e.heading.cos(), e.y + v * t * e.heading.sin())
    } else {
        let h1 = e.heading + omega * t;
        (
            e.x + v / omega * (h1.sin() - e.heading.sin()),
            e.y - v / omega * (h1.cos() - e.heading.cos()),
        )
    };
    EgoState {
        x,
        y,
        heading: normalize_angle(e.heading + omega * t),
        speed: v,
    }
}

fn apply(e: EgoState, u: &ControlVector, p: &PlatformParams, t: f64) -> Result<EgoState, HilError> {
    let (v, omega) = if p.kind.is_skid() {
        let (l, r) = map_differential(u, p)?;
        ((l + r) / 2.0, (r - l) / p.track_width)
    } else {
        let (delta, v) = map_ackermann(u, p)?;
        (v, v * delta.tan() / p.wheel_base)
    };
    Ok(advance_arc(e, v, omega, t))
}

struct Track {
    line: Polyline,
    half_width: f64,
    best_s: f64,
}

impl Track {
    fn progress(&self) -> f64 {
        (self.best_s / self.line.length()).clamp(0.0, 1.0)
    }
}

fn describe(frame: u64, e: &EgoState, lateral: f64, progress: f64, route: &PhysicalRoute, line: &Polyline, s: f64) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "frame: {frame}");
    let _ = writeln!(out, "ego_speed_mps: {:.2}", e.speed);
    let _ = writeln!(out, "speed_limit_mps: {:.2}", route.route.speed_limit);
    let _ = writeln!(out, "lane_offset_m: {lateral:.2}");
    let road_heading = line.pose_at(s).2;
    let _ = writeln!(out, "heading_error_deg: {:.1}", normalize_angle(e.heading - road_heading).to_degrees());
    let _ = writeln!(out, "route_progress: {progress:.4}");
    let ahead = route
        .obstacles
        .iter()
        .filter_map(|o| {
            let p = line.project(o.x, o.y);
            let d = p.s - s;
            (d > 0.0 && d < 1.0 && (p.lateral - lateral).abs() < o.radius + 0.1).then(|| (e.x - o.x).hypot(e.y - o.y))
        })
        .min_by(f64::total_cmp);
    match ahead {
        Some(r) => {
            let _ = writeln!(out, "lead_hazard: yes static_obstacle range={r:.2} m");
        }
        None => {
            let _ = writeln!(out, "lead_hazard: none");
        }
    }
    let _ = writeln!(out, "red_light_ahead: no");
    out
}

/// Drive a simulated vehicle against a HIL server until the route ends, the
/// lane is left, an obstacle is hit, or the server misbehaves.
pub fn sim_vehicle_client<A: ToSocketAddrs>(
    addr: A,
    platform: &PlatformParams,
    route: &PhysicalRoute,
    opts: &ClientOptions,
) -> Result<ClientLog, HilError> {
    platform.validate()?;
    route
        .route
        .validate()
        .map_err(|e| HilError::Protocol(format!("bad physical route: {e}")))?;
    let mut stream = TcpStream::connect(addr).map_err(HilError::from_io)?;
    let silence = Duration::from_secs_f64(3.0 * opts.cycle_s);
    stream.set_read_timeout(Some(silence)).map_err(HilError::from_io)?;
    let _ = stream.set_nodelay(true);

    let line = route.route.polyline();
    let (x0, y0, h0) = line.pose_at(0.0);
    let mut ego = EgoState::new(x0, y0, h0, 0.0);
    let mut track = Track {
        line,
        half_width: route.route.lane_half_width,
        best_s: 0.0,
    };
    let mut log = ClientLog {
        route_id: route.route.route_id.clone(),
        frames: Vec::new(),
        bye: ByeReason::Error,
        completed_fraction: 0.0,
        diagnostic: None,
    };

    let finish = |stream: &mut TcpStream, log: &mut ClientLog, reason: ByeReason, diag: Option<String>, progress: f64| {
        let _ = write_message(stream, &WireMessage::Bye { reason });
        log.bye = reason;
        log.diagnostic = diag;
        log.completed_fraction = progress;
    };
    let diagnose = |e: &HilError| -> (ByeReason, String) {
        match e {
            HilError::Timeout => (ByeReason::Timeout, format!("server silent for {:.2} s", silence.as_secs_f64())),
            other => (ByeReason::Error, other.to_string()),
        }
    };

    write_message(
        &mut stream,
        &WireMessage::Hello {
            platform: platform.kind,
            protocol_version: PROTOCOL_VERSION,
        },
    )?;
    match read_message(&mut stream, DEFAULT_MAX_FRAME) {
        Ok(WireMessage::Hello { protocol_version, .. }) if protocol_version == PROTOCOL_VERSION => {}
        Ok(other) => {
            finish(&mut stream, &mut log, ByeReason::Error, Some(format!("expected HELLO, got {}", other.name())), 0.0);
            return Ok(log);
        }
        Err(e) => {
            let (reason, diag) = diagnose(&e);
            finish(&mut stream, &mut log, reason, Some(diag), 0.0);
            return Ok(log);
        }
    }

    let mut t = 0.0;
    let mut lateral = 0.0;
    let mut s = 0.0;
    for frame_index in 0..opts.max_cycles {
        let progress = track.progress();
        let report = VehicleReport {
            ego,
            route_progress: progress,
            scene: ScenePayload::Text {
                description: describe(frame_index, &ego, lateral, progress, route, &track.line, s),
            },
        };
        write_message(
            &mut stream,
            &WireMessage::Observation {
                frame_index,
                timestamp: t,
                payload: report,
            },
        )?;
        let (control, duration_s) = match read_message(&mut stream, DEFAULT_MAX_FRAME) {
            Ok(WireMessage::Control {
                frame_index: f,
                control,
                duration_s,
            }) if f == frame_index && duration_s > 0.0 && duration_s.is_finite() => (control, duration_s),
            Ok(WireMessage::Bye { reason }) => {
                log.bye = reason;
                log.diagnostic = Some("server ended the session".into());
                log.completed_fraction = progress;
                return Ok(log);
            }
            Ok(other) => {
                let diag = format!("protocol violation: expected CONTROL {frame_index}, got {} {:?}", other.name(), other.frame_index());
                let _ = write_message(
                    &mut stream,
                    &WireMessage::Result {
                        frame_index,
                        status: ResultStatus::Rejected,
                    },
                );
                finish(&mut stream, &mut log, ByeReason::Error, Some(diag), progress);
                return Ok(log);
            }
            Err(e) => {
                let (reason, diag) = diagnose(&e);
                finish(&mut stream, &mut log, reason, Some(diag), progress);
                return Ok(log);
            }
        };
        if opts.realtime {
            std::thread::sleep(Duration::from_secs_f64(duration_s));
        }
        ego = apply(ego, &control, platform, duration_s)?;
        t += duration_s;
        let proj = track.line.project(ego.x, ego.y);
        s = proj.s;
        lateral = proj.lateral;
        track.best_s = track.best_s.max(proj.s);
        let progress = track.progress();
        log.frames.push(ClientFrame {
            frame_index,
            control,
            duration_s,
            ego,
            lateral,
            progress,
        });
        write_message(
            &mut stream,
            &WireMessage::Result {
                frame_index,
                status: ResultStatus::Applied,
            },
        )?;

        let hit = route
            .obstacles
            .iter()
            .any(|o| (ego.x - o.x).hypot(ego.y - o.y) < o.radius + opts.vehicle_radius);
        let end = if lateral.abs() > track.half_width {
            Some(ByeReason::Boundary)
        } else if hit {
            Some(ByeReason::Collision)
        } else if progress >= 1.0 {
            Some(ByeReason::Finished)
        } else {
            None
        };
        if let Some(reason) = end {
            finish(&mut stream, &mut log, reason, None, progress);
            return Ok(log);
        }
    }
    let progress = track.progress();
    finish(&mut stream, &mut log, ByeReason::Timeout, Some(format!("route not finished within {} cycles", opts.max_cycles)), progress);
    Ok(log)
}
