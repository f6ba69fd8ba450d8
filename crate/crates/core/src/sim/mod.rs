//! Deterministic 2D desk-scale driving simulator.
//!
//! The ego follows a kinematic bicycle model along a buffered route polyline.
//! Scenario actors are tracked in route coordinates and spawn when the ego
//! comes within their trigger distance. Infractions are detected on onset.

mod actors;
mod geometry;
mod render;
mod route;

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ControlVector, EgoState, Infraction, InfractionKind, NearbyActor, Observation};
use crate::scengen::ScenarioSpec;

pub use actors::{
    ActorKind, ActorSpec, ActorState, ActorStatus, Behavior, FieldError, LightColor, LightPhases, Spawn,
    DEFAULT_TRIGGER_DISTANCE, MAX_ACTOR_SPEED,
};
pub use geometry::{OrientedRect, Polyline, Projection};
pub use render::{ObservationMode, RASTER_SIZE};
pub use route::{bundled_route_dir, load_route_set, RouteSpec, ScenarioTrigger, Skill, Waypoint};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("route {route_id}: {reason}")]
    InvalidRoute { route_id: String, reason: String },
    #[error("scenario {scenario_id}, actor {actor_id}: {error}")]
    InvalidActor {
        scenario_id: String,
        actor_id: String,
        error: String,
    },
    #[error("scenario {scenario_id} targets route {expected}, not {got}")]
    RouteMismatch {
        scenario_id: String,
        expected: String,
        got: String,
    },
    #[error("io: {0}")]
    Io(String),
    #[error("parse: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dt: f64,
    /// Acceleration at full throttle, m/s^2.
    pub max_accel: f64,
    /// Deceleration at full brake, m/s^2.
    pub max_brake: f64,
    /// Linear drag coefficient, 1/s.
    pub drag: f64,
    pub wheelbase: f64,
    /// Front-wheel angle at |steer| = 1, rad.
    pub max_steer_angle: f64,
    pub ego_length: f64,
    pub ego_width: f64,
    pub blocked_frames: u32,
    /// Along-route advance (m) that resets the blocked counter.
    pub blocked_min_advance: f64,
    pub observation_radius: f64,
    pub hazard_range: f64,
    pub light_stop_range: f64,
    /// Lateral distance beyond the lane edge that counts as leaving the route.
    pub deviation_margin: f64,
    /// Relative per-actor speed jitter drawn from the episode seed.
    pub speed_jitter: f64,
    pub observation: ObservationMode,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            max_accel: 4.0,
            max_brake: 8.0,
            drag: 0.25,
            wheelbase: 2.7,
            max_steer_angle: 0.5,
            ego_length: 4.5,
            ego_width: 1.8,
            blocked_frames: 200,
            blocked_min_advance: 0.05,
            observation_radius: 50.0,
            hazard_range: 20.0,
            light_stop_range: 15.0,
            deviation_margin: 4.0,
            speed_jitter: 0.05,
            observation: ObservationMode::Text,
        }
    }
}

/// Kinematic bicycle update. Positive steer turns counter-clockwise.
pub fn bicycle_step(ego: EgoState, u: ControlVector, dt: f64, cfg: &SimConfig) -> EgoState {
    let accel = cfg.max_accel * u.throttle() - cfg.max_brake * u.brake() - cfg.drag * ego.speed;
    let speed = (ego.speed + accel * dt).max(0.0);
    let heading = ego.heading + (speed / cfg.wheelbase) * (cfg.max_steer_angle * u.steer()).tan() * dt;
    EgoState::new(
        ego.x + speed * heading.cos() * dt,
        ego.y + speed * heading.sin() * dt,
        heading,
        speed,
    )
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub infractions: Vec<Infraction>,
    pub observation: Observation,
}

#[derive(Debug, Clone)]
pub struct WorldState {
    pub tick: u64,
    pub ego: EgoState,
    pub actors: Vec<ActorState>,
    pub route: RouteSpec,
    pub rng_seed: u64,
    pub scenario_id: Option<String>,
    config: SimConfig,
    line: Polyline,
    /// Largest arc length reached so far.
    progress_s: f64,
    s: f64,
    lateral: f64,
    advance_anchor: f64,
    stalled_frames: u32,
    outside_lane: bool,
    deviated: bool,
    overlapping: BTreeSet<String>,
    lights_run: BTreeSet<String>,
}

/// Place the ego at the first waypoint facing the second and arm scenario actors.
pub fn load_route(
    route: &RouteSpec,
    scenario: Option<&ScenarioSpec>,
    seed: u64,
    config: &SimConfig,
) -> Result<WorldState, SimError> {
    route.validate()?;
    let line = route.polyline();
    let (x0, y0, heading) = line.pose_at(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut actors = Vec::new();
    if let Some(scen) = scenario {
        if scen.base_route_id != route.route_id {
            return Err(SimError::RouteMismatch {
                scenario_id: scen.scenario_id.clone(),
                expected: scen.base_route_id.clone(),
                got: route.route_id.clone(),
            });
        }
        let mut seen = BTreeSet::new();
        for spec in &scen.actors {
            let invalid = |error: String| SimError::InvalidActor {
                scenario_id: scen.scenario_id.clone(),
                actor_id: spec.actor_id.clone(),
                error,
            };
            spec.validate().map_err(|e| invalid(e.to_string()))?;
            if !seen.insert(spec.actor_id.clone()) {
                return Err(invalid("duplicate actor_id".into()));
            }
            let (anchor_s, lateral) = match spec.spawn {
                Spawn::Route { progress, offset } => (progress * line.length(), offset),
                Spawn::Absolute { x, y } => {
                    let p = line.project(x, y);
                    (p.s, p.lateral)
                }
            };
            let factor = 1.0 + config.speed_jitter * (2.0 * rng.gen::<f64>() - 1.0);
            actors.push(ActorState::new(spec.clone(), anchor_s, lateral, factor, route.lane_half_width));
        }
    }
    let mut world = WorldState {
        tick: 0,
        ego: EgoState::new(x0, y0, heading, 0.0),
        actors,
        route: route.clone(),
        rng_seed: seed,
        scenario_id: scenario.map(|s| s.scenario_id.clone()),
        config: config.clone(),
        line,
        progress_s: 0.0,
        s: 0.0,
        lateral: 0.0,
        advance_anchor: 0.0,
        stalled_frames: 0,
        outside_lane: false,
        deviated: false,
        overlapping: BTreeSet::new(),
        lights_run: BTreeSet::new(),
    };
    world.fire_triggers();
    Ok(world)
}

impl WorldState {
    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn polyline(&self) -> &Polyline {
        &self.line
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.config.dt
    }

    /// Arc-length fraction of the route covered so far; never decreases.
    pub fn route_progress(&self) -> f64 {
        (self.progress_s / self.line.length()).clamp(0.0, 1.0)
    }

    pub fn lateral_offset(&self) -> f64 {
        self.lateral
    }

    pub fn along_route(&self) -> f64 {
        self.s
    }

    pub fn is_finished(&self) -> bool {
        self.route_progress() >= 1.0
    }

    pub fn is_blocked(&self) -> bool {
        self.stalled_frames >= self.config.blocked_frames
    }

    /// Leaving the route corridor ends the episode.
    pub fn is_fatal(&self) -> bool {
        self.deviated
    }

    pub fn ego_footprint(&self) -> OrientedRect {
        OrientedRect {
            cx: self.ego.x,
            cy: self.ego.y,
            heading: self.ego.heading,
            length: self.config.ego_length,
            width: self.config.ego_width,
        }
    }

    fn fire_triggers(&mut self) {
        let s = self.s;
        for actor in &mut self.actors {
            if !actor.is_active() && s >= actor.trigger_s() {
                actor.activate();
            }
        }
    }

    /// Advance one tick with the given control and report this tick's infractions.
    pub fn step(&mut self, u: ControlVector, dt: f64) -> StepOutcome {
        let frame = self.tick;
        let prev_s = self.s;
        self.ego = bicycle_step(self.ego, u, dt, &self.config);
        self.tick += 1;

        let proj = self.line.project(self.ego.x, self.ego.y);
        self.s = proj.s;
        self.lateral = proj.lateral;
        self.progress_s = self.progress_s.max(proj.s);
        if self.progress_s > self.advance_anchor + self.config.blocked_min_advance {
            self.advance_anchor = self.progress_s;
            self.stalled_frames = 0;
        } else {
            self.stalled_frames += 1;
        }

        for actor in &mut self.actors {
            actor.advance(dt);
        }
        self.fire_triggers();

        let infractions = self.detect_infractions(frame, prev_s);
        StepOutcome {
            infractions,
            observation: self.render(self.config.observation),
        }
    }

    fn detect_infractions(&mut self, frame: u64, prev_s: f64) -> Vec<Infraction> {
        let mut out = Vec::new();
        let half = self.route.lane_half_width;
        let offset = self.lateral.abs();

        let outside = offset > half;
        if outside && !self.outside_lane {
            out.push(Infraction {
                kind: InfractionKind::BoundaryCrossing,
                frame_index: frame,
                detail: format!("lateral offset {:.3} m exceeds {:.3} m", self.lateral, half),
            });
        }
        self.outside_lane = outside;

        if !self.deviated && offset > half + self.config.deviation_margin {
            self.deviated = true;
            out.push(Infraction {
                kind: InfractionKind::RouteDeviation,
                frame_index: frame,
                detail: format!("lateral offset {:.3} m left the route corridor", self.lateral),
            });
        }

        let ego_rect = self.ego_footprint();
        let mut now_overlapping = BTreeSet::new();
        for actor in self.actors.iter().filter(|a| a.is_active()) {
            let Some(rect) = actor.footprint(&self.line) else {
                continue;
            };
            if ego_rect.overlaps(&rect) {
                now_overlapping.insert(actor.id().to_string());
                if !self.overlapping.contains(actor.id()) {
                    let kind = match actor.kind() {
                        ActorKind::Pedestrian => InfractionKind::CollisionPedestrian,
                        ActorKind::Vehicle => InfractionKind::CollisionVehicle,
                        _ => InfractionKind::CollisionStatic,
                    };
                    out.push(Infraction {
                        kind,
                        frame_index: frame,
                        detail: format!("contact with {} {}", actor.kind(), actor.id()),
                    });
                }
            }
        }
        self.overlapping = now_overlapping;

        for actor in self.actors.iter().filter(|a| a.is_active() && a.kind() == ActorKind::TrafficLight) {
            let stop_line = actor.anchor_s;
            if prev_s < stop_line
                && self.s >= stop_line
                && offset <= half + 1.0
                && actor.light_color() == LightColor::Red
                && !self.lights_run.contains(actor.id())
            {
                self.lights_run.insert(actor.id().to_string());
                out.push(Infraction {
                    kind: InfractionKind::RedLight,
                    frame_index: frame,
                    detail: format!("entered stop zone of {} during red", actor.id()),
                });
            }
        }
        out
    }

    /// Active non-light actors within the observation radius, nearest first.
    pub fn nearby_actors(&self) -> Vec<NearbyActor> {
        let mut out: Vec<NearbyActor> = self
            .actors
            .iter()
            .filter(|a| a.is_active() && a.kind() != ActorKind::TrafficLight)
            .filter_map(|a| {
                let (x, y, _) = a.pose(&self.line);
                let range = (x - self.ego.x).hypot(y - self.ego.y);
                (range <= self.config.observation_radius).then(|| NearbyActor {
                    actor_id: a.id().to_string(),
                    kind: a.kind().as_str().to_string(),
                    range_m: range,
                    speed_mps: a.speed(),
                })
            })
            .collect();
        out.sort_by(|a, b| a.range_m.total_cmp(&b.range_m).then_with(|| a.actor_id.cmp(&b.actor_id)));
        out
    }

    /// Nearest in-path actor ahead within the hazard range: (actor index, centre range).
    pub fn lead_hazard(&self) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, a) in self.actors.iter().enumerate() {
            if !a.is_active() {
                continue;
            }
            let Some((_, width)) = a.kind().footprint() else {
                continue;
            };
            let ahead = a.s - self.s;
            let clearance = (self.config.ego_width + width) / 2.0 + 0.5;
            if ahead > 0.0 && ahead <= self.config.hazard_range && (a.lateral - self.lateral).abs() < clearance {
                let (x, y, _) = a.pose(&self.line);
                let range = (x - self.ego.x).hypot(y - self.ego.y);
                if best.is_none_or(|(_, r)| range < r) {
                    best = Some((i, range));
                }
            }
        }
        best
    }

    /// Nearest active traffic light whose stop line is still ahead: (index, distance along route).
    pub fn next_light(&self) -> Option<(usize, f64)> {
        self.actors
            .iter()
            .enumerate()
            .filter(|(_, a)| a.is_active() && a.kind() == ActorKind::TrafficLight)
            .map(|(i, a)| (i, a.anchor_s - self.s))
            .filter(|(_, d)| *d >= 0.0 && *d <= self.config.observation_radius)
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ScenePayload;

    fn cv(s: f64, t: f64, b: f64) -> ControlVector {
        ControlVector::new(s, t, b).unwrap()
    }

    fn scenario(route_id: &str, actors: Vec<ActorSpec>) -> ScenarioSpec {
        ScenarioSpec {
            scenario_id: format!("{route_id}-s"),
            base_route_id: route_id.into(),
            actors,
            description: String::new(),
        }
    }

    #[test]
    fn bicycle_straight_and_rest() {
        let cfg = SimConfig::default();
        let e0 = EgoState::new(0.0, 0.0, 0.3, 2.0);
        let e1 = bicycle_step(e0, cv(0.0, 0.5, 0.0), 0.1, &cfg);
        assert_eq!(e1.heading, 0.3);
        assert!(e1.speed > e0.speed);
        assert!((e1.y / e1.x - 0.3f64.tan()).abs() < 1e-12);

        let rest = EgoState::new(1.0, 2.0, 0.5, 0.0);
        assert_eq!(bicycle_step(rest, cv(0.0, 0.0, 1.0), 0.1, &cfg), rest);
    }

    #[test]
    fn bicycle_mirror_symmetry() {
        let cfg = SimConfig::default();
        let e0 = EgoState::new(0.0, 0.0, 0.2, 5.0);
        let l = bicycle_step(e0, cv(0.5, 0.3, 0.0), 0.1, &cfg);
        let r = bicycle_step(e0, cv(-0.5, 0.3, 0.0), 0.1, &cfg);
        assert!(((l.heading - 0.2) + (r.heading - 0.2)).abs() < 1e-12);
        assert!(l.heading > 0.2);
    }

    #[test]
    fn load_straight_route() {
        let route = RouteSpec::straight("r", 100.0, 1.75, 8.0);
        let w = load_route(&route, None, 0, &SimConfig::default()).unwrap();
        assert_eq!((w.ego.x, w.ego.y, w.ego.heading), (0.0, 0.0, 0.0));
        assert_eq!(w.route_progress(), 0.0);
        let mut bad = route.clone();
        bad.waypoints.truncate(1);
        assert!(load_route(&bad, None, 0, &SimConfig::default()).is_err());
    }

    #[test]
    fn cut_in_is_armed_until_triggered() {
        let route = RouteSpec::straight("r", 100.0, 1.75, 8.0);
        let scen = scenario(
            "r",
            vec![ActorSpec {
                actor_id: "a0".into(),
                kind: ActorKind::Vehicle,
                spawn: Spawn::Route { progress: 0.5, offset: 3.5 },
                behavior: Behavior::CutIn { speed: 6.0, lateral_speed: 1.5 },
                trigger_distance: 15.0,
                phases: None,
            }],
        );
        let mut w = load_route(&route, Some(&scen), 1, &SimConfig::default()).unwrap();
        assert_eq!(w.actors[0].status, ActorStatus::Armed);
        while w.along_route() < 35.0 {
            w.step(cv(0.0, 0.5, 0.0), 0.1);
        }
        assert_eq!(w.actors[0].status, ActorStatus::Active);

        let mut wrong = scen.clone();
        wrong.base_route_id = "other".into();
        assert!(matches!(
            load_route(&route, Some(&wrong), 1, &SimConfig::default()),
            Err(SimError::RouteMismatch { .. })
        ));
    }

    #[test]
    fn progress_examples() {
        let route = RouteSpec::straight("r", 100.0, 1.75, 8.0);
        let mut w = load_route(&route, None, 0, &SimConfig::default()).unwrap();
        assert_eq!(w.route_progress(), 0.0);
        // Teleport-free check via the projection used by step.
        let p = w.polyline().project(50.0, 0.0);
        assert_eq!(p.s / w.polyline().length(), 0.5);
        let p = w.polyline().project(100.0, 0.0);
        assert_eq!(p.s / w.polyline().length(), 1.0);
        let mut last = 0.0;
        for i in 0..200 {
            let steer = if i % 20 < 10 { 0.2 } else { -0.2 };
            w.step(cv(steer, 0.4, 0.0), 0.1);
            assert!(w.route_progress() >= last);
            last = w.route_progress();
        }
    }

    #[test]
    fn boundary_crossing_is_reported_once_per_excursion() {
        let route = RouteSpec::straight("r", 200.0, 1.75, 8.0);
        let mut w = load_route(&route, None, 0, &SimConfig::default()).unwrap();
        let mut kinds = Vec::new();
        for _ in 0..40 {
            kinds.extend(w.step(cv(0.3, 0.5, 0.0), 0.1).infractions.into_iter().map(|i| i.kind));
        }
        assert_eq!(kinds.iter().filter(|k| **k == InfractionKind::BoundaryCrossing).count(), 1);
        assert!(w.lateral_offset() > 1.75);
    }

    #[test]
    fn clean_drive_has_no_infractions() {
        let route = RouteSpec::straight("r", 100.0, 1.75, 8.0);
        let mut w = load_route(&route, None, 0, &SimConfig::default()).unwrap();
        for _ in 0..100 {
            assert!(w.step(cv(0.0, 0.5, 0.0), 0.1).infractions.is_empty());
        }
    }

    #[test]
    fn zero_control_comes_to_rest() {
        let route = RouteSpec::straight("r", 500.0, 1.75, 8.0);
        let mut w = load_route(&route, None, 0, &SimConfig::default()).unwrap();
        for _ in 0..50 {
            w.step(cv(0.0, 1.0, 0.0), 0.1);
        }
        let zero = cv(0.0, 0.0, 0.0);
        let mut prev = w.ego.speed;
        for _ in 0..2000 {
            w.step(zero, 0.1);
            assert!(w.ego.speed <= prev);
            prev = w.ego.speed;
        }
        assert!(w.ego.speed < 1e-3);
    }

    #[test]
    fn red_light_fires_on_entry() {
        let route = RouteSpec::straight("r", 100.0, 1.75, 8.0);
        let scen = scenario(
            "r",
            vec![ActorSpec {
                actor_id: "tl".into(),
                kind: ActorKind::TrafficLight,
                spawn: Spawn::Route { progress: 0.3, offset: 0.0 },
                behavior: Behavior::Stationary,
                trigger_distance: 40.0,
                phases: Some(LightPhases { red_s: 100.0, green_s: 1.0 }),
            }],
        );
        let mut w = load_route(&route, Some(&scen), 0, &SimConfig::default()).unwrap();
        let mut reds = 0;
        for _ in 0..150 {
            reds += w
                .step(cv(0.0, 0.5, 0.0), 0.1)
                .infractions
                .iter()
                .filter(|i| i.kind == InfractionKind::RedLight)
                .count();
        }
        assert_eq!(reds, 1);
    }

    #[test]
    fn identical_inputs_give_identical_worlds() {
        let route = RouteSpec::straight("r", 100.0, 1.75, 8.0);
        let scen = scenario(
            "r",
            vec![ActorSpec {
                actor_id: "a0".into(),
                kind: ActorKind::Vehicle,
                spawn: Spawn::Route { progress: 0.4, offset: 0.0 },
                behavior: Behavior::SuddenBrake { speed: 5.0, delay: 1.0, decel: 6.0 },
                trigger_distance: 20.0,
                phases: None,
            }],
        );
        let run = || {
            let mut w = load_route(&route, Some(&scen), 7, &SimConfig::default()).unwrap();
            let mut log = Vec::new();
            for i in 0..120 {
                let out = w.step(cv(((i % 7) as f64 - 3.0) / 30.0, 0.5, 0.0), 0.1);
                let text = match out.observation.scene {
                    ScenePayload::Text { description } => description,
                    _ => unreachable!(),
                };
                log.push((text, out.infractions));
            }
            log
        };
        assert_eq!(run(), run());
    }
}
