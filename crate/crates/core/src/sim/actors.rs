use std::fmt;

use serde::{Deserialize, Serialize};

use super::geometry::{OrientedRect, Polyline};

pub const MAX_ACTOR_SPEED: f64 = 40.0;
pub const MAX_TRIGGER_DISTANCE: f64 = 500.0;
pub const MAX_LATERAL_OFFSET: f64 = 30.0;
pub const DEFAULT_TRIGGER_DISTANCE: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorKind {
    Vehicle,
    Pedestrian,
    StaticObstacle,
    TrafficLight,
}

impl ActorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ActorKind::Vehicle => "vehicle",
            ActorKind::Pedestrian => "pedestrian",
            ActorKind::StaticObstacle => "static_obstacle",
            ActorKind::TrafficLight => "traffic_light",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        [
            ActorKind::Vehicle,
            ActorKind::Pedestrian,
            ActorKind::StaticObstacle,
            ActorKind::TrafficLight,
        ]
        .into_iter()
        .find(|k| k.as_str() == name)
    }

    /// (length, width) of the collision footprint; traffic lights have none.
    pub fn footprint(&self) -> Option<(f64, f64)> {
        match self {
            ActorKind::Vehicle => Some((4.5, 1.8)),
            ActorKind::Pedestrian => Some((0.6, 0.6)),
            ActorKind::StaticObstacle => Some((1.0, 1.0)),
            ActorKind::TrafficLight => None,
        }
    }
}

impl fmt::Display for ActorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where an actor is anchored: a point along the route (fraction of its
/// length plus lateral offset, positive left) or an absolute world position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "frame", rename_all = "snake_case")]
pub enum Spawn {
    Route { progress: f64, offset: f64 },
    Absolute { x: f64, y: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Behavior {
    Stationary,
    ConstantVelocity { speed: f64 },
    /// Drives along the route at `speed` while closing its lateral offset to zero.
    CutIn { speed: f64, lateral_speed: f64 },
    /// Leads at `speed`, then after `delay` seconds decelerates at `decel` to a stop.
    SuddenBrake { speed: f64, delay: f64, decel: f64 },
    /// Walks across the lane at `speed` to the mirrored lateral offset.
    Crossing { speed: f64 },
}

impl Behavior {
    pub fn name(&self) -> &'static str {
        match self {
            Behavior::Stationary => "stationary",
            Behavior::ConstantVelocity { .. } => "constant_velocity",
            Behavior::CutIn { .. } => "cut_in",
            Behavior::SuddenBrake { .. } => "sudden_brake",
            Behavior::Crossing { .. } => "crossing",
        }
    }

    fn scaled(&self, factor: f64) -> Behavior {
        match *self {
            Behavior::Stationary => Behavior::Stationary,
            Behavior::ConstantVelocity { speed } => Behavior::ConstantVelocity { speed: speed * factor },
            Behavior::CutIn { speed, lateral_speed } => Behavior::CutIn {
                speed: speed * factor,
                lateral_speed,
            },
            Behavior::SuddenBrake { speed, delay, decel } => Behavior::SuddenBrake {
                speed: speed * factor,
                delay,
                decel,
            },
            Behavior::Crossing { speed } => Behavior::Crossing { speed: speed * factor },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightPhases {
    pub red_s: f64,
    pub green_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorSpec {
    pub actor_id: String,
    pub kind: ActorKind,
    pub spawn: Spawn,
    pub behavior: Behavior,
    /// The actor spawns once the ego is within this along-route distance of its anchor.
    pub trigger_distance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phases: Option<LightPhases>,
}

/// A failed bound check, naming the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldError {
    pub field: &'static str,
    pub reason: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.reason)
    }
}

fn check(field: &'static str, value: f64, ok: bool, bounds: &str) -> Result<(), FieldError> {
    if value.is_finite() && ok {
        Ok(())
    } else {
        Err(FieldError {
            field,
            reason: format!("{value} outside {bounds}"),
        })
    }
}

fn check_speed(field: &'static str, v: f64) -> Result<(), FieldError> {
    check(field, v, (0.0..=MAX_ACTOR_SPEED).contains(&v), "[0, 40]")
}

impl ActorSpec {
    pub fn validate(&self) -> Result<(), FieldError> {
        match self.spawn {
            Spawn::Route { progress, offset } => {
                check("progress", progress, progress > 0.0 && progress < 1.0, "(0, 1)")?;
                check("offset", offset, offset.abs() <= MAX_LATERAL_OFFSET, "[-30, 30]")?;
            }
            Spawn::Absolute { x, y } => {
                check("x", x, true, "finite")?;
                check("y", y, true, "finite")?;
            }
        }
        check(
            "trigger",
            self.trigger_distance,
            self.trigger_distance > 0.0 && self.trigger_distance <= MAX_TRIGGER_DISTANCE,
            "(0, 500]",
        )?;
        match self.behavior {
            Behavior::Stationary => {}
            Behavior::ConstantVelocity { speed } | Behavior::Crossing { speed } => check_speed("speed", speed)?,
            Behavior::CutIn { speed, lateral_speed } => {
                check_speed("speed", speed)?;
                check("lateral_speed", lateral_speed, lateral_speed > 0.0 && lateral_speed <= 10.0, "(0, 10]")?;
            }
            Behavior::SuddenBrake { speed, delay, decel } => {
                check_speed("speed", speed)?;
                check("delay", delay, (0.0..=120.0).contains(&delay), "[0, 120]")?;
                check("decel", decel, decel > 0.0 && decel <= 15.0, "(0, 15]")?;
            }
        }
        let behavior_ok = match self.kind {
            ActorKind::Vehicle => true,
            ActorKind::Pedestrian => matches!(
                self.behavior,
                Behavior::Stationary | Behavior::Crossing { .. } | Behavior::ConstantVelocity { .. }
            ),
            ActorKind::StaticObstacle | ActorKind::TrafficLight => matches!(self.behavior, Behavior::Stationary),
        };
        if !behavior_ok {
            return Err(FieldError {
                field: "behavior",
                reason: format!("{} cannot be used with {}", self.behavior.name(), self.kind),
            });
        }
        match (self.kind, self.phases) {
            (ActorKind::TrafficLight, Some(p)) => {
                check("red", p.red_s, p.red_s > 0.0, "(0, inf)")?;
                check("green", p.green_s, p.green_s > 0.0, "(0, inf)")?;
            }
            (ActorKind::TrafficLight, None) => {}
            (_, Some(_)) => {
                return Err(FieldError {
                    field: "red",
                    reason: "light phases only apply to traffic_light".into(),
                })
            }
            (_, None) => {}
        }
        Ok(())
    }

    pub fn light_phases(&self) -> LightPhases {
        self.phases.unwrap_or(LightPhases {
            red_s: 10.0,
            green_s: 10.0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorStatus {
    Armed,
    Active,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LightColor {
    Red,
    Green,
}

/// Runtime state of one actor, tracked in route coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorState {
    pub spec: ActorSpec,
    pub behavior: Behavior,
    pub status: ActorStatus,
    pub anchor_s: f64,
    pub s: f64,
    pub lateral: f64,
    pub v_along: f64,
    pub v_lateral: f64,
    /// Seconds since spawn.
    pub elapsed: f64,
    initial_lateral: f64,
    lane_half_width: f64,
}

impl ActorState {
    pub fn new(spec: ActorSpec, anchor_s: f64, lateral: f64, speed_factor: f64, lane_half_width: f64) -> Self {
        let behavior = spec.behavior.scaled(speed_factor);
        Self {
            spec,
            behavior,
            status: ActorStatus::Armed,
            anchor_s,
            s: anchor_s,
            lateral,
            v_along: 0.0,
            v_lateral: 0.0,
            elapsed: 0.0,
            initial_lateral: lateral,
            lane_half_width,
        }
    }

    pub fn id(&self) -> &str {
        &self.spec.actor_id
    }

    pub fn kind(&self) -> ActorKind {
        self.spec.kind
    }

    pub fn is_active(&self) -> bool {
        self.status == ActorStatus::Active
    }

    pub fn trigger_s(&self) -> f64 {
        self.anchor_s - self.spec.trigger_distance
    }

    pub fn activate(&mut self) {
        self.status = ActorStatus::Active;
        let (v_along, v_lateral) = match self.behavior {
            Behavior::Stationary => (0.0, 0.0),
            Behavior::ConstantVelocity { speed } | Behavior::SuddenBrake { speed, .. } => (speed, 0.0),
            Behavior::CutIn { speed, lateral_speed } => (speed, -self.initial_lateral.signum() * lateral_speed),
            Behavior::Crossing { speed } => (0.0, self.crossing_direction() * speed),
        };
        self.v_along = v_along;
        self.v_lateral = if self.initial_lateral == 0.0 && matches!(self.behavior, Behavior::CutIn { .. }) {
            0.0
        } else {
            v_lateral
        };
    }

    fn crossing_direction(&self) -> f64 {
        if self.initial_lateral > 0.0 {
            -1.0
        } else {
            1.0
        }
    }

    fn crossing_target(&self) -> f64 {
        if self.initial_lateral != 0.0 {
            -self.initial_lateral
        } else {
            self.lane_half_width + 2.0
        }
    }

    /// Advance an active actor by `dt` seconds.
    pub fn advance(&mut self, dt: f64) {
        if !self.is_active() {
            return;
        }
        self.elapsed += dt;
        match self.behavior {
            Behavior::Stationary => {}
            Behavior::ConstantVelocity { .. } => self.s += self.v_along * dt,
            Behavior::CutIn { .. } => {
                self.s += self.v_along * dt;
                if self.v_lateral != 0.0 {
                    let next = self.lateral + self.v_lateral * dt;
                    if next.signum() != self.lateral.signum() || next == 0.0 {
                        self.lateral = 0.0;
                        self.v_lateral = 0.0;
                    } else {
                        self.lateral = next;
                    }
                }
            }
            Behavior::SuddenBrake { delay, decel, .. } => {
                if self.elapsed > delay {
                    self.v_along = (self.v_along - decel * dt).max(0.0);
                }
                self.s += self.v_along * dt;
            }
            Behavior::Crossing { .. } => {
                if self.v_lateral != 0.0 {
                    let target = self.crossing_target();
                    let next = self.lateral + self.v_lateral * dt;
                    if (next - target) * self.v_lateral.signum() >= 0.0 {
                        self.lateral = target;
                        self.v_lateral = 0.0;
                    } else {
                        self.lateral = next;
                    }
                }
            }
        }
    }

    pub fn speed(&self) -> f64 {
        if self.is_active() {
            self.v_along.hypot(self.v_lateral)
        } else {
            0.0
        }
    }

    /// World pose (x, y, heading).
    pub fn pose(&self, route: &Polyline) -> (f64, f64, f64) {
        let (x, y, tangent) = route.to_world(self.s, self.lateral);
        let heading = if self.v_along == 0.0 && self.v_lateral == 0.0 {
            tangent
        } else {
            tangent + self.v_lateral.atan2(self.v_along)
        };
        (x, y, heading)
    }

    pub fn footprint(&self, route: &Polyline) -> Option<OrientedRect> {
        let (length, width) = self.kind().footprint()?;
        let (cx, cy, heading) = self.pose(route);
        Some(OrientedRect {
            cx,
            cy,
            heading,
            length,
            width,
        })
    }

    pub fn light_color(&self) -> LightColor {
        let p = self.spec.light_phases();
        let t = self.elapsed.rem_euclid(p.red_s + p.green_s);
        if t < p.red_s {
            LightColor::Red
        } else {
            LightColor::Green
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: ActorKind, behavior: Behavior) -> ActorSpec {
        ActorSpec {
            actor_id: "a0".into(),
            kind,
            spawn: Spawn::Route { progress: 0.5, offset: 3.5 },
            behavior,
            trigger_distance: 15.0,
            phases: None,
        }
    }

    #[test]
    fn validation_names_field() {
        let mut s = spec(ActorKind::Vehicle, Behavior::CutIn { speed: 6.0, lateral_speed: 1.5 });
        assert!(s.validate().is_ok());
        s.spawn = Spawn::Route { progress: 1.5, offset: 0.0 };
        assert_eq!(s.validate().unwrap_err().field, "progress");
        let s = spec(ActorKind::Vehicle, Behavior::ConstantVelocity { speed: -1.0 });
        assert_eq!(s.validate().unwrap_err().field, "speed");
        let mut s = spec(ActorKind::Vehicle, Behavior::Stationary);
        s.trigger_distance = 0.0;
        assert_eq!(s.validate().unwrap_err().field, "trigger");
        let s = spec(ActorKind::StaticObstacle, Behavior::Crossing { speed: 1.0 });
        assert_eq!(s.validate().unwrap_err().field, "behavior");
    }

    #[test]
    fn cut_in_merges_to_lane_centre() {
        let line = Polyline::new(vec![(0.0, 0.0), (200.0, 0.0)]);
        let mut a = ActorState::new(
            spec(ActorKind::Vehicle, Behavior::CutIn { speed: 6.0, lateral_speed: 1.5 }),
            100.0,
            3.5,
            1.0,
            1.75,
        );
        a.activate();
        for _ in 0..40 {
            a.advance(0.1);
        }
        assert_eq!(a.lateral, 0.0);
        assert!((a.s - 124.0).abs() < 1e-9);
        let (x, y, _) = a.pose(&line);
        assert!((x - 124.0).abs() < 1e-9 && y.abs() < 1e-12);
    }

    #[test]
    fn sudden_brake_stops() {
        let mut a = ActorState::new(
            spec(ActorKind::Vehicle, Behavior::SuddenBrake { speed: 6.0, delay: 1.0, decel: 6.0 }),
            50.0,
            0.0,
            1.0,
            1.75,
        );
        a.activate();
        for _ in 0..50 {
            a.advance(0.1);
        }
        assert_eq!(a.speed(), 0.0);
        let stopped = a.s;
        a.advance(0.1);
        assert_eq!(a.s, stopped);
    }

    #[test]
    fn crossing_stops_at_mirrored_offset() {
        let mut s = spec(ActorKind::Pedestrian, Behavior::Crossing { speed: 1.5 });
        s.spawn = Spawn::Route { progress: 0.5, offset: 4.0 };
        let mut a = ActorState::new(s, 50.0, 4.0, 1.0, 1.75);
        a.activate();
        for _ in 0..100 {
            a.advance(0.1);
        }
        assert_eq!(a.lateral, -4.0);
        assert_eq!(a.speed(), 0.0);
    }
}
