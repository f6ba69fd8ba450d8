//! Domain types shared by every module: control vectors, observations,
//! task/command sets, infractions and the per-episode trace.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use base64::Engine;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("non-finite control component {component}: {value}")]
    NonFiniteControl { component: &'static str, value: f64 },
    #[error("control component {component}={value} outside [{lo}, {hi}]")]
    ControlOutOfRange {
        component: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("frame index {got} out of order (expected {expected})")]
    FrameOrder { expected: u64, got: u64 },
    #[error("invalid task set: {0}")]
    TaskSet(String),
    #[error("invalid trace: {0}")]
    Trace(String),
}

/// Mid-level control triple. Steer in [-1, 1], throttle and brake in [0, 1].
///
/// Positive steer turns the vehicle counter-clockwise (to the left), matching
/// the kinematic models in `sim` and `hil`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ControlVector {
    steer: f64,
    throttle: f64,
    brake: f64,
}

impl ControlVector {
    /// Full brake, zero steer.
    pub const FULL_BRAKE: ControlVector = ControlVector {
        steer: 0.0,
        throttle: 0.0,
        brake: 1.0,
    };

    /// Strict constructor: rejects non-finite or out-of-range components.
    pub fn new(steer: f64, throttle: f64, brake: f64) -> Result<Self, DomainError> {
        check_component("steer", steer, -1.0, 1.0)?;
        check_component("throttle", throttle, 0.0, 1.0)?;
        check_component("brake", brake, 0.0, 1.0)?;
        Ok(Self {
            steer,
            throttle,
            brake,
        })
    }

    pub fn steer(&self) -> f64 {
        self.steer
    }

    pub fn throttle(&self) -> f64 {
        self.throttle
    }

    pub fn brake(&self) -> f64 {
        self.brake
    }

    pub fn is_valid(&self) -> bool {
        Self::new(self.steer, self.throttle, self.brake).is_ok()
    }
}

fn check_component(component: &'static str, value: f64, lo: f64, hi: f64) -> Result<(), DomainError> {
    if !value.is_finite() {
        return Err(DomainError::NonFiniteControl { component, value });
    }
    if value < lo || value > hi {
        return Err(DomainError::ControlOutOfRange {
            component,
            value,
            lo,
            hi,
        });
    }
    Ok(())
}

impl fmt::Display for ControlVector {
    /// Canonical textual form, parseable by `dualsys::parse_cng`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "steer: {} throttle: {} brake: {}",
            self.steer, self.throttle, self.brake
        )
    }
}

impl<'de> Deserialize<'de> for ControlVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            steer: f64,
            throttle: f64,
            brake: f64,
        }
        let raw = Raw::deserialize(deserializer)?;
        ControlVector::new(raw.steer, raw.throttle, raw.brake).map_err(serde::de::Error::custom)
    }
}

/// Clamp a raw triple into the documented control ranges.
///
/// Non-finite input is rejected; the caller substitutes the fallback action.
pub fn clamp_control(steer: f64, throttle: f64, brake: f64) -> Result<ControlVector, DomainError> {
    for (component, value) in [("steer", steer), ("throttle", throttle), ("brake", brake)] {
        if !value.is_finite() {
            return Err(DomainError::NonFiniteControl { component, value });
        }
    }
    ControlVector::new(
        steer.clamp(-1.0, 1.0),
        throttle.clamp(0.0, 1.0),
        brake.clamp(0.0, 1.0),
    )
}

/// Wrap an angle into (-pi, pi].
pub fn normalize_angle(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
}

impl EgoState {
    pub fn new(x: f64, y: f64, heading: f64, speed: f64) -> Self {
        Self {
            x,
            y,
            heading: normalize_angle(heading),
            speed: speed.max(0.0),
        }
    }
}

/// Observation payload: either encoded image bytes or a structured text scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ScenePayload {
    Image {
        encoding: String,
        #[serde(with = "b64")]
        data: Vec<u8>,
    },
    Text {
        description: String,
    },
}

mod b64 {
    use super::*;

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        base64::engine::general_purpose::STANDARD
            .decode(text.as_bytes())
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub frame_index: u64,
    pub timestamp: f64,
    pub ego: EgoState,
    pub scene: ScenePayload,
    pub route_progress: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    ActionPrediction,
    TrajectoryForecasting,
    SemanticReasoning,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::ActionPrediction => "action_prediction",
            Task::TrajectoryForecasting => "trajectory_forecasting",
            Task::SemanticReasoning => "semantic_reasoning",
        }
    }

    /// Only action-oriented task output is routed to the slow system.
    pub fn is_action(&self) -> bool {
        matches!(self, Task::ActionPrediction)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Ordered tasks plus exactly one prompt per task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TaskSetRaw", into = "TaskSetRaw")]
pub struct TaskSet {
    tasks: Vec<Task>,
    prompts: BTreeMap<Task, String>,
}

#[derive(Serialize, Deserialize)]
struct TaskSetRaw {
    tasks: Vec<Task>,
    prompt_per_task: BTreeMap<Task, String>,
}

impl TryFrom<TaskSetRaw> for TaskSet {
    type Error = DomainError;
    fn try_from(raw: TaskSetRaw) -> Result<Self, Self::Error> {
        TaskSet::new(raw.tasks, raw.prompt_per_task)
    }
}

impl From<TaskSet> for TaskSetRaw {
    fn from(set: TaskSet) -> Self {
        TaskSetRaw {
            tasks: set.tasks,
            prompt_per_task: set.prompts,
        }
    }
}

impl TaskSet {
    pub fn new(tasks: Vec<Task>, prompts: BTreeMap<Task, String>) -> Result<Self, DomainError> {
        if tasks.is_empty() {
            return Err(DomainError::TaskSet("task list is empty".into()));
        }
        for (i, t) in tasks.iter().enumerate() {
            if tasks[..i].contains(t) {
                return Err(DomainError::TaskSet(format!("task {t} listed twice")));
            }
            if !prompts.contains_key(t) {
                return Err(DomainError::TaskSet(format!("task {t} has no prompt")));
            }
        }
        if let Some(extra) = prompts.keys().find(|k| !tasks.contains(k)) {
            return Err(DomainError::TaskSet(format!("prompt for unlisted task {extra}")));
        }
        Ok(Self { tasks, prompts })
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn prompt(&self, task: Task) -> Option<&str> {
        self.prompts.get(&task).map(String::as_str)
    }

    pub fn contains(&self, task: Task) -> bool {
        self.tasks.contains(&task)
    }
}

/// Task-conditioned free-form outputs of the fast system for one frame.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CommandSet {
    pub per_task_text: BTreeMap<Task, String>,
}

impl CommandSet {
    pub fn get(&self, task: Task) -> Option<&str> {
        self.per_task_text.get(&task).map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.per_task_text.is_empty()
    }

    pub fn len(&self) -> usize {
        self.per_task_text.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfractionKind {
    CollisionPedestrian,
    CollisionVehicle,
    CollisionStatic,
    RedLight,
    BoundaryCrossing,
    RouteDeviation,
    Timeout,
}

impl InfractionKind {
    pub const ALL: [InfractionKind; 7] = [
        InfractionKind::CollisionPedestrian,
        InfractionKind::CollisionVehicle,
        InfractionKind::CollisionStatic,
        InfractionKind::RedLight,
        InfractionKind::BoundaryCrossing,
        InfractionKind::RouteDeviation,
        InfractionKind::Timeout,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Infraction {
    pub kind: InfractionKind,
    pub frame_index: u64,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Finished,
    Blocked,
    InfractionFatal,
    Timeout,
}

/// Actor near the ego at the end of a frame; feeds the Efficiency reference speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearbyActor {
    pub actor_id: String,
    pub kind: String,
    pub range_m: f64,
    pub speed_mps: f64,
}

/// One closed-loop step: what was commanded and the state after actuation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_index: u64,
    pub timestamp: f64,
    /// Ego state after the control was applied for `dt`.
    pub ego: EgoState,
    pub route_progress: f64,
    #[serde(default)]
    pub nearby: Vec<NearbyActor>,
    pub commands: CommandSet,
    pub control: ControlVector,
    pub dt: f64,
    /// Adapter/parse failures that forced a fallback this frame.
    #[serde(default)]
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub route_id: String,
    pub scenario_id: Option<String>,
    pub frames: Vec<FrameRecord>,
    pub infractions: Vec<Infraction>,
    pub completed_fraction: f64,
    pub terminated_by: Option<Termination>,
}

impl EpisodeTrace {
    pub fn new(route_id: impl Into<String>, scenario_id: Option<String>) -> Self {
        Self {
            route_id: route_id.into(),
            scenario_id,
            frames: Vec::new(),
            infractions: Vec::new(),
            completed_fraction: 0.0,
            terminated_by: None,
        }
    }

    pub fn next_frame_index(&self) -> u64 {
        self.frames.last().map_or(0, |f| f.frame_index + 1)
    }

    /// Append a frame; its index must follow the last one exactly.
    pub fn append_frame(mut self, record: FrameRecord) -> Result<Self, DomainError> {
        self.push_frame(record)?;
        Ok(self)
    }

    pub fn push_frame(&mut self, record: FrameRecord) -> Result<(), DomainError> {
        let expected = self.next_frame_index();
        if record.frame_index != expected {
            return Err(DomainError::FrameOrder {
                expected,
                got: record.frame_index,
            });
        }
        if !record.control.is_valid() {
            return Err(DomainError::Trace(format!(
                "frame {} carries an invalid control",
                record.frame_index
            )));
        }
        self.completed_fraction = self.completed_fraction.max(record.route_progress.clamp(0.0, 1.0));
        self.frames.push(record);
        Ok(())
    }

    pub fn push_infraction(&mut self, infraction: Infraction) {
        self.infractions.push(infraction);
    }

    pub fn finish(&mut self, termination: Termination) {
        self.terminated_by = Some(termination);
    }

    /// Checks ordering, control validity and the progress bookkeeping.
    pub fn validate(&self) -> Result<(), DomainError> {
        let mut last_progress = 0.0_f64;
        for (i, frame) in self.frames.iter().enumerate() {
            if frame.frame_index != i as u64 {
                return Err(DomainError::FrameOrder {
                    expected: i as u64,
                    got: frame.frame_index,
                });
            }
            if !frame.control.is_valid() {
                return Err(DomainError::Trace(format!("frame {i} carries an invalid control")));
            }
            if frame.route_progress + 1e-12 < last_progress {
                return Err(DomainError::Trace(format!("route progress decreases at frame {i}")));
            }
            last_progress = frame.route_progress;
        }
        if !(0.0..=1.0).contains(&self.completed_fraction) {
            return Err(DomainError::Trace("completed_fraction outside [0, 1]".into()));
        }
        if let Some(last) = self.frames.last() {
            if self.completed_fraction != last.route_progress.clamp(0.0, 1.0) {
                return Err(DomainError::Trace(
                    "completed_fraction differs from final route progress".into(),
                ));
            }
        }
        let n = self.frames.len() as u64;
        if let Some(bad) = self.infractions.iter().find(|inf| inf.frame_index >= n.max(1)) {
            return Err(DomainError::Trace(format!(
                "infraction at frame {} beyond episode length {n}",
                bad.frame_index
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame(i: u64, progress: f64) -> FrameRecord {
        FrameRecord {
            frame_index: i,
            timestamp: i as f64 * 0.1,
            ego: EgoState::new(i as f64, 0.0, 0.0, 1.0),
            route_progress: progress,
            nearby: vec![],
            commands: CommandSet::default(),
            control: ControlVector::new(0.0, 0.5, 0.0).unwrap(),
            dt: 0.1,
            failures: vec![],
        }
    }

    #[test]
    fn clamp_examples() {
        let c = clamp_control(0.3, 0.5, 0.0).unwrap();
        assert_eq!((c.steer(), c.throttle(), c.brake()), (0.3, 0.5, 0.0));
        let c = clamp_control(1.5, 0.5, -0.2).unwrap();
        assert_eq!((c.steer(), c.throttle(), c.brake()), (1.0, 0.5, 0.0));
        assert!(matches!(
            clamp_control(f64::NAN, 0.2, 0.1),
            Err(DomainError::NonFiniteControl { component: "steer", .. })
        ));
        assert!(clamp_control(0.0, f64::INFINITY, 0.1).is_err());
    }

    #[test]
    fn strict_constructor_and_deserialize_reject_out_of_range() {
        assert!(ControlVector::new(0.0, 1.1, 0.0).is_err());
        assert!(serde_json::from_str::<ControlVector>(r#"{"steer":2.0,"throttle":0,"brake":0}"#).is_err());
        let ok: ControlVector = serde_json::from_str(r#"{"steer":-1.0,"throttle":0,"brake":1}"#).unwrap();
        assert_eq!(ok.steer(), -1.0);
    }

    #[test]
    fn append_frame_ordering() {
        let t = EpisodeTrace::new("r", None).append_frame(frame(0, 0.0)).unwrap();
        assert_eq!(t.frames.len(), 1);
        let mut t = EpisodeTrace::new("r", None);
        for i in 0..5 {
            t.push_frame(frame(i, 0.1 * i as f64)).unwrap();
        }
        let t6 = t.clone().append_frame(frame(5, 0.5)).unwrap();
        assert_eq!(t6.frames.len(), 6);
        assert_eq!(
            t.append_frame(frame(7, 0.7)).unwrap_err(),
            DomainError::FrameOrder { expected: 5, got: 7 }
        );
    }

    #[test]
    fn task_set_requires_prompt_per_task() {
        let mut prompts = BTreeMap::new();
        prompts.insert(Task::ActionPrediction, "what next?".to_string());
        assert!(TaskSet::new(vec![Task::ActionPrediction], prompts.clone()).is_ok());
        assert!(TaskSet::new(vec![], prompts.clone()).is_err());
        assert!(TaskSet::new(vec![Task::ActionPrediction, Task::SemanticReasoning], prompts).is_err());
    }

    #[test]
    fn heading_normalization() {
        assert_eq!(normalize_angle(PI), PI);
        assert!((normalize_angle(-PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn image_payload_serializes_as_base64() {
        let p = ScenePayload::Image {
            encoding: "pgm".into(),
            data: vec![0, 255, 7],
        };
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("AP8H"));
        assert_eq!(serde_json::from_str::<ScenePayload>(&s).unwrap(), p);
    }

    proptest! {
        #[test]
        fn clamp_is_idempotent_and_in_range(s in -1e6..1e6f64, t in -1e6..1e6f64, b in -1e6..1e6f64) {
            let c = clamp_control(s, t, b).unwrap();
            prop_assert!(c.is_valid());
            let again = clamp_control(c.steer(), c.throttle(), c.brake()).unwrap();
            prop_assert_eq!(c, again);
        }

        #[test]
        fn trace_json_round_trip_is_byte_identical(
            speeds in proptest::collection::vec(0.0..40.0f64, 1..20),
            steer in -1.0..1.0f64,
        ) {
            let mut trace = EpisodeTrace::new("route-x", Some("scen".into()));
            for (i, v) in speeds.iter().enumerate() {
                let mut f = frame(i as u64, i as f64 / speeds.len() as f64);
                f.ego.speed = *v;
                f.control = ControlVector::new(steer, 0.1, 0.0).unwrap();
                f.commands.per_task_text.insert(Task::ActionPrediction, format!("go {v}"));
                trace.push_frame(f).unwrap();
            }
            trace.push_infraction(Infraction { kind: InfractionKind::BoundaryCrossing, frame_index: 0, detail: "x".into() });
            trace.finish(Termination::Blocked);
            let first = trace.to_json();
            let decoded = EpisodeTrace::from_json(&first).unwrap();
            prop_assert_eq!(&decoded, &trace);
            prop_assert_eq!(decoded.to_json(), first);
        }
    }
}
