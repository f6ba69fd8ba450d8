//! Built-in deterministic stand-ins for the fast and slow systems.

use std::fmt::Write;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::adapters::{ModelAdapter, ModelRequest, ModelResponse};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinDriver {
    /// Fast system that keeps its lane and stops for in-path hazards and red lights.
    RuleFollowing,
    /// Fast system that always answers "Keep going straight".
    AlwaysStraight,
    /// Slow system that turns the commands above into CNG numbers or DCS labels.
    CommandTranslator,
}

impl BuiltinDriver {
    pub fn adapter(self) -> Box<dyn ModelAdapter> {
        match self {
            BuiltinDriver::RuleFollowing => Box::new(RuleFollowing),
            BuiltinDriver::AlwaysStraight => Box::new(AlwaysStraight),
            BuiltinDriver::CommandTranslator => Box::new(CommandTranslator),
        }
    }
}

/// Fields of the newest text scene in a prompt.
#[derive(Debug, Default, PartialEq)]
struct Scene {
    lane_offset: f64,
    heading_error_deg: f64,
    speed: f64,
    speed_limit: Option<f64>,
    hazard: bool,
    red_light: bool,
}

fn newest_scene(prompt: &str) -> Scene {
    let tail = prompt.rfind("[frame ").map_or(prompt, |i| &prompt[i..]);
    let mut scene = Scene::default();
    for line in tail.lines() {
        let Some((key, value)) = line.split_once(':') else {
            continue;
        };
        let value = value.trim();
        let num = || value.split_whitespace().next().and_then(|v| v.parse::<f64>().ok());
        match key.trim() {
            "lane_offset_m" => scene.lane_offset = num().unwrap_or(0.0),
            "heading_error_deg" => scene.heading_error_deg = num().unwrap_or(0.0),
            "ego_speed_mps" => scene.speed = num().unwrap_or(0.0),
            "speed_limit_mps" => scene.speed_limit = num(),
            "lead_hazard" => scene.hazard = value.starts_with("yes"),
            "red_light_ahead" => scene.red_light = value.starts_with("yes"),
            _ => {}
        }
    }
    scene
}

fn is_threat_query(prompt: &str) -> bool {
    prompt.contains("safety threat")
}

pub struct RuleFollowing;

impl ModelAdapter for RuleFollowing {
    fn complete(&self, request: &ModelRequest) -> ModelResponse {
        let scene = newest_scene(&request.prompt);
        let must_stop = scene.hazard || scene.red_light;
        if is_threat_query(&request.prompt) {
            return ModelResponse::ok(if must_stop { "Yes, something is in the way." } else { "No." }, 0.0);
        }
        if must_stop {
            return ModelResponse::ok("Stop", 0.0);
        }
        let steer = (-(0.25 * scene.lane_offset + scene.heading_error_deg.to_radians())).clamp(-1.0, 1.0);
        let target = scene.speed_limit.unwrap_or(8.0);
        let throttle = (0.06 * target + 0.2 * (target - scene.speed)).clamp(0.0, 1.0);
        let mut text = String::new();
        let _ = write!(text, "Follow the lane with steer={steer:.3} throttle={throttle:.3}");
        ModelResponse::ok(text, 0.0)
    }
}

pub struct AlwaysStraight;

impl ModelAdapter for AlwaysStraight {
    fn complete(&self, request: &ModelRequest) -> ModelResponse {
        if is_threat_query(&request.prompt) {
            return ModelResponse::ok("No.", 0.0);
        }
        ModelResponse::ok("Keep going straight", 0.0)
    }
}

fn kv_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(steer|throttle|speed)\s*=\s*([-+]?\d+(?:\.\d+)?)").expect("static regex"))
}

pub struct CommandTranslator;

impl ModelAdapter for CommandTranslator {
    fn complete(&self, request: &ModelRequest) -> ModelResponse {
        let prompt = &request.prompt;
        let command = prompt
            .lines()
            .find_map(|l| l.strip_prefix("Driving command:"))
            .map(str::trim)
            .unwrap_or("");
        let dcs = prompt.contains("Available maneuvers");
        let lower = command.to_ascii_lowercase();
        let (steer, throttle, brake) = if lower.starts_with("stop") || lower.starts_with("slow down and stop") {
            (0.0, 0.0, 1.0)
        } else {
            let mut steer = None;
            let mut throttle = None;
            for c in kv_re().captures_iter(command) {
                let v: f64 = c[2].parse().unwrap_or(0.0);
                match &c[1] {
                    "steer" => steer = Some(v),
                    _ => throttle = Some(v),
                }
            }
            if steer.is_none() && throttle.is_none() && !lower.starts_with("keep going straight") {
                return ModelResponse::ok("I am not sure how to execute that.", 0.0);
            }
            (steer.unwrap_or(0.0), throttle.unwrap_or(0.5), 0.0)
        };
        let reply = if dcs {
            let label = if brake > 0.0 {
                "STOP"
            } else if steer > 0.15 {
                "LEFT"
            } else if steer < -0.15 {
                "RIGHT"
            } else if throttle < 0.45 {
                "STRAIGHT_SLOW"
            } else {
                "STRAIGHT"
            };
            label.to_string()
        } else {
            format!("steer: {steer} throttle: {throttle} brake: {brake}")
        };
        ModelResponse::ok(reply, 0.0)
    }
}
