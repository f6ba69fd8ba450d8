use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::geometry::Polyline;
use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Skill {
    Merging,
    Overtaking,
    EmergencyBrake,
    GiveWay,
    TrafficSign,
}

impl Skill {
    pub const ALL: [Skill; 5] = [
        Skill::Merging,
        Skill::Overtaking,
        Skill::EmergencyBrake,
        Skill::GiveWay,
        Skill::TrafficSign,
    ];
}

impl fmt::Display for Skill {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Skill::Merging => "merging",
            Skill::Overtaking => "overtaking",
            Skill::EmergencyBrake => "emergency_brake",
            Skill::GiveWay => "give_way",
            Skill::TrafficSign => "traffic_sign",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTrigger {
    pub trigger_progress: f64,
    pub scenario_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteSpec {
    pub route_id: String,
    pub waypoints: Vec<Waypoint>,
    pub lane_half_width: f64,
    pub speed_limit: f64,
    #[serde(default)]
    pub skill_tags: BTreeSet<Skill>,
    #[serde(default)]
    pub scenario_triggers: Vec<ScenarioTrigger>,
}

impl RouteSpec {
    /// Straight route from the origin along +x.
    pub fn straight(route_id: impl Into<String>, length: f64, lane_half_width: f64, speed_limit: f64) -> Self {
        Self {
            route_id: route_id.into(),
            waypoints: vec![Waypoint { x: 0.0, y: 0.0 }, Waypoint { x: length, y: 0.0 }],
            lane_half_width,
            speed_limit,
            skill_tags: BTreeSet::new(),
            scenario_triggers: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |reason: String| Err(SimError::InvalidRoute { route_id: self.route_id.clone(), reason });
        if self.route_id.trim().is_empty() {
            return bad("empty route_id".into());
        }
        if self.waypoints.len() < 2 {
            return bad(format!("needs at least 2 waypoints, got {}", self.waypoints.len()));
        }
        if let Some(w) = self.waypoints.iter().find(|w| !w.x.is_finite() || !w.y.is_finite()) {
            return bad(format!("non-finite waypoint ({}, {})", w.x, w.y));
        }
        for (i, pair) in self.waypoints.windows(2).enumerate() {
            if pair[0] == pair[1] {
                return bad(format!("waypoints {i} and {} coincide", i + 1));
            }
        }
        if !(self.lane_half_width > 0.0 && self.lane_half_width.is_finite()) {
            return bad(format!("lane_half_width must be > 0, got {}", self.lane_half_width));
        }
        if !(self.speed_limit > 0.0 && self.speed_limit.is_finite()) {
            return bad(format!("speed_limit must be > 0, got {}", self.speed_limit));
        }
        if let Some(t) = self
            .scenario_triggers
            .iter()
            .find(|t| !(t.trigger_progress > 0.0 && t.trigger_progress < 1.0))
        {
            return bad(format!("trigger_progress {} outside (0, 1)", t.trigger_progress));
        }
        Ok(())
    }

    pub fn polyline(&self) -> Polyline {
        Polyline::new(self.waypoints.iter().map(|w| (w.x, w.y)).collect())
    }

    pub fn length(&self) -> f64 {
        self.polyline().length()
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        let route: RouteSpec =
            serde_json::from_str(&text).map_err(|e| SimError::Parse(format!("{}: {e}", path.display())))?;
        route.validate()?;
        Ok(route)
    }
}

/// Load every `*.json` route in a directory (sorted by file name), or a single
/// file holding either one route or an array of routes.
pub fn load_route_set(path: &Path) -> Result<Vec<RouteSpec>, SimError> {
    if path.is_dir() {
        let mut files: Vec<_> = std::fs::read_dir(path)
            .map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
            .collect();
        files.sort();
        return files.iter().map(|f| RouteSpec::load(f)).collect();
    }
    let text = std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
    let routes: Vec<RouteSpec> = match serde_json::from_str::<Vec<RouteSpec>>(&text) {
        Ok(list) => list,
        Err(_) => vec![serde_json::from_str(&text).map_err(|e| SimError::Parse(format!("{}: {e}", path.display())))?],
    };
    for r in &routes {
        r.validate()?;
    }
    Ok(routes)
}

/// Directory of the desk-scale route library shipped with this crate.
pub fn bundled_route_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("assets").join("routes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_single_waypoint_and_duplicates() {
        let mut r = RouteSpec::straight("r", 100.0, 1.75, 8.0);
        assert!(r.validate().is_ok());
        r.waypoints.truncate(1);
        assert!(matches!(r.validate(), Err(SimError::InvalidRoute { .. })));
        let mut r = RouteSpec::straight("r", 100.0, 1.75, 8.0);
        r.waypoints.push(r.waypoints[1]);
        assert!(r.validate().is_err());
        let mut r = RouteSpec::straight("r", 100.0, 0.0, 8.0);
        assert!(r.validate().is_err());
        r.lane_half_width = 1.0;
        r.scenario_triggers.push(ScenarioTrigger { trigger_progress: 1.0, scenario_ref: "s".into() });
        assert!(r.validate().is_err());
    }

    #[test]
    fn bundled_library_covers_all_skills() {
        let routes = load_route_set(&bundled_route_dir()).unwrap();
        assert!(routes.len() >= 5);
        for skill in Skill::ALL {
            assert!(routes.iter().any(|r| r.skill_tags.contains(&skill)), "no route tagged {skill}");
        }
        assert!(routes.iter().all(|r| !r.skill_tags.is_empty()));
    }
}
