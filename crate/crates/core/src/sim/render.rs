use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{ActorKind, LightColor, OrientedRect, WorldState};
use crate::domain::{Observation, ScenePayload};

/// Raster observations are square greyscale PGM images of this many pixels per side.
pub const RASTER_SIZE: usize = 64;
const RASTER_METERS_PER_PIXEL: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationMode {
    #[default]
    Text,
    Raster,
}

impl WorldState {
    pub fn render(&self, mode: ObservationMode) -> Observation {
        let scene = match mode {
            ObservationMode::Text => ScenePayload::Text {
                description: self.describe(),
            },
            ObservationMode::Raster => ScenePayload::Image {
                encoding: "pgm".into(),
                data: self.raster(),
            },
        };
        Observation {
            frame_index: self.tick,
            timestamp: self.time(),
            ego: self.ego,
            scene,
            route_progress: self.route_progress(),
        }
    }

    /// Deterministic structured scene description, one `key: value` per line.
    fn describe(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "frame: {}", self.tick);
        let _ = writeln!(out, "time_s: {:.2}", self.time());
        let _ = writeln!(out, "ego_speed_mps: {:.2}", self.ego.speed);
        let _ = writeln!(out, "speed_limit_mps: {:.2}", self.route.speed_limit);
        let _ = writeln!(out, "lane_offset_m: {:.2}", self.lateral_offset());
        let (_, _, road_heading) = self.polyline().pose_at(self.along_route());
        let heading_error = crate::domain::normalize_angle(self.ego.heading - road_heading);
        let _ = writeln!(out, "heading_error_deg: {:.1}", heading_error.to_degrees());
        let _ = writeln!(out, "route_progress: {:.4}", self.route_progress());
        match self.lead_hazard() {
            Some((i, range)) => {
                let _ = writeln!(out, "lead_hazard: yes {} range={:.2} m", self.actors[i].kind(), range);
            }
            None => {
                let _ = writeln!(out, "lead_hazard: none");
            }
        }
        match self.next_light() {
            Some((i, dist)) => {
                let color = match self.actors[i].light_color() {
                    LightColor::Red => "red",
                    LightColor::Green => "green",
                };
                let _ = writeln!(out, "traffic_light: {color} range={dist:.2} m");
                let stop = color == "red" && dist <= self.config().light_stop_range;
                let _ = writeln!(out, "red_light_ahead: {}", if stop { "yes" } else { "no" });
            }
            None => {
                let _ = writeln!(out, "traffic_light: none");
                let _ = writeln!(out, "red_light_ahead: no");
            }
        }
        let nearby = self.nearby_actors();
        if nearby.is_empty() {
            let _ = writeln!(out, "actors: no actors");
        } else {
            let _ = writeln!(out, "actors:");
            for n in nearby {
                let a = self.actors.iter().find(|a| a.id() == n.actor_id).expect("nearby actor exists");
                let (x, y, _) = a.pose(self.polyline());
                let bearing = crate::domain::normalize_angle((y - self.ego.y).atan2(x - self.ego.x) - self.ego.heading);
                let _ = writeln!(
                    out,
                    "  - {} {} range={:.2} m bearing={:.1} deg speed={:.2} m/s",
                    n.actor_id,
                    n.kind,
                    n.range_m,
                    bearing.to_degrees(),
                    n.speed_mps
                );
            }
        }
        out
    }

    /// Ego-centred top-down image, heading up: lane 90, outside 0, actors 255, ego 200.
    fn raster(&self) -> Vec<u8> {
        let header = format!("P5\n{RASTER_SIZE} {RASTER_SIZE}\n255\n");
        let mut data = header.into_bytes();
        let (c, s) = (self.ego.heading.cos(), self.ego.heading.sin());
        let ego_rect = self.ego_footprint();
        let rects: Vec<OrientedRect> = self
            .actors
            .iter()
            .filter(|a| a.is_active() && a.kind() != ActorKind::TrafficLight)
            .filter_map(|a| a.footprint(self.polyline()))
            .collect();
        let half = RASTER_SIZE as f64 / 2.0;
        for row in 0..RASTER_SIZE {
            for col in 0..RASTER_SIZE {
                let forward = (half - row as f64 - 0.5) * RASTER_METERS_PER_PIXEL;
                let left = (half - col as f64 - 0.5) * RASTER_METERS_PER_PIXEL;
                let x = self.ego.x + forward * c - left * s;
                let y = self.ego.y + forward * s + left * c;
                let value = if rects.iter().any(|r| r.contains(x, y)) {
                    255
                } else if ego_rect.contains(x, y) {
                    200
                } else if self.polyline().project(x, y).lateral.abs() <= self.route.lane_half_width {
                    90
                } else {
                    0
                };
                data.push(value);
            }
        }
        data
    }
}
