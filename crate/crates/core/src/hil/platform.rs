use serde::{Deserialize, Serialize};

use super::HilError;
use crate::domain::ControlVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlatformKind {
    Differential,
    Ackermann,
    /// Driven like a differential base.
    Tracked,
    /// Driven like a differential base; no lateral command exists.
    Mecanum,
}

impl PlatformKind {
    pub fn is_skid(&self) -> bool {
        !matches!(self, PlatformKind::Ackermann)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlatformParams {
    pub kind: PlatformKind,
    /// m, Ackermann only.
    #[serde(default)]
    pub wheel_base: f64,
    /// m, skid platforms only.
    #[serde(default)]
    pub track_width: f64,
    /// m/s
    pub max_speed: f64,
    /// rad, Ackermann only.
    #[serde(default)]
    pub max_steer_angle: f64,
    /// Yaw-rate gain k_ω of the differential mapping.
    #[serde(default = "unit")]
    pub yaw_gain: f64,
}

fn unit() -> f64 {
    1.0
}

impl PlatformParams {
    /// Small differential robot.
    pub fn differential(track_width: f64, max_speed: f64) -> Self {
        Self {
            kind: PlatformKind::Differential,
            wheel_base: 0.0,
            track_width,
            max_speed,
            max_steer_angle: 0.0,
            yaw_gain: 1.0,
        }
    }

    /// Small car-like robot.
    pub fn ackermann(wheel_base: f64, max_steer_angle: f64, max_speed: f64) -> Self {
        Self {
            kind: PlatformKind::Ackermann,
            wheel_base,
            track_width: 0.0,
            max_speed,
            max_steer_angle,
            yaw_gain: 1.0,
        }
    }

    pub fn jetbot() -> Self {
        Self::differential(0.12, 0.5)
    }

    pub fn limo() -> Self {
        Self::ackermann(0.2, 0.48, 1.0)
    }

    pub fn validate(&self) -> Result<(), HilError> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(HilError::Platform(format!("{name} must be > 0 for {:?}, got {v}", self.kind)))
            }
        };
        positive("max_speed", self.max_speed)?;
        if self.kind.is_skid() {
            positive("track_width", self.track_width)?;
            positive("yaw_gain", self.yaw_gain)?;
        } else {
            positive("wheel_base", self.wheel_base)?;
            positive("max_steer_angle", self.max_steer_angle)?;
        }
        Ok(())
    }
}

fn forward_speed(u: &ControlVector, p: &PlatformParams) -> f64 {
    (p.max_speed * (u.throttle() - u.brake())).clamp(0.0, p.max_speed)
}

/// (left, right) wheel speeds in m/s for skid-steered platforms.
pub fn map_differential(u: &ControlVector, p: &PlatformParams) -> Result<(f64, f64), HilError> {
    if !p.kind.is_skid() {
        return Err(HilError::Platform(format!("map_differential called for {:?}", p.kind)));
    }
    let v = forward_speed(u, p);
    let omega = p.yaw_gain * u.steer() * p.max_speed / p.track_width;
    let half = omega * p.track_width / 2.0;
    let limit = p.max_speed;
    Ok(((v - half).clamp(-limit, limit), (v + half).clamp(-limit, limit)))
}

/// (steer angle in rad, velocity in m/s) for Ackermann platforms.
pub fn map_ackermann(u: &ControlVector, p: &PlatformParams) -> Result<(f64, f64), HilError> {
    if p.kind != PlatformKind::Ackermann {
        return Err(HilError::Platform(format!("map_ackermann called for {:?}", p.kind)));
    }
    Ok((u.steer() * p.max_steer_angle, forward_speed(u, p)))
}
