use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Wraps an angle into `(-π, π]`.
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Planar pose: position in metres, heading in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Pose2 {
            x,
            y,
            yaw: normalize_angle(yaw),
        }
    }

    pub fn identity() -> Self {
        Pose2::new(0.0, 0.0, 0.0)
    }

    /// Maps a point from this pose's local frame to the world frame.
    pub fn to_world(&self, lx: f64, ly: f64) -> (f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        (self.x + c * lx - s * ly, self.y + s * lx + c * ly)
    }

    /// Maps a world point into this pose's local frame.
    pub fn to_local(&self, wx: f64, wy: f64) -> (f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        let (dx, dy) = (wx - self.x, wy - self.y);
        (c * dx + s * dy, -s * dx + c * dy)
    }

    /// `self ∘ other`: `other` read as a pose in this pose's frame.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let (x, y) = self.to_world(other.x, other.y);
        Pose2::new(x, y, self.yaw + other.yaw)
    }

    pub fn inverse(&self) -> Pose2 {
        let (x, y) = self.to_local(0.0, 0.0);
        Pose2::new(x, y, -self.yaw)
    }

    pub fn distance(&self, other: &Pose2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Pose after moving with constant world-frame velocity for `dt` seconds.
    pub fn advanced(&self, velocity: [f64; 2], dt: f64) -> Pose2 {
        Pose2 {
            x: self.x + velocity[0] * dt,
            y: self.y + velocity[1] * dt,
            yaw: self.yaw,
        }
    }
}

impl Default for Pose2 {
    fn default() -> Self {
        Pose2::identity()
    }
}
