//! Planar world poses.
//!
//! World frame: x east, y north, z up. Heading is a compass bearing,
//! clockwise from +y, so a right turn increases it and a vehicle with heading
//! 0 has its local `(X right, Z forward)` aligned with world `(x, y)`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WorldPose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl WorldPose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading }
    }

    pub fn forward(&self) -> [f64; 2] {
        [self.heading.sin(), self.heading.cos()]
    }

    pub fn right(&self) -> [f64; 2] {
        [self.heading.cos(), -self.heading.sin()]
    }

    /// Applies a local displacement (`right`, `forward`, right-positive `yaw`).
    pub fn compose(&self, right: f64, forward: f64, yaw: f64) -> WorldPose {
        let f = self.forward();
        let r = self.right();
        WorldPose {
            x: self.x + forward * f[0] + right * r[0],
            y: self.y + forward * f[1] + right * r[1],
            heading: self.heading + yaw,
        }
    }

    /// Local displacement `(right, forward, yaw)` that takes `self` to `other`.
    pub fn relative(&self, other: &WorldPose) -> (f64, f64, f64) {
        let dx = other.x - self.x;
        let dy = other.y - self.y;
        let f = self.forward();
        let r = self.right();
        (
            dx * r[0] + dy * r[1],
            dx * f[0] + dy * f[1],
            wrap_angle(other.heading - self.heading),
        )
    }

    /// Point `distance` meters ahead along the heading.
    pub fn ahead(&self, distance: f64) -> [f64; 2] {
        let f = self.forward();
        [self.x + distance * f[0], self.y + distance * f[1]]
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut w = a.rem_euclid(TAU);
    if w > PI {
        w -= TAU;
    }
    w
}
