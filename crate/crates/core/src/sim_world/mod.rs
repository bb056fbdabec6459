//! Deterministic synthetic world: test tracks, a ray-cast scene that serves
//! as both the vehicle camera and the ground truth, and the vehicle plant.

mod scene;
mod track;

use serde::{Deserialize, Serialize};

pub use scene::{render, BoxPrim, CameraPose, Color, Ground, Pole, Scatter, Scene, SceneSpec};
pub use track::{
    deviation, double_lane_change, full_course, r5_120, r7_80, track_by_name, Track, TrackElement, TrackProjection,
    TrackSection, TrackSpec, Turn,
};

use crate::depth_codec::{DepthMap, Fov};
use crate::error::{invalid, Result};
use crate::motion_predictor::{step_exact, AxlePose, Kinematics, VehicleGeometry};
use crate::pose::WorldPose;
use crate::projection::RgbImage;

/// Distance from the front axle to the forward-most point of the car.
pub const FRONT_OVERHANG: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantParams {
    pub wheelbase: f64,
    /// Scales the kinematic curvature. Below 1 the vehicle turns less than
    /// commanded, standing in for unmodeled lateral slip.
    pub slip_factor: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            wheelbase: 1.76,
            slip_factor: 1.0,
        }
    }
}

/// Rear-axle world pose and speed.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantState {
    pub pose: WorldPose,
    pub speed: f64,
}

pub fn plant_step(s: &PlantState, steer: f64, accel: f64, dt: f64, p: &PlantParams) -> Result<PlantState> {
    if !(dt > 0.0) || !dt.is_finite() {
        return invalid(format!("plant step needs dt > 0, got {dt}"));
    }
    if !steer.is_finite() || !accel.is_finite() {
        return invalid("steer and acceleration must be finite");
    }
    let k = step_exact(
        Kinematics {
            pose: AxlePose::default(),
            speed: s.speed.max(0.0),
        },
        steer,
        dt,
        accel,
        p.wheelbase,
        p.slip_factor,
    );
    Ok(PlantState {
        pose: s.pose.compose(k.pose.x, k.pose.z, k.pose.psi),
        speed: k.speed,
    })
}

/// Point `wheelbase + offset` ahead of the rear axle.
pub fn forward_point(s: &PlantState, wheelbase: f64, offset: f64) -> [f64; 2] {
    s.pose.ahead(wheelbase + offset)
}

/// Vehicle-mounted camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraRig {
    pub width: u32,
    pub height: u32,
    pub fov_h_deg: f64,
    pub fov_v_deg: f64,
    /// Lens height above ground, meters.
    pub mount_height: f64,
}

impl Default for CameraRig {
    fn default() -> Self {
        Self {
            width: 672,
            height: 376,
            fov_h_deg: 90.0,
            fov_v_deg: 60.0,
            mount_height: 1.3,
        }
    }
}

impl CameraRig {
    pub fn fov(&self) -> Result<Fov> {
        Fov::from_degrees(self.fov_h_deg, self.fov_v_deg)
    }

    pub fn pose(&self, axle: &WorldPose, geom: &VehicleGeometry) -> CameraPose {
        let c = axle.ahead(geom.cam_offset);
        CameraPose {
            position: [c[0], c[1], self.mount_height],
            heading: axle.heading,
            pitch: geom.cam_pitch,
        }
    }

    pub fn render(&self, scene: &Scene, axle: &WorldPose, geom: &VehicleGeometry) -> Result<(RgbImage, DepthMap)> {
        render(scene, &self.pose(axle, geom), self.width, self.height, self.fov()?)
    }
}

/// Frames from a camera driven along the centerline at constant speed,
/// starting `start` meters into the track.
pub fn drive_frames(
    scene: &Scene,
    track: &Track,
    rig: &CameraRig,
    geom: &VehicleGeometry,
    start: f64,
    speed: f64,
    fps: f64,
    count: usize,
) -> Result<Vec<(RgbImage, DepthMap)>> {
    if !(fps > 0.0) || !(speed >= 0.0) {
        return invalid(format!("drive needs fps > 0 and speed >= 0, got {fps}, {speed}"));
    }
    (0..count)
        .map(|i| {
            let s = (start + speed * i as f64 / fps).min(track.length());
            rig.render(scene, &track.pose_at(s), geom)
        })
        .collect()
}
