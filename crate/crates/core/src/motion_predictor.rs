//! Kinematic pose forecast over the round-trip delay.
//!
//! When a frame captured at `t0` reaches the station at `t1`, the station
//! integrates a single-track kinematic model over its own steering history for
//! `[t1 − τ, t1]` with `τ = τ1 + τ2`, starting from the speed and acceleration
//! carried by the frame. The result is the pose of the camera at the moment
//! the command issued now will be actuated, relative to where the frame was
//! taken.
//!
//! The rear-axle update is the exact arc solution for piecewise-constant
//! steer. It is evaluated in chord form, `Δ = s · sinc(ΔΨ/2)` along the mean
//! heading, which is algebraically the same as the `R(cos Ψᵢ₊₁ − cos Ψᵢ)`
//! expressions but stays well conditioned as the radius grows without bound.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::delay_model::PercentileEstimate;
use crate::error::{invalid, Error, Result};
use crate::pose::{wrap_angle, WorldPose};

/// Front-wheel steer limit, radians.
pub const MAX_STEER: f64 = 35.0 * std::f64::consts::PI / 180.0;

/// Sampling period of the station's steering commands.
pub const COMMAND_PERIOD: f64 = 0.020;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleGeometry {
    /// Wheelbase, meters.
    pub wheelbase: f64,
    /// Horizontal distance from the rear axle center forward to the camera.
    pub cam_offset: f64,
    /// Camera pitch, radians, positive looking down.
    pub cam_pitch: f64,
}

impl Default for VehicleGeometry {
    fn default() -> Self {
        Self {
            wheelbase: 1.76,
            cam_offset: 1.2,
            cam_pitch: 5f64.to_radians(),
        }
    }
}

impl VehicleGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.wheelbase > 0.0) || !self.wheelbase.is_finite() {
            return invalid(format!("wheelbase must be positive, got {}", self.wheelbase));
        }
        if !(self.cam_offset >= 0.0) || !self.cam_offset.is_finite() {
            return invalid(format!("camera offset must be nonnegative, got {}", self.cam_offset));
        }
        if !self.cam_pitch.is_finite() {
            return invalid("camera pitch must be finite");
        }
        Ok(())
    }
}

/// Time-ordered `(timestamp, front-wheel steer)` samples.
#[derive(Debug, Clone)]
pub struct SteerHistory {
    entries: VecDeque<(f64, f64)>,
    retention: f64,
}

impl SteerHistory {
    pub fn new(retention: f64) -> Result<Self> {
        if !(retention >= 2.0) {
            return invalid(format!("steer history retention must be at least 2 s, got {retention}"));
        }
        Ok(Self {
            entries: VecDeque::new(),
            retention,
        })
    }

    pub fn push(&mut self, timestamp: f64, steer: f64) -> Result<()> {
        if !timestamp.is_finite() || !steer.is_finite() {
            return invalid("steer samples must be finite");
        }
        if let Some(&(last, _)) = self.entries.back() {
            if timestamp <= last {
                return invalid(format!(
                    "steer timestamps must be strictly increasing ({timestamp} after {last})"
                ));
            }
        }
        self.entries.push_back((timestamp, steer));
        // keep the sample that is active at the retention cutoff
        let cutoff = timestamp - self.retention;
        while self.entries.len() > 1 && self.entries[1].0 <= cutoff {
            self.entries.pop_front();
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.entries.iter().copied()
    }

    /// Steer held at time `t` (zero-order hold, extrapolated at both ends).
    pub fn steer_at(&self, t: f64) -> Option<f64> {
        let idx = self.entries.partition_point(|&(ts, _)| ts <= t);
        match idx {
            0 => self.entries.front().map(|e| e.1),
            i => Some(self.entries[i - 1].1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteerSegment {
    pub steer: f64,
    pub dt: f64,
}

impl SteerSegment {
    pub fn new(steer: f64, dt: f64) -> Self {
        Self { steer, dt }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteerWindow {
    pub segments: Vec<SteerSegment>,
    /// The history had no samples; a single straight segment was produced.
    pub empty_history: bool,
}

/// Cuts the steering history into `(δ, dt)` pieces covering `[t_start, t_end]`.
pub fn window_history(h: &SteerHistory, t_start: f64, t_end: f64) -> Result<SteerWindow> {
    if !t_start.is_finite() || !t_end.is_finite() || t_end < t_start {
        return invalid(format!("steer window [{t_start}, {t_end}] is not ordered"));
    }
    if t_end == t_start {
        return Ok(SteerWindow {
            segments: Vec::new(),
            empty_history: h.is_empty(),
        });
    }
    if h.is_empty() {
        log::warn!("empty steer history; forecasting straight ahead");
        return Ok(SteerWindow {
            segments: vec![SteerSegment::new(0.0, t_end - t_start)],
            empty_history: true,
        });
    }

    let mut segments = Vec::new();
    let mut cursor = t_start;
    let mut steer = h.steer_at(t_start).expect("history is non-empty");
    let first_after = h.entries.partition_point(|&(ts, _)| ts <= t_start);
    for &(ts, next) in h.entries.iter().skip(first_after) {
        if ts >= t_end {
            break;
        }
        segments.push(SteerSegment::new(steer, ts - cursor));
        cursor = ts;
        steer = next;
    }
    segments.push(SteerSegment::new(steer, t_end - cursor));
    Ok(SteerWindow {
        segments,
        empty_history: false,
    })
}

/// Rear-axle pose relative to its starting pose.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AxlePose {
    /// Lateral, meters, right positive.
    pub x: f64,
    /// Forward, meters.
    pub z: f64,
    /// Yaw, radians, right turn positive.
    pub psi: f64,
}

/// Camera displacement in the image-aligned frame of the source frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseDelta {
    pub dx_cam: f64,
    pub dz_cam: f64,
    pub dpsi_cam: f64,
}

impl PoseDelta {
    pub const ZERO: PoseDelta = PoseDelta {
        dx_cam: 0.0,
        dz_cam: 0.0,
        dpsi_cam: 0.0,
    };

    pub fn new(dx_cam: f64, dz_cam: f64, dpsi_cam: f64) -> Self {
        Self {
            dx_cam,
            dz_cam,
            dpsi_cam,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.dx_cam == 0.0 && self.dz_cam == 0.0 && self.dpsi_cam == 0.0
    }
}

/// Integration state carried between segments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Kinematics {
    pub pose: AxlePose,
    pub speed: f64,
}

#[inline]
fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Distance covered and final speed with constant acceleration, speed clamped
/// at zero.
#[inline]
fn advance_speed(v: f64, a: f64, dt: f64) -> (f64, f64) {
    let v_end = v + a * dt;
    if v_end >= 0.0 {
        (v * dt + 0.5 * a * dt * dt, v_end)
    } else {
        // stops inside the segment
        (v * v / (2.0 * -a), 0.0)
    }
}

/// One exact step. `curvature_gain` scales the kinematic curvature
/// (1 for the model itself; below 1 emulates understeer in the plant).
pub(crate) fn step_exact(
    state: Kinematics,
    steer: f64,
    dt: f64,
    accel: f64,
    wheelbase: f64,
    curvature_gain: f64,
) -> Kinematics {
    let steer = steer.clamp(-MAX_STEER, MAX_STEER);
    let (s, v_end) = advance_speed(state.speed, accel, dt);
    let curvature = curvature_gain * steer.tan() / wheelbase;
    let dpsi = curvature * s;
    let mid = state.pose.psi + 0.5 * dpsi;
    let chord = s * sinc(0.5 * dpsi);
    Kinematics {
        pose: AxlePose {
            x: state.pose.x + chord * mid.sin(),
            z: state.pose.z + chord * mid.cos(),
            psi: state.pose.psi + dpsi,
        },
        speed: v_end,
    }
}

fn check_inputs(segments: &[SteerSegment], v0: f64, a: f64) -> Result<()> {
    if !v0.is_finite() || !a.is_finite() {
        return invalid("speed and acceleration must be finite");
    }
    if v0 < 0.0 {
        return invalid(format!("initial speed must be nonnegative, got {v0}"));
    }
    for seg in segments {
        if !seg.steer.is_finite() || !seg.dt.is_finite() || seg.dt < 0.0 {
            return invalid(format!("bad steer segment {seg:?}"));
        }
    }
    Ok(())
}

/// Integrates the kinematic single-track model from the origin.
///
/// `v0` and `a` are the speed and acceleration at the start of the window;
/// acceleration is held for the whole window and speed never goes negative.
/// Steer is saturated to [`MAX_STEER`].
pub fn integrate_trajectory(segments: &[SteerSegment], v0: f64, a: f64, geom: &VehicleGeometry) -> Result<AxlePose> {
    check_inputs(segments, v0, a)?;
    geom.validate()?;
    let mut state = Kinematics {
        pose: AxlePose::default(),
        speed: v0,
    };
    for seg in segments {
        state = step_exact(state, seg.steer, seg.dt, a, geom.wheelbase, 1.0);
    }
    Ok(state.pose)
}

pub fn camera_pose_change(axle: &AxlePose, geom: &VehicleGeometry) -> PoseDelta {
    let c = geom.cam_offset;
    PoseDelta {
        dz_cam: axle.z - c * (1.0 - axle.psi.cos()),
        dx_cam: axle.x + c * axle.psi.sin(),
        dpsi_cam: wrap_angle(axle.psi),
    }
}

/// Timing of one received frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayBookkeeping {
    /// Capture timestamp.
    pub t0: f64,
    /// Station receive timestamp.
    pub t1: f64,
    /// Downlink delay `t1 − t0`.
    pub tau1: f64,
    /// Uplink delay allowance.
    pub tau2: f64,
    /// Forecast horizon `tau1 + tau2`.
    pub tau: f64,
}

impl DelayBookkeeping {
    pub fn new(t0: f64, t1: f64, tau2: f64) -> Result<Self> {
        let tau1 = t1 - t0;
        if !(tau1 >= 0.0) {
            return invalid(format!("frame received before capture (t0={t0}, t1={t1})"));
        }
        if !(tau2 >= 0.0) {
            return invalid(format!("uplink delay must be nonnegative, got {tau2}"));
        }
        Ok(Self {
            t0,
            t1,
            tau1,
            tau2,
            tau: tau1 + tau2,
        })
    }

    /// Uses the 95th percentile of the uplink delay as `tau2`.
    pub fn from_estimate(t0: f64, t1: f64, est: &PercentileEstimate) -> Result<Self> {
        Self::new(t0, t1, est.p95)
    }
}

/// Rear-axle forecast over `[t1 − τ, t1]`.
pub fn forecast_axle(
    frame: &DelayBookkeeping,
    h: &SteerHistory,
    v0: f64,
    a: f64,
    geom: &VehicleGeometry,
) -> Result<AxlePose> {
    let window = window_history(h, frame.t1 - frame.tau, frame.t1)?;
    integrate_trajectory(&window.segments, v0, a, geom)
}

/// Camera pose change between capture and actuation of the next command.
/// `τ2` is taken from `est.p95`.
pub fn forecast(
    frame: &DelayBookkeeping,
    h: &SteerHistory,
    v0: f64,
    a: f64,
    est: &PercentileEstimate,
    geom: &VehicleGeometry,
) -> Result<PoseDelta> {
    let frame = DelayBookkeeping::new(frame.t0, frame.t1, est.p95)?;
    let axle = forecast_axle(&frame, h, v0, a, geom)?;
    Ok(camera_pose_change(&axle, geom))
}

/// One forecast paired with what actually happened.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionSample {
    pub t: f64,
    /// Camera world pose at capture.
    pub anchor: WorldPose,
    pub predicted: PoseDelta,
    /// Camera world pose at the forecast instant.
    pub realized: WorldPose,
}

impl PredictionSample {
    /// `(longitudinal, lateral, yaw)` error, predicted minus realized, in the
    /// anchor frame.
    pub fn error(&self) -> (f64, f64, f64) {
        let (right, forward, yaw) = self.anchor.relative(&self.realized);
        (
            self.predicted.dz_cam - forward,
            self.predicted.dx_cam - right,
            wrap_angle(self.predicted.dpsi_cam - yaw),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionRmse {
    pub t_from: f64,
    pub t_to: f64,
    pub samples: usize,
    pub longitudinal: f64,
    pub lateral: f64,
    pub yaw: f64,
}

/// RMSE of forecast error over `[t_from, t_to]`.
pub fn evaluate_prediction_error(samples: &[PredictionSample], t_from: f64, t_to: f64) -> Result<PredictionRmse> {
    let (mut n, mut sl, mut sx, mut sy) = (0usize, 0.0, 0.0, 0.0);
    for s in samples.iter().filter(|s| s.t >= t_from && s.t <= t_to) {
        let (el, ex, ey) = s.error();
        sl += el * el;
        sx += ex * ex;
        sy += ey * ey;
        n += 1;
    }
    if n == 0 {
        return invalid(format!("no prediction samples in [{t_from}, {t_to}]"));
    }
    let k = n as f64;
    Ok(PredictionRmse {
        t_from,
        t_to,
        samples: n,
        longitudinal: (sl / k).sqrt(),
        lateral: (sx / k).sqrt(),
        yaw: (sy / k).sqrt(),
    })
}

/// Writes `t,X,Z,Psi` rows.
pub fn write_pose_log<W: Write>(writer: W, rows: &[(f64, AxlePose)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let wrap = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(["t", "X", "Z", "Psi"]).map_err(wrap)?;
    for (t, p) in rows {
        w.write_record([t.to_string(), p.x.to_string(), p.z.to_string(), p.psi.to_string()])
            .map_err(wrap)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pose_log<R: std::io::Read>(reader: R) -> Result<Vec<(f64, AxlePose)>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Decode(format!("pose log: {e}")))?;
        let field = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Decode(format!("pose log: bad field {i} in {rec:?}")))
        };
        out.push((
            field(0)?,
            AxlePose {
                x: field(1)?,
                z: field(2)?,
                psi: field(3)?,
            },
        ));
    }
    Ok(out)
}
