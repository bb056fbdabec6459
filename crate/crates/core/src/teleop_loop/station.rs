use std::time::Instant;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::delay_model::{DelayWindow, PercentileEstimate, PercentileEstimator, FIT_WINDOW};
use crate::depth_codec::{decode_map, CodecParams};
use crate::error::Result;
use crate::motion_predictor::{
    camera_pose_change, forecast_axle, AxlePose, DelayBookkeeping, PoseDelta, SteerHistory, VehicleGeometry,
};
use crate::pose::WorldPose;
use crate::projection::project_frame;
use crate::wire::{decode_frame, CommandMsg};

/// Per-frame processing budget at 30 Hz, seconds.
pub const FRAME_BUDGET: f64 = 0.033;

/// A frame as it travels over the simulated downlink.
///
/// `capture_pose` is simulator ground truth. The scripted operator reads the
/// scene geometrically from it instead of doing vision on pixels. The uplink
/// delay reports are the vehicle's observations riding back to the station.
#[derive(Debug, Clone, PartialEq)]
pub struct SimFrame {
    pub bytes: Vec<u8>,
    pub capture_pose: WorldPose,
    pub uplink_reports: Vec<(f64, f64)>,
}

/// What the operator is shown for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Displayed {
    pub seq: u64,
    pub timing: DelayBookkeeping,
    pub speed: f64,
    pub accel: f64,
    pub capture_pose: WorldPose,
    /// Forecast rear-axle motion from capture to actuation, vehicle frame.
    pub forecast: AxlePose,
    pub delta: PoseDelta,
    /// Rear-axle pose the display corresponds to.
    pub shown_pose: WorldPose,
    pub prediction_on: bool,
    pub image: Option<RgbImage>,
    /// Decode plus projection wall time, when measured.
    pub process_time: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StationStats {
    pub received: usize,
    pub displayed: usize,
    pub dropped_stale: usize,
    pub budget_overruns: usize,
    pub commands: usize,
}

/// Control station: delay bookkeeping, forecasting and display.
#[derive(Debug, Clone)]
pub struct StationNode {
    geom: VehicleGeometry,
    codec: CodecParams,
    prediction_on: bool,
    measure_time: bool,
    history: SteerHistory,
    window: DelayWindow,
    estimator: PercentileEstimator,
    estimates: Vec<PercentileEstimate>,
    last_seq: Option<u64>,
    stats: StationStats,
}

impl StationNode {
    pub fn new(geom: VehicleGeometry, prediction_on: bool, measure_time: bool) -> Result<Self> {
        Ok(Self {
            geom,
            codec: CodecParams::default(),
            prediction_on,
            measure_time,
            history: SteerHistory::new(5.0)?,
            window: DelayWindow::new(FIT_WINDOW)?,
            estimator: PercentileEstimator::new(PercentileEstimate::prior()),
            estimates: Vec::new(),
            last_seq: None,
            stats: StationStats::default(),
        })
    }

    pub fn prediction_on(&self) -> bool {
        self.prediction_on
    }

    pub fn set_prediction(&mut self, on: bool) {
        self.prediction_on = on;
    }

    pub fn estimate(&self) -> PercentileEstimate {
        self.estimator.current()
    }

    pub fn estimates(&self) -> &[PercentileEstimate] {
        &self.estimates
    }

    pub fn stats(&self) -> &StationStats {
        &self.stats
    }

    /// Refreshes the uplink percentiles when due.
    pub fn tick(&mut self, now: f64) {
        if let Some(e) = self.estimator.poll(&self.window, now) {
            if e.fitted_at == now {
                self.estimates.push(e);
            }
        }
    }

    /// Stamps a command with the current time and percentiles.
    pub fn command(&mut self, now: f64, steer: f64) -> Result<CommandMsg> {
        let est = self.estimator.current();
        let cmd = CommandMsg::new(steer, now, est.p95, est.p999)?;
        self.history.push(now, cmd.steer())?;
        self.stats.commands += 1;
        Ok(cmd)
    }

    /// Handles a frame arriving at `t1`. Frames older than the newest
    /// displayed one are dropped.
    pub fn receive(&mut self, frame: SimFrame, t1: f64) -> Result<Option<Displayed>> {
        self.stats.received += 1;
        for (t, d) in &frame.uplink_reports {
            self.window.push(*t, *d)?;
        }
        let started = self.measure_time.then(Instant::now);
        let msg = decode_frame(&frame.bytes)?;
        if self.last_seq.is_some_and(|s| msg.seq <= s) {
            self.stats.dropped_stale += 1;
            return Ok(None);
        }
        self.last_seq = Some(msg.seq);

        let timing = DelayBookkeeping::from_estimate(msg.t0(), t1, &self.estimator.current())?;
        let (speed, accel) = (msg.speed as f64, msg.accel as f64);
        let forecast = forecast_axle(&timing, &self.history, speed, accel, &self.geom)?;
        let delta = camera_pose_change(&forecast, &self.geom);
        let predicted_pose = frame.capture_pose.compose(forecast.x, forecast.z, forecast.psi);
        let shown_pose = if self.prediction_on {
            predicted_pose
        } else {
            frame.capture_pose
        };

        let image = if msg.rgb_payload.is_empty() {
            None
        } else {
            let (rgb, codes) = msg.decode_images()?;
            if self.prediction_on {
                let depth = decode_map(&codes, &self.codec).with_fov(msg.fov()?);
                Some(project_frame(&rgb, &depth, &delta, &self.geom)?.image)
            } else {
                Some(rgb)
            }
        };
        let process_time = started.map(|s| s.elapsed().as_secs_f64());
        if process_time.is_some_and(|p| p > FRAME_BUDGET) {
            self.stats.budget_overruns += 1;
        }
        self.stats.displayed += 1;
        Ok(Some(Displayed {
            seq: msg.seq,
            timing,
            speed,
            accel,
            capture_pose: frame.capture_pose,
            forecast,
            delta,
            shown_pose,
            prediction_on: self.prediction_on,
            image,
            process_time,
        }))
    }
}
