//! Closed-loop teleoperation simulation.
//!
//! A vehicle node and a control station exchange frames and commands over
//! two delayed channels on one injected clock with 1 ms ticks. Frames are
//! captured at 30 Hz and commands issued at 50 Hz. The station forecasts the
//! vehicle's pose at the actuation time of its next command and, with
//! prediction on, shows the operator that pose (and the projected image when
//! rendering is enabled).

mod config;
mod metrics;
mod operator;
mod station;
mod vehicle;

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use config::{
    gev_location_for_mean, DelaySpec, ExperimentConfig, LinkConfig, MetricsConfig, Mode, OperatorConfig, RenderConfig,
    TrackChoice,
};
pub use metrics::{
    compute_rmse, count_oscillations, deviation_samples, prediction_error, DeviationSample, PredictionErrorReport,
    RmseReport, SectionRmse,
};
pub use operator::ScriptedOperator;
pub use station::{Displayed, SimFrame, StationNode, StationStats, FRAME_BUDGET};
pub use vehicle::{VehicleNode, VehicleStats, EMERGENCY_DECEL};

use crate::delay_model::{write_estimates, PercentileEstimate};
use crate::depth_codec::{encode_map, CodecParams};
use crate::error::{Error, Result};
use crate::motion_predictor::{PoseDelta, PredictionSample};
use crate::pose::WorldPose;
use crate::sim_world::{forward_point, PlantState, Scene, SceneSpec, Track, FRONT_OVERHANG};
use crate::wire::{decode_command, encode_command, encode_frame, DelayedChannel, FrameMsg, COMMAND_LEN};

pub const TICK: f64 = 0.001;
/// Ticks between commands (50 Hz).
pub const COMMAND_TICKS: u64 = 20;
pub const FRAME_RATE: u64 = 30;
/// Ticks between pose log rows.
const POSE_LOG_TICKS: u64 = 10;

pub fn tick_time(k: u64) -> f64 {
    k as f64 * TICK
}

/// Who produces the steering commands.
#[derive(Debug, Clone)]
pub enum Driver {
    Scripted(ScriptedOperator),
    /// Steering supplied from outside, e.g. a live console.
    External {
        steer: f64,
    },
    /// Nobody at the wheel: the station stops sending commands and the
    /// vehicle's watchdog brings it to a halt.
    Idle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub steer: f64,
    pub accel: f64,
    pub emergency: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameRow {
    pub seq: u64,
    pub t0: f64,
    pub t1: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub speed: f64,
    pub dx_cam: f64,
    pub dz_cam: f64,
    pub dpsi_cam: f64,
    pub prediction_on: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommandRow {
    pub ts: f64,
    pub steer: f64,
    pub p95: f64,
    pub p999: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UplinkRow {
    pub arrival: f64,
    pub delay: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentLogs {
    pub poses: Vec<PoseRow>,
    pub frames: Vec<FrameRow>,
    pub commands: Vec<CommandRow>,
    pub uplink: Vec<UplinkRow>,
    pub deviations: Vec<DeviationSample>,
    pub predictions: Vec<PredictionSample>,
    pub estimates: Vec<PercentileEstimate>,
}

struct PendingPrediction {
    target_tick: u64,
    t: f64,
    anchor: WorldPose,
    predicted: PoseDelta,
}

/// Stepwise closed-loop simulation.
pub struct Simulation {
    cfg: ExperimentConfig,
    track: Track,
    scene: Option<Scene>,
    tick: u64,
    vehicle: VehicleNode,
    station: StationNode,
    driver: Driver,
    /// In-vehicle driving: the operator watches the road directly at the
    /// command rate instead of through camera frames.
    direct_view: bool,
    downlink: DelayedChannel<SimFrame>,
    uplink: DelayedChannel<[u8; COMMAND_LEN]>,
    frame_seq: u64,
    progress: f64,
    finished: bool,
    axle_log: Vec<WorldPose>,
    sample_points: Vec<(f64, [f64; 2])>,
    pending: Vec<PendingPrediction>,
    logs: ExperimentLogs,
    codec: CodecParams,
}

impl Simulation {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let spec = cfg.track_spec()?;
        let track = Track::from_spec(&spec)?;
        let scene = if cfg.render.enabled {
            Some(Scene::build(&SceneSpec::for_track(spec, cfg.seed))?)
        } else {
            None
        };
        let (down, up) = match cfg.mode {
            Mode::InVehicle => (DelaySpec::Zero, DelaySpec::Zero),
            _ => (cfg.delay.downlink.clone(), cfg.delay.uplink.clone()),
        };
        // independent streams per link
        let down_seed = cfg.seed.wrapping_mul(2).wrapping_add(0x5eed_0001);
        let up_seed = cfg.seed.wrapping_mul(2).wrapping_add(0x5eed_0002);
        let downlink = DelayedChannel::new(down.source(down_seed, &cfg.base_dir)?);
        let uplink = DelayedChannel::new(up.source(up_seed, &cfg.base_dir)?);
        let start = PlantState {
            pose: track.start(),
            speed: cfg.speed(),
        };
        let driver = Driver::Scripted(ScriptedOperator::new(
            cfg.operator.preview,
            cfg.operator.reaction_delay,
            cfg.geometry,
        ));
        Ok(Self {
            cfg: cfg.clone(),
            track,
            scene,
            tick: 0,
            vehicle: VehicleNode::new(start, cfg.plant, cfg.speed(), 0.0),
            station: StationNode::new(cfg.geometry, cfg.mode.prediction_on(), cfg.render.measure_time)?,
            driver,
            direct_view: cfg.mode == Mode::InVehicle,
            downlink,
            uplink,
            frame_seq: 0,
            progress: 0.0,
            finished: false,
            axle_log: Vec::new(),
            sample_points: Vec::new(),
            pending: Vec::new(),
            logs: ExperimentLogs::default(),
            codec: CodecParams::default(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn track(&self) -> &Track {
        &self.track
    }

    pub fn time(&self) -> f64 {
        tick_time(self.tick)
    }

    pub fn vehicle(&self) -> &VehicleNode {
        &self.vehicle
    }

    pub fn station(&self) -> &StationNode {
        &self.station
    }

    pub fn finished(&self) -> bool {
        self.finished
    }

    /// Distance travelled along the track, meters.
    pub fn progress(&self) -> f64 {
        self.progress
    }

    /// Current signed lateral offset of the forward-most point.
    pub fn lateral_error(&self) -> f64 {
        let p = forward_point(self.vehicle.state(), self.cfg.plant.wheelbase, FRONT_OVERHANG);
        self.track
            .project_near(p, self.progress - 5.0, self.progress + 15.0)
            .lateral
    }

    pub fn set_driver(&mut self, driver: Driver) {
        self.driver = driver;
    }

    /// Sets the externally supplied steering; switches to external driving.
    pub fn set_external_steer(&mut self, steer: f64) {
        self.driver = Driver::External { steer };
    }

    pub fn set_prediction(&mut self, on: bool) {
        self.station.set_prediction(on);
    }

    fn capture(&mut self, t: f64) -> Result<()> {
        let state = *self.vehicle.state();
        let fov = self.cfg.render.rig().fov()?;
        let mut msg = FrameMsg {
            seq: self.frame_seq,
            t0_us: crate::wire::seconds_to_micros(t)?,
            speed: state.speed as f32,
            accel: self.vehicle.accel() as f32,
            fov_h: fov.horizontal as f32,
            fov_v: fov.vertical as f32,
            pitch: self.cfg.geometry.cam_pitch as f32,
            rgb_payload: Vec::new(),
            depth_payload: Vec::new(),
        };
        if let Some(scene) = &self.scene {
            let (rgb, depth) = self.cfg.render.rig().render(scene, &state.pose, &self.cfg.geometry)?;
            let codes = encode_map(&depth, &self.codec)?;
            msg.rgb_payload = crate::wire::encode_rgb(&rgb, self.cfg.render.rgb_container)?;
            msg.depth_payload = crate::wire::encode_depth_payload(&codes, self.cfg.render.depth_container)?;
        }
        self.frame_seq += 1;
        let frame = SimFrame {
            bytes: encode_frame(&msg)?,
            capture_pose: state.pose,
            uplink_reports: self.vehicle.drain_reports(),
        };
        self.downlink.send(frame, t);
        Ok(())
    }

    /// Advances one tick. Returns the frame displayed during it, if any.
    pub fn step(&mut self) -> Result<Option<Displayed>> {
        let k = self.tick;
        let t = tick_time(k);

        self.axle_log.push(self.vehicle.state().pose);
        if k.is_multiple_of(POSE_LOG_TICKS) {
            let s = self.vehicle.state();
            self.logs.poses.push(PoseRow {
                t,
                x: s.pose.x,
                y: s.pose.y,
                heading: s.pose.heading,
                speed: s.speed,
                steer: self.vehicle.steer(),
                accel: self.vehicle.accel(),
                emergency: self.vehicle.emergency(),
            });
        }
        let sample_ticks = (1.0 / (self.cfg.metrics.sample_rate * TICK)).round().max(1.0) as u64;
        if k.is_multiple_of(sample_ticks) {
            let p = forward_point(self.vehicle.state(), self.cfg.plant.wheelbase, FRONT_OVERHANG);
            self.sample_points.push((t, p));
            let proj = self.track.project_near(p, self.progress - 5.0, self.progress + 15.0);
            self.progress = self.progress.max(proj.s);
            if self.progress >= self.track.length() - 0.5 {
                self.finished = true;
            }
        }

        if (k * FRAME_RATE) % 1000 < FRAME_RATE {
            self.capture(t)?;
        }

        let mut shown = None;
        for d in self.downlink.poll(t) {
            if let Some(disp) = self.station.receive(d.msg, t)? {
                self.logs.frames.push(FrameRow {
                    seq: disp.seq,
                    t0: disp.timing.t0,
                    t1: disp.timing.t1,
                    tau1: disp.timing.tau1,
                    tau2: disp.timing.tau2,
                    speed: disp.speed,
                    dx_cam: disp.delta.dx_cam,
                    dz_cam: disp.delta.dz_cam,
                    dpsi_cam: disp.delta.dpsi_cam,
                    prediction_on: disp.prediction_on,
                });
                let target = ((disp.timing.t1 + disp.timing.tau2) / TICK).round() as u64;
                self.pending.push(PendingPrediction {
                    target_tick: target,
                    t: disp.timing.t1,
                    anchor: disp.capture_pose.compose(0.0, self.cfg.geometry.cam_offset, 0.0),
                    predicted: disp.delta,
                });
                if let (Driver::Scripted(op), false) = (&mut self.driver, self.direct_view) {
                    op.observe(t, &self.track, &disp.shown_pose, disp.speed);
                }
                shown = Some(disp);
            }
        }
        self.station.tick(t);

        if k.is_multiple_of(COMMAND_TICKS) {
            if let (Driver::Scripted(op), true) = (&mut self.driver, self.direct_view) {
                let s = self.vehicle.state();
                op.observe(t, &self.track, &s.pose, s.speed);
            }
            let steer = match &mut self.driver {
                Driver::Scripted(op) => Some(op.steer_at(t)),
                Driver::External { steer } => Some(*steer),
                Driver::Idle => None,
            };
            if let Some(steer) = steer {
                let cmd = self.station.command(t, steer)?;
                self.logs.commands.push(CommandRow {
                    ts: t,
                    steer: cmd.steer(),
                    p95: cmd.p95(),
                    p999: cmd.p999(),
                });
                self.uplink.send(encode_command(&cmd), t);
            }
        }

        for d in self.uplink.poll(t) {
            let cmd = decode_command(&d.msg)?;
            self.logs.uplink.push(UplinkRow {
                arrival: t,
                delay: t - cmd.ts_station(),
            });
            self.vehicle.receive(&cmd, t);
        }
        self.vehicle.step(t, TICK)?;
        self.tick += 1;
        if tick_time(self.tick) >= self.cfg.duration {
            self.finished = true;
        }
        Ok(shown)
    }

    fn resolve_predictions(&mut self) {
        let cam = self.cfg.geometry.cam_offset;
        for p in self.pending.drain(..) {
            if let Some(axle) = self.axle_log.get(p.target_tick as usize) {
                self.logs.predictions.push(PredictionSample {
                    t: p.t,
                    anchor: p.anchor,
                    predicted: p.predicted,
                    realized: axle.compose(0.0, cam, 0.0),
                });
            }
        }
    }

    /// Runs to completion, handing every displayed frame to `on_display`.
    pub fn run(mut self, mut on_display: impl FnMut(&Displayed)) -> Result<ExperimentOutput> {
        while !self.finished {
            if let Some(d) = self.step()? {
                on_display(&d);
            }
        }
        self.finish()
    }

    /// Builds the report from everything recorded so far.
    pub fn finish(mut self) -> Result<ExperimentOutput> {
        self.resolve_predictions();
        self.logs.deviations = deviation_samples(&self.sample_points, &self.track);
        self.logs.estimates = self.station.estimates().to_vec();
        let report = build_report(&self)?;
        Ok(ExperimentOutput {
            report,
            logs: self.logs,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayStats {
    pub samples: usize,
    pub mean: f64,
    pub p95: f64,
    pub max: f64,
}

impl DelayStats {
    fn of(mut v: Vec<f64>) -> DelayStats {
        if v.is_empty() {
            return DelayStats {
                samples: 0,
                mean: 0.0,
                p95: 0.0,
                max: 0.0,
            };
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let idx = ((0.95 * n as f64).ceil() as usize).clamp(1, n) - 1;
        DelayStats {
            samples: n,
            mean: v.iter().sum::<f64>() / n as f64,
            p95: v[idx],
            max: v[n - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub track: String,
    pub mode: Mode,
    pub seed: u64,
    pub slip_factor: f64,
    pub simulated_time: f64,
    pub reached_end: bool,
    pub deviation: RmseReport,
    pub oscillations: usize,
    pub prediction: Vec<PredictionErrorReport>,
    pub downlink_delay: DelayStats,
    pub uplink_delay: DelayStats,
    pub commands_sent: usize,
    pub commands_received: usize,
    pub late_commands: usize,
    pub late_rate: f64,
    pub watchdog_trips: usize,
    pub emergency_time: f64,
    pub frames_captured: u64,
    pub frames_displayed: usize,
    pub frames_dropped_stale: usize,
    /// Frames whose decode and projection exceeded the budget; only when
    /// timing is measured.
    pub frame_budget_overruns: Option<usize>,
    pub percentile_refreshes: usize,
}

fn build_report(sim: &Simulation) -> Result<ExperimentReport> {
    let logs = &sim.logs;
    let deviation = compute_rmse(&logs.deviations, &sim.track);
    let band = sim.cfg.metrics.oscillation_band;
    let oscillations = count_oscillations(logs.deviations.iter().map(|d| d.lateral), band);

    let mut prediction = Vec::new();
    let all: Vec<&PredictionSample> = logs.predictions.iter().collect();
    if !all.is_empty() {
        prediction.push(prediction_error("all", &all));
    }
    let cam = sim.cfg.geometry.cam_offset;
    for sec in &sim.track.sections {
        if prediction.iter().any(|p: &PredictionErrorReport| p.name == sec.name) {
            continue;
        }
        let in_sec: Vec<&PredictionSample> = logs
            .predictions
            .iter()
            .filter(|p| {
                // front of the car at capture time
                let front = p.anchor.ahead(sim.cfg.plant.wheelbase + FRONT_OVERHANG - cam);
                let s = sim.track.project(front).s;
                s >= sec.s_start && s <= sec.s_end
            })
            .collect();
        if !in_sec.is_empty() {
            prediction.push(prediction_error(&sec.name, &in_sec));
        }
    }

    let vs = sim.vehicle.stats();
    let ss = sim.station.stats();
    let name = match &sim.cfg.track {
        TrackChoice::Named(n) => n.clone(),
        TrackChoice::Inline(spec) => spec.name.clone(),
    };
    Ok(ExperimentReport {
        name: sim.cfg.name.clone(),
        track: name,
        mode: sim.cfg.mode,
        seed: sim.cfg.seed,
        slip_factor: sim.cfg.plant.slip_factor,
        simulated_time: sim.time(),
        reached_end: sim.progress >= sim.track.length() - 0.5,
        deviation,
        oscillations,
        prediction,
        downlink_delay: DelayStats::of(logs.frames.iter().map(|f| f.tau1).collect()),
        uplink_delay: DelayStats::of(logs.uplink.iter().map(|u| u.delay).collect()),
        commands_sent: ss.commands,
        commands_received: vs.received,
        late_commands: vs.late,
        late_rate: if vs.received > 0 {
            vs.late as f64 / vs.received as f64
        } else {
            0.0
        },
        watchdog_trips: vs.watchdog_trips,
        emergency_time: vs.emergency_time,
        frames_captured: sim.frame_seq,
        frames_displayed: ss.displayed,
        frames_dropped_stale: ss.dropped_stale,
        frame_budget_overruns: sim.cfg.render.measure_time.then_some(ss.budget_overruns),
        percentile_refreshes: sim.station.estimates().len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub report: ExperimentReport,
    pub logs: ExperimentLogs,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    Simulation::new(cfg)?.run(|_| {})
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

impl ExperimentOutput {
    pub fn report_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.report).map_err(|e| Error::Io(std::io::Error::other(e)))
    }

    /// Writes `report.json` and the CSV logs into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut f = fs::File::create(dir.join("report.json"))?;
        f.write_all(self.report_json()?.as_bytes())?;
        f.write_all(b"\n")?;
        write_rows(&dir.join("poses.csv"), &self.logs.poses)?;
        write_rows(&dir.join("frames.csv"), &self.logs.frames)?;
        write_rows(&dir.join("commands.csv"), &self.logs.commands)?;
        write_rows(&dir.join("uplink_delays.csv"), &self.logs.uplink)?;
        let dev: Vec<_> = self
            .logs
            .deviations
            .iter()
            .map(|d| {
                (
                    d.t,
                    d.x,
                    d.y,
                    d.s,
                    d.lateral,
                    d.deviation,
                    d.section.clone().unwrap_or_default(),
                )
            })
            .collect();
        let mut w = csv::Writer::from_path(dir.join("deviations.csv")).map_err(csv_error)?;
        w.write_record(["t", "x", "y", "s", "lateral", "deviation", "section"])
            .map_err(csv_error)?;
        for r in dev {
            w.serialize(r).map_err(csv_error)?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("predictions.csv")).map_err(csv_error)?;
        w.write_record(["t", "pred_dx", "pred_dz", "pred_dpsi", "err_long", "err_lat", "err_yaw"])
            .map_err(csv_error)?;
        for p in &self.logs.predictions {
            let (el, ex, ey) = p.error();
            w.serialize((
                p.t,
                p.predicted.dx_cam,
                p.predicted.dz_cam,
                p.predicted.dpsi_cam,
                el,
                ex,
                ey,
            ))
            .map_err(csv_error)?;
        }
        w.flush()?;
        write_estimates(fs::File::create(dir.join("estimates.csv"))?, &self.logs.estimates)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_and_command_cadence() {
        let mut cfg = ExperimentConfig::new("cadence", "r7_80", Mode::TeleopPp, 1);
        cfg.duration = 2.0;
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.report.frames_captured, 60);
        assert_eq!(out.report.commands_sent, 100);
        assert_eq!(out.logs.poses.len(), 200);
    }

    #[test]
    fn in_vehicle_has_no_delay() {
        let mut cfg = ExperimentConfig::new("iv", "r7_80", Mode::InVehicle, 1);
        cfg.duration = 3.0;
        let out = run_experiment(&cfg).unwrap();
        assert!(out.report.downlink_delay.max < 1e-9);
        assert!(out.report.uplink_delay.max <= TICK + 1e-12);
        assert_eq!(out.report.watchdog_trips, 0);
    }
}
