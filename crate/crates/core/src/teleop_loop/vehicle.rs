use serde::{Deserialize, Serialize};

use crate::delay_model::{actuation_for, watchdog_check, PercentileEstimate, WatchdogState};
use crate::error::Result;
use crate::motion_predictor::COMMAND_PERIOD;
use crate::sim_world::{plant_step, PlantParams, PlantState};
use crate::wire::CommandMsg;

/// Deceleration of the emergency stop, m/s².
pub const EMERGENCY_DECEL: f64 = 3.0;
/// Cruise control proportional gain, 1/s.
const CRUISE_GAIN: f64 = 2.0;
const CRUISE_MAX_ACCEL: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Held {
    apply_at: f64,
    ts: f64,
    steer: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct VehicleStats {
    pub received: usize,
    pub applied: usize,
    /// Commands that arrived after their scheduled actuation time.
    pub late: usize,
    /// Transitions into the emergency stop.
    pub watchdog_trips: usize,
    pub emergency_time: f64,
}

/// The remote car: plant, hold-and-apply queue, watchdog and cruise control.
#[derive(Debug, Clone)]
pub struct VehicleNode {
    state: PlantState,
    params: PlantParams,
    cruise_speed: f64,
    steer: f64,
    accel: f64,
    held: Vec<Held>,
    last_cmd_ts: f64,
    est: PercentileEstimate,
    emergency: bool,
    trip_times: Vec<f64>,
    reports: Vec<(f64, f64)>,
    stats: VehicleStats,
}

impl VehicleNode {
    /// `start_time` anchors the watchdog until the first command arrives.
    pub fn new(state: PlantState, params: PlantParams, cruise_speed: f64, start_time: f64) -> Self {
        Self {
            state,
            params,
            cruise_speed,
            steer: 0.0,
            accel: 0.0,
            held: Vec::new(),
            last_cmd_ts: start_time - COMMAND_PERIOD,
            est: PercentileEstimate::prior(),
            emergency: false,
            trip_times: Vec::new(),
            reports: Vec::new(),
            stats: VehicleStats::default(),
        }
    }

    pub fn state(&self) -> &PlantState {
        &self.state
    }

    pub fn steer(&self) -> f64 {
        self.steer
    }

    pub fn accel(&self) -> f64 {
        self.accel
    }

    pub fn emergency(&self) -> bool {
        self.emergency
    }

    pub fn stats(&self) -> &VehicleStats {
        &self.stats
    }

    pub fn trip_times(&self) -> &[f64] {
        &self.trip_times
    }

    /// Takes a command off the uplink and schedules it at `ts + p95`, or on
    /// arrival if that time has passed.
    pub fn receive(&mut self, cmd: &CommandMsg, arrival: f64) {
        self.stats.received += 1;
        self.reports.push((arrival, (arrival - cmd.ts_station()).max(0.0)));
        if cmd.ts_station() > self.last_cmd_ts {
            self.last_cmd_ts = cmd.ts_station();
            // percentiles are capped by the message invariant already
            self.est = PercentileEstimate {
                p95: cmd.p95(),
                p999: cmd.p999(),
                fitted_at: cmd.ts_station(),
            };
        }
        let act = actuation_for(cmd.ts_station(), cmd.p95(), arrival);
        if act.late {
            self.stats.late += 1;
        }
        self.held.push(Held {
            apply_at: act.apply_at,
            ts: cmd.ts_station(),
            steer: cmd.steer(),
        });
    }

    /// Uplink delay observations `(arrival, delay)` since the last call.
    pub fn drain_reports(&mut self) -> Vec<(f64, f64)> {
        std::mem::take(&mut self.reports)
    }

    /// Watchdog state at `now`. The starvation clock starts when the command
    /// after the newest one received was due.
    pub fn watchdog(&self, now: f64) -> WatchdogState {
        watchdog_check(self.last_cmd_ts + COMMAND_PERIOD, now, &self.est)
    }

    /// Applies due commands, runs the watchdog and advances the plant by
    /// `dt` from time `now`.
    pub fn step(&mut self, now: f64, dt: f64) -> Result<()> {
        let mut newest: Option<Held> = None;
        let before = self.held.len();
        self.held.retain(|h| {
            if h.apply_at <= now + 1e-9 {
                if newest.is_none_or(|n| h.ts > n.ts) {
                    newest = Some(*h);
                }
                false
            } else {
                true
            }
        });
        self.stats.applied += before - self.held.len();
        if let Some(h) = newest {
            self.steer = h.steer;
        }

        let stop = self.watchdog(now) == WatchdogState::EmergencyStop;
        if stop && !self.emergency {
            self.stats.watchdog_trips += 1;
            self.trip_times.push(now);
            log::warn!(
                "watchdog: no command since t={:.3}s, emergency stop at t={now:.3}s",
                self.last_cmd_ts
            );
        }
        self.emergency = stop;
        self.accel = if stop {
            if self.state.speed > 0.0 {
                -EMERGENCY_DECEL
            } else {
                0.0
            }
        } else {
            (CRUISE_GAIN * (self.cruise_speed - self.state.speed)).clamp(-EMERGENCY_DECEL, CRUISE_MAX_ACCEL)
        };
        if stop {
            self.stats.emergency_time += dt;
        }
        self.state = plant_step(&self.state, self.steer, self.accel, dt, &self.params)?;
        Ok(())
    }
}
