//! Uplink delay modeling: GEV fit, percentile refresh, hold-and-apply
//! scheduling and the command watchdog.

mod fit;
mod gev;

use std::collections::VecDeque;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

pub use fit::{fit_gev, GevFit, MIN_FIT_SAMPLES, XI_BOUNDS};
pub use gev::GevParams;

use crate::error::{invalid, Error, Result};

/// Hard ceiling on the 99.9th percentile and on the watchdog threshold.
pub const MAX_P999: f64 = 0.200;
/// Samples used per fit.
pub const FIT_WINDOW: usize = 50;
/// Seconds between percentile refreshes.
pub const REFRESH_PERIOD: f64 = 1.0;

/// Ring buffer of `(timestamp, uplink delay)` observations.
#[derive(Debug, Clone)]
pub struct DelayWindow {
    samples: VecDeque<(f64, f64)>,
    capacity: usize,
}

impl DelayWindow {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity < MIN_FIT_SAMPLES {
            return invalid(format!(
                "delay window capacity must be at least {MIN_FIT_SAMPLES}, got {capacity}"
            ));
        }
        Ok(Self {
            samples: VecDeque::with_capacity(capacity),
            capacity,
        })
    }

    pub fn push(&mut self, timestamp: f64, delay: f64) -> Result<()> {
        if let Some(&(last, _)) = self.samples.back() {
            if timestamp < last {
                return invalid(format!(
                    "delay timestamps must be nondecreasing ({timestamp} after {last})"
                ));
            }
        }
        if !delay.is_finite() || delay < 0.0 {
            return invalid(format!("uplink delay must be finite and nonnegative, got {delay}"));
        }
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back((timestamp, delay));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Copies out the most recent `n` delays, oldest first.
    pub fn recent_delays(&self, n: usize) -> Vec<f64> {
        let skip = self.samples.len().saturating_sub(n);
        self.samples.iter().skip(skip).map(|&(_, d)| d).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PercentileEstimate {
    pub p95: f64,
    pub p999: f64,
    pub fitted_at: f64,
}

impl PercentileEstimate {
    /// Caps `p999` at [`MAX_P999`] and keeps `p95 ≤ p999`.
    pub fn new(p95: f64, p999: f64, fitted_at: f64) -> Result<Self> {
        if !(p95 >= 0.0) || !(p999 >= 0.0) || !p95.is_finite() {
            return invalid(format!("percentiles must be nonnegative, got ({p95}, {p999})"));
        }
        let p999 = p999.min(MAX_P999);
        Ok(Self {
            p95: p95.min(p999),
            p999,
            fitted_at,
        })
    }

    pub fn from_params(params: &GevParams, fitted_at: f64) -> Result<Self> {
        let p95 = params.quantile(0.95)?.max(0.0);
        let p999 = params.quantile(0.999)?.max(0.0);
        Self::new(p95, p999, fitted_at)
    }

    /// Conservative estimate used before any delays have been observed.
    pub fn prior() -> Self {
        Self {
            p95: 0.0,
            p999: MAX_P999,
            fitted_at: f64::NEG_INFINITY,
        }
    }
}

/// Fits the most recent [`FIT_WINDOW`] samples and returns fresh percentiles.
/// With fewer than [`MIN_FIT_SAMPLES`] samples the previous estimate is
/// carried forward.
pub fn refresh_percentiles(w: &DelayWindow, now: f64, previous: PercentileEstimate) -> PercentileEstimate {
    if w.len() < MIN_FIT_SAMPLES {
        return previous;
    }
    // snapshot so the recorder is never held during the fit
    let snapshot = w.recent_delays(FIT_WINDOW);
    match fit_gev(&snapshot).and_then(|f| PercentileEstimate::from_params(&f.params, now)) {
        Ok(est) => est,
        Err(e) => {
            log::warn!("percentile refresh failed, keeping previous estimate: {e}");
            previous
        }
    }
}

/// Refreshes percentiles at a fixed cadence.
#[derive(Debug, Clone)]
pub struct PercentileEstimator {
    current: PercentileEstimate,
    last_refresh: Option<f64>,
    period: f64,
}

impl PercentileEstimator {
    pub fn new(initial: PercentileEstimate) -> Self {
        Self {
            current: initial,
            last_refresh: None,
            period: REFRESH_PERIOD,
        }
    }

    pub fn current(&self) -> PercentileEstimate {
        self.current
    }

    /// Refits if at least one period has elapsed since the last attempt.
    /// Returns the new estimate when a refresh happened.
    pub fn poll(&mut self, w: &DelayWindow, now: f64) -> Option<PercentileEstimate> {
        if let Some(last) = self.last_refresh {
            if now - last < self.period - 1e-9 {
                return None;
            }
        }
        self.last_refresh = Some(now);
        self.current = refresh_percentiles(w, now, self.current);
        Some(self.current)
    }
}

/// Hold-and-apply: the vehicle actuates a command at `cmd_ts + p95`.
pub fn schedule_actuation(cmd_ts: f64, est: &PercentileEstimate) -> f64 {
    cmd_ts + est.p95
}

/// Actual actuation time given the arrival time. Late commands are applied on
/// arrival.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Actuation {
    pub apply_at: f64,
    pub late: bool,
}

pub fn actuation_for(cmd_ts: f64, p95: f64, arrival: f64) -> Actuation {
    let scheduled = cmd_ts + p95;
    if arrival > scheduled {
        Actuation {
            apply_at: arrival,
            late: true,
        }
    } else {
        Actuation {
            apply_at: scheduled,
            late: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WatchdogState {
    Ok,
    EmergencyStop,
}

pub fn watchdog_threshold(est: &PercentileEstimate) -> f64 {
    est.p999.min(MAX_P999)
}

/// Emergency stop iff more than `min(p999, 200 ms)` has elapsed since
/// `last_cmd_ts`.
pub fn watchdog_check(last_cmd_ts: f64, now: f64, est: &PercentileEstimate) -> WatchdogState {
    if now - last_cmd_ts > watchdog_threshold(est) {
        WatchdogState::EmergencyStop
    } else {
        WatchdogState::Ok
    }
}

/// One row of a delay trace: `timestamp_s,delay_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub timestamp_s: f64,
    pub delay_s: f64,
}

/// Reads a delay trace. A header row is optional.
pub fn read_delay_trace<R: Read>(reader: R) -> Result<Vec<TraceRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Decode(format!("delay trace: {e}")))?;
        if rec.len() != 2 {
            return Err(Error::Decode(format!(
                "delay trace line {}: expected 2 fields, got {}",
                line + 1,
                rec.len()
            )));
        }
        let parsed = (rec[0].parse::<f64>(), rec[1].parse::<f64>());
        match parsed {
            (Ok(t), Ok(d)) => {
                if !d.is_finite() || d < 0.0 {
                    return Err(Error::Decode(format!("delay trace line {}: bad delay {d}", line + 1)));
                }
                out.push(TraceRecord {
                    timestamp_s: t,
                    delay_s: d,
                });
            }
            _ if line == 0 => continue, // header
            _ => return Err(Error::Decode(format!("delay trace line {}: not numeric", line + 1))),
        }
    }
    Ok(out)
}

pub fn write_delay_trace<W: Write>(writer: W, records: &[TraceRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["timestamp_s", "delay_s"]).map_err(csv_err)?;
    for r in records {
        w.write_record([format!("{}", r.timestamp_s), format!("{}", r.delay_s)])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes estimates as `t,p95,p999`.
pub fn write_estimates<W: Write>(writer: W, estimates: &[PercentileEstimate]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "p95", "p999"]).map_err(csv_err)?;
    for e in estimates {
        w.write_record([format!("{}", e.fitted_at), format!("{}", e.p95), format!("{}", e.p999)])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Outcome of replaying an uplink command stream through hold-and-apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldApplyReplay {
    pub commands: usize,
    /// Commands sent after the first successful fit; only these are scored.
    pub evaluated: usize,
    pub on_time: usize,
    pub on_time_rate: f64,
    /// Standard deviation of the successive p95 estimates.
    pub p95_std: f64,
    /// Largest change between successive p95 estimates.
    pub p95_max_step: f64,
    pub estimates: Vec<PercentileEstimate>,
}

/// Replays commands sent at `timestamp_s` with uplink delay `delay_s`.
///
/// Deliveries are FIFO. Each observed delay enters the fit window when the
/// command arrives and the estimate refreshes every [`REFRESH_PERIOD`]. A
/// command is on time when it arrives no later than its send time plus the
/// p95 in effect when it was sent.
pub fn replay_hold_and_apply(records: &[TraceRecord]) -> Result<HoldApplyReplay> {
    let mut cmds = records.to_vec();
    cmds.sort_by(|a, b| a.timestamp_s.total_cmp(&b.timestamp_s));
    let mut arrivals = Vec::with_capacity(cmds.len());
    let mut last = f64::NEG_INFINITY;
    for c in &cmds {
        last = (c.timestamp_s + c.delay_s).max(last);
        arrivals.push(last);
    }

    let mut window = DelayWindow::new(FIT_WINDOW)?;
    let mut estimator = PercentileEstimator::new(PercentileEstimate::prior());
    let mut estimates: Vec<PercentileEstimate> = Vec::new();
    let (mut observed, mut evaluated, mut on_time) = (0usize, 0usize, 0usize);
    for (i, c) in cmds.iter().enumerate() {
        while observed < i && arrivals[observed] <= c.timestamp_s {
            window.push(arrivals[observed], arrivals[observed] - cmds[observed].timestamp_s)?;
            observed += 1;
        }
        if let Some(e) = estimator.poll(&window, c.timestamp_s) {
            if e.fitted_at.is_finite() && estimates.last() != Some(&e) {
                estimates.push(e);
            }
        }
        let est = estimator.current();
        if est.fitted_at.is_finite() {
            evaluated += 1;
            if !actuation_for(c.timestamp_s, est.p95, arrivals[i]).late {
                on_time += 1;
            }
        }
    }
    let p95_max_step = estimates
        .windows(2)
        .map(|w| (w[1].p95 - w[0].p95).abs())
        .fold(0.0, f64::max);
    let n = estimates.len().max(1) as f64;
    let mean = estimates.iter().map(|e| e.p95).sum::<f64>() / n;
    let p95_std = (estimates.iter().map(|e| (e.p95 - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(HoldApplyReplay {
        commands: cmds.len(),
        evaluated,
        on_time,
        on_time_rate: if evaluated > 0 {
            on_time as f64 / evaluated as f64
        } else {
            0.0
        },
        p95_std,
        p95_max_step,
        estimates,
    })
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
