use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::delay_model::{read_delay_trace, GevParams};
use crate::error::{Error, Result};
use crate::motion_predictor::VehicleGeometry;
use crate::sim_world::{track_by_name, CameraRig, PlantParams, TrackSpec};
use crate::wire::{Container, DelaySource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Driver in the vehicle: no network delay, raw view.
    InVehicle,
    /// Teleoperation with the projected display.
    TeleopPp,
    /// Teleoperation with the delayed raw display.
    TeleopNoPp,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Mode> {
        match s {
            "in_vehicle" => Ok(Mode::InVehicle),
            "teleop_pp" => Ok(Mode::TeleopPp),
            "teleop_no_pp" => Ok(Mode::TeleopNoPp),
            other => Err(Error::Config(format!(
                "unknown mode {other:?} (in_vehicle, teleop_pp, teleop_no_pp)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::InVehicle => "in_vehicle",
            Mode::TeleopPp => "teleop_pp",
            Mode::TeleopNoPp => "teleop_no_pp",
        }
    }

    pub fn prediction_on(&self) -> bool {
        matches!(self, Mode::TeleopPp)
    }
}

/// Delay law for one link direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DelaySpec {
    Zero,
    Constant {
        seconds: f64,
    },
    Gev {
        xi: f64,
        mu: f64,
        sigma: f64,
    },
    /// GEV with the location chosen to give the requested mean.
    GevMean {
        mean: f64,
        xi: f64,
        sigma: f64,
    },
    /// Replays a `timestamp_s,delay_s` CSV, each delay multiplied by `scale`.
    Trace {
        path: PathBuf,
        #[serde(default = "one")]
        scale: f64,
    },
}

fn one() -> f64 {
    1.0
}

/// Location parameter giving a GEV with the given mean.
pub fn gev_location_for_mean(mean: f64, xi: f64, sigma: f64) -> Result<f64> {
    if xi >= 1.0 {
        return Err(Error::Config(format!("GEV mean is infinite for xi = {xi}")));
    }
    let shift = if xi.abs() < 1e-9 {
        sigma * 0.577_215_664_901_532_9
    } else {
        sigma * (gamma(1.0 - xi) - 1.0) / xi
    };
    Ok(mean - shift)
}

impl DelaySpec {
    pub fn source(&self, seed: u64, base_dir: &Path) -> Result<DelaySource> {
        match self {
            DelaySpec::Zero => DelaySource::constant(0.0),
            DelaySpec::Constant { seconds } => DelaySource::constant(*seconds),
            DelaySpec::Gev { xi, mu, sigma } => Ok(DelaySource::gev(GevParams::new(*xi, *mu, *sigma)?, seed)),
            DelaySpec::GevMean { mean, xi, sigma } => {
                let mu = gev_location_for_mean(*mean, *xi, *sigma)?;
                Ok(DelaySource::gev(GevParams::new(*xi, mu, *sigma)?, seed))
            }
            DelaySpec::Trace { path, scale } => {
                let full = if path.is_absolute() {
                    path.clone()
                } else {
                    base_dir.join(path)
                };
                let file = std::fs::File::open(&full)
                    .map_err(|e| Error::Config(format!("delay trace {}: {e}", full.display())))?;
                DelaySource::trace(read_delay_trace(file)?, *scale)
            }
        }
    }

    /// Mean delay when it is known in closed form.
    pub fn nominal_mean(&self) -> Option<f64> {
        match self {
            DelaySpec::Zero => Some(0.0),
            DelaySpec::Constant { seconds } => Some(*seconds),
            DelaySpec::GevMean { mean, .. } => Some(*mean),
            DelaySpec::Gev { xi, mu, sigma } => gev_location_for_mean(0.0, *xi, *sigma)
                .ok()
                .map(|neg_shift| mu - neg_shift),
            DelaySpec::Trace { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    #[serde(default = "default_downlink")]
    pub downlink: DelaySpec,
    #[serde(default = "default_uplink")]
    pub uplink: DelaySpec,
}

/// 150 ms of the 250 ms round trip on the frame path.
fn default_downlink() -> DelaySpec {
    DelaySpec::GevMean {
        mean: 0.150,
        xi: 0.1,
        sigma: 0.010,
    }
}

fn default_uplink() -> DelaySpec {
    DelaySpec::GevMean {
        mean: 0.100,
        xi: 0.1,
        sigma: 0.008,
    }
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            downlink: default_downlink(),
            uplink: default_uplink(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatorConfig {
    /// How far ahead the operator aims the forward-most point, seconds.
    pub preview: f64,
    /// Time between seeing a display update and acting on it.
    pub reaction_delay: f64,
}

impl Default for OperatorConfig {
    fn default() -> Self {
        Self {
            preview: 0.3,
            reaction_delay: 0.150,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    /// Render, encode, transmit and project real frames. Without it frames
    /// carry only their metadata and the display is evaluated geometrically.
    pub enabled: bool,
    pub width: u32,
    pub height: u32,
    pub fov_h_deg: f64,
    pub fov_v_deg: f64,
    pub rgb_container: Container,
    pub depth_container: Container,
    /// Record projection wall time and count frames over the budget. Off by
    /// default so reports stay byte-identical across runs.
    pub measure_time: bool,
    /// Write every n-th displayed frame as PNG (0 disables).
    pub save_every: u32,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            width: 168,
            height: 94,
            fov_h_deg: 90.0,
            fov_v_deg: 60.0,
            rgb_container: Container::Jpeg { quality: 80 },
            depth_container: Container::Png,
            measure_time: false,
            save_every: 0,
        }
    }
}

impl RenderConfig {
    pub fn rig(&self) -> CameraRig {
        CameraRig {
            width: self.width,
            height: self.height,
            fov_h_deg: self.fov_h_deg,
            fov_v_deg: self.fov_v_deg,
            ..CameraRig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Forward-point samples per second for the deviation RMSE.
    pub sample_rate: f64,
    /// Lateral error must leave this band on the other side to count as a
    /// sign change.
    pub oscillation_band: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            sample_rate: 10.0,
            oscillation_band: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Built-in track name or an inline track table.
    pub track: TrackChoice,
    pub mode: Mode,
    /// Upper bound on simulated time; runs end earlier at the end of track.
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default = "default_speed")]
    pub speed_kmh: f64,
    #[serde(default)]
    pub delay: LinkConfig,
    #[serde(default)]
    pub plant: PlantParams,
    #[serde(default)]
    pub geometry: VehicleGeometry,
    #[serde(default)]
    pub operator: OperatorConfig,
    #[serde(default)]
    pub render: RenderConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TrackChoice {
    Named(String),
    Inline(TrackSpec),
}

fn default_duration() -> f64 {
    90.0
}

fn default_speed() -> f64 {
    10.0
}

impl ExperimentConfig {
    pub fn new(name: &str, track: &str, mode: Mode, seed: u64) -> Self {
        Self {
            name: name.to_string(),
            seed,
            track: TrackChoice::Named(track.to_string()),
            mode,
            duration: default_duration(),
            speed_kmh: default_speed(),
            delay: LinkConfig::default(),
            plant: PlantParams::default(),
            geometry: VehicleGeometry::default(),
            operator: OperatorConfig::default(),
            render: RenderConfig::default(),
            metrics: MetricsConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }

    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut c: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.base_dir = base_dir.to_path_buf();
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Self::from_toml(&text, &dir).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn track_spec(&self) -> Result<TrackSpec> {
        match &self.track {
            TrackChoice::Named(n) => track_by_name(n).map_err(|e| Error::Config(e.to_string())),
            TrackChoice::Inline(spec) => Ok(spec.clone()),
        }
    }

    pub fn speed(&self) -> f64 {
        self.speed_kmh / 3.6
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad(format!("duration must be positive, got {}", self.duration));
        }
        if !(self.speed_kmh > 0.0 && self.speed_kmh <= 60.0) {
            return bad(format!("speed_kmh must lie in (0, 60], got {}", self.speed_kmh));
        }
        if !(self.plant.slip_factor > 0.0 && self.plant.slip_factor <= 1.5) {
            return bad(format!(
                "plant.slip_factor must lie in (0, 1.5], got {}",
                self.plant.slip_factor
            ));
        }
        if !(self.plant.wheelbase > 0.0) {
            return bad("plant.wheelbase must be positive".into());
        }
        self.geometry.validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.operator.preview > 0.1) || !(self.operator.reaction_delay >= 0.0) {
            return bad("operator needs preview > 0.1 s and a nonnegative reaction delay".into());
        }
        if !(self.metrics.sample_rate > 0.0 && self.metrics.sample_rate <= 1000.0) {
            return bad("metrics.sample_rate must lie in (0, 1000]".into());
        }
        if self.render.enabled && (self.render.width < 8 || self.render.height < 8) {
            return bad("render size must be at least 8x8".into());
        }
        for (name, d) in [("downlink", &self.delay.downlink), ("uplink", &self.delay.uplink)] {
            match d {
                DelaySpec::Constant { seconds } if !(*seconds >= 0.0) => {
                    return bad(format!("{name} delay must be nonnegative"))
                }
                DelaySpec::Gev { xi, mu, sigma } => {
                    GevParams::new(*xi, *mu, *sigma).map_err(|e| Error::Config(format!("{name}: {e}")))?;
                }
                DelaySpec::GevMean { mean, xi, sigma } => {
                    let mu = gev_location_for_mean(*mean, *xi, *sigma)?;
                    GevParams::new(*xi, mu, *sigma).map_err(|e| Error::Config(format!("{name}: {e}")))?;
                }
                _ => {}
            }
        }
        self.track_spec()?;
        Ok(())
    }
}
