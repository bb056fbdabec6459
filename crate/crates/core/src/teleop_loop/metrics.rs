use serde::{Deserialize, Serialize};

use crate::motion_predictor::PredictionSample;
use crate::sim_world::Track;

/// One forward-most-point reading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub s: f64,
    /// Signed distance to the centerline, right of travel positive.
    pub lateral: f64,
    pub deviation: f64,
    pub section: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionRmse {
    pub name: String,
    pub samples: usize,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseReport {
    pub samples: usize,
    pub rmse: f64,
    pub sections: Vec<SectionRmse>,
    /// Track sections with no samples.
    pub empty_sections: Vec<String>,
}

/// Projects timed points onto the track, following progress along it so a
/// course that passes near itself is not confused.
pub fn deviation_samples(points: &[(f64, [f64; 2])], track: &Track) -> Vec<DeviationSample> {
    let mut progress = 0.0f64;
    points
        .iter()
        .map(|&(t, p)| {
            let proj = track.project_near(p, progress - 5.0, progress + 15.0);
            progress = progress.max(proj.s);
            let section = track
                .sections
                .iter()
                .find(|sec| proj.s >= sec.s_start && proj.s <= sec.s_end)
                .map(|sec| sec.name.clone());
            DeviationSample {
                t,
                x: p[0],
                y: p[1],
                s: proj.s,
                lateral: proj.lateral,
                deviation: proj.distance,
                section,
            }
        })
        .collect()
}

fn rms(values: impl Iterator<Item = f64>) -> (usize, f64) {
    let (n, sum) = values.fold((0usize, 0.0), |(n, s), v| (n + 1, s + v * v));
    (n, if n > 0 { (sum / n as f64).sqrt() } else { 0.0 })
}

/// RMS deviation over all samples and per track section.
pub fn compute_rmse(samples: &[DeviationSample], track: &Track) -> RmseReport {
    let (n, rmse) = rms(samples.iter().map(|s| s.deviation));
    let mut sections = Vec::new();
    let mut empty_sections = Vec::new();
    for sec in &track.sections {
        let (k, r) = rms(samples
            .iter()
            .filter(|s| s.section.as_deref() == Some(&sec.name))
            .map(|s| s.deviation));
        if k == 0 {
            if !empty_sections.contains(&sec.name) {
                empty_sections.push(sec.name.clone());
            }
        } else if !sections.iter().any(|x: &SectionRmse| x.name == sec.name) {
            sections.push(SectionRmse {
                name: sec.name.clone(),
                samples: k,
                rmse: r,
            });
        }
    }
    RmseReport {
        samples: n,
        rmse,
        sections,
        empty_sections,
    }
}

/// Counts sign changes of the lateral error, where a change only registers
/// once the error leaves `[-band, band]` on the opposite side.
pub fn count_oscillations(lateral: impl IntoIterator<Item = f64>, band: f64) -> usize {
    let mut side = 0i8;
    let mut changes = 0;
    for e in lateral {
        let now = if e > band {
            1
        } else if e < -band {
            -1
        } else {
            continue;
        };
        if side != 0 && now != side {
            changes += 1;
        }
        side = now;
    }
    changes
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionErrorReport {
    pub name: String,
    pub samples: usize,
    pub longitudinal: f64,
    pub lateral: f64,
    pub yaw: f64,
}

/// Forecast RMSE over the given samples.
pub fn prediction_error(name: &str, samples: &[&PredictionSample]) -> PredictionErrorReport {
    let errs: Vec<(f64, f64, f64)> = samples.iter().map(|s| s.error()).collect();
    let (n, longitudinal) = rms(errs.iter().map(|e| e.0));
    let (_, lateral) = rms(errs.iter().map(|e| e.1));
    let (_, yaw) = rms(errs.iter().map(|e| e.2));
    PredictionErrorReport {
        name: name.to_string(),
        samples: n,
        longitudinal,
        lateral,
        yaw,
    }
}
