//! Analytic scene and ray-cast renderer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::track::{Track, TrackSpec};
use crate::depth_codec::{DepthMap, Fov, INVALID_DEPTH};
use crate::error::{invalid, Result};
use crate::projection::RgbImage;

pub type Color = [u8; 3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ground {
    pub checker_size: f64,
    pub grass: [Color; 2],
    pub road_half_width: f64,
    pub road: [Color; 2],
    pub road_checker_size: f64,
    pub stripe_half_width: f64,
    pub stripe: Color,
}

impl Default for Ground {
    fn default() -> Self {
        Self {
            checker_size: 2.0,
            grass: [[70, 120, 60], [95, 145, 75]],
            road_half_width: 2.5,
            road: [[80, 80, 86], [110, 110, 116]],
            road_checker_size: 1.0,
            stripe_half_width: 0.08,
            stripe: [235, 215, 60],
        }
    }
}

/// Axis-aligned box, world meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxPrim {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub color: Color,
}

/// Vertical cylinder standing on the ground.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pole {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    pub height: f64,
    pub color: Color,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scatter {
    pub buildings: usize,
    pub poles: usize,
    /// Closest approach of scattered objects to the centerline.
    pub clearance: f64,
}

impl Default for Scatter {
    fn default() -> Self {
        Self {
            buildings: 24,
            poles: 30,
            clearance: 4.0,
        }
    }
}

/// Declarative scene description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    #[serde(default)]
    pub seed: u64,
    pub track: TrackSpec,
    #[serde(default)]
    pub ground: Ground,
    #[serde(default)]
    pub scatter: Scatter,
    #[serde(default)]
    pub boxes: Vec<BoxPrim>,
    #[serde(default)]
    pub poles: Vec<Pole>,
    #[serde(default = "default_sky")]
    pub sky: Color,
}

fn default_sky() -> Color {
    [150, 190, 235]
}

impl SceneSpec {
    pub fn for_track(track: TrackSpec, seed: u64) -> Self {
        Self {
            seed,
            track,
            ground: Ground::default(),
            scatter: Scatter::default(),
            boxes: Vec::new(),
            poles: Vec::new(),
            sky: default_sky(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| crate::Error::Config(format!("scene: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| crate::Error::Config(format!("scene: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub track: Track,
    pub ground: Ground,
    pub boxes: Vec<BoxPrim>,
    pub poles: Vec<Pole>,
    pub sky: Color,
    /// Unit vector toward the light.
    pub light: [f64; 3],
}

impl Scene {
    pub fn build(spec: &SceneSpec) -> Result<Scene> {
        let track = Track::from_spec(&spec.track)?;
        let mut boxes = spec.boxes.clone();
        let mut poles = spec.poles.clone();
        for b in &boxes {
            if (0..3).any(|k| !(b.min[k] < b.max[k])) {
                return invalid(format!("box {b:?} has an empty extent"));
            }
        }
        if poles.iter().any(|p| !(p.radius > 0.0 && p.height > 0.0)) {
            return invalid("poles need positive radius and height");
        }
        scatter(&track, spec, &mut boxes, &mut poles);
        let l: [f64; 3] = [0.4, -0.5, 0.75];
        let n = (l[0] * l[0] + l[1] * l[1] + l[2] * l[2]).sqrt();
        Ok(Scene {
            track,
            ground: spec.ground,
            boxes,
            poles,
            sky: spec.sky,
            light: [l[0] / n, l[1] / n, l[2] / n],
        })
    }
}

fn scatter(track: &Track, spec: &SceneSpec, boxes: &mut Vec<BoxPrim>, poles: &mut Vec<Pole>) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let clear = spec.scatter.clearance.max(spec.ground.road_half_width + 0.5);
    let place = |rng: &mut ChaCha8Rng, extra: f64| -> Option<[f64; 2]> {
        for _ in 0..50 {
            let s = rng.random_range(0.0..track.length());
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let off = clear + extra + rng.random_range(0.0..6.0);
            let p = track.pose_at(s);
            let r = p.right();
            let c = [p.x + side * off * r[0], p.y + side * off * r[1]];
            if track.project(c).distance >= clear + extra - 1e-9 {
                return Some(c);
            }
        }
        None
    };
    for _ in 0..spec.scatter.buildings {
        let half: [f64; 2] = [rng.random_range(1.5..4.0), rng.random_range(1.5..4.0)];
        let height = rng.random_range(3.0..9.0);
        let color = [
            rng.random_range(120..230),
            rng.random_range(90..200),
            rng.random_range(80..180),
        ];
        if let Some(c) = place(&mut rng, half[0].hypot(half[1])) {
            boxes.push(BoxPrim {
                min: [c[0] - half[0], c[1] - half[1], 0.0],
                max: [c[0] + half[0], c[1] + half[1], height],
                color,
            });
        }
    }
    for _ in 0..spec.scatter.poles {
        let color = [
            rng.random_range(180..255),
            rng.random_range(30..120),
            rng.random_range(30..90),
        ];
        if let Some(c) = place(&mut rng, 0.3) {
            poles.push(Pole {
                x: c[0],
                y: c[1],
                radius: 0.12,
                height: rng.random_range(2.0..4.5),
                color,
            });
        }
    }
}

/// World pose of a camera: position, compass heading, downward pitch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub position: [f64; 3],
    pub heading: f64,
    pub pitch: f64,
}

impl CameraPose {
    /// `(right, down, forward)` unit axes in world coordinates.
    pub fn axes(&self) -> [[f64; 3]; 3] {
        let (sh, ch) = self.heading.sin_cos();
        let (sp, cp) = self.pitch.sin_cos();
        [[ch, -sh, 0.0], [-sp * sh, -sp * ch, -cp], [cp * sh, cp * ch, -sp]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Hit {
    t: f64,
    color: Color,
}

#[inline]
fn shade(c: Color, normal: [f64; 3], light: &[f64; 3]) -> Color {
    let d = (normal[0] * light[0] + normal[1] * light[1] + normal[2] * light[2]).max(0.0);
    let k = 0.55 + 0.45 * d;
    c.map(|v| (v as f64 * k).round().min(255.0) as u8)
}

#[inline]
fn closer(best: &Option<Hit>, t: f64) -> bool {
    t > 1e-9 && best.is_none_or(|b| t < b.t)
}

#[inline]
fn checker(x: f64, y: f64, size: f64) -> usize {
    (((x / size).floor() as i64 + (y / size).floor() as i64).rem_euclid(2)) as usize
}

impl Scene {
    fn ground_color(&self, x: f64, y: f64) -> Color {
        let g = &self.ground;
        match self.track.project_within([x, y], g.road_half_width) {
            Some(p) if p.distance <= g.stripe_half_width => g.stripe,
            Some(p) => g.road[checker(p.s, p.lateral, g.road_checker_size)],
            None => g.grass[checker(x, y, g.checker_size)],
        }
    }

    fn trace(&self, o: [f64; 3], d: [f64; 3]) -> Option<Hit> {
        let mut best: Option<Hit> = None;

        for b in &self.boxes {
            let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
            let mut axis = 0;
            let mut enter_sign = 0.0;
            let mut miss = false;
            for k in 0..3 {
                if d[k].abs() < 1e-15 {
                    if o[k] < b.min[k] || o[k] > b.max[k] {
                        miss = true;
                        break;
                    }
                    continue;
                }
                let inv = 1.0 / d[k];
                let (mut ta, mut tb) = ((b.min[k] - o[k]) * inv, (b.max[k] - o[k]) * inv);
                let mut sign = -1.0;
                if ta > tb {
                    std::mem::swap(&mut ta, &mut tb);
                    sign = 1.0;
                }
                if ta > t0 {
                    t0 = ta;
                    axis = k;
                    enter_sign = sign;
                }
                t1 = t1.min(tb);
            }
            if miss || t0 > t1 || t1 <= 1e-9 {
                continue;
            }
            if closer(&best, t0) {
                let mut n = [0.0; 3];
                n[axis] = enter_sign;
                best = Some(Hit {
                    t: t0,
                    color: shade(b.color, n, &self.light),
                });
            }
        }

        for p in &self.poles {
            let (ox, oy) = (o[0] - p.x, o[1] - p.y);
            let a = d[0] * d[0] + d[1] * d[1];
            if a < 1e-15 {
                continue;
            }
            let bq = ox * d[0] + oy * d[1];
            let c = ox * ox + oy * oy - p.radius * p.radius;
            let disc = bq * bq - a * c;
            if disc < 0.0 {
                continue;
            }
            let t = (-bq - disc.sqrt()) / a;
            let z = o[2] + t * d[2];
            if z < 0.0 || z > p.height {
                continue;
            }
            if closer(&best, t) {
                let n = [(ox + t * d[0]) / p.radius, (oy + t * d[1]) / p.radius, 0.0];
                best = Some(Hit {
                    t,
                    color: shade(p.color, n, &self.light),
                });
            }
        }

        if d[2] < 0.0 {
            let t = -o[2] / d[2];
            if closer(&best, t) {
                let c = self.ground_color(o[0] + t * d[0], o[1] + t * d[1]);
                best = Some(Hit { t, color: c });
            }
        }
        best
    }
}

/// Ray-cast color and optical-axis depth. Rays that hit nothing get the sky
/// color and [`INVALID_DEPTH`].
pub fn render(scene: &Scene, cam: &CameraPose, width: u32, height: u32, fov: Fov) -> Result<(RgbImage, DepthMap)> {
    if width == 0 || height == 0 {
        return invalid("render size must be positive");
    }
    let fov = Fov::new(fov.horizontal, fov.vertical)?;
    let kx = (fov.horizontal / 2.0).tan() / (width as f64 / 2.0);
    let ky = (fov.vertical / 2.0).tan() / (height as f64 / 2.0);
    let (cx, cy) = (width as f64 / 2.0 + 0.5, height as f64 / 2.0 + 0.5);
    let [right, down, fwd] = cam.axes();
    let o = cam.position;
    let w = width as usize;
    let n = w * height as usize;
    let mut rgb = vec![0u8; n * 3];
    let mut depth = vec![INVALID_DEPTH; n];
    rgb.par_chunks_mut(w * 3)
        .zip(depth.par_chunks_mut(w))
        .enumerate()
        .for_each(|(row, (crow, drow))| {
            let yc = ((row + 1) as f64 - cy) * ky;
            for col in 0..w {
                let xc = ((col + 1) as f64 - cx) * kx;
                let d = [
                    xc * right[0] + yc * down[0] + fwd[0],
                    xc * right[1] + yc * down[1] + fwd[1],
                    xc * right[2] + yc * down[2] + fwd[2],
                ];
                let (c, z) = match scene.trace(o, d) {
                    Some(h) => (h.color, h.t as f32),
                    None => (scene.sky, INVALID_DEPTH),
                };
                crow[col * 3..col * 3 + 3].copy_from_slice(&c);
                drow[col] = z;
            }
        });
    let img = RgbImage::from_raw(width, height, rgb).expect("buffer sized for image");
    Ok((img, DepthMap::new(w, height as usize, depth)?.with_fov(fov)))
}
