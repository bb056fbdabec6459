#![allow(dead_code)]

use predictive_display::depth_codec::{decode_map, encode_map, CodecParams, DepthMap};
use predictive_display::motion_predictor::{AxlePose, PoseDelta, SteerSegment, VehicleGeometry, MAX_STEER};
use predictive_display::pose::WorldPose;
use predictive_display::projection::{project_frame_with, ProjectOptions, RgbImage, WarpTransform, WarpedFrame};
use predictive_display::sim_world::track_by_name;
use predictive_display::sim_world::{render, CameraPose, CameraRig, Scene, SceneSpec, Track};

pub struct Setup {
    pub scene: Scene,
    pub rig: CameraRig,
    pub geom: VehicleGeometry,
    pub axle: WorldPose,
}

/// Car on the approach straight of the named track, looking down the road.
pub fn setup(track: &str, seed: u64, width: u32, height: u32, along: f64) -> Setup {
    let spec = track_by_name(track).unwrap();
    let t = Track::from_spec(&spec).unwrap();
    let scene = Scene::build(&SceneSpec::for_track(spec, seed)).unwrap();
    let rig = CameraRig {
        width,
        height,
        ..CameraRig::default()
    };
    Setup {
        scene,
        rig,
        geom: VehicleGeometry::default(),
        axle: t.pose_at(along),
    }
}

/// Camera pose after moving by `d`, expressed in the old camera's frame.
pub fn moved(cam: &CameraPose, d: &PoseDelta) -> CameraPose {
    let (s, c) = cam.heading.sin_cos();
    // forward (s, c), right (c, −s) in the ground plane
    CameraPose {
        position: [
            cam.position[0] + d.dz_cam * s + d.dx_cam * c,
            cam.position[1] + d.dz_cam * c - d.dx_cam * s,
            cam.position[2],
        ],
        heading: cam.heading + d.dpsi_cam,
        pitch: cam.pitch,
    }
}

pub struct Comparison {
    pub valid_fraction: f64,
    /// Median over valid pixels of the mean absolute channel difference.
    pub median_error: f64,
    pub warped: WarpedFrame,
}

/// Warps a coded frame by `d` and compares it with a fresh render from the
/// moved camera.
pub fn compare(s: &Setup, d: &PoseDelta) -> Comparison {
    let cam = s.rig.pose(&s.axle, &s.geom);
    let fov = s.rig.fov().unwrap();
    let (rgb, depth) = render(&s.scene, &cam, s.rig.width, s.rig.height, fov).unwrap();
    let codec = CodecParams::default();
    let coded = decode_map(&encode_map(&depth, &codec).unwrap(), &codec).with_fov(fov);
    let opts = ProjectOptions {
        skip_inpaint: true,
        ..ProjectOptions::default()
    };
    let out = project_frame_with(&rgb, &coded, d, &s.geom, &opts).unwrap();
    let (truth, _) = render(&s.scene, &moved(&cam, d), s.rig.width, s.rig.height, fov).unwrap();
    let mut errs: Vec<f64> = Vec::new();
    for (i, (a, b)) in out.warped.rgb.pixels().zip(truth.pixels()).enumerate() {
        if out.warped.valid_mask[i] {
            let e: f64 = (0..3).map(|k| (a[k] as f64 - b[k] as f64).abs()).sum::<f64>() / 3.0;
            errs.push(e);
        }
    }
    let n = out.warped.valid_mask.len();
    errs.sort_by(f64::total_cmp);
    let median_error = if errs.is_empty() {
        f64::INFINITY
    } else {
        errs[errs.len() / 2]
    };
    Comparison {
        valid_fraction: errs.len() as f64 / n as f64,
        median_error,
        warped: out.warped,
    }
}

/// Literal painter's algorithm: splats sorted far to near (ties by ascending
/// source index) and drawn in that order, each overwriting what is below.
pub fn painter(rgb: &RgbImage, dm: &DepthMap, t: &WarpTransform) -> (Vec<[u8; 3]>, Vec<bool>) {
    let (w, h) = (dm.width(), dm.height());
    let fov = dm.fov().unwrap();
    let kx = (fov.horizontal / 2.0).tan() / (w as f64 / 2.0);
    let ky = (fov.vertical / 2.0).tan() / (h as f64 / 2.0);
    let mut splats: Vec<(f64, usize, (usize, usize), (usize, usize))> = Vec::new();
    for row in 0..h {
        for col in 0..w {
            let src = row * w + col;
            let z = dm.data()[src] as f64;
            let xd = (col + 1) as f64 - (w as f64 / 2.0 + 0.5);
            let yd = (row + 1) as f64 - (h as f64 / 2.0 + 0.5);
            let p = t.apply([z * xd * kx, z * yd * ky, z]);
            if p[2] <= 0.2 {
                continue;
            }
            let xn = p[0] / (p[2] * kx) + w as f64 / 2.0 + 0.5 - 1.0;
            let yn = p[1] / (p[2] * ky) + h as f64 / 2.0 + 0.5 - 1.0;
            if xn < -0.5 || xn >= w as f64 - 0.5 || yn < -0.5 || yn >= h as f64 - 0.5 {
                continue;
            }
            let s = z / p[2];
            let half = (s - 1.0) / 2.0;
            let span = |c: f64, n: usize| {
                let mut lo = (c - half + 1e-6).floor();
                let mut hi = (c + half - 1e-6).ceil();
                if lo > hi {
                    lo = c.round();
                    hi = lo;
                }
                (lo.max(0.0) as usize, (hi.min(n as f64 - 1.0)).max(0.0) as usize)
            };
            let (c0, c1) = span(xn, w);
            let (r0, r1) = span(yn, h);
            splats.push((p[2], src, (r0, r1), (c0, c1)));
        }
    }
    splats.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut best: Vec<Option<usize>> = vec![None; w * h];
    for (_, src, (r0, r1), (c0, c1)) in splats {
        for r in r0..=r1 {
            for c in c0..=c1 {
                best[r * w + c] = Some(src);
            }
        }
    }
    let src = rgb.as_raw();
    let colors = best
        .iter()
        .map(|b| match b {
            Some(s) => [src[s * 3], src[s * 3 + 1], src[s * 3 + 2]],
            None => [0, 0, 0],
        })
        .collect();
    (colors, best.iter().map(Option::is_some).collect())
}

/// Forward Euler reference, stepping exactly onto segment boundaries.
pub fn euler(segments: &[SteerSegment], v0: f64, a: f64, l: f64, dt: f64) -> AxlePose {
    let (mut x, mut z, mut psi, mut v) = (0.0, 0.0, 0.0f64, v0);
    for seg in segments {
        let k = seg.steer.clamp(-MAX_STEER, MAX_STEER).tan() / l;
        let mut left = seg.dt;
        while left > 1e-15 {
            let h = dt.min(left);
            // midpoint in speed keeps the reference second order in v
            let v_mid = (v + 0.5 * a * h).max(0.0);
            x += v_mid * psi.sin() * h;
            z += v_mid * psi.cos() * h;
            psi += v_mid * k * h;
            v = (v + a * h).max(0.0);
            left -= h;
        }
    }
    AxlePose { x, z, psi }
}
