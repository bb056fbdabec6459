use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Args;
use predictive_display::depth_codec::{decode_map, encode_map, CodecParams, EncodedDepthMap, Fov};
use predictive_display::motion_predictor::{PoseDelta, VehicleGeometry};
use predictive_display::projection::{load_rgb, project_frame_with, save_png, ProjectOptions, RgbImage};
use predictive_display::sim_world::{render, track_by_name, CameraPose, CameraRig, Scene, SceneSpec, Track};

use crate::Common;

#[derive(Debug, Args)]
pub struct ProjectArgs {
    /// Source color image.
    #[arg(long, required_unless_present = "synthetic")]
    rgb: Option<PathBuf>,
    /// Source depth as an 8-bit code image (png).
    #[arg(long, required_unless_present = "synthetic")]
    depth: Option<PathBuf>,
    /// Render the source frame (and the ground truth) from the synthetic scene.
    #[arg(long, conflicts_with_all = ["rgb", "depth"])]
    synthetic: bool,
    /// Camera motion to the right, meters.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    dx: f64,
    /// Camera motion forward, meters.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    dz: f64,
    /// Yaw change, degrees, positive to the right.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    dyaw: f64,
    /// Camera pitch, degrees.
    #[arg(long, default_value_t = 5.0, allow_hyphen_values = true)]
    pitch: f64,
    #[arg(long, default_value_t = 90.0)]
    fov_h: f64,
    #[arg(long, default_value_t = 60.0)]
    fov_v: f64,
    /// Leave holes unfilled.
    #[arg(long)]
    no_inpaint: bool,
}

fn read_depth(path: &Path) -> Result<EncodedDepthMap> {
    let bytes = fs::read(path).with_context(|| format!("reading depth {}", path.display()))?;
    EncodedDepthMap::from_container(&bytes).with_context(|| format!("decoding depth {}", path.display()))
}

/// Mean absolute channel error over the pixels `mask` keeps, median across them.
fn median_error(a: &RgbImage, b: &RgbImage, mask: &[bool]) -> Option<f64> {
    let mut e: Vec<f64> = a
        .pixels()
        .zip(b.pixels())
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((p, q), _)| (0..3).map(|k| (p[k] as f64 - q[k] as f64).abs()).sum::<f64>() / 3.0)
        .collect();
    if e.is_empty() {
        return None;
    }
    e.sort_by(f64::total_cmp);
    Some(e[e.len() / 2])
}

pub fn run(common: &Common, a: &ProjectArgs) -> Result<()> {
    let geom = VehicleGeometry {
        cam_pitch: a.pitch.to_radians(),
        ..VehicleGeometry::default()
    };
    let fov = Fov::from_degrees(a.fov_h, a.fov_v)?;
    let delta = PoseDelta::new(a.dx, a.dz, a.dyaw.to_radians());
    let out = common.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out)?;
    let codec = CodecParams::default();

    let mut truth = None;
    let (rgb, codes) = if a.synthetic {
        let spec = track_by_name("full")?;
        let track = Track::from_spec(&spec)?;
        let scene = Scene::build(&SceneSpec::for_track(spec, common.seed()))?;
        let rig = CameraRig {
            fov_h_deg: a.fov_h,
            fov_v_deg: a.fov_v,
            ..CameraRig::default()
        };
        let cam = rig.pose(&track.pose_at(5.0), &geom);
        let (rgb, depth) = render(&scene, &cam, rig.width, rig.height, fov)?;
        let (s, c) = cam.heading.sin_cos();
        let moved = CameraPose {
            position: [
                cam.position[0] + a.dz * s + a.dx * c,
                cam.position[1] + a.dz * c - a.dx * s,
                cam.position[2],
            ],
            heading: cam.heading + delta.dpsi_cam,
            pitch: cam.pitch,
        };
        truth = Some(render(&scene, &moved, rig.width, rig.height, fov)?.0);
        let codes = encode_map(&depth, &codec)?;
        save_png(&rgb, &out.join("source.png"))?;
        fs::write(out.join("source_depth.png"), codes.to_png()?)?;
        (rgb, codes)
    } else {
        let (Some(rp), Some(dp)) = (&a.rgb, &a.depth) else {
            bail!("--rgb and --depth are required without --synthetic");
        };
        let rgb = load_rgb(rp).with_context(|| format!("reading rgb {}", rp.display()))?;
        (rgb, read_depth(dp)?)
    };
    if rgb.width() as usize != codes.width || rgb.height() as usize != codes.height {
        bail!(
            "rgb is {}x{} but depth is {}x{}",
            rgb.width(),
            rgb.height(),
            codes.width,
            codes.height
        );
    }

    let depth = decode_map(&codes, &codec).with_fov(fov);
    let opts = ProjectOptions {
        skip_inpaint: a.no_inpaint,
        ..ProjectOptions::default()
    };
    let started = Instant::now();
    let projected = project_frame_with(&rgb, &depth, &delta, &geom, &opts)?;
    let took = started.elapsed();
    save_png(&projected.image, &out.join("projected.png"))?;
    projected.warped.mask_image().save(out.join("mask.png"))?;

    let n = projected.warped.valid_mask.len();
    println!(
        "{}x{} dx={} dz={} dyaw={}°",
        rgb.width(),
        rgb.height(),
        a.dx,
        a.dz,
        a.dyaw
    );
    println!("projection time: {:.1} ms", took.as_secs_f64() * 1e3);
    println!(
        "valid before inpaint: {:.1}%",
        100.0 * projected.warped.valid_count() as f64 / n as f64
    );
    if let Some(truth) = truth {
        save_png(&truth, &out.join("truth.png"))?;
        if let Some(e) = median_error(&projected.warped.rgb, &truth, &projected.warped.valid_mask) {
            println!("median |rgb error| vs ground truth on valid pixels: {e:.2}/255");
        }
    }
    println!("wrote {}", out.display());
    Ok(())
}
