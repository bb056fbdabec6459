// Render a synthetic frame, push its depth through the 8-bit codec and warp
// it to a camera pose 0.9 m further along with a small right turn.

use predictive_display::depth_codec::{decode_map, encode_map, CodecParams};
use predictive_display::motion_predictor::{PoseDelta, VehicleGeometry};
use predictive_display::projection::project_frame;
use predictive_display::sim_world::{r7_80, CameraRig, Scene, SceneSpec, Track};
use predictive_display::Result;

pub fn run_example() -> Result<f64> {
    let spec = r7_80();
    let track = Track::from_spec(&spec)?;
    let scene = Scene::build(&SceneSpec::for_track(spec, 0))?;
    let rig = CameraRig {
        width: 336,
        height: 188,
        ..CameraRig::default()
    };
    let geom = VehicleGeometry::default();

    let (rgb, depth) = rig.render(&scene, &track.pose_at(8.0), &geom)?;
    let codec = CodecParams::default();
    let depth = decode_map(&encode_map(&depth, &codec)?, &codec).with_fov(rig.fov()?);

    let delta = PoseDelta::new(0.02, 0.9, 2f64.to_radians());
    let out = project_frame(&rgb, &depth, &delta, &geom)?;
    let valid = out.warped.valid_count() as f64 / (rig.width * rig.height) as f64;
    println!(
        "{}x{} frame, {:.1}% of pixels carried over, rest inpainted",
        rig.width,
        rig.height,
        100.0 * valid
    );
    Ok(valid)
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example().map(|_| ())
}
