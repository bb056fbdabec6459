// Depth transport encoding: an 8-bit code whose resolution is finest close
// to the camera, and the raw stream bandwidth it replaces.

use predictive_display::depth_codec::{
    bandwidth_estimate, decode_depth, encode_depth, quantization_step, CodecParams, StreamSpec,
};
use predictive_display::Result;

pub fn run_example() -> Result<Vec<(f64, u8, f64)>> {
    let p = CodecParams::default();
    let mut rows = Vec::new();
    for d in [1.0, 2.0, 5.0, 10.0, 15.0, 20.0] {
        let code = encode_depth(d, &p)?;
        let back = decode_depth(code, &p);
        println!(
            "{d:>5.1} m -> code {code:>3} -> {back:.3} m (step {:.4} m)",
            quantization_step(d, &p)?
        );
        rows.push((d, code, back));
    }

    let rgb = bandwidth_estimate(&StreamSpec::rgb8(672, 376, 30.0));
    let depth = bandwidth_estimate(&StreamSpec::depth_f32(672, 376, 30.0));
    println!(
        "raw 672x376 @ 30 fps: rgb {:.1} MiB/s, depth {:.1} MiB/s",
        rgb.mib_per_s(),
        depth.mib_per_s()
    );
    Ok(rows)
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example().map(|_| ())
}
