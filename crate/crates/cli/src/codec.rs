use std::fs;

use anyhow::{bail, Context, Result};
use clap::Args;
use predictive_display::depth_codec::{
    bandwidth_estimate, decode_depth, encode_depth, encode_map, params_from_text, quantization_step, CodecParams,
    StreamSpec,
};
use predictive_display::motion_predictor::VehicleGeometry;
use predictive_display::sim_world::{drive_frames, track_by_name, CameraRig, Scene, SceneSpec, Track};
use predictive_display::wire::{stream_bandwidth, Container};

use crate::Common;

#[derive(Debug, Args)]
pub struct CodecArgs {
    /// Sweep start, meters.
    #[arg(long, default_value_t = 1.0)]
    min: f64,
    /// Sweep end, meters.
    #[arg(long, default_value_t = 20.0)]
    max: f64,
    #[arg(long, default_value_t = 1.0)]
    step: f64,
    /// Codec parameters as `key = value` text.
    #[arg(long)]
    params: Option<std::path::PathBuf>,
    /// Synthetic frames rendered to measure compressed bandwidth (0 skips).
    #[arg(long, default_value_t = 10)]
    frames: usize,
    /// RGB container: png or jpeg[:quality].
    #[arg(long, default_value = "jpeg:80")]
    rgb: String,
    /// Depth container: png or jpeg[:quality].
    #[arg(long, default_value = "png")]
    depth: String,
}

pub struct SweepRow {
    pub depth: f64,
    pub code: u8,
    pub decoded: f64,
    pub step: f64,
}

pub fn sweep(min: f64, max: f64, step: f64, p: &CodecParams) -> Result<Vec<SweepRow>> {
    if !(min > 0.0) || !(max > min) || !(step > 0.0) || !max.is_finite() {
        bail!("bad sweep range: need 0 < min < max and step > 0, got {min}..{max} step {step}");
    }
    let n = ((max - min) / step + 1e-9).floor() as usize;
    (0..=n)
        .map(|i| {
            let d = min + step * i as f64;
            let code = encode_depth(d, p)?;
            Ok(SweepRow {
                depth: d,
                code,
                decoded: decode_depth(code, p),
                step: quantization_step(d, p)?,
            })
        })
        .collect()
}

pub fn run(common: &Common, a: &CodecArgs) -> Result<()> {
    let p = match &a.params {
        Some(path) => params_from_text(&fs::read_to_string(path).with_context(|| format!("{}", path.display()))?)?,
        None => CodecParams::default(),
    };
    let rows = sweep(a.min, a.max, a.step, &p)?;
    println!("{:>8} {:>5} {:>9} {:>9}", "depth_m", "code", "decoded_m", "step_m");
    for r in &rows {
        println!("{:>8.3} {:>5} {:>9.4} {:>9.5}", r.depth, r.code, r.decoded, r.step);
    }

    let rig = CameraRig::default();
    let (w, h) = (rig.width, rig.height);
    let rgb = bandwidth_estimate(&StreamSpec::rgb8(w, h, 30.0));
    let depth = bandwidth_estimate(&StreamSpec::depth_f32(w, h, 30.0));
    let mut bw = vec![
        ("rgb_raw", rgb.mib_per_s(), rgb.mb_per_s()),
        ("depth_f32_raw", depth.mib_per_s(), depth.mb_per_s()),
        ("total_raw", (rgb + depth).mib_per_s(), (rgb + depth).mb_per_s()),
    ];
    if a.frames > 0 {
        let (rc, dc) = (Container::parse(&a.rgb)?, Container::parse(&a.depth)?);
        let spec = track_by_name("full")?;
        let track = Track::from_spec(&spec)?;
        let scene = Scene::build(&SceneSpec::for_track(spec, common.seed()))?;
        let frames = drive_frames(
            &scene,
            &track,
            &rig,
            &VehicleGeometry::default(),
            5.0,
            10.0 / 3.6,
            30.0,
            a.frames,
        )?;
        let coded = frames
            .into_iter()
            .map(|(rgb, d)| Ok((rgb, encode_map(&d, &p)?)))
            .collect::<Result<Vec<_>>>()?;
        let c = stream_bandwidth(&coded, rc, dc, 30.0)?;
        bw.push(("compressed", c.mib_per_s(), c.mb_per_s()));
    }
    println!();
    println!("{w}x{h} at 30 fps");
    println!("{:<14} {:>8} {:>8}", "stream", "MiB/s", "MB/s");
    for (name, mib, mb) in &bw {
        println!("{name:<14} {mib:>8.2} {mb:>8.2}");
    }

    if let Some(dir) = &common.out_dir {
        fs::create_dir_all(dir)?;
        let mut wtr = csv::Writer::from_path(dir.join("codec_sweep.csv"))?;
        wtr.write_record(["depth_m", "code", "decoded_m", "step_m"])?;
        for r in &rows {
            wtr.serialize((r.depth, r.code, r.decoded, r.step))?;
        }
        wtr.flush()?;
        let mut wtr = csv::Writer::from_path(dir.join("bandwidth.csv"))?;
        wtr.write_record(["stream", "mib_per_s", "mb_per_s"])?;
        for row in &bw {
            wtr.serialize(row)?;
        }
        wtr.flush()?;
        log::info!("wrote {}", dir.display());
    }
    Ok(())
}
