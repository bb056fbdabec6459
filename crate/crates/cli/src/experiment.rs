use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use predictive_display::projection::save_png;
use predictive_display::teleop_loop::{ExperimentConfig, ExperimentReport, Mode, Simulation};

use crate::Common;

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Experiment config (toml).
    config: PathBuf,
    /// Override the config's mode: in_vehicle, teleop_pp or teleop_no_pp.
    #[arg(long)]
    mode: Option<String>,
}

pub fn summary(r: &ExperimentReport) -> String {
    let mut s = format!(
        "{} [{} on {}, seed {}]\n  eps {:.4} m over {} samples, {} oscillations, {:.1} s{}\n",
        r.name,
        r.mode.as_str(),
        r.track,
        r.seed,
        r.deviation.rmse,
        r.deviation.samples,
        r.oscillations,
        r.simulated_time,
        if r.reached_end { "" } else { " (did not reach the end)" },
    );
    for sec in &r.deviation.sections {
        s += &format!("    {:<12} eps {:.4} m ({} samples)\n", sec.name, sec.rmse, sec.samples);
    }
    s += &format!(
        "  downlink mean {:.1} ms, uplink mean {:.1} ms, late commands {:.1}%, watchdog trips {}\n",
        r.downlink_delay.mean * 1e3,
        r.uplink_delay.mean * 1e3,
        r.late_rate * 100.0,
        r.watchdog_trips
    );
    s += &format!(
        "  frames {} captured, {} displayed",
        r.frames_captured, r.frames_displayed
    );
    if let Some(o) = r.frame_budget_overruns {
        s += &format!(", {o} over budget");
    }
    s
}

pub fn run(common: &Common, a: &ExperimentArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::from_file(&a.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(m) = &a.mode {
        cfg.mode = Mode::parse(m)?;
    }
    let out = common
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(&cfg.name));
    let save_every = cfg.render.save_every as u64;
    if save_every > 0 {
        fs::create_dir_all(out.join("frames"))?;
    }
    let mut shown = 0u64;
    let mut save_err = None;
    let output = Simulation::new(&cfg)?.run(|d| {
        if save_every > 0 && shown.is_multiple_of(save_every) {
            if let Some(img) = &d.image {
                if let Err(e) = save_png(img, &out.join("frames").join(format!("{:05}.png", d.seq))) {
                    save_err.get_or_insert(e);
                }
            }
        }
        shown += 1;
    })?;
    if let Some(e) = save_err {
        return Err(e).context("saving frames");
    }
    output
        .write_to(&out)
        .with_context(|| format!("writing {}", out.display()))?;
    println!("{}", summary(&output.report));
    println!("wrote {}", out.display());
    Ok(())
}
