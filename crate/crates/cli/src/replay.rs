use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use predictive_display::delay_model::{read_delay_trace, replay_hold_and_apply, write_estimates, TraceRecord};

use crate::Common;

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Delay trace, `timestamp_s,delay_s` per line.
    trace: PathBuf,
    /// Multiply every delay by this factor.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
}

pub fn run(common: &Common, a: &ReplayArgs) -> Result<()> {
    if !(a.scale > 0.0) || !a.scale.is_finite() {
        bail!("--scale must be positive, got {}", a.scale);
    }
    let file = fs::File::open(&a.trace).with_context(|| format!("opening {}", a.trace.display()))?;
    let records: Vec<TraceRecord> = read_delay_trace(file)?
        .into_iter()
        .map(|r| TraceRecord {
            timestamp_s: r.timestamp_s,
            delay_s: r.delay_s * a.scale,
        })
        .collect();
    let r = replay_hold_and_apply(&records)?;
    println!("{} commands, {} scored after the first fit", r.commands, r.evaluated);
    println!("on time: {} ({:.2}%)", r.on_time, 100.0 * r.on_time_rate);
    println!(
        "p95 estimates: {}, std {:.2} ms, largest step {:.2} ms",
        r.estimates.len(),
        r.p95_std * 1e3,
        r.p95_max_step * 1e3
    );
    if let Some(dir) = &common.out_dir {
        fs::create_dir_all(dir)?;
        write_estimates(fs::File::create(dir.join("estimates.csv"))?, &r.estimates)?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}
