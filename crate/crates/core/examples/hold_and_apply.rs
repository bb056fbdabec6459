// Replay an uplink delay trace through hold-and-apply actuation: every
// command is held until its send time plus the current p95 estimate.

use predictive_display::delay_model::{replay_hold_and_apply, GevParams, HoldApplyReplay, TraceRecord};
use predictive_display::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> Result<HoldApplyReplay> {
    let law = GevParams::new(0.1, 0.095, 0.008)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let trace: Vec<TraceRecord> = (0..1500)
        .map(|i| TraceRecord {
            timestamp_s: i as f64 * 0.02,
            delay_s: law.sample(&mut rng),
        })
        .collect();

    let r = replay_hold_and_apply(&trace)?;
    println!("{} commands, {} scored", r.commands, r.evaluated);
    println!("on time {:.1}%", 100.0 * r.on_time_rate);
    println!(
        "p95 refreshed {} times, spread {:.2} ms",
        r.estimates.len(),
        r.p95_std * 1e3
    );
    Ok(r)
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example().map(|_| ())
}
