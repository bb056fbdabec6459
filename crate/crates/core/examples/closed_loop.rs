// Drive the 120-degree corner in the vehicle, remotely with prediction and
// remotely without it, and compare the path deviation.

use predictive_display::teleop_loop::{run_experiment, ExperimentConfig, Mode};
use predictive_display::Result;

pub fn run_example() -> Result<Vec<(Mode, f64)>> {
    let mut out = Vec::new();
    for mode in [Mode::InVehicle, Mode::TeleopPp, Mode::TeleopNoPp] {
        let mut cfg = ExperimentConfig::new("example", "r5_120", mode, 1);
        cfg.plant.slip_factor = 0.95;
        let r = run_experiment(&cfg)?.report;
        println!(
            "{:<13} eps {:.4} m, {} oscillations",
            mode.as_str(),
            r.deviation.rmse,
            r.oscillations
        );
        out.push((mode, r.deviation.rmse));
    }
    Ok(out)
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example().map(|_| ())
}
