// Forecast the camera pose change over the round trip from the steer
// history, for a frame captured mid-turn.

use predictive_display::delay_model::PercentileEstimate;
use predictive_display::motion_predictor::{forecast, DelayBookkeeping, PoseDelta, SteerHistory, VehicleGeometry};
use predictive_display::Result;

pub fn run_example() -> Result<PoseDelta> {
    let geom = VehicleGeometry::default();
    let mut history = SteerHistory::new(5.0)?;
    // straight, then a right turn entered at t = 1.0
    for k in 0..75 {
        let t = k as f64 * 0.02;
        history.push(t, if t < 1.0 { 0.0 } else { 0.15 })?;
    }

    let frame = DelayBookkeeping::new(1.1, 1.25, 0.1)?;
    let est = PercentileEstimate::new(0.1, 0.14, 1.2)?;
    let speed = 10.0 / 3.6;
    let delta = forecast(&frame, &history, speed, 0.0, &est, &geom)?;
    println!("round trip {:.0} ms at {:.2} m/s", (frame.tau1 + est.p95) * 1e3, speed);
    println!(
        "camera moves {:.3} m forward, {:.4} m right, turns {:.2} deg",
        delta.dz_cam,
        delta.dx_cam,
        delta.dpsi_cam.to_degrees()
    );
    Ok(delta)
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example().map(|_| ())
}
