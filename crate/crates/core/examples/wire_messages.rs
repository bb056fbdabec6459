// Binary frame and command messages, and a delayed link that carries them.

use predictive_display::wire::{
    decode_command, decode_frame, encode_command, encode_frame, CommandMsg, DelaySource, DelayedChannel, FrameMsg,
};
use predictive_display::Result;

pub fn run_example() -> Result<usize> {
    let frame = FrameMsg {
        seq: 1,
        t0_us: 2_000_000,
        speed: 2.78,
        accel: 0.0,
        fov_h: 90f32.to_radians(),
        fov_v: 60f32.to_radians(),
        pitch: 5f32.to_radians(),
        rgb_payload: vec![1, 2, 3],
        depth_payload: vec![4, 5],
    };
    let bytes = encode_frame(&frame)?;
    assert_eq!(decode_frame(&bytes)?, frame);
    println!("frame message: {} bytes", bytes.len());

    let cmd = CommandMsg::new(0.12, 2.15, 0.104, 0.131)?;
    let wire = encode_command(&cmd);
    assert_eq!(decode_command(&wire)?, cmd);
    println!("command message: {} bytes", wire.len());

    let mut link = DelayedChannel::new(DelaySource::constant(0.1)?);
    for k in 0..5 {
        link.send(k, k as f64 * 0.02);
    }
    let arrived = link.poll(0.15);
    println!("{} of 5 commands delivered by t = 0.15 s", arrived.len());
    Ok(arrived.len())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example().map(|_| ())
}
