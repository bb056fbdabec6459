//! Predictive display for vehicle teleoperation.
//!
//! A delayed RGB + depth frame is warped into the camera pose the vehicle is
//! forecast to occupy when the operator's next command reaches it. The crate
//! covers the whole loop: depth transport encoding, uplink delay estimation
//! with hold-and-apply actuation, kinematic pose forecasting, depth-image
//! reprojection with inpainting, a deterministic simulated world, the wire
//! formats, and a closed-loop experiment runner.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod delay_model;
pub mod depth_codec;
pub mod error;
pub mod motion_predictor;
pub mod pose;
pub mod projection;
pub mod sim_world;
pub mod teleop_loop;
pub mod wire;

pub use error::{Error, Result};
