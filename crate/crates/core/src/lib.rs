//! Simulation toolkit for Delta parallel robots: rigid-body dynamics with
//! geared PMSM actuation, frozen-configuration modal analysis of the
//! rigid-flexible structure, optimal three-impulse input shaping, and an
//! adaptive mismatch-compensated iterative learning controller with
//! fuzzy-logic mismatch approximation and barrier velocity constraints,
//! benchmarked against PID-type ILC and adaptive fuzzy control baselines.
//!
//! The heavy sweeps (workspace sampling, frequency maps, shaper grid search)
//! run data-parallel on rayon when the default `parallel` feature is enabled
//! and fall back to plain iterators otherwise. Sequential entry points with a
//! `_seq` suffix are kept for benchmarking both paths side by side.
//!
//! ```
//! use delta_ilc::kinematics::{forward_kinematics, inverse_kinematics, MpPose, RobotParams};
//! use delta_ilc::shaper::{make_shaper, residual_percentage};
//!
//! let params = RobotParams::default();
//! let theta = inverse_kinematics(&MpPose::new(0.1, -0.05, -0.85), &params)?;
//! let back = forward_kinematics(&theta, &params)?;
//! assert!((back.p - nalgebra::Vector3::new(0.1, -0.05, -0.85)).norm() < 1e-9);
//!
//! // A shaper designed at 16.4 Hz nulls its own frequency and keeps unit gain.
//! let spec = make_shaper(16.4, 0.075, 0.83)?;
//! assert!((spec.amplitudes.iter().sum::<f64>() - 1.0).abs() < 1e-12);
//! assert!(residual_percentage(&spec, 2.0 * std::f64::consts::PI * 16.4, 0.075) < 1e-12);
//! # Ok::<(), delta_ilc::Error>(())
//! ```

pub mod bcef;
pub mod beam;
pub mod config;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod exec;
pub mod fls;
pub mod kinematics;
pub mod modal;
pub mod shaper;
pub mod sim;
pub mod trajectory;

pub use error::{Error, Result};
pub use kinematics::{JointState, MpPose, RobotParams};
