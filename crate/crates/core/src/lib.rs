//! Time-varying trigonometric feedback for driftless nonholonomic systems.
//!
//! The crate synthesizes sample-and-hold controls of the form
//! `u(t) = v + sum a (cos, sin)(2 pi k t / eps)` that make one sampling
//! interval approximate a gradient step of a Lyapunov function, simulates the
//! closed loop, and checks the quantitative estimates behind the construction
//! (second-order flow expansion and its remainder, a-priori growth bound,
//! one-step Lyapunov decay).

pub mod analysis;
pub mod brockett;
pub mod controller;
pub mod error;
pub mod grid;
pub mod lyapunov;
pub mod simulator;
pub mod synthesis;
pub mod systems;
pub mod verify;

pub use error::{Error, Result};
