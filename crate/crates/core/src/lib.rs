//! Full-information and moving-horizon state estimation for discrete-time
//! nonlinear systems, with i-IOSS certificates, robust-stability checks and a
//! Monte-Carlo benchmark against Kalman-filter baselines.

pub mod funcalc;
pub mod systems;
pub mod stochastics;
pub mod cost;
pub mod solver;
pub mod estimators;
pub mod stability;
pub mod bench;
