//! Fluid and stochastic models of open multiclass queueing networks where
//! each server picks a queue by queue lengths (LQ, LDQ) or by a fixed
//! priority.
//!
//! The crate has one module per concern:
//!
//! - [`network`]: validation and static quantities (`Q`, `nu`, `D`, `rho`).
//! - [`fluid`]: exact piecewise-linear fluid trajectories.
//! - [`statespace`]: maxima-state transition diagrams.
//! - [`policies`]: scheduling rules shared by the fluid model and the simulator.
//! - [`dessim`]: discrete-event simulation with instability detection.

pub mod dessim;
pub mod exec;
pub mod fluid;
pub mod network;
pub mod numeric;
pub mod policies;
pub mod sampling;
pub mod scenario;
pub mod statespace;
