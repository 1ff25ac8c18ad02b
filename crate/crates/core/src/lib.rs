//! Slice admission control on a single mmWave link with weather-driven capacity.
//!
//! Capacity comes from an RSL trace mapped through a hysteresis ACM table. Slice
//! requests arrive in per-slot batches; an admission policy accepts a subset, active
//! slices share the slot's capacity through penalty-minimizing rate control, and the
//! oracle solves the whole horizon with perfect information for comparison.

pub mod engine;
pub mod exec;
pub mod forecast;
pub mod link_capacity;
pub mod num;
pub mod oracle;
pub mod policies;
pub mod rate_control;
pub mod scenario;
pub mod slicing;
pub mod suite;
pub mod sweep;

pub use exec::Execution;
