//! Model zoo and the layered network.

pub mod layered;
pub mod zoo;

pub use zoo::context_twin_model;
pub use layered::{simulate_layered, LayeredNetSpec, Simulation, SynapseParams, Trace};
