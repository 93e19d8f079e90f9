//! Simulation and identification toolkit for partially observed structural
//! causal models (POSCMs).
//!
//! A POSCM generates its own graph: latent per-node contexts drive both edge
//! formation and mechanism assignment, in a fixed generation order. The crate
//! covers ordered generation, node and edge-message interventions, two-sample
//! statistics, identification procedures, and a small model zoo.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod domain;
pub mod error;
pub mod exogenous;
pub mod generate;
pub mod identify;
pub mod interventions;
pub mod measure;
pub mod messages;
pub mod models;
pub mod rng;
pub mod spec;
pub mod stats;

pub use domain::Domain;
pub use error::{PoscmError, Result};
pub use exogenous::{sample_exogenous, ExogenousDraw};
pub use generate::{freeze_instance, generate, Adjacency, InstanceHandle, World};
pub use interventions::{iisc_detect, supervising_measure, Intervention, Regime, SupervisingMeasure};
pub use measure::{observe, sample_observations, sample_values, sample_worlds, ChannelNoise, MeasurementModel, Observation};
pub use messages::{Channel, MessageMechanism, MessageReplacement};
pub use spec::{ContextMechanism, Mechanism, MechanismOperator, PoscmSpec, StructureKernel};
