//! Identification procedures and the constructive twins used to show
//! non-identifiability.

pub mod equivalence;
pub mod kernels;
pub mod probe;
pub mod routes;
pub mod twins;

pub use kernels::{estimate_context_kernel, estimate_structure_kernel, estimate_value_kernel, KernelEstimate, KernelSampler};
pub use probe::{probe_dyads, probe_structure, CoClamp, ProbeProtocol, StructureReadout};
pub use routes::{identify_message_route_ab, identify_message_route_c, BlockStatus, ClampSearch, MessageRecovery, Route, RouteAbConfig, RouteCConfig};
pub use equivalence::{check_equivalence, ChannelTest, EquivalenceVerdict, ObservedChannel, Overall};
pub use twins::{calibrated_confounding_pair, calibrated_q, reparameterize_context, reparameterize_contexts, ContextMap};
