use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoscmError {
    #[error("invalid model: {0}")]
    InvalidSpec(String),

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("value {value} is outside the domain of node {node} ({channel})")]
    DomainViolation {
        node: usize,
        channel: &'static str,
        value: f64,
    },

    #[error("node {node} out of range for a model with {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },

    #[error("dyad {source_node}->{target} is not a potential edge under the generation order")]
    InvalidDyad { source_node: usize, target: usize },

    #[error("conflicting interventions on {0}")]
    ConflictingInterventions(String),

    #[error("edge intervention on {0} requires a message-augmented mechanism")]
    NotMessageAugmented(String),

    #[error("message of dimension {got} does not fit a slot of dimension {expected}")]
    MessageDimension { expected: usize, got: usize },

    #[error("message parameterization is missing the {channel} channel of node {node}")]
    MissingChannel { node: usize, channel: &'static str },

    #[error("map is not invertible on the reachable message set: {0}")]
    NonInvertible(String),

    #[error("mechanism evaluation failed at node {node}: {reason}")]
    Mechanism { node: usize, reason: String },

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("two-sample comparison between incompatible laws: {0}")]
    MixedKinds(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty conditioning cell: {0}")]
    EmptyCell(String),

    #[error("simulation unstable: {0}")]
    Unstable(String),
}

pub type Result<T, E = PoscmError> = std::result::Result<T, E>;
