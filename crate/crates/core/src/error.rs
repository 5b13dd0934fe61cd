use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("metric undefined for an empty index set")]
    EmptyTensor,

    #[error("operation needs at least one input tensor")]
    EmptyInput,

    #[error("universe mismatch: expected {expected} elements, got {found}")]
    UniverseMismatch { expected: u64, found: u64 },

    #[error("serial region of partition {partition} is exhausted; r2 is too small for this workload")]
    SerialOverflow { partition: usize },

    #[error("invalid hashing parameters: {0}")]
    InvalidHashParams(String),

    #[error("index {index} is not in the hash universe of server {server}")]
    IndexOutsideUniverse { index: u64, server: usize },

    #[error("malformed payload: {0}")]
    MalformedPayload(String),

    #[error("{0} nodes is not a power of two")]
    NonPowerOfTwo(usize),

    #[error("unsupported scheme combination: {0}")]
    UnsupportedCombination(String),

    #[error("node {0} attempted to send a message to itself")]
    SelfSend(usize),

    #[error("node {node} is out of range for a {n}-node network")]
    UnknownNode { node: usize, n: usize },

    #[error("stage {requested} was already closed (current stage is {current})")]
    StageClosed { requested: usize, current: usize },

    #[error("traffic ledger is unbalanced in stage {stage}: sent {sent} bits, received {received} bits")]
    UnbalancedLedger { stage: usize, sent: u64, received: u64 },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("sparsity profile lacks the entry for {0}")]
    MissingProfileEntry(String),

    #[error("infeasible workload: {0}")]
    InfeasibleSpec(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}
