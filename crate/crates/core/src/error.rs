use thiserror::Error;

use crate::topology::JobId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("invalid cluster config: {0}")]
    InvalidConfig(String),
    #[error("gpu {gpu} is already reserved by job {owner}")]
    GpuBusy { gpu: usize, owner: JobId },
    #[error("leaf port {port} is already reserved by job {owner}")]
    LinkBusy { port: usize, owner: JobId },
    #[error("gpu {0} does not exist")]
    UnknownGpu(usize),
    #[error("leaf port {0} does not exist")]
    UnknownPort(usize),
    #[error("leaf port {0} has no circuit")]
    DanglingPort(usize),
    #[error("job {0} already holds a reservation")]
    DuplicateJob(JobId),
    #[error("job {0} holds no reservation")]
    UnknownJob(JobId),
    #[error("cluster has no OCS layer")]
    NoOcs,
    #[error("ocs {0} does not exist")]
    UnknownOcs(usize),
    #[error("ocs {ocs}: no free circuit {pairing} to move (reserved or absent)")]
    NoFreeCircuit { ocs: usize, pairing: String },
    #[error("ocs {ocs}: circuit {pairing} is reserved and cannot be rewired")]
    RewireReserved { ocs: usize, pairing: String },
    #[error("ocs {ocs}: no unconnected port left for {pairing}")]
    PortExhausted { ocs: usize, pairing: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PatternError {
    #[error("collective needs at least 2 ranks, got {0}")]
    TooFewRanks(usize),
    #[error("{ranks} ranks cannot be split into servers of {per_server}")]
    UnevenServers { ranks: usize, per_server: usize },
    #[error("rank {0} has no leaf mapping")]
    UnmappedRank(usize),
    #[error("unknown collective `{0}`")]
    UnknownCollective(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoutingError {
    #[error("flow endpoint gpu {0} is outside the allocation")]
    OutsideAllocation(usize),
    #[error("gpu {0} does not exist")]
    UnknownGpu(usize),
    #[error("no circuit from spine {spine} down to leaf {leaf}")]
    NoDownlink { spine: usize, leaf: usize },
    #[error("gpu {0} has no uplink to leave its leaf")]
    NoUplink(usize),
    #[error("virtual leaf {vleaf}: {message}")]
    BadMap { vleaf: usize, message: String },
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid field `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("trace line {line}: {message}")]
    Trace { line: usize, message: String },
}
