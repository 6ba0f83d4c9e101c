//! Contention-free placement and routing for GPU jobs on leaf-spine fabrics,
//! with an event-driven flow-level simulator to compare policies.

pub mod cli;
pub mod error;
pub mod patterns;
pub mod placement;
pub mod routing;
pub mod sim;
pub mod topology;

pub use error::{ConfigError, PatternError, RoutingError, TopologyError};
pub use topology::{ClusterConfig, JobId, PhysicalCluster};
