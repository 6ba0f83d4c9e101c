//! Event-driven cluster simulation: arrivals, queueing, placement, shared
//! bandwidth and completions.

pub mod comm;
mod engine;
pub mod maxmin;
mod report;
pub mod trace;

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::placement::Strategy;
use crate::topology::ClusterConfig;

pub use comm::{communication_time, distinct_patterns, ideal_comm_time, iteration_time};
pub use engine::run;
pub use maxmin::{max_min_share, MmFlow};
pub use report::{stability, Fragmentation, JobRecord, QueueSample, SimReport, SimSummary};
pub use trace::{read_trace, synthesize_trace, write_trace, JobClass, JobMix, TraceJob};

/// Order in which queued jobs are offered to placement.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulerPolicy {
    /// Arrival order; a blocked head blocks everyone.
    Fifo,
    /// Earliest deadline first, with backfilling.
    Edf,
    /// Fewest GPUs first, with backfilling.
    Ff,
}

impl SchedulerPolicy {
    pub const ALL: [SchedulerPolicy; 3] = [SchedulerPolicy::Fifo, SchedulerPolicy::Edf, SchedulerPolicy::Ff];

    pub fn name(self) -> &'static str {
        match self {
            SchedulerPolicy::Fifo => "fifo",
            SchedulerPolicy::Edf => "edf",
            SchedulerPolicy::Ff => "ff",
        }
    }
}

impl fmt::Display for SchedulerPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchedulerPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "fifo" => Ok(SchedulerPolicy::Fifo),
            "edf" => Ok(SchedulerPolicy::Edf),
            "ff" | "fewest-first" => Ok(SchedulerPolicy::Ff),
            other => Err(format!("unknown scheduler `{other}` (expected fifo, edf or ff)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub cluster: ClusterConfig,
    pub strategy: Strategy,
    pub scheduler: SchedulerPolicy,
    pub seed: u64,
    /// NIC and fabric link rate.
    pub nic_gbps: f64,
    /// Seconds between queue-depth samples.
    pub queue_sample_interval: f64,
    /// EDF deadline is arrival plus this many standalone runtimes.
    pub edf_slack: f64,
    /// Wall-clock budget per placement search.
    pub ilp_time_budget: Duration,
    /// Check link and reservation invariants after every event.
    pub check_invariants: bool,
}

impl SimConfig {
    pub fn new(cluster: ClusterConfig, strategy: Strategy) -> Self {
        Self {
            cluster,
            strategy,
            scheduler: SchedulerPolicy::Fifo,
            seed: 0,
            nic_gbps: 100.0,
            queue_sample_interval: 600.0,
            edf_slack: 2.0,
            ilp_time_budget: Duration::from_secs(10),
            check_invariants: false,
        }
    }

    pub fn with_scheduler(mut self, scheduler: SchedulerPolicy) -> Self {
        self.scheduler = scheduler;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// The fabric the strategy actually runs on: electrical strategies get
    /// no OCS layer, optical ones at least one OCS.
    pub fn effective_cluster(&self) -> ClusterConfig {
        let mut c = self.cluster.clone();
        if !self.strategy.uses_ocs() {
            c.ocs_count = 0;
        } else if c.ocs_count == 0 {
            c.ocs_count = 1;
        }
        c
    }

    pub fn nic_bytes_per_s(&self) -> f64 {
        self.nic_gbps * 1e9 / 8.0
    }

    pub fn validate(&self) -> Result<(), String> {
        self.effective_cluster().validate().map_err(|e| e.to_string())?;
        if !(self.nic_gbps > 0.0 && self.nic_gbps.is_finite()) {
            return Err("nic_gbps must be positive".into());
        }
        if !(self.queue_sample_interval > 0.0) {
            return Err("queue_sample_interval must be positive".into());
        }
        if !(self.edf_slack > 0.0) {
            return Err("edf_slack must be positive".into());
        }
        Ok(())
    }
}
