use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{SchedulerPolicy, SimConfig};
use crate::placement::{AllocKind, PlaceStats, Strategy};
use crate::topology::ClusterConfig;

/// Outcome of one job. Times are seconds; a rejected job has `error` set
/// and no timing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: u64,
    pub model_tag: String,
    pub batch_size: String,
    #[serde(rename = "N")]
    pub n: usize,
    /// GPUs actually held, padding included.
    pub allocated: usize,
    pub kind: Option<AllocKind>,
    pub arrival: f64,
    pub start: f64,
    pub finish: f64,
    pub jwt: f64,
    pub jrt: f64,
    pub jct: f64,
    pub rewire_delay: f64,
    /// Runtime with every flow at NIC rate.
    pub ideal_jrt: f64,
    pub error: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueueSample {
    pub time: f64,
    pub queued: usize,
    pub running: usize,
    pub idle_gpus: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fragmentation {
    /// Failed attempts with fewer idle GPUs than requested.
    pub gpu_caused: u64,
    /// Failed attempts although enough GPUs were idle.
    pub network_caused: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub strategy: Strategy,
    pub scheduler: SchedulerPolicy,
    pub seed: u64,
    pub cluster: ClusterConfig,
    pub nic_gbps: f64,
    pub jobs: usize,
    pub completed: usize,
    pub rejected: usize,
    pub avg_jrt: f64,
    pub avg_jwt: f64,
    pub avg_jct: f64,
    pub makespan: f64,
    /// Mean over groups of the JCT standard deviation.
    pub stability: f64,
    pub stability_groups: BTreeMap<String, f64>,
    pub fragmentation: Fragmentation,
    pub placement: PlaceStats,
    pub rewired_jobs: usize,
    pub events: u64,
    pub invariant_violations: Vec<String>,
    pub queue: Vec<QueueSample>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub summary: SimSummary,
    pub jobs: Vec<JobRecord>,
}

/// Population standard deviation of JCT per `(model_tag, N, batch_size)`
/// group, skipping groups of one, and the mean over the rest.
pub fn stability(jobs: &[JobRecord]) -> (f64, BTreeMap<String, f64>) {
    let mut groups: BTreeMap<(String, usize, String), Vec<f64>> = BTreeMap::new();
    for j in jobs.iter().filter(|j| j.error.is_none()) {
        groups
            .entry((j.model_tag.clone(), j.n, j.batch_size.clone()))
            .or_default()
            .push(j.jct);
    }
    let mut out = BTreeMap::new();
    for ((tag, n, batch), v) in groups {
        if v.len() < 2 {
            continue;
        }
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64;
        out.insert(format!("{tag}/{n}/{batch}"), var.sqrt());
    }
    let avg = if out.is_empty() {
        0.0
    } else {
        out.values().sum::<f64>() / out.len() as f64
    };
    (avg, out)
}

pub(crate) struct Tally {
    pub fragmentation: Fragmentation,
    pub placement: PlaceStats,
    pub events: u64,
    pub violations: Vec<String>,
    pub queue: Vec<QueueSample>,
}

impl SimReport {
    pub(crate) fn assemble(cfg: &SimConfig, jobs: Vec<JobRecord>, tally: Tally) -> Self {
        let done: Vec<&JobRecord> = jobs.iter().filter(|j| j.error.is_none()).collect();
        let mean = |f: fn(&JobRecord) -> f64| {
            if done.is_empty() {
                0.0
            } else {
                done.iter().map(|j| f(j)).sum::<f64>() / done.len() as f64
            }
        };
        let (stab, groups) = stability(&jobs);
        let summary = SimSummary {
            strategy: cfg.strategy,
            scheduler: cfg.scheduler,
            seed: cfg.seed,
            cluster: cfg.effective_cluster(),
            nic_gbps: cfg.nic_gbps,
            jobs: jobs.len(),
            completed: done.len(),
            rejected: jobs.len() - done.len(),
            avg_jrt: mean(|j| j.jrt),
            avg_jwt: mean(|j| j.jwt),
            avg_jct: mean(|j| j.jct),
            makespan: done.iter().map(|j| j.finish).fold(0.0, f64::max),
            stability: stab,
            stability_groups: groups,
            fragmentation: tally.fragmentation,
            placement: tally.placement,
            rewired_jobs: done.iter().filter(|j| j.rewire_delay > 0.0).count(),
            events: tally.events,
            invariant_violations: tally.violations,
            queue: tally.queue,
        };
        Self { summary, jobs }
    }

    pub fn jobs_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "job_id",
            "model_tag",
            "batch_size",
            "N",
            "allocated",
            "kind",
            "arrival",
            "start",
            "finish",
            "jwt",
            "jrt",
            "jct",
            "rewire_delay",
            "ideal_jrt",
            "error",
        ])
        .expect("in-memory write");
        for j in &self.jobs {
            let kind = j
                .kind
                .map(|k| serde_json::to_value(k).expect("enum").as_str().unwrap_or("").to_string())
                .unwrap_or_default();
            w.write_record([
                j.job_id.to_string(),
                j.model_tag.clone(),
                j.batch_size.clone(),
                j.n.to_string(),
                j.allocated.to_string(),
                kind,
                format!("{:.6}", j.arrival),
                format!("{:.6}", j.start),
                format!("{:.6}", j.finish),
                format!("{:.6}", j.jwt),
                format!("{:.6}", j.jrt),
                format!("{:.6}", j.jct),
                format!("{:.6}", j.rewire_delay),
                format!("{:.6}", j.ideal_jrt),
                j.error.clone().unwrap_or_default(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    pub fn summary_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.summary).expect("serializable");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(tag: &str, n: usize, jct: f64) -> JobRecord {
        JobRecord {
            job_id: 0,
            model_tag: tag.into(),
            batch_size: "32".into(),
            n,
            allocated: n,
            kind: None,
            arrival: 0.0,
            start: 0.0,
            finish: jct,
            jwt: 0.0,
            jrt: jct,
            jct,
            rewire_delay: 0.0,
            ideal_jrt: jct,
            error: None,
        }
    }

    #[test]
    fn stability_by_hand() {
        let jobs = vec![rec("bert", 8, 10.0), rec("bert", 8, 14.0), rec("vgg", 4, 99.0)];
        let (avg, groups) = stability(&jobs);
        assert_eq!(groups.len(), 1);
        assert!((avg - 2.0).abs() < 1e-12);
        let same = vec![rec("a", 2, 5.0), rec("a", 2, 5.0)];
        assert_eq!(stability(&same).0, 0.0);
    }
}
