//! Per-job communication cost under max-min sharing.

use std::collections::BTreeMap;

use super::maxmin::{max_min_share, MmFlow};
use crate::patterns::CommSchedule;
use crate::routing::FlowRoute;

/// `max(compute, (1 - alpha) comm) + alpha comm`: the coverable share of
/// communication hides behind compute, the rest never does.
pub fn iteration_time(compute: f64, alpha: f64, comm: f64) -> f64 {
    compute.max((1.0 - alpha) * comm) + alpha * comm
}

/// Steps with identical flows, merged. `flows` are rank pairs with bytes.
#[derive(Clone, Debug, PartialEq)]
pub struct StepPattern {
    /// Index of the first step with this pattern.
    pub step: usize,
    pub flows: Vec<(usize, usize, f64)>,
    pub repeat: usize,
}

pub fn distinct_patterns(sched: &CommSchedule) -> Vec<StepPattern> {
    let mut index: BTreeMap<Vec<(usize, usize, u64)>, usize> = BTreeMap::new();
    let mut out: Vec<StepPattern> = Vec::new();
    for (si, step) in sched.steps.iter().enumerate() {
        let key: Vec<(usize, usize, u64)> = step.flows.iter().map(|f| (f.src, f.dst, f.bytes.to_bits())).collect();
        match index.get(&key) {
            Some(&i) => out[i].repeat += 1,
            None => {
                index.insert(key, out.len());
                out.push(StepPattern {
                    step: si,
                    flows: step.flows.iter().map(|f| (f.src, f.dst, f.bytes)).collect(),
                    repeat: 1,
                });
            }
        }
    }
    out
}

/// Contention-free time: every flow between different servers at NIC rate,
/// ranks packed `per_server` to a server in order.
pub fn ideal_comm_time(patterns: &[StepPattern], per_server: usize, nic_bytes_per_s: f64) -> f64 {
    patterns
        .iter()
        .map(|p| {
            let worst = p
                .flows
                .iter()
                .filter(|f| f.0 / per_server != f.1 / per_server)
                .map(|f| f.2)
                .fold(0.0, f64::max);
            p.repeat as f64 * worst / nic_bytes_per_s
        })
        .sum()
}

/// One routed step pattern: bytes and dense link indices per network flow.
#[derive(Clone, Debug, PartialEq)]
pub struct RoutedPattern {
    pub repeat: usize,
    pub flows: Vec<(f64, Vec<usize>)>,
}

impl RoutedPattern {
    pub fn new(pattern: &StepPattern, routes: &[FlowRoute], index: impl Fn(&FlowRoute) -> Vec<usize>) -> Self {
        Self {
            repeat: pattern.repeat,
            flows: pattern
                .flows
                .iter()
                .zip(routes)
                .filter(|(_, r)| !r.nvlink)
                .map(|(f, r)| (f.2, index(r)))
                .collect(),
        }
    }
}

/// Outcome of timing one job against the current background.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CommTiming {
    pub seconds: f64,
    /// Highest `sum of rates / capacity` seen on any link.
    pub peak_utilization: f64,
}

/// Per-iteration communication time. `background(link)` is the number of
/// other flows sharing `link`; each is modelled as a one-link elastic flow.
pub fn communication_time(
    patterns: &[RoutedPattern],
    capacity: f64,
    background: impl Fn(usize) -> u32,
) -> CommTiming {
    let mut total = 0.0;
    let mut peak: f64 = 0.0;
    let mut local: BTreeMap<usize, usize> = BTreeMap::new();
    let mut mm: Vec<MmFlow> = Vec::new();
    for p in patterns {
        if p.flows.is_empty() {
            continue;
        }
        local.clear();
        mm.clear();
        for (_, links) in &p.flows {
            let path = links
                .iter()
                .map(|&l| {
                    let next = local.len();
                    *local.entry(l).or_insert(next)
                })
                .collect();
            mm.push(MmFlow {
                path,
                demand: f64::INFINITY,
            });
        }
        let own = mm.len();
        for (&l, &li) in &local {
            for _ in 0..background(l) {
                mm.push(MmFlow {
                    path: vec![li],
                    demand: f64::INFINITY,
                });
            }
        }
        let caps = vec![capacity; local.len()];
        let rates = max_min_share(&mm, &caps);
        let mut load = vec![0.0; local.len()];
        for (f, r) in mm.iter().zip(&rates) {
            for &l in &f.path {
                load[l] += r;
            }
        }
        for l in load {
            peak = peak.max(l / capacity);
        }
        let worst = p.flows[..own.min(p.flows.len())]
            .iter()
            .zip(&rates[..own])
            .map(|((bytes, _), r)| bytes / r)
            .fold(0.0, f64::max);
        total += p.repeat as f64 * worst;
    }
    CommTiming {
        seconds: total,
        peak_utilization: peak,
    }
}

/// For each link, the most flows any single pattern puts on it.
pub fn peak_link_counts(patterns: &[RoutedPattern], keep: impl Fn(usize) -> bool) -> BTreeMap<usize, u32> {
    let mut peak: BTreeMap<usize, u32> = BTreeMap::new();
    let mut count: BTreeMap<usize, u32> = BTreeMap::new();
    for p in patterns {
        count.clear();
        for (_, links) in &p.flows {
            for &l in links {
                if keep(l) {
                    *count.entry(l).or_default() += 1;
                }
            }
        }
        for (&l, &c) in &count {
            let e = peak.entry(l).or_default();
            *e = (*e).max(c);
        }
    }
    peak
}
