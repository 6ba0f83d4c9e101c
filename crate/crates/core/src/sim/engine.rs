use std::cell::RefCell;
use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::rc::Rc;

use super::comm::{
    communication_time, distinct_patterns, ideal_comm_time, iteration_time, peak_link_counts, RoutedPattern,
    StepPattern,
};
use super::report::{Fragmentation, JobRecord, QueueSample, SimReport, Tally};
use super::trace::TraceJob;
use super::{SchedulerPolicy, SimConfig};
use crate::error::{ConfigError, RoutingError};
use crate::patterns::{generate, CommSchedule, CommStep, Collective};
use crate::placement::{commit, place, JobRequest, PlaceOptions, PlaceStats, Strategy, VirtualClos};
use crate::routing::{
    balanced_route_pairs, ecmp_route_pairs, physical_source_route, source_route, FlowRoute, LinkId,
    SourceRoutingMap,
};
use crate::topology::{ClusterConfig, JobId, PhysicalCluster};

const FINISH: u8 = 0;
const ARRIVAL: u8 = 1;
const SAMPLE: u8 = 2;

#[derive(Clone, Copy, Debug)]
struct Event {
    time: f64,
    kind: u8,
    job: usize,
    version: u64,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.kind.cmp(&other.kind))
            .then(self.job.cmp(&other.job))
            .then(self.version.cmp(&other.version))
    }
}

struct Schedule {
    steps: CommSchedule,
    patterns: Vec<StepPattern>,
    /// Routing maps by allocation layout (see `layout_key`).
    maps: RefCell<BTreeMap<Vec<usize>, SourceRoutingMap>>,
}

/// Everything `SourceRoutingMap::for_steps` looks at: the shape, and which
/// virtual leaves share a physical leaf.
fn layout_key(alloc: &VirtualClos) -> Vec<usize> {
    let mut seen: Vec<usize> = Vec::new();
    let mut key = vec![alloc.l, alloc.s, alloc.gpus.len(), alloc.ranks];
    for v in &alloc.vleaves {
        let id = seen.iter().position(|&x| x == v.leaf).unwrap_or_else(|| {
            seen.push(v.leaf);
            seen.len() - 1
        });
        key.push(id);
    }
    key
}

struct Running {
    alloc: VirtualClos,
    routed: Vec<RoutedPattern>,
    /// Most flows this job puts on each fabric link at once.
    footprint: BTreeMap<usize, u32>,
    ideal_comm: f64,
    start: f64,
    /// Progress is accounted up to here.
    last: f64,
    remaining: f64,
    iter_time: f64,
    version: u64,
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    cluster_cfg: ClusterConfig,
    trace: &'a [TraceJob],
    cluster: PhysicalCluster,
    empty: PhysicalCluster,
    opts: PlaceOptions,
    records: Vec<Option<JobRecord>>,
    ideal_jrt: Vec<f64>,
    queue: Vec<usize>,
    running: BTreeMap<usize, Running>,
    link_load: Vec<u32>,
    link_jobs: Vec<BTreeSet<usize>>,
    fabric_links: usize,
    heap: BinaryHeap<Reverse<Event>>,
    state_version: u64,
    failed_sizes: BTreeSet<usize>,
    frag_counted: Vec<Option<u64>>,
    placeable: BTreeMap<usize, bool>,
    schedules: BTreeMap<(Collective, usize, u64), Option<Rc<Schedule>>>,
    dirty: BTreeSet<usize>,
    pending_arrivals: usize,
    frag: Fragmentation,
    stats: PlaceStats,
    events: u64,
    violations: Vec<String>,
    samples: Vec<QueueSample>,
}

/// Simulate `trace` under `cfg`. Jobs that can never fit get an error record
/// and the rest of the trace carries on.
pub fn run(trace: &[TraceJob], cfg: &SimConfig) -> Result<SimReport, ConfigError> {
    if trace.is_empty() {
        return Err(ConfigError::Invalid {
            field: "trace".into(),
            message: "trace is empty".into(),
        });
    }
    cfg.validate().map_err(|message| ConfigError::Invalid {
        field: "simulation".into(),
        message,
    })?;
    for (i, j) in trace.iter().enumerate() {
        j.validate().map_err(|message| ConfigError::Invalid {
            field: format!("trace[{i}]"),
            message,
        })?;
    }
    let cluster_cfg = cfg.effective_cluster();
    let cluster = PhysicalCluster::build(cluster_cfg.clone()).map_err(|e| ConfigError::Invalid {
        field: "cluster".into(),
        message: e.to_string(),
    })?;
    let fabric_links = 2 * cluster_cfg.leaves * cluster_cfg.uplinks_per_leaf();
    let mut sim = Sim {
        cfg,
        trace,
        empty: cluster.clone(),
        cluster,
        opts: PlaceOptions {
            time_budget: cfg.ilp_time_budget,
        },
        records: vec![None; trace.len()],
        ideal_jrt: vec![0.0; trace.len()],
        queue: Vec::new(),
        running: BTreeMap::new(),
        link_load: vec![0; fabric_links],
        link_jobs: vec![BTreeSet::new(); fabric_links],
        fabric_links,
        heap: BinaryHeap::new(),
        state_version: 0,
        failed_sizes: BTreeSet::new(),
        frag_counted: vec![None; trace.len()],
        placeable: BTreeMap::new(),
        schedules: BTreeMap::new(),
        dirty: BTreeSet::new(),
        pending_arrivals: trace.len(),
        frag: Fragmentation::default(),
        stats: PlaceStats::default(),
        events: 0,
        violations: Vec::new(),
        samples: Vec::new(),
        cluster_cfg,
    };
    sim.main_loop();
    let jobs = sim.records.into_iter().map(|r| r.expect("every job resolved")).collect();
    Ok(SimReport::assemble(
        cfg,
        jobs,
        Tally {
            fragmentation: sim.frag,
            placement: sim.stats,
            events: sim.events,
            violations: sim.violations,
            queue: sim.samples,
        },
    ))
}

impl<'a> Sim<'a> {
    fn push(&mut self, time: f64, kind: u8, job: usize, version: u64) {
        self.heap.push(Reverse(Event {
            time,
            kind,
            job,
            version,
        }));
    }

    fn main_loop(&mut self) {
        for (i, j) in self.trace.iter().enumerate() {
            self.push(j.arrival_time, ARRIVAL, i, 0);
        }
        self.push(0.0, SAMPLE, 0, 0);
        while let Some(Reverse(first)) = self.heap.pop() {
            let now = first.time;
            let mut batch = vec![first];
            while let Some(Reverse(e)) = self.heap.peek() {
                if e.time.total_cmp(&now) != Ordering::Equal {
                    break;
                }
                batch.push(self.heap.pop().expect("peeked").0);
            }
            for e in batch {
                self.events += 1;
                match e.kind {
                    FINISH => self.finish(e, now),
                    ARRIVAL => self.arrive(e.job, now),
                    _ => self.sample(now),
                }
            }
            self.schedule(now);
            self.refresh(now);
            if self.cfg.check_invariants {
                self.check(now);
            }
        }
    }

    fn sample(&mut self, now: f64) {
        self.samples.push(QueueSample {
            time: now,
            queued: self.queue.len(),
            running: self.running.len(),
            idle_gpus: self.cluster.idle_gpus(),
        });
        if self.pending_arrivals > 0 || !self.queue.is_empty() || !self.running.is_empty() {
            self.push(now + self.cfg.queue_sample_interval, SAMPLE, 0, 0);
        }
    }

    fn reject(&mut self, idx: usize, now: f64, error: String) {
        let j = &self.trace[idx];
        self.records[idx] = Some(JobRecord {
            job_id: j.job_id,
            model_tag: j.model_tag.clone(),
            batch_size: j.batch_size.clone(),
            n: j.n,
            allocated: 0,
            kind: None,
            arrival: j.arrival_time,
            start: now,
            finish: now,
            jwt: 0.0,
            jrt: 0.0,
            jct: 0.0,
            rewire_delay: 0.0,
            ideal_jrt: 0.0,
            error: Some(error),
        });
    }

    fn schedule_for(&mut self, job: &TraceJob) -> Result<Option<Rc<Schedule>>, String> {
        let key = (job.collective, job.n, job.comm_bytes_per_iter.to_bits());
        if let Some(s) = self.schedules.get(&key) {
            return Ok(s.clone());
        }
        let s = if job.n < 2 || job.comm_bytes_per_iter == 0.0 {
            None
        } else {
            let steps = generate(job.collective, job.n, self.cluster_cfg.gpus_per_server, job.comm_bytes_per_iter)
                .map_err(|e| e.to_string())?;
            let patterns = distinct_patterns(&steps);
            Some(Rc::new(Schedule {
                steps,
                patterns,
                maps: RefCell::new(BTreeMap::new()),
            }))
        };
        self.schedules.insert(key, s.clone());
        Ok(s)
    }

    fn ideal_comm(&self, sched: &Option<Rc<Schedule>>) -> f64 {
        sched.as_ref().map_or(0.0, |s| {
            ideal_comm_time(&s.patterns, self.cluster_cfg.gpus_per_server, self.cfg.nic_bytes_per_s())
        })
    }

    fn arrive(&mut self, idx: usize, now: f64) {
        self.pending_arrivals -= 1;
        let job = &self.trace[idx];
        if job.n > self.cluster_cfg.total_gpus() {
            let msg = format!("needs {} GPUs, cluster has {}", job.n, self.cluster_cfg.total_gpus());
            return self.reject(idx, now, msg);
        }
        let sched = match self.schedule_for(job) {
            Ok(s) => s,
            Err(e) => return self.reject(idx, now, e),
        };
        let fits = match self.placeable.get(&job.n) {
            Some(&f) => f,
            None => {
                let mut scratch = PlaceStats::default();
                let req = JobRequest {
                    job: JobId(u64::MAX),
                    gpus: job.n,
                };
                let f = place(self.cfg.strategy, &self.empty, req, &self.opts, &mut scratch).is_some();
                self.placeable.insert(job.n, f);
                f
            }
        };
        if !fits {
            let msg = format!("{} cannot place {} GPUs even on an idle cluster", self.cfg.strategy, job.n);
            return self.reject(idx, now, msg);
        }
        let ideal = self.ideal_comm(&sched);
        self.ideal_jrt[idx] =
            job.iterations as f64 * iteration_time(job.compute_time_per_iter, job.alpha, ideal);
        self.queue.push(idx);
    }

    fn deadline(&self, idx: usize) -> f64 {
        self.trace[idx].arrival_time + self.cfg.edf_slack * self.ideal_jrt[idx]
    }

    fn schedule(&mut self, now: f64) {
        if self.queue.is_empty() {
            return;
        }
        let mut order = self.queue.clone();
        match self.cfg.scheduler {
            SchedulerPolicy::Fifo => {}
            SchedulerPolicy::Edf => order.sort_by(|&a, &b| {
                self.deadline(a)
                    .total_cmp(&self.deadline(b))
                    .then(self.trace[a].arrival_time.total_cmp(&self.trace[b].arrival_time))
                    .then(a.cmp(&b))
            }),
            SchedulerPolicy::Ff => order.sort_by(|&a, &b| {
                self.trace[a]
                    .n
                    .cmp(&self.trace[b].n)
                    .then(self.trace[a].arrival_time.total_cmp(&self.trace[b].arrival_time))
                    .then(a.cmp(&b))
            }),
        }
        let mut first_failure = true;
        let mut started = BTreeSet::new();
        for idx in order {
            let n = self.trace[idx].n;
            let alloc = if self.failed_sizes.contains(&n) || n > self.cluster.idle_gpus() {
                None
            } else {
                let req = JobRequest {
                    job: JobId(self.trace[idx].job_id),
                    gpus: n,
                };
                let a = place(self.cfg.strategy, &self.cluster, req, &self.opts, &mut self.stats);
                if a.is_none() {
                    self.failed_sizes.insert(n);
                }
                a
            };
            match alloc {
                Some(a) => {
                    self.start(idx, a, now);
                    started.insert(idx);
                }
                None => {
                    if first_failure {
                        first_failure = false;
                        if self.frag_counted[idx] != Some(self.state_version) {
                            self.frag_counted[idx] = Some(self.state_version);
                            if self.cluster.idle_gpus() >= n {
                                self.frag.network_caused += 1;
                            } else {
                                self.frag.gpu_caused += 1;
                            }
                        }
                    }
                    if self.cfg.scheduler == SchedulerPolicy::Fifo {
                        break;
                    }
                }
            }
        }
        if !started.is_empty() {
            self.queue.retain(|i| !started.contains(i));
        }
    }

    fn bump_state(&mut self) {
        self.state_version += 1;
        self.failed_sizes.clear();
    }

    fn start(&mut self, idx: usize, alloc: VirtualClos, now: f64) {
        let delay = match commit(&mut self.cluster, &alloc) {
            Ok(d) => d,
            Err(e) => {
                self.violations.push(format!("job {}: commit failed: {e}", self.trace[idx].job_id));
                return self.reject(idx, now, e.to_string());
            }
        };
        self.bump_state();
        let job = &self.trace[idx];
        let sched = self.schedule_for(job).ok().flatten();
        let routed = match self.route(idx, &alloc, &sched) {
            Ok(r) => r,
            Err(e) => {
                self.violations.push(format!("job {}: routing failed: {e}", job.job_id));
                let _ = self.cluster.release(alloc.job);
                return self.reject(idx, now, e.to_string());
            }
        };
        let fabric = self.fabric_links;
        let footprint = peak_link_counts(&routed, |l| l < fabric);
        for (&l, &c) in &footprint {
            self.link_load[l] += c;
            for &other in &self.link_jobs[l] {
                self.dirty.insert(other);
            }
            self.link_jobs[l].insert(idx);
        }
        let start = now + delay;
        let ideal_comm = self.ideal_comm(&sched);
        self.records[idx] = Some(JobRecord {
            job_id: job.job_id,
            model_tag: job.model_tag.clone(),
            batch_size: job.batch_size.clone(),
            n: job.n,
            allocated: alloc.gpus.len(),
            kind: Some(alloc.kind),
            arrival: job.arrival_time,
            start,
            finish: f64::NAN,
            jwt: start - job.arrival_time,
            jrt: f64::NAN,
            jct: f64::NAN,
            rewire_delay: delay,
            ideal_jrt: self.ideal_jrt[idx],
            error: None,
        });
        self.running.insert(
            idx,
            Running {
                alloc,
                routed,
                footprint,
                ideal_comm,
                start,
                last: start,
                remaining: job.iterations as f64,
                iter_time: f64::NAN,
                version: 0,
            },
        );
        self.dirty.insert(idx);
    }

    /// Link paths of every distinct step pattern of a freshly placed job.
    fn route(
        &self,
        idx: usize,
        alloc: &VirtualClos,
        sched: &Option<Rc<Schedule>>,
    ) -> Result<Vec<RoutedPattern>, RoutingError> {
        let Some(sched) = sched else {
            return Ok(Vec::new());
        };
        let cfg = &self.cluster_cfg;
        let to_index = |r: &FlowRoute| r.links.iter().map(|l| l.index(cfg)).collect::<Vec<usize>>();
        let ranks = alloc.rank_gpus();
        let per_pattern: Vec<Vec<FlowRoute>> = match self.cfg.strategy {
            Strategy::Best => return Ok(Vec::new()),
            Strategy::VClos | Strategy::OcsVClos if alloc.holds_links() => {
                let steps: Vec<&CommStep> = sched.patterns.iter().map(|p| &sched.steps.steps[p.step]).collect();
                let map = sched
                    .maps
                    .borrow_mut()
                    .entry(layout_key(alloc))
                    .or_insert_with(|| {
                        SourceRoutingMap::for_steps(alloc, &steps, cfg).unwrap_or_else(|| SourceRoutingMap::identity(alloc))
                    })
                    .clone();
                steps
                    .iter()
                    .map(|step| source_route(step, alloc, &map, cfg))
                    .collect::<Result<_, _>>()?
            }
            Strategy::VClos | Strategy::OcsVClos | Strategy::SourceRouting | Strategy::OcsRelax => sched
                .patterns
                .iter()
                .map(|p| physical_source_route(&sched.steps.steps[p.step], ranks, &self.cluster))
                .collect::<Result<_, _>>()?,
            Strategy::Ecmp | Strategy::BalancedEcmp => {
                // one connection per GPU pair, fixed for the job's lifetime
                let mut pairs: Vec<(usize, usize)> = Vec::new();
                let mut seen = BTreeSet::new();
                for p in &sched.patterns {
                    for &(s, d, _) in &p.flows {
                        let pair = (ranks[s], ranks[d]);
                        if seen.insert(pair) {
                            pairs.push(pair);
                        }
                    }
                }
                let seed = self.cfg.seed ^ self.trace[idx].job_id.wrapping_mul(0x9E37_79B9_7F4A_7C15);
                let routes = if self.cfg.strategy == Strategy::Ecmp {
                    ecmp_route_pairs(&pairs, &self.cluster, seed)?
                } else {
                    let mut loads = vec![0u32; LinkId::count(cfg)];
                    loads[..self.fabric_links].copy_from_slice(&self.link_load);
                    balanced_route_pairs(&pairs, &self.cluster, &mut loads, seed)?
                };
                let by_pair: BTreeMap<(usize, usize), FlowRoute> = pairs.into_iter().zip(routes).collect();
                sched
                    .patterns
                    .iter()
                    .map(|p| p.flows.iter().map(|&(s, d, _)| by_pair[&(ranks[s], ranks[d])].clone()).collect())
                    .collect()
            }
        };
        Ok(sched
            .patterns
            .iter()
            .zip(&per_pattern)
            .map(|(p, routes)| RoutedPattern::new(p, routes, to_index))
            .collect())
    }

    fn finish(&mut self, e: Event, now: f64) {
        match self.running.get(&e.job) {
            Some(r) if r.version == e.version => {}
            _ => return,
        }
        let r = self.running.remove(&e.job).expect("checked");
        self.dirty.remove(&e.job);
        for (&l, &c) in &r.footprint {
            self.link_load[l] -= c;
            self.link_jobs[l].remove(&e.job);
            for &other in &self.link_jobs[l] {
                self.dirty.insert(other);
            }
        }
        if let Err(err) = self.cluster.release(r.alloc.job) {
            self.violations.push(format!("job {}: release failed: {err}", r.alloc.job));
        }
        self.bump_state();
        let rec = self.records[e.job].as_mut().expect("started job has a record");
        rec.finish = now;
        rec.jrt = now - r.start;
        rec.jct = rec.jwt + rec.jrt;
    }

    /// Re-time every job whose links changed, carrying progress forward.
    fn refresh(&mut self, now: f64) {
        let dirty = std::mem::take(&mut self.dirty);
        let capacity = self.cfg.nic_bytes_per_s();
        let fabric = self.fabric_links;
        for idx in dirty {
            let Some(r) = self.running.get(&idx) else { continue };
            let comm = if r.routed.is_empty() {
                r.ideal_comm
            } else {
                let timing = communication_time(&r.routed, capacity, |l| {
                    if l < fabric {
                        self.link_load[l] - r.footprint.get(&l).copied().unwrap_or(0)
                    } else {
                        0
                    }
                });
                if self.cfg.check_invariants && timing.peak_utilization > 1.0 + 1e-9 {
                    self.violations.push(format!(
                        "t={now}: job {idx} link utilization {}",
                        timing.peak_utilization
                    ));
                }
                // no placement beats the packed contention-free layout
                timing.seconds.max(r.ideal_comm)
            };
            let job = &self.trace[idx];
            let iter = iteration_time(job.compute_time_per_iter, job.alpha, comm);
            let r = self.running.get_mut(&idx).expect("present");
            if now > r.last && r.iter_time.is_finite() && r.iter_time > 0.0 {
                r.remaining = (r.remaining - (now - r.last) / r.iter_time).max(0.0);
                r.last = now;
            }
            r.iter_time = iter;
            r.version += 1;
            let at = r.last + r.remaining * iter;
            let version = r.version;
            self.push(at, FINISH, idx, version);
        }
    }

    fn check(&mut self, now: f64) {
        if let Err(e) = self.cluster.check_invariants() {
            self.violations.push(format!("t={now}: {e}"));
        }
        let held: usize = self.running.values().map(|r| r.alloc.gpus.len()).sum();
        if held + self.cluster.idle_gpus() != self.cluster_cfg.total_gpus() {
            self.violations.push(format!("t={now}: {held} GPUs held but {} idle", self.cluster.idle_gpus()));
        }
        if self.cfg.strategy.reserves_links() {
            // a job may overlap its own flows (tree collectives do); jobs
            // holding circuits never share one
            if let Some(l) = self.link_jobs.iter().position(|j| j.len() > 1) {
                self.violations.push(format!(
                    "t={now}: link {:?} shared by {} jobs",
                    LinkId::from_index(&self.cluster_cfg, l),
                    self.link_jobs[l].len()
                ));
            }
        }
        if self.violations.len() > 100 {
            self.violations.truncate(100);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn job(id: u64, at: f64, n: usize, iters: u64) -> TraceJob {
        TraceJob {
            job_id: id,
            arrival_time: at,
            n,
            model_tag: "m".into(),
            collective: Collective::Ring,
            iterations: iters,
            compute_time_per_iter: 1.0,
            comm_bytes_per_iter: 1e9,
            alpha: 0.5,
            batch_size: "8".into(),
        }
    }

    fn small(strategy: Strategy) -> SimConfig {
        let mut c = SimConfig::new(ClusterConfig::new(4, 8, 4), strategy);
        c.check_invariants = true;
        c
    }

    #[test]
    fn lone_job_runs_at_ideal() {
        for s in Strategy::ALL {
            let r = run(&[job(0, 5.0, 16, 10)], &small(s)).unwrap();
            let j = &r.jobs[0];
            assert!(j.error.is_none(), "{s}: {:?}", j.error);
            assert!((j.jwt - j.rewire_delay).abs() < 1e-9, "{s}");
            assert!((j.jrt - j.ideal_jrt).abs() < 1e-6 * j.ideal_jrt, "{s}: {} vs {}", j.jrt, j.ideal_jrt);
            assert!(r.summary.invariant_violations.is_empty(), "{s}: {:?}", r.summary.invariant_violations);
        }
    }

    #[test]
    fn whole_cluster_jobs_run_back_to_back() {
        let r = run(&[job(0, 0.0, 32, 5), job(1, 0.0, 32, 5)], &small(Strategy::VClos)).unwrap();
        let (a, b) = (&r.jobs[0], &r.jobs[1]);
        assert!((b.jwt - a.jrt).abs() < 1e-9);
        assert_eq!(b.jct, b.jwt + b.jrt);
    }

    #[test]
    fn fifo_head_blocks_smaller_job() {
        let trace = [job(0, 0.0, 24, 100), job(1, 1.0, 16, 100), job(2, 2.0, 4, 100)];
        let fifo = run(&trace, &small(Strategy::Best)).unwrap();
        assert!(fifo.jobs[2].start >= fifo.jobs[1].start);
        let ff = run(&trace, &small(Strategy::Best).with_scheduler(SchedulerPolicy::Ff)).unwrap();
        assert_eq!(ff.jobs[2].jwt, 0.0);
        assert!(ff.summary.fragmentation.gpu_caused >= 1);
    }

    #[test]
    fn oversized_job_is_rejected_and_others_finish() {
        let r = run(&[job(0, 0.0, 64, 3), job(1, 0.0, 8, 3)], &small(Strategy::Ecmp)).unwrap();
        assert!(r.jobs[0].error.is_some());
        assert!(r.jobs[1].error.is_none());
        assert_eq!(r.summary.rejected, 1);
    }

    #[test]
    fn same_inputs_same_bytes() {
        let trace = super::super::synthesize_trace(&super::super::JobMix::default(), 30.0, 60, 3).unwrap();
        let trace: Vec<TraceJob> = trace.into_iter().map(|mut j| {
            j.n = j.n.min(32);
            j
        }).collect();
        for s in [Strategy::Ecmp, Strategy::BalancedEcmp, Strategy::OcsVClos] {
            let a = run(&trace, &small(s)).unwrap();
            let b = run(&trace, &small(s)).unwrap();
            assert_eq!(a.jobs_csv(), b.jobs_csv());
            assert_eq!(a.summary_json(), b.summary_json());
        }
    }

    #[test]
    fn empty_trace_is_an_error() {
        assert!(run(&[], &small(Strategy::Best)).is_err());
    }
}
