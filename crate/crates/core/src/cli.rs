//! Experiment driver behind the `vclos` binary: config files, sweeps over
//! strategies, schedulers, arrival rates and seeds, and result files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::patterns::{generate, Collective, CommStep};
use crate::placement::{Strategy, VirtualClos};
use crate::routing::{contention_report, physical_source_route, source_route, LinkId, SourceRoutingMap};
use crate::sim::{self, JobMix, SchedulerPolicy, SimConfig, SimReport, SimSummary, TraceJob};
use crate::topology::{ClusterConfig, JobId, PhysicalCluster};

pub const OUTPUT_DIR_ENV: &str = "VCLOS_OUTPUT_DIR";

fn default_schedulers() -> Vec<SchedulerPolicy> {
    vec![SchedulerPolicy::Fifo]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

fn default_count() -> usize {
    5000
}

/// Where jobs come from: a JSON-lines file, or synthesized per arrival rate
/// and seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSpec {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default)]
    pub mix: Option<JobMix>,
}

impl Default for TraceSpec {
    fn default() -> Self {
        Self {
            path: None,
            count: default_count(),
            mix: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSettings {
    pub nic_gbps: f64,
    pub queue_sample_interval: f64,
    pub edf_slack: f64,
    pub ilp_time_budget_s: f64,
    pub check_invariants: bool,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            nic_gbps: 100.0,
            queue_sample_interval: 600.0,
            edf_slack: 2.0,
            ilp_time_budget_s: 10.0,
            check_invariants: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub cluster: ClusterConfig,
    pub strategies: Vec<Strategy>,
    #[serde(default = "default_schedulers")]
    pub schedulers: Vec<SchedulerPolicy>,
    /// Mean inter-arrival times in seconds; ignored for file traces.
    #[serde(default)]
    pub lambda_values: Vec<f64>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub trace: TraceSpec,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub sim: SimSettings,
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, path: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.into(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.cluster.validate().map_err(|e| invalid("cluster", e.to_string()))?;
        if self.strategies.is_empty() {
            return Err(invalid("strategies", "list is empty"));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "list is empty"));
        }
        if self.schedulers.is_empty() {
            return Err(invalid("schedulers", "list is empty"));
        }
        if self.trace.path.is_none() {
            if self.lambda_values.is_empty() {
                return Err(invalid("lambda_values", "needed when no trace.path is given"));
            }
            if let Some(l) = self.lambda_values.iter().find(|l| !(**l > 0.0)) {
                return Err(invalid("lambda_values", format!("{l} is not positive")));
            }
            if self.trace.count == 0 {
                return Err(invalid("trace.count", "must be at least 1"));
            }
        }
        if let Some(mix) = &self.trace.mix {
            mix.validate().map_err(|m| invalid("trace.mix", m))?;
        }
        let s = &self.sim;
        if !(s.ilp_time_budget_s > 0.0 && s.ilp_time_budget_s.is_finite()) {
            return Err(invalid("sim.ilp_time_budget_s", "must be positive"));
        }
        for st in &self.strategies {
            self.sim_config(*st, SchedulerPolicy::Fifo, 0)
                .validate()
                .map_err(|m| invalid("sim", m))?;
        }
        Ok(())
    }

    pub fn sim_config(&self, strategy: Strategy, scheduler: SchedulerPolicy, seed: u64) -> SimConfig {
        let mut c = SimConfig::new(self.cluster.clone(), strategy)
            .with_scheduler(scheduler)
            .with_seed(seed);
        c.nic_gbps = self.sim.nic_gbps;
        c.queue_sample_interval = self.sim.queue_sample_interval;
        c.edf_slack = self.sim.edf_slack;
        c.ilp_time_budget = Duration::from_secs_f64(self.sim.ilp_time_budget_s);
        c.check_invariants = self.sim.check_invariants;
        c
    }

    /// Every `(strategy, scheduler, lambda, seed)` cell in a stable order.
    pub fn cells(&self) -> Vec<CellKey> {
        let lambdas: Vec<Option<f64>> = if self.trace.path.is_some() {
            vec![None]
        } else {
            self.lambda_values.iter().map(|&l| Some(l)).collect()
        };
        let mut out = Vec::new();
        for &scheduler in &self.schedulers {
            for &lambda in &lambdas {
                for &seed in &self.seeds {
                    for &strategy in &self.strategies {
                        out.push(CellKey {
                            strategy,
                            scheduler,
                            lambda,
                            seed,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub strategy: Strategy,
    pub scheduler: SchedulerPolicy,
    pub lambda: Option<f64>,
    pub seed: u64,
}

impl CellKey {
    fn lambda_label(&self) -> String {
        self.lambda.map_or_else(|| "trace".to_string(), |l| format!("{l}"))
    }

    pub fn file_stem(&self) -> String {
        format!(
            "{}_{}_lambda{}_seed{}",
            self.strategy.name(),
            self.scheduler.name(),
            self.lambda_label(),
            self.seed
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub cell: CellKey,
    pub files: Vec<PathBuf>,
    pub summary: Option<SimSummary>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub output_dir: PathBuf,
    pub cells: Vec<CellOutcome>,
    pub tables: Vec<PathBuf>,
}

impl ExperimentOutcome {
    pub fn failed(&self) -> usize {
        self.cells.iter().filter(|c| c.error.is_some()).count()
    }
}

/// Write through a sibling temporary file so readers never see half a file.
pub fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)
}

fn load_trace(spec: &TraceSpec, lambda: Option<f64>, seed: u64) -> Result<Vec<TraceJob>, String> {
    match (&spec.path, lambda) {
        (Some(p), _) => {
            let f = fs::File::open(p).map_err(|e| format!("{}: {e}", p.display()))?;
            sim::read_trace(std::io::BufReader::new(f)).map_err(|e| format!("{}: {e}", p.display()))
        }
        (None, Some(l)) => {
            let mix = spec.mix.clone().unwrap_or_default();
            sim::synthesize_trace(&mix, l, spec.count, seed)
        }
        (None, None) => Err("no trace source".into()),
    }
}

fn run_cell(cfg: &ExperimentConfig, key: CellKey, dir: &Path) -> CellOutcome {
    let result = load_trace(&cfg.trace, key.lambda, key.seed).and_then(|trace| {
        sim::run(&trace, &cfg.sim_config(key.strategy, key.scheduler, key.seed)).map_err(|e| e.to_string())
    });
    let report: SimReport = match result {
        Ok(r) => r,
        Err(e) => {
            return CellOutcome {
                cell: key,
                files: Vec::new(),
                summary: None,
                error: Some(e),
            }
        }
    };
    let stem = key.file_stem();
    let csv_path = dir.join(format!("{stem}_jobs.csv"));
    let json_path = dir.join(format!("{stem}_summary.json"));
    let written = write_atomic(&csv_path, &report.jobs_csv()).and_then(|_| write_atomic(&json_path, &report.summary_json()));
    CellOutcome {
        cell: key,
        files: vec![csv_path, json_path],
        error: written.err().map(|e| e.to_string()),
        summary: Some(report.summary),
    }
}

/// Run every cell in parallel and write the per-cell files, plus combined
/// tables when there is more than one cell.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome, ConfigError> {
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|source| ConfigError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let cells: Vec<CellOutcome> = cfg.cells().into_par_iter().map(|k| run_cell(cfg, k, &dir)).collect();
    let mut tables = Vec::new();
    if cells.len() > 1 {
        for (name, body) in combined_tables(cfg, &cells) {
            let p = dir.join(name);
            write_atomic(&p, &body).map_err(|source| ConfigError::Io {
                path: p.display().to_string(),
                source,
            })?;
            tables.push(p);
        }
    }
    Ok(ExperimentOutcome {
        output_dir: dir,
        cells,
        tables,
    })
}

fn csv_string(rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

/// `cells.csv` with one row per cell, then seed-averaged tables laid out
/// with one row per (scheduler, lambda) and one column per strategy.
fn combined_tables(cfg: &ExperimentConfig, cells: &[CellOutcome]) -> Vec<(&'static str, String)> {
    let mut rows = vec![[
        "strategy",
        "scheduler",
        "lambda",
        "seed",
        "avg_jrt",
        "avg_jwt",
        "avg_jct",
        "stability",
        "gpu_fragmentation",
        "network_fragmentation",
        "rejected",
        "error",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect::<Vec<_>>()];
    type Key = (SchedulerPolicy, String);
    let mut jct: BTreeMap<Key, BTreeMap<Strategy, Vec<f64>>> = BTreeMap::new();
    let mut frag: BTreeMap<Key, BTreeMap<Strategy, Vec<(u64, u64)>>> = BTreeMap::new();
    for c in cells {
        let k = c.cell;
        let lambda = k.lambda_label();
        let mut row = vec![k.strategy.name().to_string(), k.scheduler.name().to_string(), lambda.clone(), k.seed.to_string()];
        match &c.summary {
            Some(s) => {
                row.extend([
                    format!("{:.3}", s.avg_jrt),
                    format!("{:.3}", s.avg_jwt),
                    format!("{:.3}", s.avg_jct),
                    format!("{:.3}", s.stability),
                    s.fragmentation.gpu_caused.to_string(),
                    s.fragmentation.network_caused.to_string(),
                    s.rejected.to_string(),
                ]);
                jct.entry((k.scheduler, lambda.clone()))
                    .or_default()
                    .entry(k.strategy)
                    .or_default()
                    .push(s.avg_jct);
                frag.entry((k.scheduler, lambda))
                    .or_default()
                    .entry(k.strategy)
                    .or_default()
                    .push((s.fragmentation.gpu_caused, s.fragmentation.network_caused));
            }
            None => row.extend(std::iter::repeat(String::new()).take(7)),
        }
        row.push(c.error.clone().unwrap_or_default());
        rows.push(row);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let mut jct_rows = vec![{
        let mut h = vec!["scheduler".to_string(), "lambda".to_string()];
        h.extend(cfg.strategies.iter().map(|s| s.name().to_string()));
        h
    }];
    for ((sched, lambda), by) in &jct {
        let mut r = vec![sched.name().to_string(), lambda.clone()];
        r.extend(cfg.strategies.iter().map(|s| by.get(s).map_or(String::new(), |v| format!("{:.1}", mean(v)))));
        jct_rows.push(r);
    }
    let mut frag_rows = vec![{
        let mut h = vec!["scheduler".to_string(), "lambda".to_string()];
        for s in &cfg.strategies {
            h.push(format!("{}_gpu", s.name()));
            h.push(format!("{}_network", s.name()));
        }
        h
    }];
    for ((sched, lambda), by) in &frag {
        let mut r = vec![sched.name().to_string(), lambda.clone()];
        for s in &cfg.strategies {
            match by.get(s) {
                Some(v) => {
                    let g: Vec<f64> = v.iter().map(|x| x.0 as f64).collect();
                    let n: Vec<f64> = v.iter().map(|x| x.1 as f64).collect();
                    r.push(format!("{:.1}", mean(&g)));
                    r.push(format!("{:.1}", mean(&n)));
                }
                None => r.extend([String::new(), String::new()]),
            }
        }
        frag_rows.push(r);
    }
    vec![
        ("cells.csv", csv_string(rows)),
        ("jct_table.csv", csv_string(jct_rows)),
        ("fragmentation_table.csv", csv_string(frag_rows)),
    ]
}

/// Outcome of routing every step of a collective over a contiguous Clos.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub collective: Collective,
    pub ranks: usize,
    pub leaves: usize,
    pub spines: usize,
    pub gpus_per_server: usize,
    pub steps: usize,
    /// Most flows on one fabric link in any step.
    pub max: usize,
    pub bound: usize,
    /// First step reaching `max` when it exceeds one, with the link.
    pub witness: Option<Witness>,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub step: usize,
    pub link: LinkId,
    pub flows: Vec<(usize, usize)>,
}

/// Largest of 8, 4, 2, 1 dividing `s`.
pub fn default_gpus_per_server(s: usize) -> usize {
    [8, 4, 2, 1].into_iter().find(|t| s % t == 0).unwrap_or(1)
}

/// Source-route `collective` on `ranks` GPUs packed into `leaves` leaves of
/// `ranks / leaves` GPUs each, and report the worst link count.
pub fn verify_collective(
    collective: Collective,
    ranks: usize,
    leaves: usize,
    gpus_per_server: Option<usize>,
) -> Result<VerifyReport, String> {
    if leaves == 0 || ranks % leaves != 0 {
        return Err(format!("{ranks} ranks do not split evenly over {leaves} leaves"));
    }
    let s = ranks / leaves;
    let t = gpus_per_server.unwrap_or_else(|| default_gpus_per_server(s));
    let cluster = PhysicalCluster::build(ClusterConfig::new(leaves, s, t)).map_err(|e| e.to_string())?;
    let alloc = VirtualClos::whole_cluster(&cluster, JobId(0));
    let sched = generate(collective, ranks, t, 1.0).map_err(|e| e.to_string())?;
    let steps: Vec<&CommStep> = sched.steps.iter().collect();
    let map = SourceRoutingMap::for_steps(&alloc, &steps, cluster.config())
        .unwrap_or_else(|| SourceRoutingMap::identity(&alloc));
    let mut max = 0;
    let mut witness = None;
    for (i, step) in sched.steps.iter().enumerate() {
        let routes = source_route(step, &alloc, &map, cluster.config()).map_err(|e| e.to_string())?;
        let rep = contention_report(&routes);
        if rep.max > max {
            max = rep.max;
            if max > 1 {
                witness = rep.per_link.iter().find(|(_, &c)| c == max).map(|(&link, _)| Witness {
                    step: i,
                    link,
                    flows: routes
                        .iter()
                        .filter(|r| r.links.contains(&link))
                        .map(|r| (r.src, r.dst))
                        .collect(),
                });
            }
        }
    }
    let bound = if collective == Collective::DoubleBinaryTree { 3 } else { 1 };
    Ok(VerifyReport {
        collective,
        ranks,
        leaves,
        spines: s,
        gpus_per_server: t,
        steps: sched.steps.len(),
        max,
        bound,
        witness,
        pass: max <= bound,
    })
}

/// Two jobs on shared leaves: GPU 0 (leaf 0) sends to GPU 2 and GPU 4
/// (leaf 2) sends to GPU 3, both from position 0 into leaf 1. Spine-index
/// routing sends both down the same spine-0 link.
pub fn adversarial_two_jobs() -> Result<VerifyReport, String> {
    let cluster = PhysicalCluster::build(ClusterConfig::new(3, 2, 1)).map_err(|e| e.to_string())?;
    let ranks: Vec<usize> = (0..6).collect();
    let step = crate::patterns::CommStep {
        step_index: 0,
        flows: [(0, 2), (4, 3)]
            .iter()
            .map(|&(src, dst)| crate::patterns::Flow {
                src,
                dst,
                bytes: 1.0,
                intra_server: false,
                op: crate::patterns::FlowOp::Copy,
                chunks: 0..1,
            })
            .collect(),
    };
    let routes = physical_source_route(&step, &ranks, &cluster).map_err(|e| e.to_string())?;
    let rep = contention_report(&routes);
    let witness = rep.per_link.iter().find(|(_, &c)| c == rep.max && c > 1).map(|(&link, _)| Witness {
        step: 0,
        link,
        flows: routes.iter().filter(|r| r.links.contains(&link)).map(|r| (r.src, r.dst)).collect(),
    });
    Ok(VerifyReport {
        collective: Collective::Pipeline,
        ranks: 4,
        leaves: 3,
        spines: 2,
        gpus_per_server: 1,
        steps: 1,
        max: rep.max,
        bound: 1,
        witness,
        pass: rep.max <= 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
strategies = ["best", "vclos"]
seeds = [1]
lambda_values = [40.0]
output_dir = "unused"

[cluster]
leaves = 4
spines = 8
gpus_per_server = 4

[trace]
count = 30
"#;

    #[test]
    fn parses_and_expands_cells() {
        let cfg = ExperimentConfig::from_toml(SMALL, "x.toml").unwrap();
        assert_eq!(cfg.cells().len(), 2);
        assert_eq!(cfg.schedulers, vec![SchedulerPolicy::Fifo]);
        assert_eq!(cfg.cells()[1].file_stem(), "vclos_fifo_lambda40_seed1");
    }

    #[test]
    fn unknown_field_names_line() {
        let text = SMALL.replace("seeds = [1]", "seeds = [1]\nbogus = 3");
        let err = ExperimentConfig::from_toml(&text, "x.toml").unwrap_err().to_string();
        assert!(err.contains("bogus") && err.contains("line"), "{err}");
    }

    #[test]
    fn empty_strategy_list_rejected() {
        let text = SMALL.replace(r#"["best", "vclos"]"#, "[]");
        let err = ExperimentConfig::from_toml(&text, "x.toml").unwrap_err().to_string();
        assert!(err.contains("strategies"), "{err}");
    }

    #[test]
    fn ring_passes_and_adversarial_fails() {
        let r = verify_collective(Collective::Ring, 64, 8, None).unwrap();
        assert!(r.pass && r.max == 1);
        let a = adversarial_two_jobs().unwrap();
        assert!(!a.pass);
        let w = a.witness.unwrap();
        assert_eq!(w.flows.len(), 2);
        assert!(matches!(w.link, LinkId::Down(_)));
    }
}
