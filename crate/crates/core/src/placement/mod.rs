//! Job placement: locality stages, the vClos search, and the OCS variants.

pub mod ilp;
mod ocs;
mod stages;
mod vclos;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::TopologyError;
use crate::topology::{ClusterConfig, JobId, OcsMove, PhysicalCluster, Reservation};

pub use ilp::{ilp_solve, Constraint, IntegerProgram, Sense, SolveOutcome, Var};
pub use ocs::{ocs_direct_pair, ocs_find_clos, ocs_single_spine, ocs_stage2, plan_rewire, OcsProgram};
pub use stages::{scatter_gpus, spread_servers, stage0, stage1};
pub use vclos::{build_vclos_program, find_vclos, VclosProgram};

/// Placement and routing policy, one per compared system.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "ecmp")]
    Ecmp,
    #[serde(rename = "balanced")]
    BalancedEcmp,
    #[serde(rename = "sr")]
    SourceRouting,
    #[serde(rename = "best")]
    Best,
    #[serde(rename = "vclos")]
    VClos,
    #[serde(rename = "ocs-vclos")]
    OcsVClos,
    #[serde(rename = "ocs-relax")]
    OcsRelax,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::Ecmp,
        Strategy::BalancedEcmp,
        Strategy::SourceRouting,
        Strategy::Best,
        Strategy::VClos,
        Strategy::OcsVClos,
        Strategy::OcsRelax,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Ecmp => "ecmp",
            Strategy::BalancedEcmp => "balanced",
            Strategy::SourceRouting => "sr",
            Strategy::Best => "best",
            Strategy::VClos => "vclos",
            Strategy::OcsVClos => "ocs-vclos",
            Strategy::OcsRelax => "ocs-relax",
        }
    }

    /// Strategies that run on an OCS-equipped fabric.
    pub fn uses_ocs(self) -> bool {
        matches!(self, Strategy::OcsVClos | Strategy::OcsRelax)
    }

    /// Strategies that hold circuits exclusively for a job.
    pub fn reserves_links(self) -> bool {
        matches!(self, Strategy::VClos | Strategy::OcsVClos)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == key)
            .or(match key.as_str() {
                "balanced-ecmp" => Some(Strategy::BalancedEcmp),
                "source-routing" => Some(Strategy::SourceRouting),
                "ocsvclos" => Some(Strategy::OcsVClos),
                "ocsrelax" => Some(Strategy::OcsRelax),
                _ => None,
            })
            .ok_or_else(|| format!("unknown strategy `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AllocKind {
    SingleServer,
    SingleLeaf,
    /// `l` leaves by `s` spines over static wiring.
    VClos,
    /// Clos built on top of an OCS reconfiguration.
    OcsVClos,
    /// Two leaves joined by leaf-to-leaf circuits.
    DirectPair,
    /// Every GPU owns a circuit into one shared spine.
    SingleSpine,
    /// Whole servers over several leaves, no circuits held.
    Spread,
    /// Arbitrary idle GPUs, no circuits held.
    Scattered,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum UplinkEnd {
    Spine(usize),
    /// Leaf-to-leaf circuit; holds the far leaf port.
    Leaf(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Uplink {
    pub port: usize,
    pub to: UplinkEnd,
}

/// The GPUs of one physical leaf that act as a unit, with their circuits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VirtualLeaf {
    pub leaf: usize,
    pub gpus: Vec<usize>,
    /// Held circuits, one per GPU position; empty when none are held.
    pub uplinks: Vec<Uplink>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewireStep {
    pub ocs: usize,
    pub moves: Vec<OcsMove>,
}

/// A concrete allocation. Ranks map to `gpus` in order; the leading `ranks`
/// GPUs run the job and the rest pad it to a feasible shape.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VirtualClos {
    pub job: JobId,
    pub kind: AllocKind,
    pub ranks: usize,
    pub gpus: Vec<usize>,
    pub l: usize,
    pub s: usize,
    pub vleaves: Vec<VirtualLeaf>,
    pub spines: Vec<usize>,
    pub rewire: Vec<RewireStep>,
    pub objective: Option<i64>,
}

impl VirtualClos {
    /// Group `gpus` by leaf into virtual leaves without any circuits.
    pub fn without_links(
        cfg: &ClusterConfig,
        job: JobId,
        kind: AllocKind,
        ranks: usize,
        gpus: Vec<usize>,
    ) -> Self {
        let mut by_leaf: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &g in &gpus {
            by_leaf.entry(cfg.leaf_of_gpu(g)).or_default().push(g);
        }
        let vleaves: Vec<VirtualLeaf> = by_leaf
            .into_iter()
            .map(|(leaf, gpus)| VirtualLeaf {
                leaf,
                gpus,
                uplinks: Vec::new(),
            })
            .collect();
        Self {
            job,
            kind,
            ranks,
            l: vleaves.len(),
            s: vleaves.iter().map(|v| v.gpus.len()).max().unwrap_or(0),
            gpus,
            vleaves,
            spines: Vec::new(),
            rewire: Vec::new(),
            objective: None,
        }
    }

    /// Every GPU of the cluster as one job, wired by spine index.
    pub fn whole_cluster(cluster: &PhysicalCluster, job: JobId) -> Self {
        let cfg = cluster.config();
        let lpp = cfg.links_per_pair;
        let vleaves: Vec<VirtualLeaf> = (0..cfg.leaves)
            .map(|leaf| {
                let base = cfg.leaf_ports(leaf).start;
                VirtualLeaf {
                    leaf,
                    gpus: (leaf * cfg.spines..(leaf + 1) * cfg.spines).collect(),
                    uplinks: (0..cfg.spines)
                        .map(|i| {
                            let port = base + i * lpp;
                            Uplink {
                                port,
                                to: match cluster.spine_of_peer(port) {
                                    Some(m) => UplinkEnd::Spine(m),
                                    None => UplinkEnd::Spine(i),
                                },
                            }
                        })
                        .collect(),
                }
            })
            .collect();
        Self {
            job,
            kind: AllocKind::VClos,
            ranks: cfg.total_gpus(),
            gpus: (0..cfg.total_gpus()).collect(),
            l: cfg.leaves,
            s: cfg.spines,
            vleaves,
            spines: (0..cfg.spines).collect(),
            rewire: Vec::new(),
            objective: None,
        }
    }

    pub fn rank_gpus(&self) -> &[usize] {
        &self.gpus[..self.ranks]
    }

    /// GPUs plus one leaf port per held circuit.
    pub fn reservation(&self) -> Reservation {
        let mut taken = BTreeSet::new();
        let mut ports = Vec::new();
        for v in &self.vleaves {
            for u in &v.uplinks {
                // a leaf-to-leaf circuit shows up from both of its ends
                let twin = match u.to {
                    UplinkEnd::Leaf(peer_port) => Some(peer_port),
                    UplinkEnd::Spine(_) => None,
                };
                if taken.contains(&u.port) || twin.is_some_and(|p| taken.contains(&p)) {
                    continue;
                }
                taken.insert(u.port);
                ports.push(u.port);
            }
        }
        Reservation {
            gpus: self.gpus.clone(),
            ports,
        }
    }

    pub fn rewire_moves(&self) -> usize {
        self.rewire.iter().map(|r| r.moves.len()).sum()
    }

    pub fn holds_links(&self) -> bool {
        self.vleaves.iter().any(|v| !v.uplinks.is_empty())
    }

    /// Structural checks of a Clos-family allocation against the cluster
    /// state it was computed from.
    pub fn check(&self, before: &PhysicalCluster) -> Result<(), String> {
        let cfg = before.config();
        let distinct: BTreeSet<usize> = self.gpus.iter().copied().collect();
        if distinct.len() != self.gpus.len() {
            return Err("gpu allocated twice".into());
        }
        if self.ranks > self.gpus.len() || self.ranks == 0 {
            return Err(format!("{} ranks on {} gpus", self.ranks, self.gpus.len()));
        }
        for &g in &self.gpus {
            if g >= cfg.total_gpus() || before.gpu_owner(g).is_some() {
                return Err(format!("gpu {g} is not idle"));
            }
        }
        let flat: Vec<usize> = self.vleaves.iter().flat_map(|v| v.gpus.iter().copied()).collect();
        if flat != self.gpus {
            return Err("rank order is not virtual-leaf major".into());
        }
        for v in &self.vleaves {
            if v.gpus.iter().any(|&g| cfg.leaf_of_gpu(g) != v.leaf) {
                return Err(format!("virtual leaf on {} holds a foreign gpu", v.leaf));
            }
        }
        match self.kind {
            AllocKind::VClos | AllocKind::OcsVClos => self.check_clos(cfg),
            AllocKind::SingleSpine | AllocKind::DirectPair => {
                for v in &self.vleaves {
                    if v.uplinks.len() != v.gpus.len() {
                        return Err("every gpu needs its own circuit".into());
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn check_clos(&self, cfg: &ClusterConfig) -> Result<(), String> {
        if self.vleaves.len() != self.l {
            return Err(format!("{} virtual leaves, expected {}", self.vleaves.len(), self.l));
        }
        if self.spines.len() != self.s || self.l * self.s != self.gpus.len() {
            return Err("shape does not match gpu count".into());
        }
        let t = cfg.gpus_per_server;
        let mut per_leaf: BTreeMap<usize, usize> = BTreeMap::new();
        for v in &self.vleaves {
            if v.gpus.len() != self.s || v.uplinks.len() != self.s {
                return Err(format!("virtual leaf on {} is not {} wide", v.leaf, self.s));
            }
            let ends: Vec<usize> = v
                .uplinks
                .iter()
                .map(|u| match u.to {
                    UplinkEnd::Spine(m) => Ok(m),
                    UplinkEnd::Leaf(_) => Err("leaf circuit inside a clos".to_string()),
                })
                .collect::<Result<_, _>>()?;
            if ends != self.spines {
                return Err(format!("virtual leaf on {} misses a spine", v.leaf));
            }
            // whole servers only
            let servers: BTreeSet<usize> = v.gpus.iter().map(|&g| cfg.server_of_gpu(g)).collect();
            if servers.len() * t != v.gpus.len() {
                return Err(format!("virtual leaf on {} splits a server", v.leaf));
            }
            *per_leaf.entry(v.leaf).or_default() += 1;
        }
        if self.kind == AllocKind::VClos && per_leaf.values().any(|&c| c > 1) {
            return Err("static wiring allows one virtual leaf per leaf".into());
        }
        let distinct: BTreeSet<usize> = self.spines.iter().copied().collect();
        if distinct.len() != self.spines.len() {
            return Err("spine chosen twice".into());
        }
        let ports: BTreeSet<usize> = self.vleaves.iter().flat_map(|v| v.uplinks.iter().map(|u| u.port)).collect();
        if ports.len() != self.l * self.s {
            return Err("circuit shared between positions".into());
        }
        Ok(())
    }
}

/// `min sum RPN(S_m) s_m + sum RSN(L_n) T l_n`, against the pre-placement state.
pub fn clos_objective(before: &PhysicalCluster, alloc: &VirtualClos) -> i64 {
    let t = before.config().gpus_per_server as i64;
    let spine_cost: i64 = alloc.spines.iter().map(|&m| before.spine_free_ports(m) as i64).sum();
    let leaf_cost: i64 = alloc
        .vleaves
        .iter()
        .map(|v| before.idle_server_count(v.leaf) as i64 * t)
        .sum();
    spine_cost + leaf_cost
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct JobRequest {
    pub job: JobId,
    pub gpus: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaceOptions {
    pub time_budget: Duration,
}

impl Default for PlaceOptions {
    fn default() -> Self {
        Self {
            time_budget: Duration::from_secs(10),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlaceStats {
    pub ilp_solves: u64,
    pub ilp_nodes: u64,
    pub ilp_timeouts: u64,
}

/// GPUs a network-aware placement really takes for `n` ranks: `n` itself up
/// to a server, otherwise the smallest server multiple with a valid shape.
pub fn normalize_size(cfg: &ClusterConfig, n: usize) -> Option<usize> {
    let t = cfg.gpus_per_server;
    if n == 0 || n > cfg.total_gpus() {
        return None;
    }
    if n <= t {
        return Some(n);
    }
    let mut m = n.div_ceil(t) * t;
    while m <= cfg.total_gpus() {
        if !shape_candidates(cfg, m).is_empty() {
            return Some(m);
        }
        m += t;
    }
    None
}

/// `(l, s)` shapes tried for `n` GPUs, in search order. `l = 1` is left to
/// the single-leaf stage.
pub fn shape_candidates(cfg: &ClusterConfig, n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    if n == 0 {
        return out;
    }
    let pow = 1usize << (usize::BITS - 1 - n.leading_zeros());
    let mut l = (pow / cfg.spines).max(1);
    while l <= cfg.leaves {
        if l > 1 && n % l == 0 {
            let s = n / l;
            if s % cfg.gpus_per_server == 0 && s <= cfg.spines {
                out.push((l, s));
            }
        }
        l *= 2;
    }
    out
}

/// Run the stages of `strategy` in order; the first that fits wins.
pub fn place(
    strategy: Strategy,
    cluster: &PhysicalCluster,
    req: JobRequest,
    opts: &PlaceOptions,
    stats: &mut PlaceStats,
) -> Option<VirtualClos> {
    let cfg = cluster.config();
    let n = req.gpus;
    if n == 0 || n > cluster.idle_gpus() {
        return None;
    }
    let t = cfg.gpus_per_server;
    if n <= t {
        if let Some(gpus) = stage0(cluster, n) {
            return Some(VirtualClos::without_links(cfg, req.job, AllocKind::SingleServer, n, gpus));
        }
    }
    if strategy == Strategy::OcsRelax {
        return scatter_gpus(cluster, n)
            .map(|gpus| VirtualClos::without_links(cfg, req.job, AllocKind::Scattered, n, gpus));
    }
    if let Some(servers) = stage1(cluster, n) {
        let gpus: Vec<usize> = servers.iter().flat_map(|&s| cfg.server_gpus(s)).collect();
        return Some(VirtualClos::without_links(cfg, req.job, AllocKind::SingleLeaf, n, gpus));
    }
    match strategy {
        Strategy::Ecmp | Strategy::BalancedEcmp | Strategy::SourceRouting | Strategy::Best => {
            spread_servers(cluster, n).map(|servers| {
                let gpus: Vec<usize> = servers.iter().flat_map(|&s| cfg.server_gpus(s)).collect();
                VirtualClos::without_links(cfg, req.job, AllocKind::Spread, n, gpus)
            })
        }
        Strategy::VClos => {
            let padded = normalize_size(cfg, n)?;
            find_vclos(cluster, req.job, n, padded, opts, stats)
        }
        Strategy::OcsVClos => {
            if let Some(a) = ocs_stage2(cluster, req.job, n) {
                return Some(a);
            }
            let padded = normalize_size(cfg, n)?;
            ocs_find_clos(cluster, req.job, n, padded, opts, stats)
        }
        Strategy::OcsRelax => unreachable!(),
    }
}

/// Apply the allocation's rewiring and reserve its resources. Returns the
/// reconfiguration delay (OCSes switch in parallel). Atomic.
pub fn commit(cluster: &mut PhysicalCluster, alloc: &VirtualClos) -> Result<f64, TopologyError> {
    let mut work = cluster.clone();
    let mut delay: f64 = 0.0;
    for step in &alloc.rewire {
        delay = delay.max(work.rewire_ocs(step.ocs, &step.moves)?);
    }
    work.reserve(alloc.job, alloc.reservation())?;
    *cluster = work;
    Ok(delay)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_for_small_fabric() {
        let cfg = ClusterConfig::new(4, 8, 4);
        assert_eq!(shape_candidates(&cfg, 16), vec![(2, 8), (4, 4)]);
        assert!(shape_candidates(&cfg, 24).is_empty());
        assert_eq!(normalize_size(&cfg, 24), Some(32));
        assert_eq!(normalize_size(&cfg, 3), Some(3));
        assert_eq!(normalize_size(&cfg, 6), Some(8));
        assert_eq!(normalize_size(&cfg, 33), None);
    }

    #[test]
    fn odd_job_on_large_fabric_is_padded() {
        let cfg = ClusterConfig::new(16, 32, 8);
        assert_eq!(normalize_size(&cfg, 160), Some(192));
        assert_eq!(shape_candidates(&cfg, 192), vec![(8, 24)]);
        assert_eq!(shape_candidates(&cfg, 256), vec![(8, 32), (16, 16)]);
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert_eq!("OCS_vClos".parse::<Strategy>().unwrap(), Strategy::OcsVClos);
        assert!("nope".parse::<Strategy>().is_err());
    }

    #[test]
    fn whole_cluster_is_a_valid_clos() {
        let c = PhysicalCluster::build(ClusterConfig::new(4, 4, 2)).unwrap();
        let a = VirtualClos::whole_cluster(&c, JobId(1));
        a.check(&c).unwrap();
        assert_eq!(a.reservation().ports.len(), 16);
    }
}
