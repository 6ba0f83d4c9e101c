//! Physical leaf-spine fabric, optional OCS layer, and reservation state.
//!
//! Every leaf has `S` server-facing ports (one GPU per port, `T` GPUs per
//! server) and `S * links_per_pair` uplink ports. Every spine has
//! `L * links_per_pair` downlink ports. A circuit joins one leaf uplink port
//! either to a spine downlink port or, through an OCS, to another leaf's
//! uplink port. Reservations are tracked per GPU and per circuit; a circuit
//! is identified by a leaf port at one of its ends.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::TopologyError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JobId(pub u64);

impl fmt::Display for JobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

fn default_links_per_pair() -> usize {
    1
}

fn default_rewire_delay() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterConfig {
    pub leaves: usize,
    pub spines: usize,
    pub gpus_per_server: usize,
    #[serde(default = "default_links_per_pair")]
    pub links_per_pair: usize,
    #[serde(default)]
    pub ocs_count: usize,
    /// Seconds charged to a job whose placement needed OCS rewiring.
    #[serde(default = "default_rewire_delay")]
    pub ocs_rewire_delay: f64,
}

impl ClusterConfig {
    pub fn new(leaves: usize, spines: usize, gpus_per_server: usize) -> Self {
        Self {
            leaves,
            spines,
            gpus_per_server,
            links_per_pair: 1,
            ocs_count: 0,
            ocs_rewire_delay: default_rewire_delay(),
        }
    }

    pub fn with_ocs(mut self, ocs_count: usize) -> Self {
        self.ocs_count = ocs_count;
        self
    }

    pub fn with_links_per_pair(mut self, links: usize) -> Self {
        self.links_per_pair = links;
        self
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        let bad = |m: &str| Err(TopologyError::InvalidConfig(m.to_string()));
        if self.leaves == 0 {
            return bad("leaves must be >= 1");
        }
        if self.spines == 0 {
            return bad("spines must be >= 1");
        }
        if self.gpus_per_server == 0 {
            return bad("gpus_per_server must be >= 1");
        }
        if self.links_per_pair == 0 {
            return bad("links_per_pair must be >= 1");
        }
        if self.spines % self.gpus_per_server != 0 {
            return Err(TopologyError::InvalidConfig(format!(
                "spines ({}) mod gpus_per_server ({}) != 0: a leaf must host whole servers",
                self.spines, self.gpus_per_server
            )));
        }
        if !(self.ocs_rewire_delay.is_finite() && self.ocs_rewire_delay >= 0.0) {
            return bad("ocs_rewire_delay must be a finite non-negative number");
        }
        Ok(())
    }

    pub fn total_gpus(&self) -> usize {
        self.leaves * self.spines
    }

    pub fn servers_per_leaf(&self) -> usize {
        self.spines / self.gpus_per_server
    }

    pub fn total_servers(&self) -> usize {
        self.leaves * self.servers_per_leaf()
    }

    pub fn uplinks_per_leaf(&self) -> usize {
        self.spines * self.links_per_pair
    }

    pub fn downlinks_per_spine(&self) -> usize {
        self.leaves * self.links_per_pair
    }

    pub fn total_links(&self) -> usize {
        self.leaves * self.spines * self.links_per_pair
    }

    pub fn has_ocs(&self) -> bool {
        self.ocs_count > 0
    }

    pub fn leaf_of_gpu(&self, gpu: usize) -> usize {
        gpu / self.spines
    }

    pub fn port_of_gpu(&self, gpu: usize) -> usize {
        gpu % self.spines
    }

    pub fn server_of_gpu(&self, gpu: usize) -> usize {
        gpu / self.gpus_per_server
    }

    pub fn leaf_of_server(&self, server: usize) -> usize {
        server / self.servers_per_leaf()
    }

    pub fn server_gpus(&self, server: usize) -> std::ops::Range<usize> {
        let t = self.gpus_per_server;
        server * t..(server + 1) * t
    }

    pub fn leaf_servers(&self, leaf: usize) -> std::ops::Range<usize> {
        let k = self.servers_per_leaf();
        leaf * k..(leaf + 1) * k
    }

    pub fn leaf_of_port(&self, leaf_port: usize) -> usize {
        leaf_port / self.uplinks_per_leaf()
    }

    pub fn spine_of_port(&self, spine_port: usize) -> usize {
        spine_port / self.downlinks_per_spine()
    }

    pub fn leaf_ports(&self, leaf: usize) -> std::ops::Range<usize> {
        let u = self.uplinks_per_leaf();
        leaf * u..(leaf + 1) * u
    }

    pub fn spine_ports(&self, spine: usize) -> std::ops::Range<usize> {
        let d = self.downlinks_per_spine();
        spine * d..(spine + 1) * d
    }
}

/// The far end of a circuit as seen from a leaf uplink port.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Peer {
    Spine(usize),
    Leaf(usize),
}

/// A circuit described by the switches it joins, independent of port numbers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pairing {
    LeafSpine { leaf: usize, spine: usize },
    LeafLeaf { a: usize, b: usize },
}

impl fmt::Display for Pairing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pairing::LeafSpine { leaf, spine } => write!(f, "(L{leaf},S{spine})"),
            Pairing::LeafLeaf { a, b } => write!(f, "(L{a},L{b})"),
        }
    }
}

/// One OCS reconfiguration: tear down a free circuit, set one up, or both.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcsMove {
    pub from: Option<Pairing>,
    pub to: Option<Pairing>,
}

impl OcsMove {
    pub fn relocate(from: Pairing, to: Pairing) -> Self {
        Self {
            from: Some(from),
            to: Some(to),
        }
    }
}

/// Resources held by one job: GPUs plus circuits named by a leaf port.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reservation {
    pub gpus: Vec<usize>,
    pub ports: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhysicalCluster {
    config: ClusterConfig,
    gpu_owner: Vec<Option<JobId>>,
    leaf_peer: Vec<Option<Peer>>,
    spine_peer: Vec<Option<usize>>,
    leaf_port_ocs: Vec<Option<usize>>,
    spine_port_ocs: Vec<Option<usize>>,
    port_owner: Vec<Option<JobId>>,
    reservations: BTreeMap<JobId, Reservation>,
}

impl PhysicalCluster {
    pub fn build(config: ClusterConfig) -> Result<Self, TopologyError> {
        config.validate()?;
        let lpp = config.links_per_pair;
        let n_leaf_ports = config.leaves * config.uplinks_per_leaf();
        let n_spine_ports = config.spines * config.downlinks_per_spine();
        let mut leaf_peer = vec![None; n_leaf_ports];
        let mut spine_peer = vec![None; n_spine_ports];
        let mut leaf_port_ocs = vec![None; n_leaf_ports];
        let mut spine_port_ocs = vec![None; n_spine_ports];
        for n in 0..config.leaves {
            for m in 0..config.spines {
                for j in 0..lpp {
                    let lp = n * config.uplinks_per_leaf() + m * lpp + j;
                    let sp = m * config.downlinks_per_spine() + n * lpp + j;
                    leaf_peer[lp] = Some(Peer::Spine(sp));
                    spine_peer[sp] = Some(lp);
                    if config.ocs_count > 0 {
                        // round-robin assignment of physical links to OCS devices
                        let k = ((n * config.spines + m) * lpp + j) % config.ocs_count;
                        leaf_port_ocs[lp] = Some(k);
                        spine_port_ocs[sp] = Some(k);
                    }
                }
            }
        }
        Ok(Self {
            gpu_owner: vec![None; config.total_gpus()],
            port_owner: vec![None; n_leaf_ports],
            config,
            leaf_peer,
            spine_peer,
            leaf_port_ocs,
            spine_port_ocs,
            reservations: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &ClusterConfig {
        &self.config
    }

    pub fn gpu_owner(&self, gpu: usize) -> Option<JobId> {
        self.gpu_owner[gpu]
    }

    pub fn port_owner(&self, leaf_port: usize) -> Option<JobId> {
        self.port_owner[leaf_port]
    }

    pub fn leaf_peer(&self, leaf_port: usize) -> Option<Peer> {
        self.leaf_peer[leaf_port]
    }

    pub fn leaf_port_ocs(&self, leaf_port: usize) -> Option<usize> {
        self.leaf_port_ocs[leaf_port]
    }

    pub fn reservations(&self) -> &BTreeMap<JobId, Reservation> {
        &self.reservations
    }

    pub fn reservation(&self, job: JobId) -> Option<&Reservation> {
        self.reservations.get(&job)
    }

    pub fn idle_gpus(&self) -> usize {
        self.gpu_owner.iter().filter(|o| o.is_none()).count()
    }

    pub fn idle_gpus_in_server(&self, server: usize) -> usize {
        self.config
            .server_gpus(server)
            .filter(|&g| self.gpu_owner[g].is_none())
            .count()
    }

    pub fn server_is_idle(&self, server: usize) -> bool {
        self.idle_gpus_in_server(server) == self.config.gpus_per_server
    }

    /// Idle (fully free) servers under a leaf, ascending.
    pub fn idle_servers(&self, leaf: usize) -> Vec<usize> {
        self.config
            .leaf_servers(leaf)
            .filter(|&s| self.server_is_idle(s))
            .collect()
    }

    /// `R_n`: number of idle servers under leaf `leaf`.
    pub fn idle_server_count(&self, leaf: usize) -> usize {
        self.config
            .leaf_servers(leaf)
            .filter(|&s| self.server_is_idle(s))
            .count()
    }

    pub fn spine_of_peer(&self, leaf_port: usize) -> Option<usize> {
        match self.leaf_peer[leaf_port] {
            Some(Peer::Spine(sp)) => Some(self.config.spine_of_port(sp)),
            _ => None,
        }
    }

    fn circuit_is_free(&self, leaf_port: usize) -> bool {
        match self.leaf_peer[leaf_port] {
            None => false,
            Some(Peer::Spine(_)) => self.port_owner[leaf_port].is_none(),
            Some(Peer::Leaf(other)) => {
                self.port_owner[leaf_port].is_none() && self.port_owner[other].is_none()
            }
        }
    }

    /// Leaf ports of `leaf` whose free circuit ends at `spine`, ascending.
    pub fn free_circuits(&self, leaf: usize, spine: usize) -> Vec<usize> {
        self.config
            .leaf_ports(leaf)
            .filter(|&lp| self.circuit_is_free(lp) && self.spine_of_peer(lp) == Some(spine))
            .collect()
    }

    /// `C[n][m]`: free circuits between leaf `n` and spine `m` over all OCSes.
    pub fn free_links(&self, leaf: usize, spine: usize) -> usize {
        self.config
            .leaf_ports(leaf)
            .filter(|&lp| self.circuit_is_free(lp) && self.spine_of_peer(lp) == Some(spine))
            .count()
    }

    pub fn free_link_matrix(&self) -> Vec<Vec<usize>> {
        let mut c = vec![vec![0; self.config.spines]; self.config.leaves];
        for (lp, peer) in self.leaf_peer.iter().enumerate() {
            if let Some(Peer::Spine(sp)) = peer {
                if self.port_owner[lp].is_none() {
                    c[self.config.leaf_of_port(lp)][self.config.spine_of_port(*sp)] += 1;
                }
            }
        }
        c
    }

    /// `C^k[n][m]`: free leaf-spine circuits through OCS `k`.
    pub fn free_link_tensor(&self) -> Vec<Vec<Vec<usize>>> {
        let k = self.config.ocs_count.max(1);
        let mut c = vec![vec![vec![0; self.config.spines]; self.config.leaves]; k];
        for (lp, peer) in self.leaf_peer.iter().enumerate() {
            if let Some(Peer::Spine(sp)) = peer {
                if self.port_owner[lp].is_none() {
                    let o = self.leaf_port_ocs[lp].unwrap_or(0);
                    c[o][self.config.leaf_of_port(lp)][self.config.spine_of_port(*sp)] += 1;
                }
            }
        }
        c
    }

    /// `C_n^k`: leaf ports of `leaf` on OCS `ocs` not held by any job.
    pub fn free_leaf_ports_on(&self, ocs: usize, leaf: usize) -> usize {
        self.config
            .leaf_ports(leaf)
            .filter(|&lp| self.leaf_port_ocs[lp] == Some(ocs) && self.port_owner[lp].is_none())
            .count()
    }

    fn spine_port_is_free(&self, sp: usize) -> bool {
        match self.spine_peer[sp] {
            None => true,
            Some(lp) => self.port_owner[lp].is_none(),
        }
    }

    /// `C_m^k`: spine ports of `spine` on OCS `ocs` whose circuit is not held.
    pub fn free_spine_ports_on(&self, ocs: usize, spine: usize) -> usize {
        self.config
            .spine_ports(spine)
            .filter(|&sp| self.spine_port_ocs[sp] == Some(ocs) && self.spine_port_is_free(sp))
            .count()
    }

    /// `RPN(S_m)`: free downlink ports of a spine.
    pub fn spine_free_ports(&self, spine: usize) -> usize {
        self.config
            .spine_ports(spine)
            .filter(|&sp| self.spine_port_is_free(sp))
            .count()
    }

    pub fn is_circuit_free(&self, leaf_port: usize) -> bool {
        self.circuit_is_free(leaf_port)
    }

    /// The switches joined by the circuit at `leaf_port`; leaf pairs are
    /// reported with the lower leaf first.
    pub fn circuit_pairing(&self, leaf_port: usize) -> Option<Pairing> {
        let leaf = self.config.leaf_of_port(leaf_port);
        match self.leaf_peer[leaf_port]? {
            Peer::Spine(sp) => Some(Pairing::LeafSpine {
                leaf,
                spine: self.config.spine_of_port(sp),
            }),
            Peer::Leaf(o) => {
                let other = self.config.leaf_of_port(o);
                Some(Pairing::LeafLeaf {
                    a: leaf.min(other),
                    b: leaf.max(other),
                })
            }
        }
    }

    /// Free leaf ports of `leaf` on OCS `ocs` with no circuit attached.
    pub fn dangling_leaf_ports_on(&self, ocs: usize, leaf: usize) -> usize {
        self.config
            .leaf_ports(leaf)
            .filter(|&lp| {
                self.leaf_port_ocs[lp] == Some(ocs)
                    && self.leaf_peer[lp].is_none()
                    && self.port_owner[lp].is_none()
            })
            .count()
    }

    pub fn dangling_spine_ports_on(&self, ocs: usize, spine: usize) -> usize {
        self.config
            .spine_ports(spine)
            .filter(|&sp| self.spine_port_ocs[sp] == Some(ocs) && self.spine_peer[sp].is_none())
            .count()
    }

    /// Leaf ports on OCS `ocs` carrying a free circuit, ascending.
    pub fn free_circuits_on(&self, ocs: usize) -> Vec<usize> {
        (0..self.leaf_peer.len())
            .filter(|&lp| self.leaf_port_ocs[lp] == Some(ocs) && self.circuit_is_free(lp))
            .collect()
    }

    /// Free circuits of `a` whose far end sits on leaf `b`, as ports of `a`.
    pub fn free_leaf_circuits(&self, a: usize, b: usize) -> Vec<usize> {
        self.config
            .leaf_ports(a)
            .filter(|&lp| {
                self.circuit_is_free(lp)
                    && matches!(self.leaf_peer[lp], Some(Peer::Leaf(o)) if self.config.leaf_of_port(o) == b)
            })
            .collect()
    }

    /// Downlink circuits from `spine` into `leaf`, as leaf ports, ascending.
    pub fn circuits_between(&self, leaf: usize, spine: usize) -> Vec<usize> {
        self.config
            .leaf_ports(leaf)
            .filter(|&lp| self.spine_of_peer(lp) == Some(spine))
            .collect()
    }

    /// Reserve GPUs and circuits for `job`. Atomic: on error nothing changes.
    pub fn reserve(&mut self, job: JobId, res: Reservation) -> Result<(), TopologyError> {
        if self.reservations.contains_key(&job) {
            return Err(TopologyError::DuplicateJob(job));
        }
        let mut gpus_seen = std::collections::BTreeSet::new();
        for &g in &res.gpus {
            let owner = *self.gpu_owner.get(g).ok_or(TopologyError::UnknownGpu(g))?;
            if let Some(owner) = owner {
                return Err(TopologyError::GpuBusy { gpu: g, owner });
            }
            if !gpus_seen.insert(g) {
                return Err(TopologyError::GpuBusy { gpu: g, owner: job });
            }
        }
        let mut ports_seen = std::collections::BTreeSet::new();
        for &lp in &res.ports {
            let owner = *self.port_owner.get(lp).ok_or(TopologyError::UnknownPort(lp))?;
            if let Some(owner) = owner {
                return Err(TopologyError::LinkBusy { port: lp, owner });
            }
            let peer = self.leaf_peer[lp].ok_or(TopologyError::DanglingPort(lp))?;
            if let Peer::Leaf(other) = peer {
                if let Some(owner) = self.port_owner[other] {
                    return Err(TopologyError::LinkBusy { port: other, owner });
                }
                if ports_seen.contains(&other) {
                    return Err(TopologyError::LinkBusy { port: other, owner: job });
                }
            }
            if !ports_seen.insert(lp) {
                return Err(TopologyError::LinkBusy { port: lp, owner: job });
            }
        }
        for &g in &res.gpus {
            self.gpu_owner[g] = Some(job);
        }
        for &lp in &res.ports {
            self.port_owner[lp] = Some(job);
            if let Some(Peer::Leaf(other)) = self.leaf_peer[lp] {
                self.port_owner[other] = Some(job);
            }
        }
        self.reservations.insert(job, res);
        Ok(())
    }

    /// Release everything `job` holds. Rewired circuits stay where they are.
    pub fn release(&mut self, job: JobId) -> Result<Reservation, TopologyError> {
        let res = self
            .reservations
            .remove(&job)
            .ok_or(TopologyError::UnknownJob(job))?;
        for &g in &res.gpus {
            self.gpu_owner[g] = None;
        }
        for &lp in &res.ports {
            self.port_owner[lp] = None;
            if let Some(Peer::Leaf(other)) = self.leaf_peer[lp] {
                self.port_owner[other] = None;
            }
        }
        Ok(res)
    }

    /// Reconfigure OCS `ocs`. Only circuits no job holds can move. Returns the
    /// reconfiguration delay (zero for an empty move list). Atomic.
    pub fn rewire_ocs(&mut self, ocs: usize, moves: &[OcsMove]) -> Result<f64, TopologyError> {
        if !self.config.has_ocs() {
            return Err(TopologyError::NoOcs);
        }
        if ocs >= self.config.ocs_count {
            return Err(TopologyError::UnknownOcs(ocs));
        }
        if moves.is_empty() {
            return Ok(0.0);
        }
        let mut work = self.clone();
        // tear down first so freed ports can be reused by the set-ups
        for mv in moves {
            if let Some(p) = mv.from {
                work.disconnect(ocs, p)?;
            }
        }
        for mv in moves {
            if let Some(p) = mv.to {
                work.connect(ocs, p)?;
            }
        }
        *self = work;
        Ok(self.config.ocs_rewire_delay)
    }

    fn disconnect(&mut self, ocs: usize, pairing: Pairing) -> Result<(), TopologyError> {
        let (leaf, matches): (usize, Box<dyn Fn(&Self, usize) -> bool>) = match pairing {
            Pairing::LeafSpine { leaf, spine } => (
                leaf,
                Box::new(move |c: &Self, lp| c.spine_of_peer(lp) == Some(spine)),
            ),
            Pairing::LeafLeaf { a, b } => (
                a,
                Box::new(move |c: &Self, lp| match c.leaf_peer[lp] {
                    Some(Peer::Leaf(o)) => c.config.leaf_of_port(o) == b,
                    _ => false,
                }),
            ),
        };
        let candidates: Vec<usize> = self
            .config
            .leaf_ports(leaf)
            .filter(|&lp| self.leaf_port_ocs[lp] == Some(ocs) && matches(self, lp))
            .collect();
        let lp = match candidates.iter().copied().find(|&lp| self.circuit_is_free(lp)) {
            Some(lp) => lp,
            None if !candidates.is_empty() => {
                return Err(TopologyError::RewireReserved {
                    ocs,
                    pairing: pairing.to_string(),
                })
            }
            None => {
                return Err(TopologyError::NoFreeCircuit {
                    ocs,
                    pairing: pairing.to_string(),
                })
            }
        };
        match self.leaf_peer[lp].take() {
            Some(Peer::Spine(sp)) => self.spine_peer[sp] = None,
            Some(Peer::Leaf(o)) => self.leaf_peer[o] = None,
            None => {}
        }
        Ok(())
    }

    fn free_dangling_leaf_port(&self, ocs: usize, leaf: usize, skip: Option<usize>) -> Option<usize> {
        self.config.leaf_ports(leaf).find(|&lp| {
            Some(lp) != skip
                && self.leaf_port_ocs[lp] == Some(ocs)
                && self.leaf_peer[lp].is_none()
                && self.port_owner[lp].is_none()
        })
    }

    fn connect(&mut self, ocs: usize, pairing: Pairing) -> Result<(), TopologyError> {
        let exhausted = || TopologyError::PortExhausted {
            ocs,
            pairing: pairing.to_string(),
        };
        match pairing {
            Pairing::LeafSpine { leaf, spine } => {
                let lp = self.free_dangling_leaf_port(ocs, leaf, None).ok_or_else(exhausted)?;
                let sp = self
                    .config
                    .spine_ports(spine)
                    .find(|&sp| self.spine_port_ocs[sp] == Some(ocs) && self.spine_peer[sp].is_none())
                    .ok_or_else(exhausted)?;
                self.leaf_peer[lp] = Some(Peer::Spine(sp));
                self.spine_peer[sp] = Some(lp);
            }
            Pairing::LeafLeaf { a, b } => {
                let pa = self.free_dangling_leaf_port(ocs, a, None).ok_or_else(exhausted)?;
                let pb = self.free_dangling_leaf_port(ocs, b, Some(pa)).ok_or_else(exhausted)?;
                self.leaf_peer[pa] = Some(Peer::Leaf(pb));
                self.leaf_peer[pb] = Some(Peer::Leaf(pa));
            }
        }
        Ok(())
    }

    /// Checks structural invariants; returns a description of the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        let cfg = &self.config;
        for (lp, peer) in self.leaf_peer.iter().enumerate() {
            match peer {
                Some(Peer::Spine(sp)) => {
                    if self.spine_peer[*sp] != Some(lp) {
                        return Err(format!("leaf port {lp} -> spine port {sp} not mirrored"));
                    }
                    if self.leaf_port_ocs[lp] != self.spine_port_ocs[*sp] {
                        return Err(format!("circuit {lp}-{sp} crosses two OCSes"));
                    }
                }
                Some(Peer::Leaf(o)) => {
                    if self.leaf_peer[*o] != Some(Peer::Leaf(lp)) || *o == lp {
                        return Err(format!("leaf-leaf circuit {lp}-{o} not mirrored"));
                    }
                    if self.port_owner[lp] != self.port_owner[*o] {
                        return Err(format!("leaf-leaf circuit {lp}-{o} half reserved"));
                    }
                }
                None => {
                    if !cfg.has_ocs() {
                        return Err(format!("dangling port {lp} without OCS"));
                    }
                }
            }
        }
        for (sp, peer) in self.spine_peer.iter().enumerate() {
            if let Some(lp) = peer {
                if self.leaf_peer[*lp] != Some(Peer::Spine(sp)) {
                    return Err(format!("spine port {sp} -> leaf port {lp} not mirrored"));
                }
            }
        }
        // every held resource belongs to exactly the reservation that names it
        let mut gpu_expect = vec![None; self.gpu_owner.len()];
        let mut port_expect = vec![None; self.port_owner.len()];
        for (job, res) in &self.reservations {
            for &g in &res.gpus {
                if gpu_expect[g].replace(*job).is_some() {
                    return Err(format!("gpu {g} in two reservations"));
                }
            }
            for &lp in &res.ports {
                if port_expect[lp].replace(*job).is_some() {
                    return Err(format!("port {lp} in two reservations"));
                }
                if let Some(Peer::Leaf(o)) = self.leaf_peer[lp] {
                    if port_expect[o].replace(*job).is_some() {
                        return Err(format!("port {o} in two reservations"));
                    }
                }
                if self.leaf_peer[lp].is_none() {
                    return Err(format!("reserved port {lp} has no circuit"));
                }
            }
        }
        if gpu_expect != self.gpu_owner {
            return Err("gpu ownership disagrees with reservations".into());
        }
        if port_expect != self.port_owner {
            return Err("port ownership disagrees with reservations".into());
        }
        let circuits = self.leaf_peer.iter().filter(|p| p.is_some()).count();
        if !cfg.has_ocs() && circuits != cfg.total_links() {
            return Err(format!("{circuits} circuits, expected {}", cfg.total_links()));
        }
        Ok(())
    }

    pub fn snapshot(&self) -> ClusterSnapshot {
        let cfg = &self.config;
        ClusterSnapshot {
            config: cfg.clone(),
            servers: (0..cfg.total_servers())
                .map(|s| ServerState {
                    server: s,
                    leaf: cfg.leaf_of_server(s),
                    idle_gpus: self.idle_gpus_in_server(s),
                })
                .collect(),
            free_links: self.free_link_matrix(),
            spine_free_ports: (0..cfg.spines).map(|m| self.spine_free_ports(m)).collect(),
            circuits: self
                .leaf_peer
                .iter()
                .enumerate()
                .filter_map(|(lp, p)| {
                    p.map(|p| CircuitState {
                        leaf_port: lp,
                        leaf: cfg.leaf_of_port(lp),
                        ocs: self.leaf_port_ocs[lp],
                        peer: p,
                        owner: self.port_owner[lp],
                    })
                })
                .collect(),
            reservations: self.reservations.clone(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ServerState {
    pub server: usize,
    pub leaf: usize,
    pub idle_gpus: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct CircuitState {
    pub leaf_port: usize,
    pub leaf: usize,
    pub ocs: Option<usize>,
    pub peer: Peer,
    pub owner: Option<JobId>,
}

/// Debug export of the whole cluster state.
#[derive(Clone, Debug, Serialize)]
pub struct ClusterSnapshot {
    pub config: ClusterConfig,
    pub servers: Vec<ServerState>,
    pub free_links: Vec<Vec<usize>>,
    pub spine_free_ports: Vec<usize>,
    pub circuits: Vec<CircuitState>,
    pub reservations: BTreeMap<JobId, Reservation>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PhysicalCluster {
        PhysicalCluster::build(ClusterConfig::new(4, 8, 4)).unwrap()
    }

    #[test]
    fn build_counts() {
        let c = small();
        let cfg = c.config();
        assert_eq!(cfg.total_gpus(), 32);
        assert_eq!(cfg.total_servers(), 8);
        assert_eq!(cfg.total_links(), 32);
        assert_eq!(c.idle_gpus(), 32);
        assert!(c.free_link_matrix().iter().flatten().all(|&x| x == 1));
        c.check_invariants().unwrap();
    }

    #[test]
    fn paper_scale_cluster() {
        let cfg = ClusterConfig::new(32, 64, 8);
        assert_eq!(cfg.total_gpus(), 2048);
        PhysicalCluster::build(cfg).unwrap();
    }

    #[test]
    fn rejects_partial_servers() {
        let err = PhysicalCluster::build(ClusterConfig::new(2, 4, 8)).unwrap_err();
        assert!(matches!(err, TopologyError::InvalidConfig(ref m) if m.contains("mod")));
    }

    #[test]
    fn reserve_release_roundtrip() {
        let mut c = small();
        let before = c.clone();
        let res = Reservation {
            gpus: (0..4).collect(),
            ports: vec![0, 1],
        };
        assert_eq!(c.idle_server_count(0), 2);
        c.reserve(JobId(7), res).unwrap();
        assert_eq!(c.idle_server_count(0), 1);
        assert_eq!(c.free_links(0, 0), 0);
        c.check_invariants().unwrap();
        c.release(JobId(7)).unwrap();
        assert_eq!(c, before);
    }

    #[test]
    fn double_reserve_is_atomic() {
        let mut c = small();
        c.reserve(JobId(1), Reservation { gpus: vec![0, 1], ports: vec![3] })
            .unwrap();
        let snapshot = c.clone();
        let err = c
            .reserve(JobId(2), Reservation { gpus: vec![5, 1], ports: vec![] })
            .unwrap_err();
        assert_eq!(err, TopologyError::GpuBusy { gpu: 1, owner: JobId(1) });
        assert_eq!(c, snapshot);
        let err = c
            .reserve(JobId(2), Reservation { gpus: vec![5], ports: vec![4, 3] })
            .unwrap_err();
        assert!(matches!(err, TopologyError::LinkBusy { port: 3, .. }));
        assert_eq!(c, snapshot);
        assert_eq!(c.release(JobId(9)).unwrap_err(), TopologyError::UnknownJob(JobId(9)));
    }

    #[test]
    fn rewire_swaps_free_circuits() {
        let mut c = PhysicalCluster::build(ClusterConfig::new(2, 4, 4).with_ocs(1)).unwrap();
        let before = c.free_link_tensor();
        let delay = c
            .rewire_ocs(
                0,
                &[
                    OcsMove::relocate(
                        Pairing::LeafSpine { leaf: 0, spine: 0 },
                        Pairing::LeafSpine { leaf: 0, spine: 1 },
                    ),
                    OcsMove::relocate(
                        Pairing::LeafSpine { leaf: 1, spine: 1 },
                        Pairing::LeafSpine { leaf: 1, spine: 0 },
                    ),
                ],
            )
            .unwrap();
        let after = c.free_link_tensor();
        assert_eq!(delay, 0.05);
        assert_eq!(after[0][0][0], before[0][0][0] - 1);
        assert_eq!(after[0][0][1], before[0][0][1] + 1);
        c.check_invariants().unwrap();
        assert_eq!(c.rewire_ocs(0, &[]).unwrap(), 0.0);
    }

    #[test]
    fn single_relocation_needs_a_spare_spine_port() {
        let mut c = PhysicalCluster::build(ClusterConfig::new(2, 4, 4).with_ocs(1)).unwrap();
        let snapshot = c.clone();
        let err = c
            .rewire_ocs(
                0,
                &[OcsMove::relocate(
                    Pairing::LeafSpine { leaf: 0, spine: 0 },
                    Pairing::LeafSpine { leaf: 0, spine: 1 },
                )],
            )
            .unwrap_err();
        assert!(matches!(err, TopologyError::PortExhausted { .. }));
        assert_eq!(c, snapshot);
    }

    #[test]
    fn rewire_refuses_reserved_circuit() {
        let mut c = PhysicalCluster::build(ClusterConfig::new(2, 4, 4).with_ocs(1)).unwrap();
        // leaf 0 port 0 is the only (L0,S0) circuit
        c.reserve(JobId(1), Reservation { gpus: vec![], ports: vec![0] })
            .unwrap();
        let snapshot = c.clone();
        let err = c
            .rewire_ocs(
                0,
                &[OcsMove {
                    from: Some(Pairing::LeafSpine { leaf: 0, spine: 0 }),
                    to: None,
                }],
            )
            .unwrap_err();
        assert!(matches!(err, TopologyError::RewireReserved { .. }));
        assert_eq!(c, snapshot);
    }

    #[test]
    fn leaf_to_leaf_circuit() {
        let mut c = PhysicalCluster::build(ClusterConfig::new(2, 4, 4).with_ocs(1)).unwrap();
        c.rewire_ocs(
            0,
            &[
                OcsMove {
                    from: Some(Pairing::LeafSpine { leaf: 0, spine: 0 }),
                    to: Some(Pairing::LeafLeaf { a: 0, b: 1 }),
                },
                OcsMove {
                    from: Some(Pairing::LeafSpine { leaf: 1, spine: 0 }),
                    to: None,
                },
            ],
        )
        .unwrap();
        c.check_invariants().unwrap();
        assert_eq!(c.leaf_peer(0), Some(Peer::Leaf(4)));
        assert_eq!(c.spine_free_ports(0), 2);
        c.reserve(JobId(3), Reservation { gpus: vec![], ports: vec![0] })
            .unwrap();
        assert_eq!(c.port_owner(4), Some(JobId(3)));
        c.check_invariants().unwrap();
    }

    #[test]
    fn no_ocs_means_no_rewire() {
        let mut c = small();
        assert_eq!(c.rewire_ocs(0, &[]).unwrap_err(), TopologyError::NoOcs);
    }

    #[test]
    fn ocs_round_robin() {
        let c = PhysicalCluster::build(ClusterConfig::new(2, 4, 4).with_ocs(2)).unwrap();
        assert_eq!(c.free_leaf_ports_on(0, 0), 2);
        assert_eq!(c.free_leaf_ports_on(1, 0), 2);
        assert_eq!(c.free_spine_ports_on(0, 0) + c.free_spine_ports_on(1, 0), 2);
    }
}
