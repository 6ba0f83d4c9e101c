//! Hash-based and load-aware multipath baselines.

use std::io::Cursor;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{FlowRoute, LinkId, RouteAssignment};
use crate::error::RoutingError;
use crate::patterns::CommStep;
use crate::topology::{ClusterConfig, PhysicalCluster};

const ROCE_PORT: u16 = 4791;
const UDP: u8 = 17;

/// RoCEv2 five-tuple of a GPU-to-GPU connection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FiveTuple {
    pub src_ip: [u8; 4],
    pub dst_ip: [u8; 4],
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: u8,
}

fn gpu_ip(cfg: &ClusterConfig, gpu: usize) -> [u8; 4] {
    let leaf = cfg.leaf_of_gpu(gpu);
    let server_in_leaf = cfg.server_of_gpu(gpu) - leaf * cfg.servers_per_leaf();
    [10, leaf as u8, server_in_leaf as u8, (gpu % cfg.gpus_per_server) as u8]
}

impl FiveTuple {
    pub fn new(cfg: &ClusterConfig, src: usize, dst: usize, src_port: u16) -> Self {
        Self {
            src_ip: gpu_ip(cfg, src),
            dst_ip: gpu_ip(cfg, dst),
            src_port,
            dst_port: ROCE_PORT,
            protocol: UDP,
        }
    }

    pub fn to_bytes(&self) -> [u8; 13] {
        let mut b = [0u8; 13];
        b[..4].copy_from_slice(&self.src_ip);
        b[4..8].copy_from_slice(&self.dst_ip);
        b[8..10].copy_from_slice(&self.src_port.to_be_bytes());
        b[10..12].copy_from_slice(&self.dst_port.to_be_bytes());
        b[12] = self.protocol;
        b
    }
}

/// MurmurHash3 (x86, 32 bit) of the serialized tuple.
pub fn ecmp_hash(t: &FiveTuple, seed: u32) -> u32 {
    murmur3::murmur3_32(&mut Cursor::new(&t.to_bytes()[..]), seed).expect("reading from memory")
}

fn ephemeral_port(rng: &mut ChaCha8Rng) -> u16 {
    rng.gen_range(32768..=60999)
}

fn spine_uplinks(cluster: &PhysicalCluster, leaf: usize) -> Vec<usize> {
    cluster
        .config()
        .leaf_ports(leaf)
        .filter(|&p| cluster.spine_of_peer(p).is_some())
        .collect()
}

fn hashed_route(
    cluster: &PhysicalCluster,
    src: usize,
    dst: usize,
    src_port: u16,
    uplinks: &[usize],
) -> Result<FlowRoute, RoutingError> {
    let cfg = cluster.config();
    if src >= cfg.total_gpus() {
        return Err(RoutingError::UnknownGpu(src));
    }
    if dst >= cfg.total_gpus() {
        return Err(RoutingError::UnknownGpu(dst));
    }
    if cfg.server_of_gpu(src) == cfg.server_of_gpu(dst) {
        return Ok(FlowRoute::nvlink(src, dst));
    }
    let dl = cfg.leaf_of_gpu(dst);
    if cfg.leaf_of_gpu(src) == dl {
        return Ok(FlowRoute::local(src, dst));
    }
    if uplinks.is_empty() {
        return Err(RoutingError::NoUplink(src));
    }
    let t = FiveTuple::new(cfg, src, dst, src_port);
    let h = ecmp_hash(&t, 0);
    let up = uplinks[h as usize % uplinks.len()];
    let m = cluster.spine_of_peer(up).ok_or(RoutingError::NoUplink(src))?;
    let downs = cluster.circuits_between(dl, m);
    if downs.is_empty() {
        return Err(RoutingError::NoDownlink { spine: m, leaf: dl });
    }
    // the spine hashes independently over its parallel links
    let down = downs[ecmp_hash(&t, 1) as usize % downs.len()];
    Ok(FlowRoute::fabric(src, dst, &[LinkId::Up(up), LinkId::Down(down)]))
}

/// ECMP for GPU pairs, each pair getting a fresh source port drawn from a
/// generator seeded with `seed`, in order.
pub fn ecmp_route_pairs(
    pairs: &[(usize, usize)],
    cluster: &PhysicalCluster,
    seed: u64,
) -> Result<RouteAssignment, RoutingError> {
    let cfg = cluster.config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cache: Vec<Option<Vec<usize>>> = vec![None; cfg.leaves];
    pairs
        .iter()
        .map(|&(src, dst)| {
            let port = ephemeral_port(&mut rng);
            let leaf = cfg.leaf_of_gpu(src.min(cfg.total_gpus().saturating_sub(1)));
            let ups = cache[leaf].get_or_insert_with(|| spine_uplinks(cluster, leaf));
            hashed_route(cluster, src, dst, port, ups)
        })
        .collect()
}

pub fn ecmp_route(
    step: &CommStep,
    ranks: &[usize],
    cluster: &PhysicalCluster,
    seed: u64,
) -> Result<RouteAssignment, RoutingError> {
    let pairs = rank_pairs(step, ranks)?;
    ecmp_route_pairs(&pairs, cluster, seed)
}

fn rank_pairs(step: &CommStep, ranks: &[usize]) -> Result<Vec<(usize, usize)>, RoutingError> {
    step.flows
        .iter()
        .map(|f| {
            Ok((
                *ranks.get(f.src).ok_or(RoutingError::OutsideAllocation(f.src))?,
                *ranks.get(f.dst).ok_or(RoutingError::OutsideAllocation(f.dst))?,
            ))
        })
        .collect()
}

/// Load-aware ECMP: flows are taken in a seeded random order and each picks,
/// uniformly at random, one of the source-leaf uplinks with the lowest
/// current load. `loads` is indexed by [`LinkId::index`] and is updated.
pub fn balanced_ecmp_route(
    step: &CommStep,
    ranks: &[usize],
    cluster: &PhysicalCluster,
    loads: &mut [u32],
    seed: u64,
) -> Result<RouteAssignment, RoutingError> {
    let pairs = rank_pairs(step, ranks)?;
    balanced_route_pairs(&pairs, cluster, loads, seed)
}

pub(crate) fn balanced_route_pairs(
    pairs: &[(usize, usize)],
    cluster: &PhysicalCluster,
    loads: &mut [u32],
    seed: u64,
) -> Result<RouteAssignment, RoutingError> {
    let cfg = cluster.config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut rng);
    let mut out: Vec<Option<FlowRoute>> = vec![None; pairs.len()];
    for i in order {
        let (src, dst) = pairs[i];
        if src >= cfg.total_gpus() {
            return Err(RoutingError::UnknownGpu(src));
        }
        if dst >= cfg.total_gpus() {
            return Err(RoutingError::UnknownGpu(dst));
        }
        let route = if cfg.server_of_gpu(src) == cfg.server_of_gpu(dst) {
            FlowRoute::nvlink(src, dst)
        } else if cfg.leaf_of_gpu(src) == cfg.leaf_of_gpu(dst) {
            FlowRoute::local(src, dst)
        } else {
            let ups = spine_uplinks(cluster, cfg.leaf_of_gpu(src));
            let least = ups
                .iter()
                .map(|&p| loads[LinkId::Up(p).index(cfg)])
                .min()
                .ok_or(RoutingError::NoUplink(src))?;
            let best: Vec<usize> = ups
                .into_iter()
                .filter(|&p| loads[LinkId::Up(p).index(cfg)] == least)
                .collect();
            let up = *best.choose(&mut rng).expect("non-empty");
            let m = cluster.spine_of_peer(up).ok_or(RoutingError::NoUplink(src))?;
            let dl = cfg.leaf_of_gpu(dst);
            let down = cluster
                .circuits_between(dl, m)
                .into_iter()
                .min_by_key(|&p| (loads[LinkId::Down(p).index(cfg)], p))
                .ok_or(RoutingError::NoDownlink { spine: m, leaf: dl })?;
            FlowRoute::fabric(src, dst, &[LinkId::Up(up), LinkId::Down(down)])
        };
        for l in &route.links {
            loads[l.index(cfg)] += 1;
        }
        out[i] = Some(route);
    }
    Ok(out.into_iter().map(|r| r.expect("every flow routed")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patterns::{Flow, FlowOp};
    use crate::routing::contention_report;

    fn step(pairs: &[(usize, usize)]) -> CommStep {
        CommStep {
            step_index: 0,
            flows: pairs
                .iter()
                .map(|&(src, dst)| Flow {
                    src,
                    dst,
                    bytes: 1.0,
                    intra_server: false,
                    op: FlowOp::Copy,
                    chunks: 0..1,
                })
                .collect(),
        }
    }

    #[test]
    fn murmur_reference_vectors() {
        // published MurmurHash3_x86_32 values
        let h = |s: &[u8], seed| murmur3::murmur3_32(&mut Cursor::new(s), seed).unwrap();
        assert_eq!(h(b"", 0), 0);
        assert_eq!(h(b"", 1), 0x514E_28B7);
        assert_eq!(h(b"hello", 0), 0x248B_FA47);
        assert_eq!(h(b"The quick brown fox jumps over the lazy dog", 0), 0x2E4F_F723);
    }

    #[test]
    fn tuple_layout() {
        let cfg = ClusterConfig::new(2, 8, 4);
        let t = FiveTuple::new(&cfg, 13, 2, 40000);
        assert_eq!(t.src_ip, [10, 1, 1, 1]);
        assert_eq!(t.dst_ip, [10, 0, 0, 2]);
        let b = t.to_bytes();
        assert_eq!(&b[8..12], &[0x9c, 0x40, 0x12, 0xb7]);
        assert_eq!(b[12], 17);
    }

    #[test]
    fn ecmp_is_seed_deterministic() {
        let c = PhysicalCluster::build(ClusterConfig::new(4, 8, 4)).unwrap();
        let ranks: Vec<usize> = (0..32).collect();
        let s = step(&(0..8).map(|i| (i, 8 + i)).collect::<Vec<_>>());
        let a = ecmp_route(&s, &ranks, &c, 7).unwrap();
        let b = ecmp_route(&s, &ranks, &c, 7).unwrap();
        assert_eq!(a, b);
        let differs = (0..20).any(|seed| ecmp_route(&s, &ranks, &c, seed).unwrap() != a);
        assert!(differs);
    }

    #[test]
    fn balanced_spreads_one_more_than_uplinks() {
        let s_count = 4;
        let c = PhysicalCluster::build(ClusterConfig::new(2, s_count, 1)).unwrap();
        // S + 1 flows out of leaf 0; reuse a source to get the extra one
        let mut pairs: Vec<(usize, usize)> = (0..s_count).map(|i| (i, s_count + i)).collect();
        pairs.push((0, s_count + 1));
        let ranks: Vec<usize> = (0..2 * s_count).collect();
        let mut loads = vec![0u32; LinkId::count(c.config())];
        let r = balanced_ecmp_route(&step(&pairs), &ranks, &c, &mut loads, 3).unwrap();
        let mut up_counts = std::collections::BTreeMap::new();
        for route in &r {
            for l in route.fabric_links() {
                if let LinkId::Up(p) = l {
                    *up_counts.entry(p).or_insert(0) += 1;
                }
            }
        }
        assert_eq!(up_counts.len(), s_count);
        assert_eq!(up_counts.values().filter(|&&v| v == 2).count(), 1);
        assert!(contention_report(&r).max >= 2);
    }
}
