//! Per-iteration communication schedules for collective algorithms.
//!
//! Ranks are logical; placement maps rank `r` to the `r`-th GPU of an
//! allocation. Every flow carries the chunk range it moves and whether the
//! receiver reduces or overwrites, so a schedule can be replayed on scalar
//! payloads to check it really computes an all-reduce.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::PatternError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Collective {
    Ring,
    HierRing,
    Hd,
    AllToAll,
    Pipeline,
    DoubleBinaryTree,
}

impl Collective {
    pub const ALL: [Collective; 6] = [
        Collective::Ring,
        Collective::HierRing,
        Collective::Hd,
        Collective::AllToAll,
        Collective::Pipeline,
        Collective::DoubleBinaryTree,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Collective::Ring => "ring",
            Collective::HierRing => "hier_ring",
            Collective::Hd => "hd",
            Collective::AllToAll => "all_to_all",
            Collective::Pipeline => "pipeline",
            Collective::DoubleBinaryTree => "double_binary_tree",
        }
    }
}

impl fmt::Display for Collective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Collective {
    type Err = PatternError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        match norm.as_str() {
            "ring" => Ok(Collective::Ring),
            "hier_ring" | "hierarchical_ring" | "hring" => Ok(Collective::HierRing),
            "hd" | "halving_doubling" => Ok(Collective::Hd),
            "all_to_all" | "alltoall" | "a2a" => Ok(Collective::AllToAll),
            "pipeline" => Ok(Collective::Pipeline),
            "double_binary_tree" | "dbt" | "tree" => Ok(Collective::DoubleBinaryTree),
            _ => Err(PatternError::UnknownCollective(s.to_string())),
        }
    }
}

/// What the receiver does with the chunks of a flow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowOp {
    Reduce,
    Copy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Flow {
    pub src: usize,
    pub dst: usize,
    pub bytes: f64,
    /// Stays on the server's NVLink domain and never touches the fabric.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub intra_server: bool,
    pub op: FlowOp,
    pub chunks: Range<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommStep {
    pub step_index: usize,
    pub flows: Vec<Flow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommSchedule {
    pub algo: Collective,
    pub n_ranks: usize,
    /// Number of equal chunks the payload is cut into for `Flow::chunks`.
    pub chunk_count: usize,
    pub steps: Vec<CommStep>,
}

impl CommSchedule {
    fn new(algo: Collective, n_ranks: usize, chunk_count: usize) -> Self {
        Self {
            algo,
            n_ranks,
            chunk_count,
            steps: Vec::new(),
        }
    }

    fn push(&mut self, flows: Vec<Flow>) {
        let step_index = self.steps.len();
        self.steps.push(CommStep { step_index, flows });
    }

    /// Total bytes rank `r` sends over the whole schedule.
    pub fn bytes_sent_by(&self, rank: usize) -> f64 {
        self.steps
            .iter()
            .flat_map(|s| &s.flows)
            .filter(|f| f.src == rank)
            .map(|f| f.bytes)
            .sum()
    }

    /// One JSON object per step, newline separated.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for step in &self.steps {
            out.push_str(&serde_json::to_string(step).expect("step serializes"));
            out.push('\n');
        }
        out
    }
}

fn flow(src: usize, dst: usize, bytes: f64, op: FlowOp, chunks: Range<usize>) -> Flow {
    Flow {
        src,
        dst,
        bytes,
        intra_server: false,
        op,
        chunks,
    }
}

fn need_two(n: usize) -> Result<(), PatternError> {
    if n < 2 {
        Err(PatternError::TooFewRanks(n))
    } else {
        Ok(())
    }
}

/// Build the schedule for `algo`; `per_server` only matters for `HierRing`.
pub fn generate(
    algo: Collective,
    n: usize,
    per_server: usize,
    data_bytes: f64,
) -> Result<CommSchedule, PatternError> {
    match algo {
        Collective::Ring => ring_steps(n, data_bytes),
        Collective::HierRing => hierarchical_ring_steps(n, per_server, data_bytes),
        Collective::Hd => hd_steps(n, data_bytes),
        Collective::AllToAll => alltoall_steps(n, data_bytes),
        Collective::Pipeline => pipeline_steps(n, data_bytes),
        Collective::DoubleBinaryTree => double_binary_tree_steps(n, data_bytes),
    }
}

/// Ring all-reduce: `N-1` scatter-reduce rounds then `N-1` all-gather rounds,
/// every flow `i -> (i+1) mod N` carrying one `1/N` chunk.
pub fn ring_steps(n: usize, data_bytes: f64) -> Result<CommSchedule, PatternError> {
    need_two(n)?;
    let mut sched = CommSchedule::new(Collective::Ring, n, n);
    push_ring(&mut sched, &(0..n).collect::<Vec<_>>(), n, data_bytes);
    Ok(sched)
}

/// Ring all-reduce over `members` (logical ring order), payload cut into
/// `members.len()` chunks of `data_bytes / len` each.
fn push_ring(sched: &mut CommSchedule, members: &[usize], chunk_count: usize, data_bytes: f64) {
    let m = members.len();
    debug_assert_eq!(m, chunk_count);
    let chunk = data_bytes / m as f64;
    for t in 0..m - 1 {
        let flows = (0..m)
            .map(|i| {
                let c = (i + m - t % m) % m;
                flow(members[i], members[(i + 1) % m], chunk, FlowOp::Reduce, c..c + 1)
            })
            .collect();
        sched.push(flows);
    }
    for t in 0..m - 1 {
        let flows = (0..m)
            .map(|i| {
                let c = (i + 1 + m - t % m) % m;
                flow(members[i], members[(i + 1) % m], chunk, FlowOp::Copy, c..c + 1)
            })
            .collect();
        sched.push(flows);
    }
}

fn floor_pow2(n: usize) -> usize {
    1 << (usize::BITS - 1 - n.leading_zeros())
}

/// Recursive halving-doubling. For non-power-of-two `N` the top `N - P`
/// ranks first fold into ranks `0..N-P` and get the result back at the end.
pub fn hd_steps(n: usize, data_bytes: f64) -> Result<CommSchedule, PatternError> {
    need_two(n)?;
    let p = floor_pow2(n);
    let extra = n - p;
    let mut sched = CommSchedule::new(Collective::Hd, n, p);
    if extra > 0 {
        sched.push(
            (0..extra)
                .map(|i| flow(i + p, i, data_bytes, FlowOp::Reduce, 0..p))
                .collect(),
        );
    }
    let rounds = p.trailing_zeros() as usize;
    // chunk range each rank currently owns
    let mut own: Vec<Range<usize>> = vec![0..p; p];
    let chunk = data_bytes / p as f64;
    for t in 0..rounds {
        let mut flows = Vec::with_capacity(p);
        let mut next = own.clone();
        for i in 0..p {
            let peer = i ^ (1 << t);
            let r = own[i].clone();
            let mid = r.start + r.len() / 2;
            let (keep, give) = if i & (1 << t) == 0 {
                (r.start..mid, mid..r.end)
            } else {
                (mid..r.end, r.start..mid)
            };
            flows.push(flow(i, peer, chunk * give.len() as f64, FlowOp::Reduce, give));
            next[i] = keep;
        }
        own = next;
        sched.push(flows);
    }
    for t in (0..rounds).rev() {
        let mut flows = Vec::with_capacity(p);
        let mut next = own.clone();
        for i in 0..p {
            let peer = i ^ (1 << t);
            let r = own[i].clone();
            flows.push(flow(i, peer, chunk * r.len() as f64, FlowOp::Copy, r.clone()));
            let pr = &own[peer];
            next[i] = r.start.min(pr.start)..r.end.max(pr.end);
        }
        own = next;
        sched.push(flows);
    }
    if extra > 0 {
        sched.push(
            (0..extra)
                .map(|i| flow(i, i + p, data_bytes, FlowOp::Copy, 0..p))
                .collect(),
        );
    }
    Ok(sched)
}

/// Hierarchical ring: chain-reduce inside each server onto its first rank,
/// ring all-reduce across those representatives, chain-broadcast back.
pub fn hierarchical_ring_steps(
    n: usize,
    per_server: usize,
    data_bytes: f64,
) -> Result<CommSchedule, PatternError> {
    if per_server == 0 || n % per_server != 0 {
        return Err(PatternError::UnevenServers {
            ranks: n,
            per_server,
        });
    }
    if n < 2 {
        return Err(PatternError::TooFewRanks(n));
    }
    let servers = n / per_server;
    let chunks = servers.max(1);
    let mut sched = CommSchedule::new(Collective::HierRing, n, chunks);
    let local = |from: usize, to: usize, op: FlowOp| Flow {
        src: from,
        dst: to,
        bytes: data_bytes,
        intra_server: true,
        op,
        chunks: 0..chunks,
    };
    for t in 0..per_server - 1 {
        let from = per_server - 1 - t;
        sched.push(
            (0..servers)
                .map(|s| local(s * per_server + from, s * per_server + from - 1, FlowOp::Reduce))
                .collect(),
        );
    }
    if servers >= 2 {
        let reps: Vec<usize> = (0..servers).map(|s| s * per_server).collect();
        push_ring(&mut sched, &reps, chunks, data_bytes);
    }
    for t in 0..per_server - 1 {
        sched.push(
            (0..servers)
                .map(|s| local(s * per_server + t, s * per_server + t + 1, FlowOp::Copy))
                .collect(),
        );
    }
    Ok(sched)
}

/// Pairwise all-to-all: step `t` sends `i -> (i+t+1) mod N`.
pub fn alltoall_steps(n: usize, data_bytes: f64) -> Result<CommSchedule, PatternError> {
    need_two(n)?;
    let mut sched = CommSchedule::new(Collective::AllToAll, n, n);
    let chunk = data_bytes / n as f64;
    for t in 0..n - 1 {
        sched.push(
            (0..n)
                .map(|i| {
                    let d = (i + t + 1) % n;
                    flow(i, d, chunk, FlowOp::Copy, i..i + 1)
                })
                .collect(),
        );
    }
    Ok(sched)
}

/// Pipeline send/recv between neighbours: one forward and one backward step.
pub fn pipeline_steps(n: usize, data_bytes: f64) -> Result<CommSchedule, PatternError> {
    need_two(n)?;
    let mut sched = CommSchedule::new(Collective::Pipeline, n, 1);
    sched.push(
        (0..n - 1)
            .map(|i| flow(i, i + 1, data_bytes, FlowOp::Copy, 0..1))
            .collect(),
    );
    sched.push(
        (1..n)
            .rev()
            .map(|i| flow(i, i - 1, data_bytes, FlowOp::Copy, 0..1))
            .collect(),
    );
    Ok(sched)
}

/// Parent of 1-based in-order position `x` in a binary tree over `1..=n`,
/// `None` for the root. Positions with lowest set bit `b` have parent `x±b`.
fn inorder_parent(x: usize, n: usize) -> Option<usize> {
    let root = floor_pow2(n);
    if x == root {
        return None;
    }
    let mut cur = x;
    loop {
        let b = cur & cur.wrapping_neg();
        let up = if cur & (b << 1) != 0 { cur - b } else { cur + b };
        if up <= n {
            return Some(up);
        }
        cur = up;
    }
}

/// Parent links of the two trees as `(child rank, parent rank)` pairs.
pub fn double_binary_tree_edges(n: usize) -> [Vec<(usize, usize)>; 2] {
    let mut trees = [Vec::new(), Vec::new()];
    for (which, shift) in [0usize, 1].into_iter().enumerate() {
        // rank r sits at position ((r + shift) mod n) + 1
        let rank_at = |x: usize| (x - 1 + n - shift) % n;
        for x in 1..=n {
            if let Some(p) = inorder_parent(x, n) {
                trees[which].push((rank_at(x), rank_at(p)));
            }
        }
    }
    trees
}

/// Double binary tree all-reduce: two trees, the second shifted by one rank,
/// each reducing half the payload up then broadcasting it down.
pub fn double_binary_tree_steps(n: usize, data_bytes: f64) -> Result<CommSchedule, PatternError> {
    need_two(n)?;
    let trees = double_binary_tree_edges(n);
    let mut sched = CommSchedule::new(Collective::DoubleBinaryTree, n, 2);
    let half = data_bytes / 2.0;
    let mut up = Vec::new();
    let mut down = Vec::new();
    for (t, edges) in trees.iter().enumerate() {
        for &(child, parent) in edges {
            up.push(flow(child, parent, half, FlowOp::Reduce, t..t + 1));
            down.push(flow(parent, child, half, FlowOp::Copy, t..t + 1));
        }
    }
    sched.push(up);
    sched.push(down);
    Ok(sched)
}

/// Leaf-wise permutation test: every rank sends at most once and receives at
/// most once, and cross-leaf flows from different source leaves land on
/// different destination leaves while each source leaf targets one leaf.
pub fn is_leafwise_permutation(step: &CommStep, rank_leaf: &[usize]) -> Result<bool, PatternError> {
    let leaf = |r: usize| rank_leaf.get(r).copied().ok_or(PatternError::UnmappedRank(r));
    let mut sends: BTreeMap<usize, usize> = BTreeMap::new();
    let mut recvs: BTreeMap<usize, usize> = BTreeMap::new();
    let mut fwd: BTreeMap<usize, usize> = BTreeMap::new();
    let mut back: BTreeMap<usize, usize> = BTreeMap::new();
    let mut ok = true;
    for f in &step.flows {
        let (ls, ld) = (leaf(f.src)?, leaf(f.dst)?);
        *sends.entry(f.src).or_default() += 1;
        *recvs.entry(f.dst).or_default() += 1;
        if ls == ld {
            continue;
        }
        if *fwd.entry(ls).or_insert(ld) != ld || *back.entry(ld).or_insert(ls) != ls {
            ok = false;
        }
    }
    Ok(ok && sends.values().all(|&c| c <= 1) && recvs.values().all(|&c| c <= 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(step: &CommStep) -> Vec<(usize, usize)> {
        step.flows.iter().map(|f| (f.src, f.dst)).collect()
    }

    #[test]
    fn ring_first_step() {
        let s = ring_steps(4, 400.0).unwrap();
        assert_eq!(s.steps.len(), 6);
        assert_eq!(pairs(&s.steps[0]), vec![(0, 1), (1, 2), (2, 3), (3, 0)]);
        assert!(s.steps[0].flows.iter().all(|f| f.bytes == 100.0));
    }

    #[test]
    fn ring_of_two() {
        let s = ring_steps(2, 1.0).unwrap();
        assert_eq!(s.steps.len(), 2);
        for st in &s.steps {
            assert_eq!(pairs(st), vec![(0, 1), (1, 0)]);
        }
    }

    #[test]
    fn ring_bytes_per_rank() {
        // brute-force sum of per-step chunk sizes
        let s = ring_steps(8, 64.0).unwrap();
        let mut total = 0.0;
        for st in &s.steps {
            for f in &st.flows {
                if f.src == 3 {
                    total += f.bytes;
                }
            }
        }
        assert_eq!(total, 2.0 * 7.0 / 8.0 * 64.0);
        assert_eq!(s.bytes_sent_by(3), total);
    }

    #[test]
    fn too_few_ranks() {
        for algo in Collective::ALL {
            assert!(generate(algo, 1, 1, 1.0).is_err(), "{algo}");
        }
    }

    #[test]
    fn hd_pairs() {
        let s = hd_steps(4, 1.0).unwrap();
        assert_eq!(s.steps.len(), 4);
        assert_eq!(pairs(&s.steps[0]), vec![(0, 1), (1, 0), (2, 3), (3, 2)]);
        assert_eq!(pairs(&s.steps[1]), vec![(0, 2), (1, 3), (2, 0), (3, 1)]);
        // data halves in reduce-scatter
        assert_eq!(s.steps[0].flows[0].bytes, 0.5);
        assert_eq!(s.steps[1].flows[0].bytes, 0.25);
    }

    #[test]
    fn hd_non_power_of_two() {
        let s = hd_steps(6, 1.0).unwrap();
        assert_eq!(pairs(&s.steps[0]), vec![(4, 0), (5, 1)]);
        assert_eq!(pairs(s.steps.last().unwrap()), vec![(0, 4), (1, 5)]);
        assert_eq!(s.steps.len(), 2 + 4);
        for st in &s.steps[1..5] {
            assert!(st.flows.iter().all(|f| f.src < 4 && f.dst < 4));
        }
    }

    #[test]
    fn hierarchical_shapes() {
        let s = hierarchical_ring_steps(8, 4, 1.0).unwrap();
        let fabric: Vec<_> = s
            .steps
            .iter()
            .flat_map(|st| &st.flows)
            .filter(|f| !f.intra_server)
            .map(|f| (f.src, f.dst))
            .collect();
        assert!(!fabric.is_empty());
        assert!(fabric.iter().all(|&(a, b)| (a, b) == (0, 4) || (a, b) == (4, 0)));

        let s = hierarchical_ring_steps(16, 4, 1.0).unwrap();
        let first_inter = s
            .steps
            .iter()
            .find(|st| st.flows.iter().any(|f| !f.intra_server))
            .unwrap();
        assert_eq!(pairs(first_inter), vec![(0, 4), (4, 8), (8, 12), (12, 0)]);

        let s = hierarchical_ring_steps(4, 4, 1.0).unwrap();
        assert!(s.steps.iter().flat_map(|st| &st.flows).all(|f| f.intra_server));

        assert!(hierarchical_ring_steps(6, 4, 1.0).is_err());
    }

    #[test]
    fn alltoall_formula() {
        let s = alltoall_steps(4, 4.0).unwrap();
        assert_eq!(s.steps.len(), 3);
        assert_eq!(pairs(&s.steps[0]), vec![(0, 1), (1, 2), (2, 3), (3, 0)]);
        assert_eq!(pairs(&s.steps[2]), vec![(0, 3), (1, 0), (2, 1), (3, 2)]);
    }

    #[test]
    fn pipeline_neighbours() {
        let s = pipeline_steps(3, 1.0).unwrap();
        assert_eq!(pairs(&s.steps[0]), vec![(0, 1), (1, 2)]);
        assert_eq!(pairs(&s.steps[1]), vec![(2, 1), (1, 0)]);
    }

    #[test]
    fn dbt_small() {
        let s = double_binary_tree_steps(2, 2.0).unwrap();
        assert_eq!(s.steps.len(), 2);
        assert_eq!(s.steps[0].flows.len(), 2);
        let s = double_binary_tree_steps(8, 2.0).unwrap();
        assert_eq!(s.steps[0].flows.len(), 14);
        assert_eq!(s.steps[1].flows.len(), 14);
    }

    #[test]
    fn dbt_leaf_in_exactly_one_tree() {
        for n in (2..=64).step_by(2) {
            let trees = double_binary_tree_edges(n);
            for r in 0..n {
                let leaf_in = trees
                    .iter()
                    .filter(|edges| edges.iter().all(|&(_, p)| p != r))
                    .count();
                assert_eq!(leaf_in, 1, "n={n} rank={r}");
            }
            for edges in &trees {
                assert_eq!(edges.len(), n - 1);
            }
        }
    }

    #[test]
    fn leafwise_examples() {
        let ring = ring_steps(8, 1.0).unwrap();
        let leaves: Vec<usize> = (0..8).map(|r| r / 2).collect();
        assert!(ring
            .steps
            .iter()
            .all(|s| is_leafwise_permutation(s, &leaves).unwrap()));

        // two source leaves aimed at the same destination leaf
        let step = CommStep {
            step_index: 0,
            flows: vec![
                flow(0, 1, 1.0, FlowOp::Copy, 0..1),
                flow(3, 2, 1.0, FlowOp::Copy, 0..1),
            ],
        };
        assert!(!is_leafwise_permutation(&step, &[0, 1, 1, 2]).unwrap());

        let single = CommStep {
            step_index: 0,
            flows: vec![flow(0, 1, 1.0, FlowOp::Copy, 0..1)],
        };
        assert!(is_leafwise_permutation(&single, &[0, 0]).unwrap());
        assert_eq!(
            is_leafwise_permutation(&single, &[0]).unwrap_err(),
            PatternError::UnmappedRank(1)
        );
    }

    #[test]
    fn collective_names_roundtrip() {
        for algo in Collective::ALL {
            assert_eq!(algo.name().parse::<Collective>().unwrap(), algo);
        }
        assert!("bogus".parse::<Collective>().is_err());
    }
}
