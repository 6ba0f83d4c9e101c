//! Monte Carlo estimate of ECMP hash collisions on full leaf-wise traffic.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ecmp::{ecmp_hash, FiveTuple};
use crate::topology::{ClusterConfig, PhysicalCluster};

/// Fabric used for a scale of `gpus`: one GPU per server, `L` the largest
/// power of two with `2 L^2 <= gpus` that divides it, `S = gpus / L`.
pub fn scale_shape(gpus: usize) -> ClusterConfig {
    let mut l = 1usize;
    while 2 * (2 * l) * (2 * l) <= gpus && gpus % (2 * l) == 0 {
        l *= 2;
    }
    ClusterConfig::new(l, gpus / l, 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionParams {
    pub scales: Vec<usize>,
    pub trials: usize,
    pub seeds: Vec<u64>,
}

impl Default for CollisionParams {
    fn default() -> Self {
        Self {
            scales: vec![64, 256, 1024, 2048],
            trials: 10_000,
            seeds: vec![1, 2, 3],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionScale {
    pub scale: usize,
    pub leaves: usize,
    pub spines: usize,
    /// Trials over all seeds.
    pub trials: usize,
    /// Trials in which some fabric link carries two or more flows.
    pub any_hits: usize,
    /// Trials in which some fabric link carries six or more flows.
    pub ge6_hits: usize,
    pub p_any: f64,
    pub p_any_ci95: (f64, f64),
    pub p_ge6: f64,
    pub p_ge6_ci95: (f64, f64),
    pub p_any_per_seed: Vec<f64>,
    /// Share of flows by contention degree (most flows on any of its links).
    pub flow_degree: BTreeMap<usize, f64>,
}

/// Wilson score interval for `k` hits out of `n`.
pub fn wilson(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n_f = n as f64;
    let p = k as f64 / n_f;
    let denom = 1.0 + z * z / n_f;
    let centre = (p + z * z / (2.0 * n_f)) / denom;
    let half = z * (p * (1.0 - p) / n_f + z * z / (4.0 * n_f * n_f)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Uplinks and downlinks looked up once per fabric.
struct Table {
    cfg: ClusterConfig,
    uplinks: Vec<Vec<usize>>,
    down: Vec<Vec<Vec<usize>>>,
    spine_of: Vec<usize>,
}

impl Table {
    fn new(cluster: &PhysicalCluster) -> Self {
        let cfg = cluster.config().clone();
        let mut spine_of = vec![usize::MAX; cfg.leaves * cfg.uplinks_per_leaf()];
        let mut uplinks = vec![Vec::new(); cfg.leaves];
        let mut down = vec![vec![Vec::new(); cfg.spines]; cfg.leaves];
        for n in 0..cfg.leaves {
            for p in cfg.leaf_ports(n) {
                if let Some(m) = cluster.spine_of_peer(p) {
                    spine_of[p] = m;
                    uplinks[n].push(p);
                    down[n][m].push(p);
                }
            }
        }
        Self {
            cfg,
            uplinks,
            down,
            spine_of,
        }
    }

    /// Fabric link indices (up, down) for one cross-leaf flow.
    fn route(&self, src: usize, dst: usize, port: u16) -> (usize, usize) {
        let t = FiveTuple::new(&self.cfg, src, dst, port);
        let ups = &self.uplinks[self.cfg.leaf_of_gpu(src)];
        let up = ups[ecmp_hash(&t, 0) as usize % ups.len()];
        let downs = &self.down[self.cfg.leaf_of_gpu(dst)][self.spine_of[up]];
        let dn = downs[ecmp_hash(&t, 1) as usize % downs.len()];
        (2 * up, 2 * dn + 1)
    }
}

struct SeedRun {
    trials: usize,
    any_hits: usize,
    ge6_hits: usize,
    degree: BTreeMap<usize, usize>,
}

fn derangement(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    if n < 2 {
        return p;
    }
    loop {
        p.shuffle(rng);
        if p.iter().enumerate().all(|(i, &v)| i != v) {
            return p;
        }
    }
}

fn run_seed(scale: usize, trials: usize, seed: u64) -> SeedRun {
    let cluster = PhysicalCluster::build(scale_shape(scale)).expect("valid shape");
    let table = Table::new(&cluster);
    let (l, s) = (table.cfg.leaves, table.cfg.spines);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (scale as u64).rotate_left(32));
    let mut counts = vec![0u32; 2 * l * table.cfg.uplinks_per_leaf()];
    let mut links: Vec<(usize, usize)> = Vec::with_capacity(l * s);
    let mut run = SeedRun {
        trials,
        any_hits: 0,
        ge6_hits: 0,
        degree: BTreeMap::new(),
    };
    let mut pos: Vec<usize> = (0..s).collect();
    for _ in 0..trials {
        links.clear();
        let sigma = derangement(&mut rng, l);
        for (n, &target) in sigma.iter().enumerate() {
            pos.shuffle(&mut rng);
            for (i, &j) in pos.iter().enumerate() {
                let port = rand::Rng::gen_range(&mut rng, 32768..=60999u16);
                links.push(table.route(n * s + i, target * s + j, port));
            }
        }
        let mut max = 0;
        for &(u, d) in &links {
            counts[u] += 1;
            counts[d] += 1;
            max = max.max(counts[u]).max(counts[d]);
        }
        run.any_hits += usize::from(max >= 2);
        run.ge6_hits += usize::from(max >= 6);
        for &(u, d) in &links {
            *run.degree.entry(counts[u].max(counts[d]) as usize).or_default() += 1;
        }
        for &(u, d) in &links {
            counts[u] = 0;
            counts[d] = 0;
        }
    }
    run
}

/// For every scale, `trials` random leaf-wise permutation steps per seed with
/// every GPU sending (leaf `n` to leaf `sigma(n)`, a random derangement),
/// routed by ECMP with random source ports.
pub fn collision_monte_carlo(params: &CollisionParams) -> Vec<CollisionScale> {
    let jobs: Vec<(usize, u64)> = params
        .scales
        .iter()
        .flat_map(|&g| params.seeds.iter().map(move |&s| (g, s)))
        .collect();
    let runs: Vec<((usize, u64), SeedRun)> = jobs
        .par_iter()
        .map(|&(g, s)| ((g, s), run_seed(g, params.trials, s)))
        .collect();
    params
        .scales
        .iter()
        .map(|&g| {
            let cfg = scale_shape(g);
            let mine: Vec<&SeedRun> = runs.iter().filter(|r| r.0 .0 == g).map(|r| &r.1).collect();
            let trials: usize = mine.iter().map(|r| r.trials).sum();
            let any_hits: usize = mine.iter().map(|r| r.any_hits).sum();
            let ge6_hits: usize = mine.iter().map(|r| r.ge6_hits).sum();
            let mut degree: BTreeMap<usize, usize> = BTreeMap::new();
            for r in &mine {
                for (&d, &c) in &r.degree {
                    *degree.entry(d).or_default() += c;
                }
            }
            let flows: usize = degree.values().sum();
            CollisionScale {
                scale: g,
                leaves: cfg.leaves,
                spines: cfg.spines,
                trials,
                any_hits,
                ge6_hits,
                p_any: any_hits as f64 / trials.max(1) as f64,
                p_any_ci95: wilson(any_hits, trials, 1.96),
                p_ge6: ge6_hits as f64 / trials.max(1) as f64,
                p_ge6_ci95: wilson(ge6_hits, trials, 1.96),
                p_any_per_seed: mine
                    .iter()
                    .map(|r| r.any_hits as f64 / r.trials.max(1) as f64)
                    .collect(),
                flow_degree: degree
                    .into_iter()
                    .map(|(d, c)| (d, c as f64 / flows.max(1) as f64))
                    .collect(),
            }
        })
        .collect()
}

/// `scale,count,fraction` rows: share of flows whose busiest link carries
/// `count` flows.
pub fn collisions_csv(results: &[CollisionScale]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["scale", "count", "fraction"]).expect("in-memory write");
    for r in results {
        for (d, f) in &r.flow_degree {
            w.write_record([r.scale.to_string(), d.to_string(), format!("{f:.6}")])
                .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

/// Share of trials in which `k` flows leaving one leaf over `k` uplinks put
/// two flows on the same uplink.
pub fn ecmp_birthday(k: usize, trials: usize, seed: u64) -> f64 {
    let cluster = PhysicalCluster::build(ClusterConfig::new(2, k, 1)).expect("valid shape");
    let table = Table::new(&cluster);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    let mut used = vec![false; 2 * table.cfg.leaves * table.cfg.uplinks_per_leaf()];
    for _ in 0..trials {
        used.iter_mut().for_each(|u| *u = false);
        let mut clash = false;
        for i in 0..k {
            let port = rand::Rng::gen_range(&mut rng, 32768..=60999u16);
            let (u, _) = table.route(i, k + i, port);
            clash |= std::mem::replace(&mut used[u], true);
        }
        hits += usize::from(clash);
    }
    hits as f64 / trials.max(1) as f64
}
