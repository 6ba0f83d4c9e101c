use proptest::prelude::*;

use vclos::placement::{commit, place, JobRequest, PlaceOptions, PlaceStats, Strategy as Placer};
use vclos::sim::{max_min_share, MmFlow};
use vclos::topology::Reservation;
use vclos::{ClusterConfig, JobId, PhysicalCluster};

fn flows() -> impl Strategy<Value = (Vec<MmFlow>, Vec<f64>)> {
    (1usize..8).prop_flat_map(|links| {
        let caps = prop::collection::vec(0.5f64..10.0, links);
        let flow = (
            prop::collection::btree_set(0..links, 0..=links.min(3)),
            prop_oneof![Just(f64::INFINITY), 0.1f64..5.0],
        )
            .prop_map(|(p, demand)| MmFlow {
                path: p.into_iter().collect(),
                demand,
            });
        (prop::collection::vec(flow, 0..10), caps)
    })
}

proptest! {
    #[test]
    fn max_min_is_feasible_and_every_flow_is_bottlenecked((flows, caps) in flows()) {
        let rate = max_min_share(&flows, &caps);
        let mut load = vec![0.0; caps.len()];
        for (f, &r) in flows.iter().zip(&rate) {
            prop_assert!(r >= 0.0 && r <= f.demand * (1.0 + 1e-9));
            for &l in &f.path {
                load[l] += r;
            }
        }
        for (l, &c) in caps.iter().enumerate() {
            prop_assert!(load[l] <= c * (1.0 + 1e-9) + 1e-12, "link {} over capacity", l);
        }
        // each flow either got its demand or crosses a saturated link where
        // nobody else gets more
        for (i, f) in flows.iter().enumerate() {
            if rate[i] >= f.demand * (1.0 - 1e-9) {
                continue;
            }
            let bottleneck = f.path.iter().any(|&l| {
                load[l] >= caps[l] * (1.0 - 1e-9)
                    && flows.iter().zip(&rate).all(|(g, &r)| !g.path.contains(&l) || r <= rate[i] * (1.0 + 1e-9))
            });
            prop_assert!(bottleneck, "flow {} has no bottleneck", i);
        }
    }

    #[test]
    fn reserve_release_round_trips(ops in prop::collection::vec((0usize..32, 0usize..16, any::<bool>()), 1..30)) {
        let empty = PhysicalCluster::build(ClusterConfig::new(4, 8, 4)).unwrap();
        let mut c = empty.clone();
        let mut held: Vec<JobId> = Vec::new();
        for (k, (gpu, port, release)) in ops.into_iter().enumerate() {
            if release && !held.is_empty() {
                let job = held.remove(k % held.len());
                c.release(job).unwrap();
            } else {
                let job = JobId(k as u64);
                let before = c.clone();
                let res = Reservation { gpus: vec![gpu], ports: vec![port * 2] };
                match c.reserve(job, res) {
                    Ok(()) => held.push(job),
                    // a refused reservation leaves no trace
                    Err(_) => prop_assert_eq!(&c, &before),
                }
            }
            prop_assert!(c.check_invariants().is_ok());
            let owned: usize = c.reservations().values().map(|r| r.gpus.len()).sum();
            prop_assert_eq!(c.idle_gpus() + owned, 32);
        }
        for job in held {
            c.release(job).unwrap();
        }
        prop_assert_eq!(c, empty);
    }

    #[test]
    fn committed_vclos_placements_own_what_they_claim(sizes in prop::collection::vec(1usize..=16, 1..8), ocs in any::<bool>()) {
        let cfg = ClusterConfig::new(4, 8, 4);
        let cfg = if ocs { cfg.with_ocs(1) } else { cfg };
        let mut c = PhysicalCluster::build(cfg).unwrap();
        let strategy = if ocs { Placer::OcsVClos } else { Placer::VClos };
        for (k, n) in sizes.into_iter().enumerate() {
            let job = JobId(k as u64);
            let mut stats = PlaceStats::default();
            let Some(alloc) = place(strategy, &c, JobRequest { job, gpus: n }, &PlaceOptions::default(), &mut stats) else {
                continue;
            };
            prop_assert!(alloc.gpus.len() >= n);
            commit(&mut c, &alloc).unwrap();
            prop_assert!(c.check_invariants().is_ok());
            for &g in &alloc.gpus {
                prop_assert_eq!(c.gpu_owner(g), Some(job));
            }
        }
    }
}
