use std::sync::Arc;

use dlsplan_core::central::{brute_force_opt, cls, coordinate_descent, lazy_greedy_argmax, naive_argmax, ScanOrder};
use dlsplan_core::dls::{dls_run, find_proposal, DlsOptions, MessageKind, Schedule};
use dlsplan_core::objective::FnOracle;
use dlsplan_core::solver::improvement_threshold;
use dlsplan_core::{CountingOracle, PartitionMatroid, SetOracle, SolutionSet, TrajId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Weighted coverage minus modular cost plus an offset keeping it
/// non-negative. Submodular, generally non-monotone.
struct Coverage {
    weights: Vec<f64>,
    covers: Vec<Vec<usize>>,
    cost: Vec<f64>,
    offset: f64,
}

impl SetOracle for Coverage {
    fn value(&self, s: &SolutionSet) -> f64 {
        let mut hit = vec![false; self.weights.len()];
        let mut v = self.offset;
        for (_, id) in s.assigned() {
            for &e in &self.covers[id.index()] {
                hit[e] = true;
            }
            v -= self.cost[id.index()];
        }
        v + hit
            .iter()
            .zip(&self.weights)
            .filter(|(h, _)| **h)
            .map(|(_, w)| w)
            .sum::<f64>()
    }

    fn offset(&self) -> f64 {
        self.offset
    }
}

fn random_coverage(rng: &mut ChaCha8Rng, robots: usize, per_robot: usize) -> (PartitionMatroid, Coverage) {
    let elements = rng.gen_range(3..10);
    let weights: Vec<f64> = (0..elements).map(|_| rng.gen_range(0.1..5.0)).collect();
    let mut covers = Vec::new();
    let mut cost = Vec::new();
    let mut owners = Vec::new();
    for r in 0..robots {
        for _ in 0..rng.gen_range(1..=per_robot) {
            covers.push((0..elements).filter(|_| rng.gen_bool(0.35)).collect::<Vec<_>>());
            cost.push(rng.gen_range(0.0..4.0));
            owners.push(r);
        }
    }
    let offset = cost.iter().sum::<f64>() + rng.gen_range(0.0..1.0);
    let f = Coverage {
        weights,
        covers,
        cost,
        offset,
    };
    let empty = f.value(&SolutionSet::empty(robots));
    let entries: Vec<(usize, f64)> = owners
        .iter()
        .enumerate()
        .map(|(k, &r)| {
            let s = SolutionSet::empty(robots).with_added(r, TrajId(k as u32)).unwrap();
            (r, f.value(&s) - empty)
        })
        .collect();
    (PartitionMatroid::new(robots, &entries).unwrap(), f)
}

fn random_subset(rng: &mut ChaCha8Rng, m: &PartitionMatroid) -> SolutionSet {
    let mut s = SolutionSet::empty(m.n_robots());
    for r in 0..m.n_robots() {
        let part = m.partition(r);
        if rng.gen_bool(0.5) {
            s.add(r, part[rng.gen_range(0..part.len())]).unwrap();
        }
    }
    s
}

/// Every set reachable by one delete, add or swap.
fn neighbours(m: &PartitionMatroid, s: &SolutionSet) -> Vec<SolutionSet> {
    let mut out = Vec::new();
    for r in 0..m.n_robots() {
        match s.slot(r) {
            Some(held) => {
                out.push(s.with_deleted(r, held).unwrap());
                for &a in m.partition(r) {
                    if a != held {
                        out.push(s.with_deleted(r, held).unwrap().with_added(r, a).unwrap());
                    }
                }
            }
            None => {
                for &a in m.partition(r) {
                    out.push(s.with_added(r, a).unwrap());
                    for (r2, d) in s.assigned() {
                        out.push(s.with_deleted(r2, d).unwrap().with_added(r, a).unwrap());
                    }
                }
            }
        }
    }
    out
}

#[test]
fn lazy_argmax_matches_naive() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut lazy_calls, mut naive_calls) = (0, 0);
    for _ in 0..200 {
        let (m, f) = random_coverage(&mut rng, 4, 8);
        let s = random_subset(&mut rng, &m);
        let free: Vec<TrajId> = (0..m.n_robots())
            .filter(|&r| s.slot(r).is_none())
            .flat_map(|r| m.partition(r).to_vec())
            .collect();
        let bounds: Vec<_> = free.iter().map(|&id| (id, m.standalone(id))).collect();
        let lo = CountingOracle::without_memo(&f);
        let no = CountingOracle::without_memo(&f);
        let a = lazy_greedy_argmax(&m, &bounds, &s, &lo).unwrap();
        let b = naive_argmax(&m, &free, &s, &no).unwrap();
        assert_eq!(a.map(|x| x.0), b.map(|x| x.0));
        if let (Some(a), Some(b)) = (a, b) {
            assert!((a.1 - b.1).abs() < 1e-12);
        }
        lazy_calls += lo.calls();
        naive_calls += no.calls();
    }
    assert!(lazy_calls < naive_calls);
}

#[test]
fn lazy_proposal_matches_exhaustive_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..300 {
        let (m, f) = random_coverage(&mut rng, 3, 6);
        let s = random_subset(&mut rng, &m);
        let n = m.len();
        let alpha = rng.gen_range(0.1..50.0);
        for robot in 0..m.n_robots() {
            let part = Arc::new(m.sorted_partition(robot));
            let o = CountingOracle::new(&f);
            let a = find_proposal(robot, part.clone(), &s, alpha, n, &o, &m, true);
            let b = find_proposal(robot, part, &s, alpha, n, &o, &m, false);
            assert_eq!(a, b);
        }
    }
}

#[test]
fn proposals_clear_the_threshold_or_none_exists() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..300 {
        let (m, f) = random_coverage(&mut rng, 3, 4);
        let s = random_subset(&mut rng, &m);
        let alpha = rng.gen_range(0.1..5.0);
        let n = m.len();
        let threshold = improvement_threshold(f.value(&s), alpha, n);
        for robot in 0..m.n_robots() {
            let o = CountingOracle::new(&f);
            let (d, a) = find_proposal(robot, Arc::new(m.sorted_partition(robot)), &s, alpha, n, &o, &m, true);
            if d.is_none() && a.is_none() {
                // No deletion alone, and no deletion-plus-own-addition, clears it.
                let mut options = vec![s.clone()];
                options.extend(s.assigned().map(|(r, id)| s.with_deleted(r, id).unwrap()));
                for base in options {
                    if f.value(&base) >= threshold && base != s {
                        panic!("missed an improving deletion");
                    }
                    if base.slot(robot).is_none() {
                        for &x in m.partition(robot) {
                            assert!(f.value(&base.with_added(robot, x).unwrap()) < threshold);
                        }
                    }
                }
            } else {
                let mut t = s.clone();
                if let Some(d) = d {
                    t.delete(m.owner(d), d).unwrap();
                }
                if let Some(a) = a {
                    assert_eq!(m.owner(a), robot);
                    t.add(robot, a).unwrap();
                }
                assert!(f.value(&t) >= threshold);
            }
        }
    }
}

#[test]
fn lazy_scan_stops_at_first_hopeless_candidate() {
    // Robot 1 holds b. Robot 0's trajectories have standalone gains 5, 3, 1
    // and a1 overlaps b. g(S) = 110 and α/N⁴ = 4/110 put the threshold at
    // 114: after deleting b the deficiency is 14, after NOP it is 4, so a1 is
    // the only candidate worth evaluating.
    let g = |s: &SolutionSet| {
        let has = |k: u32| s.assigned().any(|(_, id)| id == TrajId(k));
        let mut v = 100.0;
        if has(3) {
            v += 10.0;
        }
        if has(0) {
            v += 5.0;
        }
        if has(1) {
            v += 3.0;
        }
        if has(2) {
            v += 1.0;
        }
        if has(0) && has(3) {
            v -= 3.0;
        }
        v
    };
    let f = FnOracle(g);
    let m = PartitionMatroid::new(2, &[(0, 5.0), (0, 3.0), (0, 1.0), (1, 10.0)]).unwrap();
    let s = SolutionSet::empty(2).with_added(1, TrajId(3)).unwrap();
    let alpha = 4.0 * 256.0 / 110.0;
    let part = Arc::new(m.sorted_partition(0));
    let run = |lazy| {
        let o = CountingOracle::without_memo(&f);
        let p = find_proposal(0, part.clone(), &s, alpha, 4, &o, &m, lazy);
        (p, o.calls())
    };
    let (lazy, lazy_calls) = run(true);
    let (naive, naive_calls) = run(false);
    assert_eq!(lazy, (None, None));
    assert_eq!(naive, (None, None));
    // Lazy: g(S), g(S - b), g(S + a1). Naive adds three candidates per branch.
    assert_eq!((lazy_calls, naive_calls), (3, 8));
}

#[test]
fn coordinate_descent_depends_on_order() {
    // A and B see the same target: information 10 either way, costs 1 and 6.
    let f = FnOracle(|s: &SolutionSet| {
        let ids: Vec<_> = s.assigned().map(|(_, id)| id.0).collect();
        let info = if ids.is_empty() { 0.0 } else { 10.0 };
        let cost: f64 = ids.iter().map(|&k| if k == 0 { 1.0 } else { 6.0 }).sum();
        7.0 + info - cost
    });
    let m = PartitionMatroid::new(2, &[(0, 9.0), (1, 4.0)]).unwrap();
    for lazy in [false, true] {
        let cheap = coordinate_descent(&m, &[0, 1], &CountingOracle::new(&f), lazy).unwrap();
        let expensive = coordinate_descent(&m, &[1, 0], &CountingOracle::new(&f), lazy).unwrap();
        assert!((cheap.g_value - 7.0 - 9.0).abs() < 1e-12);
        assert!((expensive.g_value - 7.0 - 4.0).abs() < 1e-12);
    }
    assert!(coordinate_descent(&m, &[0, 0], &CountingOracle::new(&f), true).is_err());
}

#[test]
fn brute_force_finds_the_maximum() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..100 {
        let (m, f) = random_coverage(&mut rng, 3, 3);
        let best = f.value(&brute_force_opt(&m, &f).unwrap());
        // Independent enumeration by recursion over robots.
        fn rec(r: usize, s: SolutionSet, m: &PartitionMatroid, f: &Coverage, best: &mut f64) {
            if r == m.n_robots() {
                *best = best.max(f.value(&s));
                return;
            }
            rec(r + 1, s.clone(), m, f, best);
            for &a in m.partition(r) {
                rec(r + 1, s.with_added(r, a).unwrap(), m, f, best);
            }
        }
        let mut expect = f64::NEG_INFINITY;
        rec(0, SolutionSet::empty(m.n_robots()), &m, &f, &mut expect);
        assert_eq!(best, expect);
    }
}

#[test]
fn local_search_outputs_are_approximate_local_optima() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..100 {
        let (m, f) = random_coverage(&mut rng, 3, 4);
        let alpha = 1.0;
        let n = m.len();
        let opt = f.value(&brute_force_opt(&m, &f).unwrap());
        let c = cls(&m, alpha, &CountingOracle::new(&f), ScanOrder::Canonical).unwrap();
        let d = dls_run(&m, alpha, &f, DlsOptions::default()).unwrap();
        assert!(c.g_value >= opt / (4.0 * (1.0 + alpha)) - 1e-9);
        assert!(d.result.g_value >= opt / (4.0 * (1.0 + alpha)) - 1e-9);
        // The first round ends where no local move clears the threshold.
        let s1 = &d.round_solutions[0];
        let t = improvement_threshold(f.value(s1), alpha, n);
        for nb in neighbours(&m, s1) {
            assert!(f.value(&nb) < t, "round 1 ended at a non-local optimum");
        }
    }
}

#[test]
fn warm_start_additions_follow_greedy() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut checked = 0;
    for _ in 0..150 {
        let (m, f) = random_coverage(&mut rng, 4, 5);
        let run = dls_run(&m, 1.0, &f, DlsOptions::default()).unwrap();
        let mut s = SolutionSet::empty(m.n_robots());
        // Seeded with the best singleton from the announcements.
        let first = m.best_singleton().unwrap();
        s.add(m.owner(first), first).unwrap();
        for rec in run
            .log
            .iter()
            .filter(|r| r.round == 1 && r.kind == MessageKind::Warm && r.committed)
        {
            let free: Vec<TrajId> = (0..m.n_robots())
                .filter(|&r| s.slot(r).is_none())
                .flat_map(|r| m.partition(r).to_vec())
                .collect();
            let best = naive_argmax(&m, &free, &s, &CountingOracle::new(&f)).unwrap().unwrap();
            assert_eq!(rec.a, Some(best.0));
            s.add(m.owner(best.0), best.0).unwrap();
            checked += 1;
        }
    }
    assert!(checked > 50, "only {checked} warm additions checked");
}

#[test]
fn concurrent_schedule_keeps_the_guarantee() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for k in 0..200 {
        let (m, f) = random_coverage(&mut rng, 4, 3);
        let opt = f.value(&brute_force_opt(&m, &f).unwrap());
        let opts = DlsOptions {
            schedule: Schedule::Concurrent {
                seed: k,
                delivery: rng.gen_range(0.05..1.0),
            },
            ..DlsOptions::default()
        };
        let run = dls_run(&m, 1.0, &f, opts).unwrap();
        assert!(run.result.g_value >= opt / 8.0 - 1e-9);
        let seqs: Vec<u64> = run.log.iter().map(|r| r.seq).collect();
        assert!(seqs.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn rejects_bad_parameters() {
    let m = PartitionMatroid::new(1, &[(0, 1.0)]).unwrap();
    let f = FnOracle(|s: &SolutionSet| 1.0 + s.len() as f64);
    assert!(dls_run(&m, 0.0, &f, DlsOptions::default()).is_err());
    let bad = DlsOptions {
        schedule: Schedule::Concurrent { seed: 0, delivery: 0.0 },
        ..DlsOptions::default()
    };
    assert!(dls_run(&m, 1.0, &f, bad).is_err());
    assert!(cls(&m, -1.0, &CountingOracle::new(&f), ScanOrder::Canonical).is_err());
}
