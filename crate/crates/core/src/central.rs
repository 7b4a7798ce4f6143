//! Centralized solvers: two-round local search, sequential coordinate
//! descent with accelerated greedy, and exhaustive search for small
//! instances.

use std::sync::Arc;
use std::time::Instant;

use crate::dls::proposal::find_proposal;
use crate::error::{Error, Result};
use crate::objective::{CountingOracle, PartitionMatroid, SetOracle, SolutionSet, TrajId};
use crate::solver::{improvement_threshold, LocalOp, OpKind, RunMetrics, SolverResult};

/// Order in which local search looks for an improving operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScanOrder {
    /// All deletions, then additions, then swaps, ids ascending.
    #[default]
    Canonical,
    /// The order the distributed protocol visits operations under its
    /// round-robin schedule: robots polled starting after the last one that
    /// changed the solution, each scanning deletions in id order with NOP
    /// last and its own trajectories by standalone score.
    RoundRobin,
}

fn finish<O: SetOracle>(
    oracle: &CountingOracle<O>,
    solution: SolutionSet,
    op_trace: Vec<LocalOp>,
    started: Instant,
    mut metrics: RunMetrics,
) -> SolverResult {
    metrics.oracle_calls += oracle.calls();
    metrics.oracle_requests += oracle.requests();
    metrics.wall_time_s = started.elapsed().as_secs_f64();
    let g_value = oracle.inner().value(&solution);
    SolverResult {
        j_value: g_value - oracle.offset(),
        g_value,
        solution,
        metrics,
        op_trace,
    }
}

/// Centralized local search over a partition matroid.
///
/// Two rounds; each starts from the best singleton and applies the first
/// admissible Delete, Add or Swap that multiplies `g` by at least
/// `1 + α/N⁴` until none exists, then removes its solution from the ground
/// set. `N` is the initial ground-set size for both rounds. Returns the
/// better of the two solutions.
pub fn cls<O: SetOracle>(
    matroid: &PartitionMatroid,
    alpha: f64,
    oracle: &CountingOracle<O>,
    order: ScanOrder,
) -> Result<SolverResult> {
    if !(alpha > 0.0) {
        return Err(Error::Contract(format!("alpha must be positive, got {alpha}")));
    }
    let started = Instant::now();
    let n = matroid.len();
    let mut ground = matroid.clone();
    let mut trace = Vec::new();
    let mut rounds: Vec<(SolutionSet, f64)> = Vec::with_capacity(2);
    for round in 1..=2u8 {
        let mut s = SolutionSet::empty(matroid.n_robots());
        if let Some(best) = ground.best_singleton() {
            s.add(ground.owner(best), best)?;
        }
        let mut last = ground.n_robots().saturating_sub(1);
        loop {
            let g = oracle.g(&s);
            let found = match order {
                ScanOrder::Canonical => canonical_step(&ground, &s, alpha, n, oracle),
                ScanOrder::RoundRobin => round_robin_step(&ground, &s, alpha, n, oracle, &mut last),
            };
            let Some((d, a)) = found else { break };
            if let Some(d) = d {
                s.delete(ground.owner(d), d)?;
            }
            if let Some(a) = a {
                s.add(ground.owner(a), a)?;
            }
            let g_after = oracle.g(&s);
            trace.extend(LocalOp::from_pair(round, d, a, g, g_after));
        }
        let g = oracle.g(&s);
        ground.remove(s.key());
        rounds.push((s, g));
    }
    let (s2, g2) = rounds.pop().expect("two rounds");
    let (s1, g1) = rounds.pop().expect("two rounds");
    let best = if g1 >= g2 { s1 } else { s2 };
    let metrics = RunMetrics {
        commits: trace.len() as u64,
        rounds: 2,
        ..RunMetrics::default()
    };
    Ok(finish(oracle, best, trace, started, metrics))
}

fn canonical_step<O: SetOracle>(
    ground: &PartitionMatroid,
    s: &SolutionSet,
    alpha: f64,
    n: usize,
    oracle: &CountingOracle<O>,
) -> Option<(Option<TrajId>, Option<TrajId>)> {
    let threshold = improvement_threshold(oracle.g(s), alpha, n);
    let held = s.key();
    for &d in &held {
        let cand = s.with_deleted(ground.owner(d), d).ok()?;
        if oracle.g(&cand) >= threshold {
            return Some((Some(d), None));
        }
    }
    let ids = ground.ids();
    for &a in &ids {
        let robot = ground.owner(a);
        if s.slot(robot).is_some() {
            continue;
        }
        let cand = s.with_added(robot, a).ok()?;
        if oracle.g(&cand) >= threshold {
            return Some((None, Some(a)));
        }
    }
    for &d in &held {
        let minus = s.with_deleted(ground.owner(d), d).ok()?;
        for &a in &ids {
            let robot = ground.owner(a);
            if a == d || minus.slot(robot).is_some() {
                continue;
            }
            let cand = minus.with_added(robot, a).ok()?;
            if oracle.g(&cand) >= threshold {
                return Some((Some(d), Some(a)));
            }
        }
    }
    None
}

fn round_robin_step<O: SetOracle>(
    ground: &PartitionMatroid,
    s: &SolutionSet,
    alpha: f64,
    n: usize,
    oracle: &CountingOracle<O>,
    last: &mut usize,
) -> Option<(Option<TrajId>, Option<TrajId>)> {
    let robots = ground.n_robots();
    for k in 1..=robots {
        let robot = (*last + k) % robots;
        let part = Arc::new(ground.sorted_partition(robot));
        let (d, a) = find_proposal(robot, part, s, alpha, n, oracle, ground, false);
        if d.is_some() || a.is_some() {
            *last = robot;
            return Some((d, a));
        }
    }
    None
}

/// Exact `argmax_a g(a | S)` over `candidates`, skipping any candidate whose
/// upper bound is already below the best exact gain. Ties go to the lowest
/// id. Returns the winner and its gain.
pub fn lazy_greedy_argmax<O: SetOracle>(
    matroid: &PartitionMatroid,
    candidates: &[(TrajId, f64)],
    s: &SolutionSet,
    oracle: &CountingOracle<O>,
) -> Result<Option<(TrajId, f64)>> {
    let mut bounds = candidates.to_vec();
    lazy_greedy_argmax_update(matroid, &mut bounds, s, oracle)
}

/// [`lazy_greedy_argmax`] that writes every exact gain it computes back into
/// the candidate's bound, for reuse as `S` grows.
pub fn lazy_greedy_argmax_update<O: SetOracle>(
    matroid: &PartitionMatroid,
    candidates: &mut [(TrajId, f64)],
    s: &SolutionSet,
    oracle: &CountingOracle<O>,
) -> Result<Option<(TrajId, f64)>> {
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let base = oracle.g(s);
    let mut best: Option<(TrajId, f64)> = None;
    for (id, bound) in candidates.iter_mut() {
        if let Some((_, g)) = best {
            if *bound < g {
                break;
            }
        }
        let gain = oracle.g(&s.with_added(matroid.owner(*id), *id)?) - base;
        *bound = gain;
        best = match best {
            Some((bid, bg)) if bg > gain || (bg == gain && bid < *id) => Some((bid, bg)),
            _ => Some((*id, gain)),
        };
    }
    Ok(best)
}

/// Reference argmax evaluating every candidate.
pub fn naive_argmax<O: SetOracle>(
    matroid: &PartitionMatroid,
    candidates: &[TrajId],
    s: &SolutionSet,
    oracle: &CountingOracle<O>,
) -> Result<Option<(TrajId, f64)>> {
    let base = oracle.g(s);
    let mut best: Option<(TrajId, f64)> = None;
    for &id in candidates {
        let gain = oracle.g(&s.with_added(matroid.owner(id), id)?) - base;
        best = match best {
            Some((bid, bg)) if bg > gain || (bg == gain && bid < id) => Some((bid, bg)),
            _ => Some((id, gain)),
        };
    }
    Ok(best)
}

/// Sequential planning: each robot in `order` takes the trajectory with the
/// largest marginal gain given earlier choices, or nothing if every gain is
/// negative. Uses standalone scores as lazy bounds when `lazy` is set.
pub fn coordinate_descent<O: SetOracle>(
    matroid: &PartitionMatroid,
    order: &[usize],
    oracle: &CountingOracle<O>,
    lazy: bool,
) -> Result<SolverResult> {
    let mut seen = vec![false; matroid.n_robots()];
    for &r in order {
        if r >= seen.len() || std::mem::replace(&mut seen[r], true) {
            return Err(Error::Contract(format!(
                "order {order:?} is not a permutation of robots"
            )));
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::Contract(format!(
            "order {order:?} is not a permutation of robots"
        )));
    }
    let started = Instant::now();
    let mut s = SolutionSet::empty(matroid.n_robots());
    let mut trace = Vec::new();
    for &robot in order {
        let part = matroid.partition(robot);
        let best = if lazy {
            let cands: Vec<_> = part.iter().map(|&id| (id, matroid.standalone(id))).collect();
            lazy_greedy_argmax(matroid, &cands, &s, oracle)?
        } else {
            naive_argmax(matroid, part, &s, oracle)?
        };
        if let Some((id, gain)) = best {
            if gain >= 0.0 {
                let before = oracle.g(&s);
                s.add(robot, id)?;
                trace.push(LocalOp {
                    kind: OpKind::Add,
                    round: 1,
                    d: None,
                    a: Some(id),
                    g_before: before,
                    g_after: oracle.g(&s),
                });
            }
        }
    }
    let metrics = RunMetrics {
        commits: trace.len() as u64,
        rounds: 1,
        proposal_exchanges: order.len().saturating_sub(1) as u64,
        ..RunMetrics::default()
    };
    Ok(finish(oracle, s, trace, started, metrics))
}

pub const BRUTE_FORCE_LIMIT: f64 = 1e6;

/// Exhaustive maximizer of `g` over all admissible sets. Ties go to the
/// lexicographically smallest selection, "nothing" ranking first per robot.
pub fn brute_force_opt<O: SetOracle>(matroid: &PartitionMatroid, oracle: &O) -> Result<SolutionSet> {
    let n = matroid.n_robots();
    let combos: f64 = (0..n).map(|r| (matroid.partition(r).len() + 1) as f64).product();
    if combos > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge {
            combinations: combos,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let parts: Vec<Vec<TrajId>> = (0..n)
        .map(|r| {
            let mut p = matroid.partition(r).to_vec();
            p.sort_unstable();
            p
        })
        .collect();
    let mut choice = vec![0usize; n];
    let mut best: Option<(SolutionSet, f64)> = None;
    loop {
        let mut s = SolutionSet::empty(n);
        for (r, &c) in choice.iter().enumerate() {
            if c > 0 {
                s.add(r, parts[r][c - 1])?;
            }
        }
        let g = oracle.value(&s);
        if best.as_ref().is_none_or(|(_, bg)| g > *bg) {
            best = Some((s, g));
        }
        // odometer, last robot varies fastest
        let mut r = n;
        loop {
            if r == 0 {
                return Ok(best.expect("at least the empty set").0);
            }
            r -= 1;
            choice[r] += 1;
            if choice[r] <= parts[r].len() {
                break;
            }
            choice[r] = 0;
        }
    }
}

/// Number of admissible sets `Π (N_i + 1)`.
pub fn admissible_count(matroid: &PartitionMatroid) -> f64 {
    (0..matroid.n_robots())
        .map(|r| (matroid.partition(r).len() + 1) as f64)
        .product()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::FnOracle;

    /// Modular weights per trajectory.
    fn modular(weights: Vec<f64>) -> impl Fn(&SolutionSet) -> f64 + Sync {
        move |s: &SolutionSet| 10.0 + s.key().iter().map(|id| weights[id.index()]).sum::<f64>()
    }

    #[test]
    fn brute_force_enumerates_all() {
        let m = PartitionMatroid::new(2, &[(0, 0.0), (0, 0.0), (1, 0.0), (1, 0.0)]).unwrap();
        assert_eq!(admissible_count(&m), 9.0);
        let seen = std::sync::Mutex::new(0);
        let f = FnOracle(|_: &SolutionSet| {
            *seen.lock().unwrap() += 1;
            1.0
        });
        let best = brute_force_opt(&m, &f).unwrap();
        assert_eq!(*seen.lock().unwrap(), 9);
        assert!(best.is_empty());
        let empty = PartitionMatroid::new(0, &[]).unwrap();
        assert!(brute_force_opt(&empty, &f).unwrap().is_empty());
    }

    #[test]
    fn brute_force_refuses_large() {
        let entries: Vec<_> = (0..7).flat_map(|r| std::iter::repeat_n((r, 0.0), 9)).collect();
        let m = PartitionMatroid::new(7, &entries).unwrap();
        let f = FnOracle(|_: &SolutionSet| 0.0);
        assert!(matches!(brute_force_opt(&m, &f), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn cls_single_trajectory() {
        let m = PartitionMatroid::new(1, &[(0, 2.0)]).unwrap();
        let o = CountingOracle::new(FnOracle(modular(vec![2.0])));
        let r = cls(&m, 1.0, &o, ScanOrder::Canonical).unwrap();
        assert_eq!(r.solution.key(), vec![TrajId(0)]);
        assert_eq!(r.g_value, 12.0);
    }

    #[test]
    fn cls_empty_ground_set() {
        let m = PartitionMatroid::new(2, &[]).unwrap();
        let o = CountingOracle::new(FnOracle(|_: &SolutionSet| 7.0));
        let r = cls(&m, 1.0, &o, ScanOrder::Canonical).unwrap();
        assert!(r.solution.is_empty());
        assert_eq!(r.g_value, 7.0);
    }

    #[test]
    fn cls_deletes_harmful_start() {
        // Best singleton alone is positive, but pairing favours the others.
        let w = vec![3.0, -5.0, 2.0, 2.0];
        let m = PartitionMatroid::new(2, &[(0, 3.0), (0, -5.0), (1, 2.0), (1, 2.0)]).unwrap();
        let o = CountingOracle::new(FnOracle(modular(w)));
        let r = cls(&m, 1e-6, &o, ScanOrder::Canonical).unwrap();
        assert_eq!(r.solution.key(), vec![TrajId(0), TrajId(2)]);
        for op in &r.op_trace {
            assert!(op.g_after >= improvement_threshold(op.g_before, 1e-6, 4));
        }
    }

    #[test]
    fn coordinate_descent_skips_negative() {
        let m = PartitionMatroid::new(2, &[(0, -1.0), (1, -2.0)]).unwrap();
        let o = CountingOracle::new(FnOracle(modular(vec![-1.0, -2.0])));
        let r = coordinate_descent(&m, &[0, 1], &o, true).unwrap();
        assert!(r.solution.is_empty());
        assert_eq!(r.g_value, 10.0);
        assert!(coordinate_descent(&m, &[0, 0], &o, true).is_err());
    }

    #[test]
    fn coordinate_descent_zero_gain_assigns() {
        let m = PartitionMatroid::new(1, &[(0, 0.0)]).unwrap();
        let o = CountingOracle::new(FnOracle(modular(vec![0.0])));
        let r = coordinate_descent(&m, &[0], &o, false).unwrap();
        assert_eq!(r.solution.key(), vec![TrajId(0)]);
    }

    #[test]
    fn lazy_argmax_single_fresh_candidate() {
        let m = PartitionMatroid::new(1, &[(0, 1.0)]).unwrap();
        let o = CountingOracle::new(FnOracle(modular(vec![1.0])));
        let s = SolutionSet::empty(1);
        let before = o.calls();
        let best = lazy_greedy_argmax(&m, &[(TrajId(0), 1.0)], &s, &o).unwrap();
        assert_eq!(best, Some((TrajId(0), 1.0)));
        // one for g(S), one for the candidate
        assert_eq!(o.calls() - before, 2);
    }
}
