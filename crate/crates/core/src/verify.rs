//! Randomized property and guarantee suites over small instances, shared by
//! the `verify` command and the acceptance tests.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::central::{brute_force_opt, cls, ScanOrder};
use crate::dls::{dls_run, DlsOptions, MessageKind, Schedule};
use crate::error::Result;
use crate::filtering::{kf_update_info, logdet, mutual_information, BeliefCov, InfoMatrix, Mat};
use crate::objective::{CountingOracle, Objective, Problem, SetOracle, SolutionSet, Target, TrajId};
use crate::trace::{replay, TraceHeader};
use crate::world::{
    default_primitives, double_integrator_model, static_target_model, ControlCost, CostField, CostTable, Region,
    RegionKind, RobotClass, RobotSpec, RobotState, SensorProfile,
};

/// Outcome of one suite.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, failures: &[String], summary: String) -> Self {
        let detail = match failures.first() {
            None => summary,
            Some(f) => format!("{summary}; {} failure(s), first: {f}", failures.len()),
        };
        Check {
            name,
            passed: failures.is_empty(),
            detail,
        }
    }
}

fn random_spd(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Mat {
    let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    (&a * a.transpose() + DMatrix::identity(d, d) * 0.1) * scale
}

/// A random instance with up to `max_robots` robots and up to `max_per_robot`
/// random trajectories each, in a 12 m arena with random sensors, energy
/// tables, weights and terrain.
pub fn random_instance(rng: &mut ChaCha8Rng, max_robots: usize, max_per_robot: usize) -> Result<Objective> {
    let side = 12.0;
    let n = rng.gen_range(1..=max_robots);
    let horizon = rng.gen_range(1..=3);
    let tau = 0.5;
    let regions = vec![
        Region {
            kind: RegionKind::Mud,
            x_min: rng.gen_range(0.0..6.0),
            x_max: rng.gen_range(6.0..12.0),
            y_min: rng.gen_range(0.0..6.0),
            y_max: rng.gen_range(6.0..12.0),
        },
        Region {
            kind: RegionKind::Wind,
            x_min: rng.gen_range(0.0..6.0),
            x_max: rng.gen_range(6.0..12.0),
            y_min: rng.gen_range(0.0..6.0),
            y_max: rng.gen_range(6.0..12.0),
        },
    ];
    let robots: Vec<RobotSpec> = (0..n)
        .map(|i| {
            let class = if rng.gen_bool(0.5) {
                RobotClass::Ugv
            } else {
                RobotClass::Uav
            };
            let mut sensor = SensorProfile::new(rng.gen_range(60.0..=360.0), None);
            if rng.gen_bool(0.7) {
                sensor.range = Some(rng.gen_range(4.0..20.0));
            }
            sensor.sigma_range_max = rng.gen_range(0.05..1.0);
            sensor.sigma_bearing_max_deg = rng.gen_range(1.0..10.0);
            let controls = default_primitives()
                .into_iter()
                .map(|u| ControlCost {
                    control: u,
                    cost: rng.gen_range(0.0..4.0),
                })
                .collect();
            let costs = CostTable {
                controls,
                mud: rng.gen_bool(0.5).then(|| rng.gen_range(0.0..4.0)),
                wind: rng.gen_bool(0.5).then(|| rng.gen_range(0.0..4.0)),
            };
            RobotSpec {
                id: i,
                class,
                initial: RobotState::new(
                    rng.gen_range(0.0..side),
                    rng.gen_range(0.0..side),
                    rng.gen_range(-PI..PI),
                ),
                sensor,
                costs,
                weight: rng.gen_range(0.0..1.5),
            }
        })
        .collect();
    let targets = (0..rng.gen_range(1..=2))
        .map(|_| -> Result<Target> {
            if rng.gen_bool(0.5) {
                let mean = DVector::from_vec(vec![
                    rng.gen_range(0.0..side),
                    rng.gen_range(0.0..side),
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                ]);
                Ok(Target {
                    model: double_integrator_model(tau, rng.gen_range(0.01..1.0))?,
                    prior: BeliefCov::new(random_spd(rng, 4, 2.0)),
                    mean,
                })
            } else {
                let mean = DVector::from_vec(vec![rng.gen_range(0.0..side), rng.gen_range(0.0..side)]);
                Ok(Target {
                    model: static_target_model(1e-6)?,
                    prior: BeliefCov::new(random_spd(rng, 2, 3.0)),
                    mean,
                })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let problem = Problem {
        robots,
        targets,
        field: CostField { regions },
        horizon,
        tau,
    };
    let prims = default_primitives();
    let per_robot = (0..n)
        .map(|_| {
            (0..rng.gen_range(1..=max_per_robot))
                .map(|_| (0..horizon).map(|_| prims[rng.gen_range(0..prims.len())]).collect())
                .collect()
        })
        .collect();
    Objective::from_controls(problem, per_robot)
}

/// Every admissible set of a small instance.
pub fn all_sets(obj: &Objective) -> Vec<SolutionSet> {
    let m = obj.matroid();
    let mut sets = vec![SolutionSet::empty(m.n_robots())];
    for r in 0..m.n_robots() {
        let mut next = Vec::new();
        for s in &sets {
            next.push(s.clone());
            for &id in m.partition(r) {
                next.push(s.with_added(r, id).expect("fresh slot"));
            }
        }
        sets = next;
    }
    sets
}

/// Worst-case guarantee: `g(CLS)` and `g(DLS)` reach `g(S*)/(4(1+α))`.
pub fn check_guarantee(instances: usize, seed: u64, alpha: f64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    let mut worst = f64::INFINITY;
    for k in 0..instances {
        let obj = random_instance(&mut rng, 3, 3)?;
        let m = obj.matroid();
        let opt = obj.value(&brute_force_opt(&m, &obj)?);
        let bound = opt / (4.0 * (1.0 + alpha));
        let g_cls = cls(&m, alpha, &CountingOracle::new(&obj), ScanOrder::Canonical)?.g_value;
        let g_dls = dls_run(&m, alpha, &obj, DlsOptions::default())?.result.g_value;
        for (name, g) in [("cls", g_cls), ("dls", g_dls)] {
            if g < bound - 1e-9 {
                failures.push(format!("instance {k}: {name} g = {g} below {bound}"));
            }
            if opt > 0.0 {
                worst = worst.min(g / opt);
            }
        }
    }
    Ok(Check::new(
        "guarantee",
        &failures,
        format!(
            "{instances} instances, worst g/g* = {worst:.4} (bound {:.4})",
            1.0 / (4.0 * (1.0 + alpha))
        ),
    ))
}

/// Canonical DLS without warm start reproduces the round-robin CLS trace.
pub fn check_equivalence(instances: usize, seed: u64, alpha: f64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    for k in 0..instances {
        let obj = random_instance(&mut rng, 3, 3)?;
        let m = obj.matroid();
        let c = cls(&m, alpha, &CountingOracle::new(&obj), ScanOrder::RoundRobin)?;
        for lazy in [false, true] {
            let opts = DlsOptions {
                lazy,
                warm_start: false,
                schedule: Schedule::RoundRobin,
            };
            let d = dls_run(&m, alpha, &obj, opts)?.result;
            if d.op_trace != c.op_trace || d.solution != c.solution || d.g_value.to_bits() != c.g_value.to_bits() {
                failures.push(format!("instance {k} (lazy {lazy}): traces differ"));
            }
        }
    }
    Ok(Check::new(
        "cls-dls-equivalence",
        &failures,
        format!("{instances} instances"),
    ))
}

/// Lazy pruning leaves the committed proposal sequence unchanged.
pub fn check_lazy_soundness(instances: usize, seed: u64, alpha: f64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    let (mut naive_calls, mut lazy_calls) = (0u64, 0u64);
    for k in 0..instances {
        let obj = random_instance(&mut rng, 3, 6)?;
        let m = obj.matroid();
        for warm_start in [false, true] {
            let run = |lazy| {
                dls_run(
                    &m,
                    alpha,
                    &obj,
                    DlsOptions {
                        lazy,
                        warm_start,
                        schedule: Schedule::RoundRobin,
                    },
                )
            };
            let (a, b) = (run(false)?, run(true)?);
            naive_calls += a.result.metrics.oracle_calls;
            lazy_calls += b.result.metrics.oracle_calls;
            let committed = |log: &[crate::dls::BusRecord]| -> Vec<(u8, Option<TrajId>, Option<TrajId>)> {
                log.iter()
                    .filter(|r| r.committed)
                    .map(|r| (r.round, r.d, r.a))
                    .collect()
            };
            if committed(&a.log) != committed(&b.log) || a.result.solution != b.result.solution {
                failures.push(format!("instance {k} (warm {warm_start}): lazy changed the commits"));
            }
        }
    }
    Ok(Check::new(
        "lazy-soundness",
        &failures,
        format!("{instances} instances, oracle calls {naive_calls} naive vs {lazy_calls} lazy"),
    ))
}

/// `P - P Hᵀ (H P Hᵀ + V)⁻¹ H P`, the covariance form of the update.
pub fn gain_form_update(p: &Mat, h: &Mat, v: &Mat) -> Mat {
    let s = h * p * h.transpose() + v;
    let s_inv = s.try_inverse().expect("innovation covariance is SPD");
    let k = p * h.transpose() * s_inv;
    p - &k * h * p
}

/// Scalar example, information vs gain form, and MI non-negativity,
/// monotonicity and submodularity on nested sets.
pub fn check_oracle(instances: usize, seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();

    // A = 1, W = 1, Σ₀ = 1, one measurement with information 1.
    let model = crate::filtering::TargetModel::constant(DMatrix::identity(1, 1), DMatrix::identity(1, 1))?;
    let mi = mutual_information(&model, &BeliefCov::new(DMatrix::identity(1, 1)), 1, |_| {
        vec![InfoMatrix(DMatrix::identity(1, 1))]
    })?;
    let expected = 0.5 * 3f64.ln();
    if (mi - expected).abs() > 1e-12 {
        failures.push(format!("scalar example gave {mi}, expected {expected}"));
    }

    let mut worst_update = 0.0f64;
    for k in 0..1000 {
        let d = rng.gen_range(1..=4);
        let m = rng.gen_range(1..=3);
        let ps = rng.gen_range(0.1..5.0);
        let p = random_spd(&mut rng, d, ps);
        let h = DMatrix::from_fn(m, d, |_, _| rng.gen_range(-2.0..2.0));
        let vs = rng.gen_range(0.05..2.0);
        let v = random_spd(&mut rng, m, vs);
        let v_inv = v.clone().try_inverse().expect("SPD");
        let info = InfoMatrix(h.transpose() * v_inv * &h);
        let a = kf_update_info(&p, &[info])?;
        let b = gain_form_update(&p, &h, &v);
        let err = (&a - &b).abs().max() / (1.0 + b.abs().max());
        worst_update = worst_update.max(err);
        if err > 1e-8 {
            failures.push(format!("update {k}: forms differ by {err:e}"));
        }
        if logdet(&a)? > logdet(&p)? + 1e-9 {
            failures.push(format!("update {k}: information increased the volume"));
        }
    }

    let mut checked = 0usize;
    for k in 0..instances {
        let obj = random_instance(&mut rng, 3, 3)?;
        let sets = all_sets(&obj);
        let m = obj.matroid();
        let mi = |s: &SolutionSet| obj.mutual_information(s);
        for s in &sets {
            let base = mi(s)?;
            if base < -1e-9 {
                failures.push(format!("instance {k}: MI {base} < 0"));
            }
            for t in &sets {
                if !s.is_subset_of(t) {
                    continue;
                }
                let big = mi(t)?;
                if big < base - 1e-9 {
                    failures.push(format!("instance {k}: MI not monotone ({base} > {big})"));
                }
                for r in 0..m.n_robots() {
                    if t.slot(r).is_some() {
                        continue;
                    }
                    for &a in m.partition(r) {
                        let gain_s = mi(&s.with_added(r, a)?)? - base;
                        let gain_t = mi(&t.with_added(r, a)?)? - big;
                        checked += 1;
                        if gain_t > gain_s + 1e-9 {
                            failures.push(format!(
                                "instance {k}: gain of {a} grows from {gain_s} to {gain_t} on a superset"
                            ));
                        }
                    }
                }
            }
        }
    }
    Ok(Check::new(
        "oracle",
        &failures,
        format!("1000 updates (max rel err {worst_update:.1e}), {checked} submodularity pairs"),
    ))
}

/// Commit bound `⌈log(g_max/g_init)/log(1 + α/N⁴)⌉ + 1`.
pub fn commit_bound(g_max: f64, g_init: f64, alpha: f64, n: usize) -> f64 {
    let step = (alpha / (n.max(1) as f64).powi(4)).ln_1p();
    ((g_max / g_init).ln() / step).ceil().max(0.0) + 1.0
}

/// Concurrent-schedule fuzzing: every run replays cleanly (admissible
/// sets, threshold-clearing commits, consistent chain) and each round ends
/// within the commit bound.
pub fn check_protocol(runs: usize, seed: u64, alpha: f64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    let mut commits = 0u64;
    let mut discarded = 0u64;
    for k in 0..runs {
        let obj = random_instance(&mut rng, 4, 4)?;
        let m = obj.matroid();
        let opts = DlsOptions {
            lazy: rng.gen_bool(0.5),
            warm_start: rng.gen_bool(0.5),
            schedule: Schedule::Concurrent {
                seed: rng.gen(),
                delivery: rng.gen_range(0.05..=1.0),
            },
        };
        let run = match dls_run(&m, alpha, &obj, opts) {
            Ok(r) => r,
            Err(e) => {
                failures.push(format!("run {k}: {e}"));
                continue;
            }
        };
        commits += run.result.metrics.commits;
        discarded += run.result.metrics.discarded;
        let header = TraceHeader {
            alpha,
            n: run.n,
            robots: m.n_robots(),
            round_solutions: run.round_solutions.iter().map(|s| s.key()).collect(),
        };
        let report = replay(&header, &run.log);
        if let Some(v) = report.violations.first() {
            failures.push(format!("run {k}: {v}"));
        }
        let g_max = obj.value(&brute_force_opt(&m, &obj)?);
        for round in &report.rounds {
            if round.g_start <= 0.0 {
                continue;
            }
            let bound = commit_bound(g_max, round.g_start, alpha, run.n);
            if round.commits as f64 > bound {
                failures.push(format!(
                    "run {k} round {}: {} commits exceed bound {bound}",
                    round.round, round.commits
                ));
            }
        }
        let per_round_nops = run.log.iter().filter(|r| r.kind == MessageKind::Nop).count();
        if per_round_nops < 2 * m.n_robots() {
            failures.push(format!("run {k}: only {per_round_nops} NOP messages for two rounds"));
        }
    }
    Ok(Check::new(
        "protocol",
        &failures,
        format!("{runs} concurrent runs, {commits} commits, {discarded} stale proposals discarded"),
    ))
}

/// Every suite at its default size.
pub fn run_all(seed: u64) -> Result<Vec<Check>> {
    Ok(vec![
        check_oracle(30, seed)?,
        check_guarantee(200, seed.wrapping_add(1), 1.0)?,
        check_equivalence(100, seed.wrapping_add(2), 1.0)?,
        check_lazy_soundness(100, seed.wrapping_add(3), 1.0)?,
        check_protocol(1000, seed.wrapping_add(4), 1.0)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commit_bound_values() {
        // log(e)/log(2) = 1.44..., ceil 2, plus 1.
        assert_eq!(commit_bound(std::f64::consts::E, 1.0, 1.0, 1), 3.0);
        assert_eq!(commit_bound(1.0, 1.0, 1.0, 3), 1.0);
    }

    #[test]
    fn all_sets_counts_admissible() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let obj = random_instance(&mut rng, 3, 3).unwrap();
        let m = obj.matroid();
        let expected: usize = (0..m.n_robots()).map(|r| m.partition(r).len() + 1).product();
        assert_eq!(all_sets(&obj).len(), expected);
    }
}
