//! Experiment runner: builds each trial's instance and trajectory set once,
//! runs every enabled solver on it, and writes per-trial and aggregate CSV
//! files, commit traces and plots.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::central::{cls, coordinate_descent, ScanOrder};
use crate::dls::{dls_run, DlsOptions, DlsResult, Schedule};
use crate::error::Result;
use crate::objective::{CountingOracle, Objective};
use crate::plot;
use crate::scenario::{build_instance, trial_seed, CdOrder, ScenarioConfig, ScheduleKind};
use crate::solver::SolverResult;
use crate::trace::write_trace;
use crate::trajgen::{build_objective, downsample_objective};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolverKind {
    Dls {
        lazy: bool,
        warm: bool,
        downsample: Option<f64>,
    },
    Cd(CdOrder),
    Cls,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub solver: &'static str,
    pub name: String,
    pub kind: SolverKind,
    /// The configured DLS variant; its commit log is written as a trace.
    pub main: bool,
}

fn dls_name(lazy: bool, warm: bool) -> &'static str {
    match (lazy, warm) {
        (true, true) => "lazy+warm",
        (true, false) => "lazy",
        (false, true) => "warm",
        (false, false) => "naive",
    }
}

/// Solver variants enabled by `cfg`, in CSV order.
pub fn variants(cfg: &ScenarioConfig) -> Vec<Variant> {
    let s = &cfg.solvers;
    let mut out = Vec::new();
    let dls = |lazy, warm, main| Variant {
        solver: "dls",
        name: dls_name(lazy, warm).to_string(),
        kind: SolverKind::Dls {
            lazy,
            warm,
            downsample: None,
        },
        main,
    };
    out.push(dls(s.lazy, s.warm_start, true));
    if s.ablation {
        for (lazy, warm) in [(false, false), (true, false), (false, true), (true, true)] {
            if (lazy, warm) != (s.lazy, s.warm_start) {
                out.push(dls(lazy, warm, false));
            }
        }
    }
    if s.downsample < 1.0 {
        out.push(Variant {
            solver: "dls",
            name: format!("downsample-{}", s.downsample),
            kind: SolverKind::Dls {
                lazy: s.lazy,
                warm: s.warm_start,
                downsample: Some(s.downsample),
            },
            main: false,
        });
    }
    for &order in &s.cd_orders {
        out.push(Variant {
            solver: "cd",
            name: order.name().to_string(),
            kind: SolverKind::Cd(order),
            main: false,
        });
    }
    if s.cls {
        out.push(Variant {
            solver: "cls",
            name: "canonical".to_string(),
            kind: SolverKind::Cls,
            main: false,
        });
    }
    out
}

/// One solver run on one trial. Column names follow the CSV header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub scenario: u8,
    pub n_or_r: f64,
    pub trial: usize,
    pub seed: u64,
    pub solver: String,
    pub variant: String,
    pub g: f64,
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "MI")]
    pub mi: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub oracle_calls: u64,
    #[serde(rename = "oracle_calls_per_N")]
    pub oracle_calls_per_n: f64,
    pub proposal_exchanges: u64,
    pub runtime_s: f64,
    pub traj_set_hash: String,
    /// Unweighted energy of the chosen trajectories.
    pub energy_raw: f64,
    pub exchanges_excl_nop: u64,
    pub oracle_requests: u64,
    pub commits: u64,
    /// Size of the ground set the solver ran on.
    #[serde(rename = "N")]
    pub ground_set: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub scenario: u8,
    pub n_or_r: f64,
    pub solver: String,
    pub variant: String,
    pub trials: usize,
    pub g_mean: f64,
    pub g_std: f64,
    #[serde(rename = "J_mean")]
    pub j_mean: f64,
    #[serde(rename = "J_std")]
    pub j_std: f64,
    #[serde(rename = "MI_mean")]
    pub mi_mean: f64,
    #[serde(rename = "MI_std")]
    pub mi_std: f64,
    #[serde(rename = "C_mean")]
    pub c_mean: f64,
    #[serde(rename = "C_std")]
    pub c_std: f64,
    pub energy_raw_mean: f64,
    pub energy_raw_std: f64,
    pub oracle_calls_mean: f64,
    pub oracle_calls_std: f64,
    #[serde(rename = "oracle_calls_per_N_mean")]
    pub oracle_calls_per_n_mean: f64,
    #[serde(rename = "oracle_calls_per_N_std")]
    pub oracle_calls_per_n_std: f64,
    pub proposal_exchanges_mean: f64,
    pub proposal_exchanges_std: f64,
    pub exchanges_excl_nop_mean: f64,
    pub exchanges_excl_nop_std: f64,
    pub runtime_s_mean: f64,
    pub runtime_s_std: f64,
}

/// Mean and sample standard deviation; the deviation of one value is 0.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Groups records by sweep point, solver and variant, keeping first-seen
/// order.
pub fn aggregate(records: &[TrialRecord]) -> Vec<AggregateRow> {
    let mut order: Vec<(u8, u64, String, String)> = Vec::new();
    let mut groups: BTreeMap<(u8, u64, String, String), Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        let key = (r.scenario, r.n_or_r.to_bits(), r.solver.clone(), r.variant.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let rs = &groups[&key];
            let col = |f: &dyn Fn(&TrialRecord) -> f64| mean_std(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (g_mean, g_std) = col(&|r| r.g);
            let (j_mean, j_std) = col(&|r| r.j);
            let (mi_mean, mi_std) = col(&|r| r.mi);
            let (c_mean, c_std) = col(&|r| r.c);
            let (energy_raw_mean, energy_raw_std) = col(&|r| r.energy_raw);
            let (oracle_calls_mean, oracle_calls_std) = col(&|r| r.oracle_calls as f64);
            let (oracle_calls_per_n_mean, oracle_calls_per_n_std) = col(&|r| r.oracle_calls_per_n);
            let (proposal_exchanges_mean, proposal_exchanges_std) = col(&|r| r.proposal_exchanges as f64);
            let (exchanges_excl_nop_mean, exchanges_excl_nop_std) = col(&|r| r.exchanges_excl_nop as f64);
            let (runtime_s_mean, runtime_s_std) = col(&|r| r.runtime_s);
            AggregateRow {
                scenario: key.0,
                n_or_r: f64::from_bits(key.1),
                solver: key.2,
                variant: key.3,
                trials: rs.len(),
                g_mean,
                g_std,
                j_mean,
                j_std,
                mi_mean,
                mi_std,
                c_mean,
                c_std,
                energy_raw_mean,
                energy_raw_std,
                oracle_calls_mean,
                oracle_calls_std,
                oracle_calls_per_n_mean,
                oracle_calls_per_n_std,
                proposal_exchanges_mean,
                proposal_exchanges_std,
                exchanges_excl_nop_mean,
                exchanges_excl_nop_std,
                runtime_s_mean,
                runtime_s_std,
            }
        })
        .collect()
}

/// SHA-256 prefix over every trajectory's robot, controls, states, energy
/// and score.
pub fn traj_set_hash(obj: &Objective) -> String {
    let mut h = Sha256::new();
    for t in obj.trajectories() {
        h.update((t.id.0 as u64).to_le_bytes());
        h.update((t.robot as u64).to_le_bytes());
        for u in &t.controls {
            h.update(u.nu.to_bits().to_le_bytes());
            h.update(u.omega.to_bits().to_le_bytes());
        }
        for x in &t.states {
            for v in [x.x, x.y, x.theta] {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.update(t.energy.to_bits().to_le_bytes());
        h.update(t.standalone.to_bits().to_le_bytes());
    }
    let hex = format!("{:x}", h.finalize());
    hex[..16].to_string()
}

/// Output of one variant on one objective.
pub struct VariantRun {
    pub result: SolverResult,
    pub dls: Option<DlsResult>,
    /// Objective the solution's ids refer to.
    pub ground: usize,
}

/// Runs `variant` on `obj`; the downsampled variant runs on `small`.
pub fn run_variant(
    cfg: &ScenarioConfig,
    variant: &Variant,
    obj: &Objective,
    small: Option<&Objective>,
    seed: u64,
) -> Result<VariantRun> {
    let schedule = match cfg.solvers.schedule {
        ScheduleKind::RoundRobin => Schedule::RoundRobin,
        ScheduleKind::Concurrent => Schedule::Concurrent {
            seed,
            delivery: cfg.solvers.delivery,
        },
    };
    let alpha = cfg.solvers.alpha;
    match variant.kind {
        SolverKind::Dls { lazy, warm, downsample } => {
            let target = match (downsample, small) {
                (Some(_), Some(s)) => s,
                _ => obj,
            };
            let m = target.matroid();
            let opts = DlsOptions {
                lazy,
                warm_start: warm,
                schedule,
            };
            let run = dls_run(&m, alpha, target, opts)?;
            Ok(VariantRun {
                result: run.result.clone(),
                dls: Some(run),
                ground: m.len(),
            })
        }
        SolverKind::Cd(order) => {
            let weights: Vec<f64> = obj.problem().robots.iter().map(|r| r.weight).collect();
            let m = obj.matroid();
            let oracle = CountingOracle::new(obj);
            let result = coordinate_descent(&m, &order.order(&weights), &oracle, true)?;
            Ok(VariantRun {
                result,
                dls: None,
                ground: m.len(),
            })
        }
        SolverKind::Cls => {
            let m = obj.matroid();
            let oracle = CountingOracle::new(obj);
            let result = cls(&m, alpha, &oracle, ScanOrder::Canonical)?;
            Ok(VariantRun {
                result,
                dls: None,
                ground: m.len(),
            })
        }
    }
}

#[derive(Debug, Clone)]
pub struct Progress<'a> {
    pub point: f64,
    pub trial: usize,
    pub variant: &'a str,
    pub main: bool,
    pub g: f64,
}

pub struct ExperimentOutput {
    pub records: Vec<TrialRecord>,
    pub aggregates: Vec<AggregateRow>,
    /// Commit logs of the main DLS variant: `(point, trial, log)`.
    pub traces: Vec<(f64, usize, DlsResult)>,
}

pub fn run_experiment(cfg: &ScenarioConfig) -> Result<ExperimentOutput> {
    run_experiment_with(cfg, |_| {})
}

pub fn run_experiment_with(cfg: &ScenarioConfig, mut progress: impl FnMut(Progress<'_>)) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let gen = cfg.gen_config();
    let vars = variants(cfg);
    let mut records = Vec::new();
    let mut traces = Vec::new();
    for point in cfg.sweep_points() {
        for trial in 0..cfg.trials {
            let seed = trial_seed(cfg.seed, trial);
            let problem = build_instance(cfg, point, seed)?;
            let obj = build_objective(problem, &gen)?;
            let small = match cfg.solvers.downsample < 1.0 {
                true => Some(downsample_objective(&obj, cfg.solvers.downsample)?),
                false => None,
            };
            let hash = traj_set_hash(&obj);
            for v in &vars {
                let started = Instant::now();
                let run = run_variant(cfg, v, &obj, small.as_ref(), seed)?;
                let runtime = started.elapsed().as_secs_f64();
                let eval = match v.kind {
                    SolverKind::Dls {
                        downsample: Some(_), ..
                    } => small.as_ref().unwrap_or(&obj),
                    _ => &obj,
                };
                let (g, j, mi, c) = eval.breakdown(&run.result.solution)?;
                let m = &run.result.metrics;
                records.push(TrialRecord {
                    scenario: cfg.scenario,
                    n_or_r: point,
                    trial,
                    seed,
                    solver: v.solver.to_string(),
                    variant: v.name.clone(),
                    g,
                    j,
                    mi,
                    c,
                    oracle_calls: m.oracle_calls,
                    oracle_calls_per_n: m.oracle_calls as f64 / run.ground.max(1) as f64,
                    proposal_exchanges: m.proposal_exchanges,
                    runtime_s: if cfg.record_runtime { runtime } else { 0.0 },
                    traj_set_hash: hash.clone(),
                    energy_raw: eval.raw_energy(&run.result.solution),
                    exchanges_excl_nop: m.exchanges_without_nop(),
                    oracle_requests: m.oracle_requests,
                    commits: m.commits,
                    ground_set: run.ground,
                });
                progress(Progress {
                    point,
                    trial,
                    variant: &v.name,
                    main: v.main,
                    g,
                });
                if v.main {
                    if let Some(d) = run.dls {
                        traces.push((point, trial, d));
                    }
                }
            }
        }
    }
    let aggregates = aggregate(&records);
    Ok(ExperimentOutput {
        records,
        aggregates,
        traces,
    })
}

/// Files written by [`write_outputs`].
#[derive(Debug, Clone, Default)]
pub struct OutputFiles {
    pub trials: PathBuf,
    pub aggregate: PathBuf,
    pub traces: Vec<PathBuf>,
    pub plots: Vec<PathBuf>,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trials(path: &Path) -> Result<Vec<TrialRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}

pub fn write_outputs(cfg: &ScenarioConfig, out: &ExperimentOutput, dir: &Path) -> Result<OutputFiles> {
    fs::create_dir_all(dir)?;
    let mut files = OutputFiles {
        trials: dir.join("trials.csv"),
        aggregate: dir.join("aggregate.csv"),
        ..OutputFiles::default()
    };
    write_csv(&files.trials, &out.records)?;
    write_csv(&files.aggregate, &out.aggregates)?;
    if !out.traces.is_empty() {
        let tdir = dir.join("traces");
        fs::create_dir_all(&tdir)?;
        for (point, trial, run) in &out.traces {
            let path = tdir.join(format!("point{point}_trial{trial}.jsonl"));
            let robots = run.result.solution.n_robots();
            write_trace(BufWriter::new(fs::File::create(&path)?), cfg.solvers.alpha, robots, run)?;
            files.traces.push(path);
        }
    }
    if cfg.plots {
        let (name, svg) = match cfg.scenario {
            1 => ("objective_vs_n.svg", plot::objective_vs_n(&out.aggregates)),
            _ => ("tradeoff.svg", plot::tradeoff(&out.aggregates)),
        };
        let path = dir.join(name);
        fs::write(&path, svg)?;
        files.plots.push(path);
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_basics() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn variant_list_follows_config() {
        let mut cfg = ScenarioConfig::tracking();
        let names: Vec<_> = variants(&cfg)
            .iter()
            .map(|v| format!("{}/{}", v.solver, v.name))
            .collect();
        assert_eq!(
            names,
            [
                "dls/lazy+warm",
                "dls/naive",
                "dls/lazy",
                "dls/warm",
                "dls/downsample-0.1",
                "cd/cheap-first",
                "cd/expensive-first"
            ]
        );
        cfg.solvers.ablation = false;
        cfg.solvers.downsample = 1.0;
        cfg.solvers.lazy = false;
        cfg.solvers.cd_orders = vec![CdOrder::ExpensiveFirst];
        cfg.solvers.cls = true;
        let names: Vec<_> = variants(&cfg)
            .iter()
            .map(|v| format!("{}/{}", v.solver, v.name))
            .collect();
        assert_eq!(names, ["dls/warm", "cd/expensive-first", "cls/canonical"]);
    }
}
