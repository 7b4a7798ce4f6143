//! Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
//! fails. Sweeps use the default Scenario 1 and 2 configurations (20 seeds
//! per point, base seed 0).

use std::process::ExitCode;

use dlsplan_core::experiment::{run_experiment, AggregateRow, ExperimentOutput, TrialRecord};
use dlsplan_core::scenario::ScenarioConfig;
use dlsplan_core::verify::{check_equivalence, check_guarantee, check_lazy_soundness, check_oracle, check_protocol};

const SEED: u64 = 0;
const ALPHA: f64 = 1.0;

struct Line {
    id: usize,
    passed: bool,
    detail: String,
}

fn row<'a>(out: &'a ExperimentOutput, point: f64, solver: &str, variant: &str) -> &'a AggregateRow {
    out.aggregates
        .iter()
        .find(|a| a.n_or_r == point && a.solver == solver && a.variant == variant)
        .unwrap_or_else(|| panic!("no aggregate for {solver}/{variant} at {point}"))
}

fn pooled(records: &[TrialRecord], variant: &str, f: impl Fn(&TrialRecord) -> f64) -> f64 {
    let xs: Vec<f64> = records.iter().filter(|r| r.variant == variant).map(f).collect();
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// DLS variant `dls` against both CD orders: ordering at every point and a
/// wider gap at the last point than at the first.
fn beats_cd(out: &ExperimentOutput, points: &[f64], dls: &str) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for cd in ["cheap-first", "expensive-first"] {
        let gaps: Vec<f64> = points
            .iter()
            .map(|&p| row(out, p, "dls", dls).g_mean - row(out, p, "cd", cd).g_mean)
            .collect();
        let ordered = gaps.iter().all(|g| *g >= 0.0);
        let widening = gaps.last() > gaps.first();
        ok &= ordered && widening;
        parts.push(format!(
            "{cd} gaps {}",
            gaps.iter().map(|g| format!("{g:.3}")).collect::<Vec<_>>().join("/")
        ));
    }
    (ok, parts.join("; "))
}

fn main() -> ExitCode {
    let mut lines = Vec::new();
    let check = |id, c: dlsplan_core::verify::Check| Line {
        id,
        passed: c.passed,
        detail: c.detail,
    };

    lines.push(check(
        1,
        check_guarantee(200, SEED + 1, ALPHA).expect("guarantee suite"),
    ));
    lines.push(check(
        2,
        check_equivalence(100, SEED + 2, ALPHA).expect("equivalence suite"),
    ));

    let mut s1 = ScenarioConfig::tracking();
    s1.seed = SEED;
    s1.record_runtime = false;
    let sweep1 = run_experiment(&s1).expect("scenario 1 sweep");
    let ns = s1.sweep_points();

    // 3: lazy soundness on random instances, then oracle-call savings.
    let lazy = check_lazy_soundness(100, SEED + 3, ALPHA).expect("lazy suite");
    let naive = pooled(&sweep1.records, "naive", |r| r.oracle_calls as f64);
    let fast = pooled(&sweep1.records, "lazy+warm", |r| r.oracle_calls as f64);
    let saving = 1.0 - fast / naive;
    lines.push(Line {
        id: 3,
        passed: lazy.passed && saving >= 0.5,
        detail: format!(
            "{}; oracle calls {naive:.1} naive vs {fast:.1} lazy+warm, {:.1}% reduction (published figure: 80-92% with n<=10, N~12500)",
            lazy.detail,
            100.0 * saving
        ),
    });

    // 4: exchanges with and without warm start, lazy in both.
    let cold = pooled(&sweep1.records, "lazy", |r| r.proposal_exchanges as f64);
    let warm = pooled(&sweep1.records, "lazy+warm", |r| r.proposal_exchanges as f64);
    let per_n: Vec<String> = ns
        .iter()
        .map(|&n| {
            let c = row(&sweep1, n, "dls", "lazy").proposal_exchanges_mean;
            let w = row(&sweep1, n, "dls", "lazy+warm").proposal_exchanges_mean;
            format!("n={n}: {:+.1}%", 100.0 * (1.0 - w / c))
        })
        .collect();
    lines.push(Line {
        id: 4,
        passed: warm < cold,
        detail: format!(
            "exchanges {cold:.2} plain vs {warm:.2} warm, {:.1}% reduction (published figure: up to 60%); {}",
            100.0 * (1.0 - warm / cold),
            per_n.join(", ")
        ),
    });

    let (ok5, d5) = beats_cd(&sweep1, &ns, "lazy+warm");
    lines.push(Line {
        id: 5,
        passed: ok5,
        detail: d5,
    });

    let cheap = pooled(&sweep1.records, "cheap-first", |r| r.g);
    let dear = pooled(&sweep1.records, "expensive-first", |r| r.g);
    let per_n: Vec<String> = ns
        .iter()
        .map(|&n| {
            let d = row(&sweep1, n, "cd", "cheap-first").g_mean - row(&sweep1, n, "cd", "expensive-first").g_mean;
            format!("n={n}: {d:+.3}")
        })
        .collect();
    lines.push(Line {
        id: 6,
        passed: cheap >= dear,
        detail: format!(
            "mean g {cheap:.3} cheap-first vs {dear:.3} expensive-first over the sweep; per n {}",
            per_n.join(", ")
        ),
    });

    let mut s2 = ScenarioConfig::tradeoff();
    s2.seed = SEED;
    s2.record_runtime = false;
    s2.solvers.ablation = false;
    s2.solvers.downsample = 1.0;
    let sweep2 = run_experiment(&s2).expect("scenario 2 sweep");
    let rs = s2.sweep_points();
    let energy: Vec<f64> = rs
        .iter()
        .map(|&r| row(&sweep2, r, "dls", "lazy+warm").energy_raw_mean)
        .collect();
    let rises: Vec<f64> = energy
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| (w[1] - w[0]) / w[0].abs().max(f64::MIN_POSITIVE))
        .collect();
    let trend = rises.len() <= 1 && rises.iter().all(|x| *x <= 0.05);
    let mut dominated = Vec::new();
    for &r in &rs {
        let d = row(&sweep2, r, "dls", "lazy+warm");
        for cd in ["cheap-first", "expensive-first"] {
            let c = row(&sweep2, r, "cd", cd);
            let weakly = c.mi_mean >= d.mi_mean && c.energy_raw_mean <= d.energy_raw_mean;
            if weakly && (c.mi_mean > d.mi_mean || c.energy_raw_mean < d.energy_raw_mean) {
                dominated.push(format!("r={r} by {cd}"));
            }
        }
    }
    lines.push(Line {
        id: 7,
        passed: trend && dominated.is_empty(),
        detail: format!(
            "C/r means {}; {} rise(s); dominated: {}",
            energy.iter().map(|e| format!("{e:.2}")).collect::<Vec<_>>().join("/"),
            rises.len(),
            if dominated.is_empty() {
                "none".to_string()
            } else {
                dominated.join(", ")
            }
        ),
    });

    lines.push(check(8, check_oracle(30, SEED + 5).expect("oracle suite")));
    lines.push(check(9, check_protocol(1000, SEED + 4, ALPHA).expect("protocol suite")));

    let name = format!("downsample-{}", s1.solvers.downsample);
    let (ok10, d10) = beats_cd(&sweep1, &ns, &name);
    lines.push(Line {
        id: 10,
        passed: ok10,
        detail: d10,
    });

    let mut all = true;
    for l in &lines {
        all &= l.passed;
        println!(
            "{} criterion {:>2}: {}",
            if l.passed { "PASS" } else { "FAIL" },
            l.id,
            l.detail
        );
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
