use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use dlsplan_core::central::coordinate_descent;
use dlsplan_core::dls::{dls_run, DlsOptions};
use dlsplan_core::scenario::{build_instance, trial_seed, CdOrder, ScenarioConfig};
use dlsplan_core::trajgen::build_objective;
use dlsplan_core::{CountingOracle, Objective, SetOracle, SolutionSet};

fn instance(n: usize) -> Objective {
    let cfg = ScenarioConfig::tracking();
    let problem = build_instance(&cfg, n as f64, trial_seed(0, 0)).unwrap();
    build_objective(problem, &cfg.gen_config()).unwrap()
}

fn oracle(c: &mut Criterion) {
    let obj = instance(4);
    let m = obj.matroid();
    let mut s = SolutionSet::empty(4);
    for r in 0..4 {
        s.add(r, m.sorted_partition(r)[0]).unwrap();
    }
    // Per-target blocks are cached after the first call, so this times the
    // cached path.
    c.bench_function("g/four robots", |b| b.iter(|| obj.value(black_box(&s))));
}

fn dls(c: &mut Criterion) {
    let mut group = c.benchmark_group("dls");
    group.sample_size(10);
    for n in [2, 4, 6] {
        let obj = instance(n);
        let m = obj.matroid();
        for (name, lazy, warm) in [("naive", false, false), ("lazy+warm", true, true)] {
            let opts = DlsOptions {
                lazy,
                warm_start: warm,
                ..DlsOptions::default()
            };
            group.bench_with_input(BenchmarkId::new(name, n), &n, |b, _| {
                b.iter(|| dls_run(&m, 1.0, &obj, opts).unwrap().result.g_value)
            });
        }
    }
    group.finish();
}

fn cd(c: &mut Criterion) {
    let mut group = c.benchmark_group("cd");
    for n in [2, 4, 6] {
        let obj = instance(n);
        let m = obj.matroid();
        let weights: Vec<f64> = obj.problem().robots.iter().map(|r| r.weight).collect();
        let order = CdOrder::CheapFirst.order(&weights);
        group.bench_with_input(BenchmarkId::new("cheap-first", n), &n, |b, _| {
            b.iter(|| {
                coordinate_descent(&m, &order, &CountingOracle::new(&obj), true)
                    .unwrap()
                    .g_value
            })
        });
    }
    group.finish();
}

criterion_group!(benches, oracle, dls, cd);
criterion_main!(benches);
