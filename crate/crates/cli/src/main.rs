use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use dlsplan_core::experiment::{run_experiment_with, write_outputs};
use dlsplan_core::scenario::{CdOrder, ScenarioConfig, ScheduleKind};
use dlsplan_core::trace::{read_trace, replay};
use dlsplan_core::verify;

/// Fallback for `--out`.
const OUT_ENV: &str = "DLSPLAN_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "dlsplan",
    version,
    about = "Energy-aware multi-robot trajectory selection experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config file.
    Run {
        config: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Sweep team size (scenario 1) or energy weight (scenario 2) with
    /// default settings.
    Sweep {
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
        scenario: u8,
        /// Team sizes, as `2..6` (inclusive) or a comma list.
        #[arg(long)]
        robots: Option<String>,
        /// Energy weights, comma separated.
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Run the property and guarantee suites on random small instances.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Audit a commit trace written by `run` or `sweep`.
    Replay { trace: PathBuf },
}

#[derive(Args)]
struct RunOpts {
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to $DLSPLAN_OUT_DIR, then ./out.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, overrides_with = "no_lazy")]
    lazy: bool,
    #[arg(long)]
    no_lazy: bool,
    #[arg(long, overrides_with = "no_warm")]
    warm: bool,
    #[arg(long)]
    no_warm: bool,
    /// Fraction of each robot's best trajectories for the downsampled DLS
    /// variant; 1 disables the variant.
    #[arg(long)]
    downsample: Option<f64>,
    /// Run coordinate descent in this order only.
    #[arg(long)]
    cd_order: Option<CdOrder>,
    /// Interleave robot searches instead of polling them in turn.
    #[arg(long)]
    concurrent: bool,
    /// Skip the lazy/warm ablation variants.
    #[arg(long)]
    no_ablation: bool,
    /// Write zero runtimes so repeated runs give identical CSV files.
    #[arg(long)]
    no_runtime: bool,
    #[arg(long)]
    quiet: bool,
}

impl RunOpts {
    fn apply(&self, cfg: &mut ScenarioConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.trials {
            cfg.trials = t;
        }
        if self.lazy {
            cfg.solvers.lazy = true;
        }
        if self.no_lazy {
            cfg.solvers.lazy = false;
        }
        if self.warm {
            cfg.solvers.warm_start = true;
        }
        if self.no_warm {
            cfg.solvers.warm_start = false;
        }
        if let Some(f) = self.downsample {
            cfg.solvers.downsample = f;
        }
        if let Some(o) = self.cd_order {
            cfg.solvers.cd_orders = vec![o];
        }
        if self.concurrent {
            cfg.solvers.schedule = ScheduleKind::Concurrent;
        }
        if self.no_ablation {
            cfg.solvers.ablation = false;
        }
        if self.no_runtime {
            cfg.record_runtime = false;
        }
    }

    fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}

fn parse_robots(s: &str) -> Result<Vec<usize>> {
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (usize, usize) = (a.trim().parse()?, b.trim().parse()?);
        if a > b {
            bail!("empty robot range {s}");
        }
        return Ok((a..=b).collect());
    }
    s.split(',')
        .map(|x| x.trim().parse().with_context(|| format!("bad team size `{x}`")))
        .collect()
}

fn execute(mut cfg: ScenarioConfig, opts: &RunOpts) -> Result<()> {
    opts.apply(&mut cfg);
    cfg.validate()?;
    let dir = opts.out_dir();
    let quiet = opts.quiet;
    let out = run_experiment_with(&cfg, |p| {
        if !quiet && p.main {
            eprintln!("point {:>4} trial {:>3}  g = {:.4}", p.point, p.trial, p.g);
        }
    })?;
    let files = write_outputs(&cfg, &out, &dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml())?;
    println!(
        "{:<8} {:<20} {:>10} {:>10} {:>12} {:>10}",
        "n_or_r", "solver", "g", "J", "calls/N", "exchanges"
    );
    for a in &out.aggregates {
        println!(
            "{:<8} {:<20} {:>10.3} {:>10.3} {:>12.3} {:>10.1}",
            a.n_or_r,
            format!("{}/{}", a.solver, a.variant),
            a.g_mean,
            a.j_mean,
            a.oracle_calls_per_n_mean,
            a.proposal_exchanges_mean
        );
    }
    println!(
        "wrote {} and {} ({} traces)",
        files.trials.display(),
        files.aggregate.display(),
        files.traces.len()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Run { config, opts } => ScenarioConfig::load(&config)
            .with_context(|| format!("loading {}", config.display()))
            .and_then(|cfg| execute(cfg, &opts)),
        Command::Sweep {
            scenario,
            robots,
            weights,
            opts,
        } => (|| {
            let mut cfg = match scenario {
                1 => ScenarioConfig::tracking(),
                _ => ScenarioConfig::tradeoff(),
            };
            if let Some(r) = robots {
                cfg.robots = parse_robots(&r)?;
            }
            if let Some(w) = weights {
                cfg.weights = w;
            }
            execute(cfg, &opts)
        })(),
        Command::Verify { seed } => match verify::run_all(seed) {
            Ok(checks) => {
                let mut ok = true;
                for c in &checks {
                    ok &= c.passed;
                    println!("{} {:<20} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                }
                if ok {
                    Ok(())
                } else {
                    Err(anyhow::anyhow!("verification failed"))
                }
            }
            Err(e) => Err(e.into()),
        },
        Command::Replay { trace } => (|| {
            let f = File::open(&trace).with_context(|| format!("opening {}", trace.display()))?;
            let (header, records) = read_trace(BufReader::new(f))?;
            let report = replay(&header, &records);
            for r in &report.rounds {
                println!(
                    "round {}: {} commits, g {:.6} -> {:.6}, final {:?}",
                    r.round,
                    r.commits,
                    r.g_start,
                    r.g_final,
                    r.solution.iter().map(|t| t.0).collect::<Vec<_>>()
                );
            }
            for v in &report.violations {
                println!("violation: {v}");
            }
            if !report.is_clean() {
                bail!("{} violation(s)", report.violations.len());
            }
            println!("trace is consistent");
            Ok(())
        })(),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
