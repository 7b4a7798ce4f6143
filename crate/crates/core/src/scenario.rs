//! Experiment configuration and the two benchmark scenarios: dynamic
//! target tracking with a homogeneous UGV team, and a heterogeneous team
//! trading information against energy over muddy and windy terrain.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filtering::BeliefCov;
use crate::objective::{Problem, Target};
use crate::trajgen::GenConfig;
use crate::world::{
    default_primitives, double_integrator_model, static_target_model, CostField, CostTable, Region, RegionKind,
    RobotClass, RobotSpec, RobotState, SensorProfile,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CdOrder {
    /// Lowest energy weight plans first.
    CheapFirst,
    ExpensiveFirst,
}

impl CdOrder {
    pub fn name(self) -> &'static str {
        match self {
            CdOrder::CheapFirst => "cheap-first",
            CdOrder::ExpensiveFirst => "expensive-first",
        }
    }

    /// Robot indices in planning order; ties keep index order.
    pub fn order(self, weights: &[f64]) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..weights.len()).collect();
        idx.sort_by(|&a, &b| {
            let c = weights[a].total_cmp(&weights[b]);
            match self {
                CdOrder::CheapFirst => c,
                CdOrder::ExpensiveFirst => c.reverse(),
            }
            .then(a.cmp(&b))
        });
        idx
    }
}

impl std::str::FromStr for CdOrder {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "cheap-first" => Ok(CdOrder::CheapFirst),
            "expensive-first" => Ok(CdOrder::ExpensiveFirst),
            other => Err(format!("unknown CD order `{other}` (cheap-first|expensive-first)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    RoundRobin,
    Concurrent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub alpha: f64,
    /// Options of the main DLS variant.
    pub lazy: bool,
    pub warm_start: bool,
    /// Also run DLS with every lazy/warm combination.
    pub ablation: bool,
    /// Fraction kept by the downsampled DLS variant; 1 disables it.
    pub downsample: f64,
    pub cd_orders: Vec<CdOrder>,
    pub cls: bool,
    pub schedule: ScheduleKind,
    pub delivery: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            alpha: 1.0,
            lazy: true,
            warm_start: true,
            ablation: true,
            downsample: 0.1,
            cd_orders: vec![CdOrder::CheapFirst, CdOrder::ExpensiveFirst],
            cls: false,
            schedule: ScheduleKind::RoundRobin,
            delivery: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetConfig {
    /// Defaults to one target per robot in tracking and 10 in the
    /// trade-off scenario.
    pub count: Option<usize>,
    /// Acceleration noise intensity of moving targets.
    pub q: f64,
    pub prior_pos_var: f64,
    pub prior_vel_var: f64,
    pub top_speed: f64,
    /// Process noise of static targets, keeps their model well posed.
    pub static_noise: f64,
}

impl Default for TargetConfig {
    fn default() -> Self {
        TargetConfig {
            count: None,
            q: 0.1,
            prior_pos_var: 4.0,
            prior_vel_var: 1.0,
            top_speed: 2.0,
            static_noise: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArenaConfig {
    /// Tracking arena side at 2 and at 10 robots, linear in between.
    pub side_small: f64,
    pub side_large: f64,
    /// Trade-off arena side.
    pub side_tradeoff: f64,
    /// Terrain of the trade-off scenario.
    pub regions: Vec<Region>,
}

impl Default for ArenaConfig {
    fn default() -> Self {
        ArenaConfig {
            side_small: 40.0,
            side_large: 60.0,
            side_tradeoff: 100.0,
            regions: vec![
                Region {
                    kind: RegionKind::Mud,
                    x_min: 25.0,
                    x_max: 65.0,
                    y_min: 20.0,
                    y_max: 60.0,
                },
                Region {
                    kind: RegionKind::Wind,
                    x_min: 45.0,
                    x_max: 85.0,
                    y_min: 40.0,
                    y_max: 80.0,
                },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeamConfig {
    pub tracking_ugv: SensorProfile,
    pub tradeoff_ugv: SensorProfile,
    pub tradeoff_uav: SensorProfile,
    pub ugv_costs: CostTable,
    pub uav_costs: CostTable,
}

impl Default for TeamConfig {
    fn default() -> Self {
        TeamConfig {
            tracking_ugv: SensorProfile::new(160.0, Some(6.0)),
            tradeoff_ugv: SensorProfile::new(160.0, Some(15.0)),
            tradeoff_uav: SensorProfile::new(360.0, Some(20.0)),
            ugv_costs: CostTable::for_class(RobotClass::Ugv),
            uav_costs: CostTable::for_class(RobotClass::Uav),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationConfig {
    pub max_candidates: usize,
    pub max_frontier: usize,
    pub dedup_xy: f64,
    pub dedup_theta_deg: f64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        let g = GenConfig::default();
        GenerationConfig {
            max_candidates: g.max_candidates,
            max_frontier: g.max_frontier,
            dedup_xy: g.dedup_xy,
            dedup_theta_deg: g.dedup_theta_deg,
        }
    }
}

/// One experiment: a scenario, its sweep, trial count and solver set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// 1 = dynamic tracking, 2 = energy trade-off.
    pub scenario: u8,
    /// Team sizes swept in scenario 1.
    pub robots: Vec<usize>,
    /// Energy weights swept in scenario 2.
    pub weights: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    /// Defaults to 10 (scenario 1) or 20 (scenario 2).
    pub horizon: Option<usize>,
    pub tau: f64,
    pub targets: TargetConfig,
    pub arena: ArenaConfig,
    pub team: TeamConfig,
    pub generation: GenerationConfig,
    pub solvers: SolverConfig,
    /// Write measured runtimes; off gives byte-reproducible CSV files.
    pub record_runtime: bool,
    pub plots: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            scenario: 1,
            robots: vec![2, 3, 4, 5, 6],
            weights: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
            trials: 20,
            seed: 0,
            horizon: None,
            tau: 0.5,
            targets: TargetConfig::default(),
            arena: ArenaConfig::default(),
            team: TeamConfig::default(),
            generation: GenerationConfig::default(),
            solvers: SolverConfig::default(),
            record_runtime: true,
            plots: true,
        }
    }
}

fn config_err(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

impl ScenarioConfig {
    pub fn tracking() -> Self {
        ScenarioConfig::default()
    }

    pub fn tradeoff() -> Self {
        ScenarioConfig {
            scenario: 2,
            ..ScenarioConfig::default()
        }
    }

    /// Parses TOML; errors name the offending line and field.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start.min(text.len())].lines().count().max(1));
            let field = match line {
                Some(l) => format!("line {l}"),
                None => "document".to_string(),
            };
            config_err(&field, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable")
    }

    pub fn horizon(&self) -> usize {
        self.horizon.unwrap_or(if self.scenario == 2 { 20 } else { 10 })
    }

    /// Sweep values as reported in the `n_or_r` column.
    pub fn sweep_points(&self) -> Vec<f64> {
        match self.scenario {
            1 => self.robots.iter().map(|&n| n as f64).collect(),
            _ => self.weights.clone(),
        }
    }

    pub fn gen_config(&self) -> GenConfig {
        GenConfig {
            horizon: self.horizon(),
            primitives: default_primitives(),
            max_candidates: self.generation.max_candidates,
            downsample: 1.0,
            dedup_xy: self.generation.dedup_xy,
            dedup_theta_deg: self.generation.dedup_theta_deg,
            max_frontier: self.generation.max_frontier,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.scenario {
            1 => {
                if self.robots.is_empty() || self.robots.iter().any(|&n| n < 2) {
                    return Err(config_err("robots", "need at least one team size, each ≥ 2"));
                }
            }
            2 => {
                if self.weights.is_empty() || self.weights.iter().any(|&r| !(r >= 0.0 && r.is_finite())) {
                    return Err(config_err("weights", "need at least one finite weight ≥ 0"));
                }
            }
            s => return Err(config_err("scenario", format!("unknown scenario {s}, expected 1 or 2"))),
        }
        if self.trials == 0 {
            return Err(config_err("trials", "must be at least 1"));
        }
        if self.horizon() == 0 {
            return Err(config_err("horizon", "must be at least 1"));
        }
        if !(self.tau > 0.0) {
            return Err(config_err("tau", "must be positive"));
        }
        let t = &self.targets;
        if !(t.q >= 0.0 && t.prior_pos_var > 0.0 && t.prior_vel_var > 0.0 && t.top_speed >= 0.0 && t.static_noise > 0.0)
        {
            return Err(config_err("targets", "noise and prior variances must be positive"));
        }
        if t.count == Some(0) {
            return Err(config_err("targets.count", "must be at least 1"));
        }
        let a = &self.arena;
        if !(a.side_small > 0.0 && a.side_large > 0.0 && a.side_tradeoff > 0.0) {
            return Err(config_err("arena", "sides must be positive"));
        }
        for (k, r) in a.regions.iter().enumerate() {
            if !(r.x_min <= r.x_max && r.y_min <= r.y_max) {
                return Err(config_err(&format!("arena.regions[{k}]"), "empty rectangle"));
            }
        }
        for (name, p) in [
            ("team.tracking_ugv", &self.team.tracking_ugv),
            ("team.tradeoff_ugv", &self.team.tradeoff_ugv),
            ("team.tradeoff_uav", &self.team.tradeoff_uav),
        ] {
            p.validate().map_err(|e| config_err(name, e.to_string()))?;
        }
        for (name, c) in [
            ("team.ugv_costs", &self.team.ugv_costs),
            ("team.uav_costs", &self.team.uav_costs),
        ] {
            c.validate().map_err(|e| config_err(name, e.to_string()))?;
            for u in default_primitives() {
                if !c.controls.iter().any(|cc| cc.control == u) {
                    return Err(config_err(
                        name,
                        format!("no cost for primitive ({}, {})", u.nu, u.omega),
                    ));
                }
            }
        }
        let s = &self.solvers;
        if !(s.alpha > 0.0) {
            return Err(config_err("solvers.alpha", "must be positive"));
        }
        if !(s.downsample > 0.0 && s.downsample <= 1.0) {
            return Err(config_err("solvers.downsample", "must be in (0, 1]"));
        }
        if !(s.delivery > 0.0 && s.delivery <= 1.0) {
            return Err(config_err("solvers.delivery", "must be in (0, 1]"));
        }
        self.gen_config()
            .validate()
            .map_err(|e| config_err("generation", e.to_string()))?;
        Ok(())
    }
}

/// Arena side for a tracking team of `n`: 40 m at two robots, 60 m at ten.
pub fn tracking_arena_side(cfg: &ScenarioConfig, n: usize) -> f64 {
    let a = &cfg.arena;
    a.side_small + (n as f64 - 2.0) * (a.side_large - a.side_small) / 8.0
}

/// Seed of one trial; independent of the sweep point so that paired runs
/// across team sizes start from related draws.
pub fn trial_seed(base: u64, trial: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(trial as u64)
        .rotate_left(17)
}

fn moving_target(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng, side: f64) -> Result<Target> {
    let t = &cfg.targets;
    let heading = rng.gen_range(-PI..PI);
    let speed = rng.gen_range(0.0..=1.0) * t.top_speed;
    let mean = DVector::from_vec(vec![
        rng.gen_range(0.0..side),
        rng.gen_range(0.0..side),
        speed * heading.cos(),
        speed * heading.sin(),
    ]);
    let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![
        t.prior_pos_var,
        t.prior_pos_var,
        t.prior_vel_var,
        t.prior_vel_var,
    ]));
    Ok(Target {
        model: double_integrator_model(cfg.tau, t.q)?,
        prior: BeliefCov { sigma, t: 0 },
        mean,
    })
}

fn static_target(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng, side: f64) -> Result<Target> {
    let t = &cfg.targets;
    let mean = DVector::from_vec(vec![rng.gen_range(0.0..side), rng.gen_range(0.0..side)]);
    Ok(Target {
        model: static_target_model(t.static_noise)?,
        prior: BeliefCov {
            sigma: DMatrix::identity(2, 2) * t.prior_pos_var,
            t: 0,
        },
        mean,
    })
}

/// Dynamic tracking: `n` UGVs with weights `r_i = i` (1-based), no terrain
/// costs, `n` moving targets unless the config says otherwise.
pub fn build_scenario1(cfg: &ScenarioConfig, n: usize, seed: u64) -> Result<Problem> {
    if n < 2 {
        return Err(Error::Contract(format!("tracking needs at least 2 robots, got {n}")));
    }
    let side = tracking_arena_side(cfg, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let robots = (0..n)
        .map(|i| RobotSpec {
            id: i,
            class: RobotClass::Ugv,
            initial: RobotState::new(
                rng.gen_range(0.0..side),
                rng.gen_range(0.0..side),
                rng.gen_range(-PI..PI),
            ),
            sensor: cfg.team.tracking_ugv,
            costs: cfg.team.ugv_costs.clone().without_state_costs(),
            weight: (i + 1) as f64,
        })
        .collect();
    let targets = (0..cfg.targets.count.unwrap_or(n))
        .map(|_| moving_target(cfg, &mut rng, side))
        .collect::<Result<Vec<_>>>()?;
    let problem = Problem {
        robots,
        targets,
        field: CostField::default(),
        horizon: cfg.horizon(),
        tau: cfg.tau,
    };
    problem.validate()?;
    Ok(problem)
}

/// Energy trade-off: two UGVs and one UAV with common weight `r`, static
/// targets anywhere in the arena, robots spawned outside mud and wind.
pub fn build_scenario2(cfg: &ScenarioConfig, r: f64, seed: u64) -> Result<Problem> {
    if !(r >= 0.0 && r.is_finite()) {
        return Err(Error::Contract(format!(
            "energy weight must be finite and ≥ 0, got {r}"
        )));
    }
    let side = cfg.arena.side_tradeoff;
    let field = CostField {
        regions: cfg.arena.regions.clone(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spawn = |rng: &mut ChaCha8Rng| -> Result<RobotState> {
        for _ in 0..10_000 {
            let (x, y) = (rng.gen_range(0.0..side), rng.gen_range(0.0..side));
            if !field.regions.iter().any(|reg| reg.contains(x, y)) {
                return Ok(RobotState::new(x, y, rng.gen_range(-PI..PI)));
            }
        }
        Err(config_err("arena.regions", "no clear ground to spawn robots"))
    };
    let team = [
        (RobotClass::Ugv, cfg.team.tradeoff_ugv, &cfg.team.ugv_costs),
        (RobotClass::Ugv, cfg.team.tradeoff_ugv, &cfg.team.ugv_costs),
        (RobotClass::Uav, cfg.team.tradeoff_uav, &cfg.team.uav_costs),
    ];
    let mut robots = Vec::with_capacity(team.len());
    for (i, (class, sensor, costs)) in team.into_iter().enumerate() {
        robots.push(RobotSpec {
            id: i,
            class,
            initial: spawn(&mut rng)?,
            sensor,
            costs: costs.clone(),
            weight: r,
        });
    }
    let targets = (0..cfg.targets.count.unwrap_or(10))
        .map(|_| static_target(cfg, &mut rng, side))
        .collect::<Result<Vec<_>>>()?;
    let problem = Problem {
        robots,
        targets,
        field,
        horizon: cfg.horizon(),
        tau: cfg.tau,
    };
    problem.validate()?;
    Ok(problem)
}

/// Builds the instance for one sweep point of `cfg`.
pub fn build_instance(cfg: &ScenarioConfig, point: f64, seed: u64) -> Result<Problem> {
    match cfg.scenario {
        1 => build_scenario1(cfg, point as usize, seed),
        2 => build_scenario2(cfg, point, seed),
        s => Err(config_err("scenario", format!("unknown scenario {s}"))),
    }
}
