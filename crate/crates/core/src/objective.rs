//! The ground set, admissible solutions and the set function the solvers
//! maximize: `g(S) = I(y; z_S) − C(S) + λ`.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use nalgebra::{DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filtering::{info_step, kf_predict, BeliefCov, Mat, TargetModel};
use crate::world::{position_information, trajectory_energy, ControlInput, CostField, RobotSpec, RobotState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrajId(pub u32);

impl TrajId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for TrajId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One independently evolving target. Its first two state components are
/// the planar position.
#[derive(Debug, Clone)]
pub struct Target {
    pub model: TargetModel,
    pub prior: BeliefCov,
    pub mean: DVector<f64>,
}

impl Target {
    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    /// Prior mean propagated through the dynamics, `t = 0..=horizon`. Used
    /// as the linearization point for the sensor model.
    pub fn mean_positions(&self, horizon: usize) -> Vec<Vector2<f64>> {
        let mut out = Vec::with_capacity(horizon + 1);
        let mut m = self.mean.clone();
        for t in 0..=horizon {
            out.push(Vector2::new(m[0], m[1]));
            m = self.model.at(self.prior.t + t).0 * m;
        }
        out
    }
}

/// Everything needed to evaluate a set of trajectories.
#[derive(Debug, Clone)]
pub struct Problem {
    pub robots: Vec<RobotSpec>,
    pub targets: Vec<Target>,
    pub field: CostField,
    pub horizon: usize,
    pub tau: f64,
}

impl Problem {
    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.robots.iter().enumerate() {
            if r.id != i {
                return Err(Error::Contract(format!("robot at index {i} has id {}", r.id)));
            }
            r.validate()?;
        }
        for t in &self.targets {
            if t.dim() < 2 || t.prior.sigma.nrows() != t.dim() || t.mean.len() != t.dim() {
                return Err(Error::Dimension("target model, prior and mean disagree".into()));
            }
        }
        if self.horizon == 0 {
            return Err(Error::Contract("horizon must be at least 1".into()));
        }
        Ok(())
    }
}

/// A control sequence for one robot together with its cached rollout,
/// unweighted energy and standalone score `J({a})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: TrajId,
    pub robot: usize,
    pub controls: Vec<ControlInput>,
    pub states: Vec<RobotState>,
    pub energy: f64,
    pub standalone: f64,
}

/// `λ = Σ_i r_i c^max_i` with `c^max_i = T (max control cost + max state
/// cost)`; makes `J + λ` non-negative on every admissible set.
pub fn offset_lambda(specs: &[RobotSpec], horizon: usize) -> f64 {
    specs
        .iter()
        .map(|s| s.weight * horizon as f64 * (s.costs.max_control() + s.costs.max_state()))
        .sum()
}

/// Ground set partitioned by robot.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionMatroid {
    parts: Vec<Vec<TrajId>>,
    owner: Vec<usize>,
    standalone: Vec<f64>,
    present: Vec<bool>,
}

impl PartitionMatroid {
    /// `entries[k] = (robot, standalone score)` of trajectory `TrajId(k)`.
    pub fn new(n_robots: usize, entries: &[(usize, f64)]) -> Result<Self> {
        let mut parts = vec![Vec::new(); n_robots];
        let mut owner = Vec::with_capacity(entries.len());
        let mut standalone = Vec::with_capacity(entries.len());
        for (k, &(robot, score)) in entries.iter().enumerate() {
            if robot >= n_robots {
                return Err(Error::Contract(format!(
                    "trajectory {k} belongs to robot {robot} but there are {n_robots} robots"
                )));
            }
            parts[robot].push(TrajId(k as u32));
            owner.push(robot);
            standalone.push(score);
        }
        Ok(PartitionMatroid {
            parts,
            owner,
            standalone,
            present: vec![true; entries.len()],
        })
    }

    pub fn from_trajectories(n_robots: usize, trajs: &[Trajectory]) -> Result<Self> {
        for (k, t) in trajs.iter().enumerate() {
            if t.id.index() != k {
                return Err(Error::Contract(format!("trajectory at index {k} has id {}", t.id)));
            }
        }
        let entries: Vec<_> = trajs.iter().map(|t| (t.robot, t.standalone)).collect();
        Self::new(n_robots, &entries)
    }

    pub fn n_robots(&self) -> usize {
        self.parts.len()
    }

    /// Number of trajectories currently in the ground set.
    pub fn len(&self) -> usize {
        self.parts.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Size of the id space (including removed trajectories).
    pub fn id_space(&self) -> usize {
        self.owner.len()
    }

    pub fn partition(&self, robot: usize) -> &[TrajId] {
        &self.parts[robot]
    }

    pub fn owner(&self, id: TrajId) -> usize {
        self.owner[id.index()]
    }

    pub fn standalone(&self, id: TrajId) -> f64 {
        self.standalone[id.index()]
    }

    pub fn contains(&self, id: TrajId) -> bool {
        self.present.get(id.index()).copied().unwrap_or(false)
    }

    /// All present ids in canonical (ascending) order.
    pub fn ids(&self) -> Vec<TrajId> {
        let mut v: Vec<_> = self.parts.iter().flatten().copied().collect();
        v.sort_unstable();
        v
    }

    pub fn remove(&mut self, ids: impl IntoIterator<Item = TrajId>) {
        for id in ids {
            if self.contains(id) {
                self.present[id.index()] = false;
                let robot = self.owner(id);
                self.parts[robot].retain(|x| *x != id);
            }
        }
    }

    /// Best singleton by standalone score, ties to the lowest id.
    pub fn best_singleton(&self) -> Option<TrajId> {
        best_by_score(self.ids().into_iter(), |id| self.standalone(id))
    }

    /// Partition of `robot` sorted by standalone score, descending, ties by
    /// id.
    pub fn sorted_partition(&self, robot: usize) -> Vec<TrajId> {
        let mut v = self.parts[robot].clone();
        v.sort_by(|a, b| self.standalone(*b).total_cmp(&self.standalone(*a)).then(a.cmp(b)));
        v
    }
}

pub(crate) fn best_by_score(ids: impl Iterator<Item = TrajId>, score: impl Fn(TrajId) -> f64) -> Option<TrajId> {
    let mut best: Option<(TrajId, f64)> = None;
    for id in ids {
        let s = score(id);
        match best {
            Some((bid, bs)) if s < bs || (s == bs && id > bid) => {}
            _ => best = Some((id, s)),
        }
    }
    best.map(|(id, _)| id)
}

/// An admissible set: at most one trajectory per robot.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SolutionSet {
    slots: Vec<Option<TrajId>>,
}

impl SolutionSet {
    pub fn empty(n_robots: usize) -> Self {
        SolutionSet {
            slots: vec![None; n_robots],
        }
    }

    pub fn n_robots(&self) -> usize {
        self.slots.len()
    }

    pub fn len(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.iter().all(Option::is_none)
    }

    pub fn slot(&self, robot: usize) -> Option<TrajId> {
        self.slots[robot]
    }

    pub fn contains(&self, robot: usize, id: TrajId) -> bool {
        self.slots[robot] == Some(id)
    }

    /// `(robot, id)` pairs in robot order.
    pub fn assigned(&self) -> impl Iterator<Item = (usize, TrajId)> + '_ {
        self.slots.iter().enumerate().filter_map(|(r, s)| s.map(|id| (r, id)))
    }

    /// Sorted ids; the canonical key of the set.
    pub fn key(&self) -> Vec<TrajId> {
        let mut v: Vec<_> = self.slots.iter().flatten().copied().collect();
        v.sort_unstable();
        v
    }

    pub fn add(&mut self, robot: usize, id: TrajId) -> Result<()> {
        match self.slots.get(robot) {
            None => Err(Error::Contract(format!("unknown robot {robot}"))),
            Some(Some(cur)) => Err(Error::Contract(format!(
                "robot {robot} already holds trajectory {cur}; adding {id} breaks the partition"
            ))),
            Some(None) => {
                self.slots[robot] = Some(id);
                Ok(())
            }
        }
    }

    pub fn delete(&mut self, robot: usize, id: TrajId) -> Result<()> {
        if self.slots.get(robot) != Some(&Some(id)) {
            return Err(Error::Contract(format!(
                "trajectory {id} of robot {robot} not in the set"
            )));
        }
        self.slots[robot] = None;
        Ok(())
    }

    pub fn with_added(&self, robot: usize, id: TrajId) -> Result<Self> {
        let mut s = self.clone();
        s.add(robot, id)?;
        Ok(s)
    }

    pub fn with_deleted(&self, robot: usize, id: TrajId) -> Result<Self> {
        let mut s = self.clone();
        s.delete(robot, id)?;
        Ok(s)
    }

    pub fn is_subset_of(&self, other: &SolutionSet) -> bool {
        self.slots.iter().zip(&other.slots).all(|(a, b)| a.is_none() || a == b)
    }
}

/// A set function over admissible sets.
pub trait SetOracle: Sync {
    fn value(&self, s: &SolutionSet) -> f64;

    /// Constant added to `J` to make the function non-negative.
    fn offset(&self) -> f64 {
        0.0
    }
}

impl<T: SetOracle + ?Sized> SetOracle for &T {
    fn value(&self, s: &SolutionSet) -> f64 {
        (**self).value(s)
    }

    fn offset(&self) -> f64 {
        (**self).offset()
    }
}

/// Adapts a closure; handy for synthetic set functions in tests.
pub struct FnOracle<F>(pub F);

impl<F: Fn(&SolutionSet) -> f64 + Sync> SetOracle for FnOracle<F> {
    fn value(&self, s: &SolutionSet) -> f64 {
        (self.0)(s)
    }
}

/// Counts evaluations and memoizes them by the sorted id tuple.
///
/// `requests` counts every call; `calls` counts only cache misses, i.e. real
/// evaluations of the wrapped function.
pub struct CountingOracle<O> {
    inner: O,
    memo: Option<Mutex<HashMap<Vec<TrajId>, f64>>>,
    requests: AtomicU64,
    calls: AtomicU64,
}

impl<O: SetOracle> CountingOracle<O> {
    pub fn new(inner: O) -> Self {
        CountingOracle {
            inner,
            memo: Some(Mutex::new(HashMap::new())),
            requests: AtomicU64::new(0),
            calls: AtomicU64::new(0),
        }
    }

    pub fn without_memo(inner: O) -> Self {
        CountingOracle {
            memo: None,
            ..Self::new(inner)
        }
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    pub fn g(&self, s: &SolutionSet) -> f64 {
        self.requests.fetch_add(1, Ordering::Relaxed);
        let Some(memo) = &self.memo else {
            self.calls.fetch_add(1, Ordering::Relaxed);
            return self.inner.value(s);
        };
        let key = s.key();
        if let Some(v) = memo.lock().unwrap().get(&key) {
            return *v;
        }
        let v = self.inner.value(s);
        self.calls.fetch_add(1, Ordering::Relaxed);
        memo.lock().unwrap().insert(key, v);
        v
    }

    /// `g(S ∪ {a}) − g(S)`.
    pub fn marginal_gain(&self, matroid: &PartitionMatroid, a: TrajId, s: &SolutionSet) -> Result<f64> {
        let grown = s.with_added(matroid.owner(a), a)?;
        Ok(self.g(&grown) - self.g(s))
    }
}

impl<O: SetOracle> SetOracle for CountingOracle<O> {
    fn value(&self, s: &SolutionSet) -> f64 {
        self.g(s)
    }

    fn offset(&self) -> f64 {
        self.inner.offset()
    }
}

/// Observations of one target by one trajectory: `(t, position
/// information)` for every `t` at which it is in view.
type Sightings = Vec<(usize, Matrix2<f64>)>;

/// The energy-aware information objective over a fixed trajectory set.
pub struct Objective {
    problem: Problem,
    trajectories: Vec<Trajectory>,
    /// Per trajectory, per target it ever sees.
    sightings: Vec<Vec<(usize, Sightings)>>,
    lambda: f64,
    /// Mutual information of a single target given the sorted ids of the
    /// trajectories that see it; independent targets make the total a sum.
    target_cache: Mutex<HashMap<(usize, Vec<TrajId>), f64>>,
}

impl std::fmt::Debug for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Objective")
            .field("robots", &self.problem.robots.len())
            .field("targets", &self.problem.targets.len())
            .field("trajectories", &self.trajectories.len())
            .field("lambda", &self.lambda)
            .finish()
    }
}

fn sightings_of(
    problem: &Problem,
    means: &[Vec<Vector2<f64>>],
    robot: usize,
    states: &[RobotState],
) -> Vec<(usize, Sightings)> {
    let spec = &problem.robots[robot];
    let mut out = Vec::new();
    for (j, positions) in means.iter().enumerate() {
        let seen: Sightings = states
            .iter()
            .enumerate()
            .filter_map(|(k, x)| {
                let t = k + 1;
                position_information(x, &positions[t], &spec.sensor).map(|m| (t, m))
            })
            .collect();
        if !seen.is_empty() {
            out.push((j, seen));
        }
    }
    out
}

fn embed(dim: usize, block: &Matrix2<f64>) -> Mat {
    let mut m = Mat::zeros(dim, dim);
    m.view_mut((0, 0), (2, 2)).copy_from(block);
    m
}

/// Mutual information contributed by one target observed through the given
/// sightings lists (summed per timestep in list order).
fn target_information(target: &Target, horizon: usize, observers: &[&Sightings]) -> Result<f64> {
    if observers.is_empty() {
        return Ok(0.0);
    }
    let dim = target.dim();
    let mut cursors = vec![0usize; observers.len()];
    let mut sigma = target.prior.sigma.clone();
    let mut total = 0.0;
    for t in 1..=horizon {
        let predicted = kf_predict(&sigma, &target.model, target.prior.t + t - 1)?;
        let mut block: Option<Matrix2<f64>> = None;
        for (obs, cur) in observers.iter().zip(cursors.iter_mut()) {
            if let Some((tt, m)) = obs.get(*cur) {
                if *tt == t {
                    *cur += 1;
                    block = Some(block.map_or(*m, |b| b + m));
                }
            }
        }
        let info = block.map(|b| embed(dim, &b));
        let (post, gain) = info_step(predicted, info.as_ref())?;
        total += 0.5 * gain;
        sigma = post;
    }
    Ok(total)
}

impl Objective {
    /// Builds the objective from per-robot control sequences. Ids are
    /// assigned robot-major in the given order.
    pub fn from_controls(problem: Problem, per_robot: Vec<Vec<Vec<ControlInput>>>) -> Result<Self> {
        problem.validate()?;
        if per_robot.len() != problem.robots.len() {
            return Err(Error::Contract(format!(
                "{} candidate lists for {} robots",
                per_robot.len(),
                problem.robots.len()
            )));
        }
        let mut trajs = Vec::new();
        for (robot, lists) in per_robot.into_iter().enumerate() {
            for controls in lists {
                let spec = &problem.robots[robot];
                let states = crate::world::rollout(&spec.initial, &controls, problem.tau);
                if controls.len() != problem.horizon {
                    return Err(Error::Contract(format!(
                        "trajectory of length {} for horizon {}",
                        controls.len(),
                        problem.horizon
                    )));
                }
                let energy = trajectory_energy(spec, &problem.field, &controls, &states)?;
                trajs.push(Trajectory {
                    id: TrajId(trajs.len() as u32),
                    robot,
                    controls,
                    states,
                    energy,
                    standalone: 0.0,
                });
            }
        }
        Self::new(problem, trajs, true)
    }

    /// Wraps precomputed trajectories. With `rescore`, standalone scores are
    /// recomputed through this objective.
    pub fn new(problem: Problem, mut trajectories: Vec<Trajectory>, rescore: bool) -> Result<Self> {
        problem.validate()?;
        let means: Vec<_> = problem
            .targets
            .iter()
            .map(|t| t.mean_positions(problem.horizon))
            .collect();
        let mut sightings = Vec::with_capacity(trajectories.len());
        for (k, t) in trajectories.iter().enumerate() {
            if t.id.index() != k || t.robot >= problem.robots.len() {
                return Err(Error::Contract(format!("trajectory {k} has a bad id or robot")));
            }
            if t.states.len() != problem.horizon {
                return Err(Error::Contract(format!("trajectory {k} does not span the horizon")));
            }
            sightings.push(sightings_of(&problem, &means, t.robot, &t.states));
        }
        let lambda = offset_lambda(&problem.robots, problem.horizon);
        let mut obj = Objective {
            problem,
            trajectories: Vec::new(),
            sightings,
            lambda,
            target_cache: Mutex::new(HashMap::new()),
        };
        if rescore {
            for t in trajectories.iter_mut() {
                t.standalone = obj.standalone_of(t)?;
            }
        }
        obj.trajectories = trajectories;
        Ok(obj)
    }

    fn standalone_of(&self, t: &Trajectory) -> Result<f64> {
        let mut mi = 0.0;
        for (j, seen) in &self.sightings[t.id.index()] {
            mi += target_information(&self.problem.targets[*j], self.problem.horizon, &[seen])?;
        }
        Ok(mi - self.problem.robots[t.robot].weight * t.energy)
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn trajectory(&self, id: TrajId) -> &Trajectory {
        &self.trajectories[id.index()]
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn matroid(&self) -> PartitionMatroid {
        PartitionMatroid::from_trajectories(self.problem.robots.len(), &self.trajectories)
            .expect("ids checked at construction")
    }

    /// Weighted energy `C(S)`.
    pub fn energy_cost(&self, s: &SolutionSet) -> f64 {
        s.assigned()
            .map(|(r, id)| self.problem.robots[r].weight * self.trajectories[id.index()].energy)
            .sum()
    }

    /// Unweighted energy `Σ C_i(σ_i)`.
    pub fn raw_energy(&self, s: &SolutionSet) -> f64 {
        s.assigned().map(|(_, id)| self.trajectories[id.index()].energy).sum()
    }

    pub fn mutual_information(&self, s: &SolutionSet) -> Result<f64> {
        let ids = s.key();
        let mut total = 0.0;
        for (j, target) in self.problem.targets.iter().enumerate() {
            let observers: Vec<TrajId> = ids
                .iter()
                .copied()
                .filter(|id| self.sightings[id.index()].iter().any(|(k, _)| *k == j))
                .collect();
            if observers.is_empty() {
                continue;
            }
            let key = (j, observers);
            if let Some(v) = self.target_cache.lock().unwrap().get(&key) {
                total += *v;
                continue;
            }
            let lists: Vec<&Sightings> = key
                .1
                .iter()
                .map(|id| {
                    &self.sightings[id.index()]
                        .iter()
                        .find(|(k, _)| *k == j)
                        .expect("filtered above")
                        .1
                })
                .collect();
            let v = target_information(target, self.problem.horizon, &lists)?;
            self.target_cache.lock().unwrap().insert(key, v);
            total += v;
        }
        Ok(total)
    }

    /// `J(S) = I − C`.
    pub fn objective_j(&self, s: &SolutionSet) -> Result<f64> {
        Ok(self.mutual_information(s)? - self.energy_cost(s))
    }

    /// `g(S) = J(S) + λ`; negative values mean the offset is wrong.
    pub fn oracle_g(&self, s: &SolutionSet) -> Result<f64> {
        let g = self.objective_j(s)? + self.lambda;
        if g < 0.0 {
            return Err(Error::Invariant(format!("g(S) = {g} < 0 with λ = {}", self.lambda)));
        }
        Ok(g)
    }

    /// Breakdown `(g, J, MI, C)` of a set.
    pub fn breakdown(&self, s: &SolutionSet) -> Result<(f64, f64, f64, f64)> {
        let mi = self.mutual_information(s)?;
        let c = self.energy_cost(s);
        let j = mi - c;
        Ok((j + self.lambda, j, mi, c))
    }
}

impl SetOracle for Objective {
    fn value(&self, s: &SolutionSet) -> f64 {
        self.oracle_g(s).expect("objective evaluation failed")
    }

    fn offset(&self) -> f64 {
        self.lambda
    }
}
