//! Candidate trajectory generation: breadth-first expansion of the
//! motion-primitive tree with pose deduplication, an optional beam on the
//! frontier, and score-based capping.

use std::collections::HashSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filtering::{info_step, kf_predict, Mat};
use crate::objective::{Objective, Problem, TrajId, Trajectory};
use crate::world::{
    control_cost, default_primitives, position_information, state_cost, step_dynamics, wrap_angle, ControlInput,
    RobotState,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub horizon: usize,
    pub primitives: Vec<ControlInput>,
    /// Cap on trajectories kept per robot.
    pub max_candidates: usize,
    /// Fraction of the best trajectories kept after capping.
    pub downsample: f64,
    /// Pose grid used to merge branches, metres and degrees.
    pub dedup_xy: f64,
    pub dedup_theta_deg: f64,
    /// Beam width per tree level; 0 means unbounded.
    pub max_frontier: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            horizon: 10,
            primitives: default_primitives(),
            max_candidates: 200,
            downsample: 1.0,
            dedup_xy: 0.5,
            dedup_theta_deg: 22.5,
            max_frontier: 1500,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Contract("generation horizon must be at least 1".into()));
        }
        if !(self.downsample > 0.0 && self.downsample <= 1.0) {
            return Err(Error::Contract(format!(
                "downsample fraction {} not in (0, 1]",
                self.downsample
            )));
        }
        if !(self.dedup_xy > 0.0 && self.dedup_theta_deg > 0.0) {
            return Err(Error::Contract("dedup resolution must be positive".into()));
        }
        if self.primitives.is_empty() {
            return Err(Error::Contract("empty primitive set".into()));
        }
        Ok(())
    }
}

/// Keeps the first `ceil(fraction · len)` entries of a list already sorted
/// by score.
pub fn downsample_best<T: Clone>(trajs: &[T], fraction: f64) -> Vec<T> {
    let keep = ((fraction * trajs.len() as f64).ceil() as usize).min(trajs.len());
    trajs[..keep].to_vec()
}

#[derive(Clone)]
struct Node {
    state: RobotState,
    parent: usize,
    control: usize,
    energy: f64,
    info: f64,
    /// Posterior per target; `None` while the target has not been seen on
    /// this branch, in which case it follows the shared prediction-only path.
    covs: Vec<Option<Arc<Mat>>>,
    stop_chain: bool,
}

impl Node {
    fn score(&self, weight: f64) -> f64 {
        self.info - weight * self.energy
    }
}

type Cell = (i64, i64, i64);

fn cell(x: &RobotState, cfg: &GenConfig) -> Cell {
    let th = cfg.dedup_theta_deg.to_radians();
    (
        (x.x / cfg.dedup_xy).round() as i64,
        (x.y / cfg.dedup_xy).round() as i64,
        (wrap_angle(x.theta) / th).round() as i64,
    )
}

/// Candidate trajectories for `robot`, sorted by standalone score `J({a})`
/// descending. Ids are local indices `0..len`.
pub fn generate_candidates(problem: &Problem, robot: usize, cfg: &GenConfig) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    if cfg.horizon != problem.horizon {
        return Err(Error::Contract(format!(
            "generation horizon {} differs from problem horizon {}",
            cfg.horizon, problem.horizon
        )));
    }
    if cfg.max_candidates == 0 {
        return Ok(Vec::new());
    }
    let spec = &problem.robots[robot];
    let ctrl_costs: Vec<f64> = cfg
        .primitives
        .iter()
        .map(|u| control_cost(u, spec))
        .collect::<Result<_>>()?;
    let horizon = problem.horizon;
    let means: Vec<_> = problem.targets.iter().map(|t| t.mean_positions(horizon)).collect();
    // Prediction-only covariance path per target, index t = 0..=horizon.
    let mut prior_path: Vec<Vec<Arc<Mat>>> = Vec::with_capacity(problem.targets.len());
    for target in &problem.targets {
        let mut path = vec![Arc::new(target.prior.sigma.clone())];
        for t in 1..=horizon {
            let next = kf_predict(&path[t - 1], &target.model, target.prior.t + t - 1)?;
            path.push(Arc::new(next));
        }
        prior_path.push(path);
    }

    let root = Node {
        state: spec.initial,
        parent: usize::MAX,
        control: usize::MAX,
        energy: 0.0,
        info: 0.0,
        covs: vec![None; problem.targets.len()],
        stop_chain: true,
    };
    let mut levels: Vec<Vec<Node>> = vec![vec![root]];
    for t in 1..=horizon {
        let frontier = levels.last().expect("root level");
        let mut seen: HashSet<Cell> = HashSet::new();
        let mut next = Vec::new();
        for (pi, parent) in frontier.iter().enumerate() {
            let here = state_cost(&parent.state, spec, &problem.field);
            for (ci, u) in cfg.primitives.iter().enumerate() {
                let state = step_dynamics(&parent.state, u, problem.tau);
                if !seen.insert(cell(&state, cfg)) {
                    continue;
                }
                let mut covs = parent.covs.clone();
                let mut info = parent.info;
                for (j, target) in problem.targets.iter().enumerate() {
                    let Some(m) = position_information(&state, &means[j][t], &spec.sensor) else {
                        if let Some(c) = &covs[j] {
                            let pred = kf_predict(c, &target.model, target.prior.t + t - 1)?;
                            covs[j] = Some(Arc::new(pred));
                        }
                        continue;
                    };
                    let prev: &Mat = match &covs[j] {
                        Some(c) => c,
                        None => &prior_path[j][t - 1],
                    };
                    let pred = kf_predict(prev, &target.model, target.prior.t + t - 1)?;
                    let dim = target.dim();
                    let mut full = Mat::zeros(dim, dim);
                    full.view_mut((0, 0), (2, 2)).copy_from(&m);
                    let (post, gain) = info_step(pred, Some(&full))?;
                    info += 0.5 * gain;
                    covs[j] = Some(Arc::new(post));
                }
                next.push(Node {
                    state,
                    parent: pi,
                    control: ci,
                    energy: parent.energy + ctrl_costs[ci] + here,
                    info,
                    covs,
                    stop_chain: parent.stop_chain && u.is_stop(),
                });
            }
        }
        if cfg.max_frontier > 0 && next.len() > cfg.max_frontier {
            next = prune_beam(next, cfg.max_frontier, spec.weight);
        } else {
            // Keep the stationary branch first so it always claims its cell.
            if let Some(k) = next.iter().position(|n| n.stop_chain) {
                let stop = next.remove(k);
                next.insert(0, stop);
            }
        }
        levels.push(next);
    }

    let leaves = levels.last().expect("at least one level");
    let mut order: Vec<usize> = (0..leaves.len()).collect();
    order.sort_by(|a, b| {
        leaves[*b]
            .score(spec.weight)
            .total_cmp(&leaves[*a].score(spec.weight))
            .then(a.cmp(b))
    });
    order.truncate(cfg.max_candidates);
    if let Some(stop) = leaves.iter().position(|n| n.stop_chain) {
        if !order.contains(&stop) {
            order.pop();
            order.push(stop);
        }
    }

    let mut trajs = Vec::with_capacity(order.len());
    for &leaf in &order {
        let mut controls = vec![ControlInput::new(0.0, 0.0); horizon];
        let mut states = vec![spec.initial; horizon];
        let mut idx = leaf;
        for t in (1..=horizon).rev() {
            let n = &levels[t][idx];
            controls[t - 1] = cfg.primitives[n.control];
            states[t - 1] = n.state;
            idx = n.parent;
        }
        trajs.push(Trajectory {
            id: TrajId(trajs.len() as u32),
            robot,
            controls,
            states,
            energy: leaves[leaf].energy,
            standalone: 0.0,
        });
    }
    let mut trajs = rescore_sorted(problem, trajs)?;
    trajs = downsample_best(&trajs, cfg.downsample);
    Ok(trajs)
}

fn prune_beam(mut next: Vec<Node>, width: usize, weight: f64) -> Vec<Node> {
    let stop = next.iter().position(|n| n.stop_chain).map(|k| next.remove(k));
    let mut idx: Vec<usize> = (0..next.len()).collect();
    idx.sort_by(|a, b| next[*b].score(weight).total_cmp(&next[*a].score(weight)).then(a.cmp(b)));
    let budget = width - usize::from(stop.is_some());
    let mut keep: Vec<usize> = idx.into_iter().take(budget).collect();
    keep.sort_unstable();
    let mut out: Vec<Node> = Vec::with_capacity(width);
    out.extend(stop);
    out.extend(keep.into_iter().map(|k| next[k].clone()));
    out
}

/// Exact standalone scores through the objective, then a stable sort,
/// descending.
fn rescore_sorted(problem: &Problem, trajs: Vec<Trajectory>) -> Result<Vec<Trajectory>> {
    let scored = Objective::new(problem.clone(), trajs, true)?;
    let mut out = scored.trajectories().to_vec();
    out.sort_by(|a, b| b.standalone.total_cmp(&a.standalone).then(a.id.cmp(&b.id)));
    for (k, t) in out.iter_mut().enumerate() {
        t.id = TrajId(k as u32);
    }
    Ok(out)
}

/// Generates every robot's candidates and assembles the objective with
/// robot-major ids, each partition sorted by standalone score.
pub fn build_objective(problem: Problem, cfg: &GenConfig) -> Result<Objective> {
    let mut all = Vec::new();
    for robot in 0..problem.robots.len() {
        for mut t in generate_candidates(&problem, robot, cfg)? {
            t.id = TrajId(all.len() as u32);
            all.push(t);
        }
    }
    Objective::new(problem, all, false)
}

/// Restricts an objective to the best `fraction` of each robot's
/// trajectories, keeping their scores.
pub fn downsample_objective(obj: &Objective, fraction: f64) -> Result<Objective> {
    let mut all = Vec::new();
    for robot in 0..obj.problem().robots.len() {
        let own: Vec<Trajectory> = obj
            .trajectories()
            .iter()
            .filter(|t| t.robot == robot)
            .cloned()
            .collect();
        for mut t in downsample_best(&own, fraction) {
            t.id = TrajId(all.len() as u32);
            all.push(t);
        }
    }
    Objective::new(obj.problem().clone(), all, false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn downsample_rules() {
        let v: Vec<u32> = (0..10).collect();
        assert_eq!(downsample_best(&v, 0.1), vec![0]);
        assert_eq!(downsample_best(&v, 1.0), v);
        assert_eq!(downsample_best(&v, 0.25), vec![0, 1, 2]);
        let big: Vec<u32> = (0..1000).collect();
        assert_eq!(downsample_best(&big, 0.1).len(), 100);
    }
}
