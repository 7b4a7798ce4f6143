//! Robot kinematics, motion primitives, range-bearing sensing and the
//! terrain cost field.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filtering::{InfoMatrix, Mat, TargetModel};

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let a = theta.rem_euclid(2.0 * PI);
    if a > PI {
        a - 2.0 * PI
    } else {
        a
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl RobotState {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        RobotState {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }
}

/// A motion primitive: linear velocity `nu` (m/s) and angular velocity
/// `omega` (rad/s), held for one sampling period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub nu: f64,
    pub omega: f64,
}

impl ControlInput {
    pub const fn new(nu: f64, omega: f64) -> Self {
        ControlInput { nu, omega }
    }

    pub fn is_stop(&self) -> bool {
        self.nu == 0.0 && self.omega == 0.0
    }
}

/// `{0, 8} m/s × {0, ±π/2} rad/s`, stop first.
pub fn default_primitives() -> Vec<ControlInput> {
    let turn = PI / 2.0;
    vec![
        ControlInput::new(0.0, 0.0),
        ControlInput::new(0.0, turn),
        ControlInput::new(0.0, -turn),
        ControlInput::new(8.0, 0.0),
        ControlInput::new(8.0, turn),
        ControlInput::new(8.0, -turn),
    ]
}

/// Exact unicycle integration over one period of length `tau`.
pub fn step_dynamics(x: &RobotState, u: &ControlInput, tau: f64) -> RobotState {
    let dtheta = u.omega * tau;
    let (dx, dy) = if u.omega == 0.0 {
        (u.nu * tau * x.theta.cos(), u.nu * tau * x.theta.sin())
    } else {
        // sin(a+b) - sin(a) = 2 cos(a + b/2) sin(b/2), same for cos; keeps
        // the arc well conditioned as omega -> 0.
        let chord = 2.0 * u.nu / u.omega * (0.5 * dtheta).sin();
        let mid = x.theta + 0.5 * dtheta;
        (chord * mid.cos(), chord * mid.sin())
    };
    RobotState {
        x: x.x + dx,
        y: x.y + dy,
        theta: wrap_angle(x.theta + dtheta),
    }
}

/// States `x_1..x_T` reached from `x0` by applying `controls`.
pub fn rollout(x0: &RobotState, controls: &[ControlInput], tau: f64) -> Vec<RobotState> {
    let mut out = Vec::with_capacity(controls.len());
    let mut cur = *x0;
    for u in controls {
        cur = step_dynamics(&cur, u, tau);
        out.push(cur);
    }
    out
}

/// Discretized planar double integrator with white-noise acceleration of
/// intensity `q`. State order is `(px, py, vx, vy)`.
pub fn double_integrator_model(tau: f64, q: f64) -> Result<TargetModel> {
    if tau <= 0.0 || q < 0.0 {
        return Err(Error::Contract(format!(
            "double integrator needs tau > 0 and q >= 0, got tau={tau}, q={q}"
        )));
    }
    let mut a = Mat::identity(4, 4);
    a[(0, 2)] = tau;
    a[(1, 3)] = tau;
    let mut w = Mat::zeros(4, 4);
    let (p, c, v) = (tau.powi(3) / 3.0, tau.powi(2) / 2.0, tau);
    for k in 0..2 {
        w[(k, k)] = q * p;
        w[(k, k + 2)] = q * c;
        w[(k + 2, k)] = q * c;
        w[(k + 2, k + 2)] = q * v;
    }
    TargetModel::constant(a, w)
}

/// Stationary target: `A = I`, `W = eps·I` over a planar position.
pub fn static_target_model(eps: f64) -> Result<TargetModel> {
    TargetModel::constant(Mat::identity(2, 2), Mat::identity(2, 2) * eps)
}

/// Block-diagonal stack of constant models, one block per target.
pub fn stack_models(models: &[TargetModel]) -> Result<TargetModel> {
    let dim: usize = models.iter().map(|m| m.dim()).sum();
    let mut a = Mat::zeros(dim, dim);
    let mut w = Mat::zeros(dim, dim);
    let mut off = 0;
    for m in models {
        let (ma, mw) = m.at(0);
        let d = ma.nrows();
        a.view_mut((off, off), (d, d)).copy_from(ma);
        w.view_mut((off, off), (d, d)).copy_from(mw);
        off += d;
    }
    TargetModel::constant(a, w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorProfile {
    /// Field of view in degrees, centred on the heading.
    pub fov_deg: f64,
    /// Maximum range in metres; `None` disables range gating.
    pub range: Option<f64>,
    pub sigma_range_max: f64,
    pub sigma_bearing_max_deg: f64,
    /// Noise at zero distance as a fraction of the maximum.
    #[serde(default = "default_noise_floor")]
    pub noise_floor: f64,
}

fn default_noise_floor() -> f64 {
    0.01
}

impl SensorProfile {
    pub fn new(fov_deg: f64, range: Option<f64>) -> Self {
        SensorProfile {
            fov_deg,
            range,
            sigma_range_max: 0.1,
            sigma_bearing_max_deg: 5.0,
            noise_floor: default_noise_floor(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fov_deg > 0.0 && self.fov_deg <= 360.0) {
            return Err(Error::Contract(format!("fov {} not in (0, 360]", self.fov_deg)));
        }
        if !(self.sigma_range_max > 0.0 && self.sigma_bearing_max_deg > 0.0) {
            return Err(Error::Contract("sensor noise maxima must be positive".into()));
        }
        if !(self.noise_floor > 0.0 && self.noise_floor <= 1.0) {
            return Err(Error::Contract("noise floor fraction must be in (0, 1]".into()));
        }
        if let Some(r) = self.range {
            if !(r > 0.0) {
                return Err(Error::Contract(format!("sensor range {r} must be positive")));
            }
        }
        Ok(())
    }

    /// Whether a target at `p` is inside range and field of view (both
    /// closed sets).
    pub fn sees(&self, x: &RobotState, p: &Vector2<f64>) -> bool {
        let dx = p.x - x.x;
        let dy = p.y - x.y;
        let dist = dx.hypot(dy);
        if let Some(r) = self.range {
            if dist > r {
                return false;
            }
        }
        if self.fov_deg >= 360.0 || dist == 0.0 {
            return true;
        }
        let rel = wrap_angle(dy.atan2(dx) - x.theta).abs();
        rel <= 0.5 * self.fov_deg.to_radians() + 1e-12
    }

    /// Range and bearing standard deviations (m, rad) at distance `dist`.
    pub fn noise_std(&self, dist: f64) -> (f64, f64) {
        let frac = match self.range {
            Some(r) => (dist / r).min(1.0),
            None => 1.0,
        };
        let grow = |max: f64| {
            let floor = self.noise_floor * max;
            floor + (max - floor) * frac
        };
        (
            grow(self.sigma_range_max),
            grow(self.sigma_bearing_max_deg.to_radians()),
        )
    }
}

const MIN_DISTANCE: f64 = 1e-6;

/// Information about a target's planar position contributed by one
/// range-bearing measurement from `x`, or `None` when the target is gated
/// out.
pub fn position_information(x: &RobotState, target: &Vector2<f64>, profile: &SensorProfile) -> Option<Matrix2<f64>> {
    if !profile.sees(x, target) {
        return None;
    }
    let dx = target.x - x.x;
    let dy = target.y - x.y;
    let dist = dx.hypot(dy).max(MIN_DISTANCE);
    let (sr, sb) = profile.noise_std(dist);
    let hr = Vector2::new(dx / dist, dy / dist);
    let hb = Vector2::new(-dy / (dist * dist), dx / (dist * dist));
    Some(hr * hr.transpose() / (sr * sr) + hb * hb.transpose() / (sb * sb))
}

/// Full `HᵀV⁻¹H` for a target whose first two state components are its
/// position; velocity columns stay zero.
pub fn sensor_info_matrix(
    x: &RobotState,
    target: &Vector2<f64>,
    profile: &SensorProfile,
    target_dim: usize,
) -> InfoMatrix {
    let mut m = InfoMatrix::zeros(target_dim);
    if let Some(block) = position_information(x, target, profile) {
        m.0.view_mut((0, 0), (2, 2)).copy_from(&block);
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionKind {
    Mud,
    Wind,
}

/// Closed axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub kind: RegionKind,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Region {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostField {
    pub regions: Vec<Region>,
}

impl CostField {
    pub fn in_kind(&self, kind: RegionKind, x: f64, y: f64) -> bool {
        self.regions.iter().any(|r| r.kind == kind && r.contains(x, y))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RobotClass {
    Ugv,
    Uav,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlCost {
    pub control: ControlInput,
    pub cost: f64,
}

/// Per-class energy tables. `None` region costs mean the terrain type does
/// not affect this robot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostTable {
    pub controls: Vec<ControlCost>,
    pub mud: Option<f64>,
    pub wind: Option<f64>,
}

impl CostTable {
    /// Energy table for the given class. Straight driving at 8 m/s shares
    /// the moving-turn cost.
    pub fn for_class(class: RobotClass) -> Self {
        let (stop, turn, drive, mud, wind) = match class {
            RobotClass::Ugv => (0.0, 1.0, 2.0, Some(3.0), None),
            RobotClass::Uav => (2.0, 2.0, 4.0, None, Some(3.0)),
        };
        let controls = default_primitives()
            .into_iter()
            .map(|u| ControlCost {
                control: u,
                cost: match (u.nu == 0.0, u.omega == 0.0) {
                    (true, true) => stop,
                    (true, false) => turn,
                    (false, _) => drive,
                },
            })
            .collect();
        CostTable { controls, mud, wind }
    }

    pub fn without_state_costs(mut self) -> Self {
        self.mud = None;
        self.wind = None;
        self
    }

    pub fn max_control(&self) -> f64 {
        self.controls.iter().map(|c| c.cost).fold(0.0, f64::max)
    }

    pub fn max_state(&self) -> f64 {
        self.mud.unwrap_or(0.0).max(self.wind.unwrap_or(0.0))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = self
            .controls
            .iter()
            .map(|c| c.cost)
            .chain(self.mud)
            .chain(self.wind)
            .any(|c| !(c >= 0.0 && c.is_finite()));
        if bad {
            return Err(Error::Contract("costs must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotSpec {
    pub id: usize,
    pub class: RobotClass,
    pub initial: RobotState,
    pub sensor: SensorProfile,
    pub costs: CostTable,
    pub weight: f64,
}

impl RobotSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.weight >= 0.0 && self.weight.is_finite()) {
            return Err(Error::Contract(format!(
                "robot {} weight {} must be non-negative",
                self.id, self.weight
            )));
        }
        self.sensor.validate()?;
        self.costs.validate()
    }
}

/// Terrain cost at `x`. Overlapping regions of the same kind do not stack.
pub fn state_cost(x: &RobotState, spec: &RobotSpec, field: &CostField) -> f64 {
    let mut cost = 0.0f64;
    if let Some(c) = spec.costs.mud {
        if field.in_kind(RegionKind::Mud, x.x, x.y) {
            cost = cost.max(c);
        }
    }
    if let Some(c) = spec.costs.wind {
        if field.in_kind(RegionKind::Wind, x.x, x.y) {
            cost = cost.max(c);
        }
    }
    cost
}

pub fn control_cost(u: &ControlInput, spec: &RobotSpec) -> Result<f64> {
    spec.costs
        .controls
        .iter()
        .find(|c| c.control == *u)
        .map(|c| c.cost)
        .ok_or_else(|| {
            Error::Contract(format!(
                "robot {} has no cost entry for primitive ({}, {})",
                spec.id, u.nu, u.omega
            ))
        })
}

/// Unweighted energy `Σ_{t=0}^{T-1} c_ctrl(u_t) + c_state(x_t)` of one
/// trajectory, where `states` holds `x_1..x_T`.
pub fn trajectory_energy(
    spec: &RobotSpec,
    field: &CostField,
    controls: &[ControlInput],
    states: &[RobotState],
) -> Result<f64> {
    let mut total = 0.0;
    let mut prev = spec.initial;
    for (t, u) in controls.iter().enumerate() {
        total += control_cost(u, spec)? + state_cost(&prev, spec, field);
        if let Some(next) = states.get(t) {
            prev = *next;
        }
    }
    Ok(total)
}
