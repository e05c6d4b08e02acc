//! Joint multi-agent trajectories and the correction deformation operator.
//!
//! A physical correction `(t, agent, force)` is propagated along the
//! current trajectory as `xi' = xi + mu * A^-1 * force`, where `A` is the
//! square of a clamped finite-difference operator. Only the corrected
//! agent's coordinates move, and waypoints `0` and `T` stay pinned.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Planar point in meters.
pub type Point = [f64; 2];

/// Ordered waypoints of the joint state of all agents.
///
/// Stored row-major as `[step][agent][x, y]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    num_agents: usize,
    dt: f64,
    data: Vec<f64>,
}

impl Trajectory {
    /// Builds a trajectory from per-step, per-agent points.
    pub fn new(waypoints: Vec<Vec<Point>>, dt: f64) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(Error::Shape(format!(
                "trajectory needs at least 2 waypoints, got {}",
                waypoints.len()
            )));
        }
        let num_agents = waypoints[0].len();
        if num_agents == 0 {
            return Err(Error::Shape("trajectory has no agents".into()));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Shape(format!("dt must be positive, got {dt}")));
        }
        let mut data = Vec::with_capacity(waypoints.len() * num_agents * 2);
        for (i, step) in waypoints.iter().enumerate() {
            if step.len() != num_agents {
                return Err(Error::Shape(format!(
                    "waypoint {i} has {} agents, expected {num_agents}",
                    step.len()
                )));
            }
            for p in step {
                if !(p[0].is_finite() && p[1].is_finite()) {
                    return Err(Error::Shape(format!("waypoint {i} is not finite")));
                }
                data.extend_from_slice(p);
            }
        }
        Ok(Self {
            num_agents,
            dt,
            data,
        })
    }

    /// Each agent moves on a straight line from `starts[a]` to `ends[a]`,
    /// evenly spaced over `horizon` steps.
    pub fn straight_line(starts: &[Point], ends: &[Point], horizon: usize, dt: f64) -> Result<Self> {
        if starts.len() != ends.len() {
            return Err(Error::Shape("starts and ends differ in agent count".into()));
        }
        let waypoints = (0..=horizon)
            .map(|i| {
                let s = i as f64 / horizon as f64;
                starts
                    .iter()
                    .zip(ends)
                    .map(|(a, b)| [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])])
                    .collect()
            })
            .collect();
        Self::new(waypoints, dt)
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    /// Number of steps `T`; the trajectory holds `T + 1` waypoints.
    pub fn horizon(&self) -> usize {
        self.len() - 1
    }

    /// Number of waypoints, `T + 1`.
    pub fn len(&self) -> usize {
        self.data.len() / (2 * self.num_agents)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Dimension of one joint state, `2 * num_agents`.
    pub fn state_dim(&self) -> usize {
        2 * self.num_agents
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn point(&self, step: usize, agent: usize) -> Point {
        let k = (step * self.num_agents + agent) * 2;
        [self.data[k], self.data[k + 1]]
    }

    pub fn set_point(&mut self, step: usize, agent: usize, p: Point) {
        let k = (step * self.num_agents + agent) * 2;
        self.data[k] = p[0];
        self.data[k + 1] = p[1];
    }

    /// Joint state at `step`, one point per agent.
    pub fn state(&self, step: usize) -> Vec<Point> {
        (0..self.num_agents).map(|a| self.point(step, a)).collect()
    }

    /// Mean position of all agents at `step`.
    pub fn centroid(&self, step: usize) -> Point {
        let n = self.num_agents as f64;
        let mut c = [0.0, 0.0];
        for a in 0..self.num_agents {
            let p = self.point(step, a);
            c[0] += p[0];
            c[1] += p[1];
        }
        [c[0] / n, c[1] / n]
    }

    pub fn waypoints(&self) -> Vec<Vec<Point>> {
        (0..self.len()).map(|i| self.state(i)).collect()
    }

    /// Flat coordinate view, `[step][agent][x, y]`.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &Trajectory) -> bool {
        self.num_agents == other.num_agents && self.data.len() == other.data.len()
    }

    /// Summed squared waypoint displacement `||self - other||^2`.
    pub fn squared_distance(&self, other: &Trajectory) -> Result<f64> {
        if !self.same_shape(other) {
            return Err(Error::Shape(format!(
                "cannot compare {}x{} trajectory with {}x{}",
                self.len(),
                self.num_agents,
                other.len(),
                other.num_agents
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Serialize, Deserialize)]
struct TrajectoryRepr {
    dt: f64,
    waypoints: Vec<Vec<Point>>,
}

impl Serialize for Trajectory {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        TrajectoryRepr {
            dt: self.dt,
            waypoints: self.waypoints(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Trajectory {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = TrajectoryRepr::deserialize(deserializer)?;
        Trajectory::new(repr.waypoints, repr.dt).map_err(D::Error::custom)
    }
}

/// One physical intervention: a force on a single agent at one timestep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    pub timestep: usize,
    pub agent: usize,
    pub force: Point,
}

impl Correction {
    pub fn new(timestep: usize, agent: usize, force: Point) -> Self {
        Self {
            timestep,
            agent,
            force,
        }
    }

    /// Squared force norm, the effort of this correction.
    pub fn effort(&self) -> f64 {
        self.force[0] * self.force[0] + self.force[1] * self.force[1]
    }
}

/// Corrections in the order they were given.
pub type CorrectionSequence = Vec<Correction>;

/// Smoothness of the deformation: which finite difference gets squared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum SmoothnessOrder {
    /// Minimum velocity (`A = K1^T K1`).
    Velocity,
    /// Minimum acceleration (`A = K2^T K2`).
    Acceleration,
}

impl TryFrom<u8> for SmoothnessOrder {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Self::Velocity),
            2 => Ok(Self::Acceleration),
            other => Err(format!("smoothness order must be 1 or 2, got {other}")),
        }
    }
}

impl From<SmoothnessOrder> for u8 {
    fn from(o: SmoothnessOrder) -> u8 {
        match o {
            SmoothnessOrder::Velocity => 1,
            SmoothnessOrder::Acceleration => 2,
        }
    }
}

/// Precomputed smoothing profile for one horizon.
///
/// The base profile is the central column of `A^-1` over the interior
/// waypoints, rescaled so its peak equals `mu`. A correction at `t`
/// uses the base profile shifted so the peak lands on `t`, with the two
/// endpoint entries forced to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationKernel {
    mu: f64,
    order: SmoothnessOrder,
    base: Vec<f64>,
    anchor: usize,
}

/// Builds the deformation kernel for trajectories of `horizon` waypoints.
pub fn make_kernel(horizon: usize, mu: f64, order: SmoothnessOrder) -> Result<DeformationKernel> {
    if horizon < 3 {
        return Err(Error::InvalidScenario(format!(
            "deformation needs at least 3 waypoints, got {horizon}"
        )));
    }
    if !(mu.is_finite() && mu > 0.0) {
        return Err(Error::InvalidHyperparameter(format!(
            "deformation magnitude mu must be positive, got {mu}"
        )));
    }
    let m = horizon - 2;
    let center = (m - 1) / 2;
    let mut rhs = vec![0.0; m];
    rhs[center] = 1.0;
    // A = L^order with L = tridiag(-1, 2, -1), so A^-1 e = L^-1 (L^-1 e).
    let mut column = solve_second_difference(&rhs);
    if order == SmoothnessOrder::Acceleration {
        column = solve_second_difference(&column);
    }
    let (peak_idx, peak) = column
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::MIN), |best, (i, v)| if v > best.1 { (i, v) } else { best });

    let mut base = vec![0.0; horizon];
    for (i, v) in column.iter().enumerate() {
        base[i + 1] = mu * (v / peak);
    }
    Ok(DeformationKernel {
        mu,
        order,
        base,
        anchor: peak_idx + 1,
    })
}

/// Solves `L x = rhs` for `L = tridiag(-1, 2, -1)` (Thomas algorithm).
fn solve_second_difference(rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut denom = 2.0;
    c[0] = -1.0 / denom;
    d[0] = rhs[0] / denom;
    for i in 1..n {
        denom = 2.0 + c[i - 1];
        c[i] = -1.0 / denom;
        d[i] = (rhs[i] + d[i - 1]) / denom;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

impl DeformationKernel {
    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn order(&self) -> SmoothnessOrder {
        self.order
    }

    /// Number of waypoints this kernel deforms.
    pub fn horizon(&self) -> usize {
        self.base.len()
    }

    /// Unshifted profile, peaked at [`anchor`](Self::anchor).
    pub fn base_profile(&self) -> &[f64] {
        &self.base
    }

    pub fn anchor(&self) -> usize {
        self.anchor
    }

    /// Profile of a correction applied at `timestep`.
    pub fn profile_at(&self, timestep: usize) -> Vec<f64> {
        let n = self.base.len();
        let mut out = vec![0.0; n];
        for (i, slot) in out.iter_mut().enumerate().take(n - 1).skip(1) {
            let src = i as isize - timestep as isize + self.anchor as isize;
            if src >= 0 && (src as usize) < n {
                *slot = self.base[src as usize];
            }
        }
        out
    }
}

fn check_correction(traj: &Trajectory, c: &Correction, k: &DeformationKernel) -> Result<()> {
    if k.horizon() != traj.len() {
        return Err(Error::Shape(format!(
            "kernel built for {} waypoints, trajectory has {}",
            k.horizon(),
            traj.len()
        )));
    }
    if c.agent >= traj.num_agents() {
        return Err(Error::Shape(format!(
            "correction targets agent {} of {}",
            c.agent,
            traj.num_agents()
        )));
    }
    if c.timestep == 0 || c.timestep >= traj.horizon() {
        return Err(Error::Shape(format!(
            "correction timestep {} outside interior [1, {}]",
            c.timestep,
            traj.horizon() - 1
        )));
    }
    if !(c.force[0].is_finite() && c.force[1].is_finite()) {
        return Err(Error::Shape("correction force is not finite".into()));
    }
    Ok(())
}

/// Adds `profile * force` to one agent's coordinates in place.
pub(crate) fn add_displacement(traj: &mut Trajectory, agent: usize, profile: &[f64], force: Point) {
    let n = traj.num_agents();
    let data = traj.as_mut_slice();
    for (i, w) in profile.iter().enumerate() {
        let k = (i * n + agent) * 2;
        let dx = w * force[0];
        let dy = w * force[1];
        // Skip exact zeros so untouched coordinates stay bit-identical.
        if dx != 0.0 {
            data[k] += dx;
        }
        if dy != 0.0 {
            data[k + 1] += dy;
        }
    }
}

/// Applies one correction to `traj`.
pub fn deform(traj: &Trajectory, c: &Correction, k: &DeformationKernel) -> Result<Trajectory> {
    check_correction(traj, c, k)?;
    let mut out = traj.clone();
    add_displacement(&mut out, c.agent, &k.profile_at(c.timestep), c.force);
    Ok(out)
}

/// Chains corrections from `initial`; the i-th output has the first
/// `i + 1` corrections applied.
pub fn propagate_sequence(
    initial: &Trajectory,
    corrections: &[Correction],
    k: &DeformationKernel,
) -> Result<Vec<Trajectory>> {
    let mut out: Vec<Trajectory> = Vec::with_capacity(corrections.len());
    for c in corrections {
        let prev = out.last().unwrap_or(initial);
        let next = deform(prev, c, k)?;
        out.push(next);
    }
    Ok(out)
}
