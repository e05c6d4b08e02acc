//! Maximum accumulated evidence `D*_K(theta)`.
//!
//! `D*_K` is the largest evidence `K` corrections could produce from the
//! robot's initial plan. It mixes a discrete choice (which `(time, agent)`
//! slots to correct) with continuous forces. The discrete part is sampled
//! without replacement; for each sample the forces are found by projected
//! gradient ascent on finite-difference gradients, and the best sample
//! wins. Results for every candidate `theta` and `K` are precomputed into
//! a [`DStarLibrary`].

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evidence::{accumulated_evidence, EvidenceConfig};
use crate::rewards::{reward, RewardParams, Scenario};
use crate::trajectory::{add_displacement, propagate_sequence, Correction, Point, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// Number of discrete slot assignments tried.
    pub t_max: usize,
    /// Gradient-ascent iterations per assignment.
    pub inner_iterations: usize,
    pub step_size: f64,
    /// Largest admissible force norm per correction.
    pub force_bound: f64,
    /// Central-difference step for gradients.
    pub fd_step: f64,
    /// Force grid spacing for the exhaustive oracle, if requested.
    pub grid: Option<f64>,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            t_max: 200,
            inner_iterations: 300,
            step_size: 0.05,
            force_bound: 1.0,
            fd_step: 1e-4,
            grid: None,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn for_scenario(scenario: &Scenario) -> Self {
        Self {
            force_bound: scenario.hyperparameters.force_bound,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.t_max == 0 {
            return Err(Error::InvalidHyperparameter("t_max must be at least 1".into()));
        }
        if !(self.force_bound > 0.0 && self.fd_step > 0.0 && self.step_size > 0.0) {
            return Err(Error::InvalidHyperparameter(
                "force_bound, fd_step and step_size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A discrete correction slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Slot {
    pub timestep: usize,
    pub agent: usize,
}

/// Every interior `(time, agent)` pair in lexicographic order.
pub fn all_slots(scenario: &Scenario) -> Vec<Slot> {
    (1..scenario.horizon)
        .flat_map(|timestep| (0..scenario.num_agents).map(move |agent| Slot { timestep, agent }))
        .collect()
}

fn project(forces: &mut [f64], bound: f64) {
    for f in forces.chunks_exact_mut(2) {
        let n = (f[0] * f[0] + f[1] * f[1]).sqrt();
        if n > bound {
            f[0] *= bound / n;
            f[1] *= bound / n;
        }
    }
}

fn to_corrections(slots: &[Slot], forces: &[f64]) -> Vec<Correction> {
    slots
        .iter()
        .zip(forces.chunks_exact(2))
        .map(|(s, f)| Correction::new(s.timestep, s.agent, [f[0], f[1]]))
        .collect()
}

/// Evidence as a function of the flattened forces for fixed slots.
struct SlotObjective<'a> {
    initial: &'a Trajectory,
    slots: &'a [Slot],
    profiles: Vec<Vec<f64>>,
    theta: &'a RewardParams,
    cfg: &'a EvidenceConfig,
    scenario: &'a Scenario,
}

impl<'a> SlotObjective<'a> {
    fn new(
        initial: &'a Trajectory,
        slots: &'a [Slot],
        theta: &'a RewardParams,
        cfg: &'a EvidenceConfig,
        scenario: &'a Scenario,
    ) -> Result<Self> {
        let kernel = scenario.kernel()?;
        if kernel.horizon() != initial.len() || initial.num_agents() != scenario.num_agents {
            return Err(Error::Shape("initial trajectory does not match the scenario".into()));
        }
        for s in slots {
            if s.timestep == 0 || s.timestep >= scenario.horizon || s.agent >= scenario.num_agents {
                return Err(Error::Shape(format!("slot {s:?} outside the scenario")));
            }
        }
        let profiles = slots.iter().map(|s| kernel.profile_at(s.timestep)).collect();
        Ok(Self {
            initial,
            slots,
            profiles,
            theta,
            cfg,
            scenario,
        })
    }

    fn eval(&self, forces: &[f64]) -> f64 {
        let mut traj = self.initial.clone();
        let mut rewards = Vec::with_capacity(self.slots.len());
        let mut effort = 0.0;
        for (j, slot) in self.slots.iter().enumerate() {
            let f = [forces[2 * j], forces[2 * j + 1]];
            add_displacement(&mut traj, slot.agent, &self.profiles[j], f);
            rewards.push(reward(&traj, self.theta, self.scenario).unwrap_or(f64::NEG_INFINITY));
            effort += f[0] * f[0] + f[1] * f[1];
        }
        self.cfg.combine(&rewards, effort)
    }

    fn gradient(&self, forces: &[f64], h: f64) -> Vec<f64> {
        let mut x = forces.to_vec();
        (0..x.len())
            .map(|k| {
                let orig = x[k];
                x[k] = orig + h;
                let up = self.eval(&x);
                x[k] = orig - h;
                let down = self.eval(&x);
                x[k] = orig;
                (up - down) / (2.0 * h)
            })
            .collect()
    }
}

/// Best forces for one fixed slot assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolution {
    pub evidence: f64,
    pub forces: Vec<Point>,
    /// Objective after every accepted iterate, starting at zero force.
    pub trace: Vec<f64>,
}

/// Locally maximizes the evidence over forces for fixed `slots`, starting
/// from zero force. The returned evidence is recomputed with
/// [`accumulated_evidence`] on the returned forces.
pub fn inner_optimize(
    slots: &[Slot],
    initial: &Trajectory,
    theta: &RewardParams,
    cfg: &EvidenceConfig,
    opt: &OptimizerConfig,
    scenario: &Scenario,
) -> Result<InnerSolution> {
    if slots.is_empty() {
        return Err(Error::EmptySequence);
    }
    opt.validate()?;
    let objective = SlotObjective::new(initial, slots, theta, cfg, scenario)?;
    let mut x = vec![0.0; 2 * slots.len()];
    let mut value = objective.eval(&x);
    let mut trace = vec![value];
    let mut step = opt.step_size;
    'outer: for _ in 0..opt.inner_iterations {
        let g = objective.gradient(&x, opt.fd_step);
        if g.iter().all(|v| *v == 0.0) {
            break;
        }
        loop {
            let mut candidate = x.clone();
            for (c, gk) in candidate.iter_mut().zip(&g) {
                *c += step * gk;
            }
            project(&mut candidate, opt.force_bound);
            let v = objective.eval(&candidate);
            if v > value {
                let gain = v - value;
                x = candidate;
                value = v;
                trace.push(value);
                step *= 1.5;
                if gain < 1e-12 {
                    break 'outer;
                }
                break;
            }
            step *= 0.5;
            if step < 1e-14 {
                break 'outer;
            }
        }
    }
    let corrections = to_corrections(slots, &x);
    let trajs = propagate_sequence(initial, &corrections, &scenario.kernel()?)?;
    let evidence = accumulated_evidence(&trajs, &corrections, theta, cfg, scenario)?;
    Ok(InnerSolution {
        evidence,
        forces: corrections.iter().map(|c| c.force).collect(),
        trace,
    })
}

/// Finite-difference gradient at two step sizes, for self-checking.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub coarse: Vec<f64>,
    pub fine: Vec<f64>,
    /// `|coarse - fine| / max(|coarse|, |fine|, 1e-8)`.
    pub relative_error: f64,
}

/// Compares the ascent gradient (step `fd_step`) with one at half the step.
pub fn gradient_check(
    slots: &[Slot],
    forces: &[Point],
    initial: &Trajectory,
    theta: &RewardParams,
    cfg: &EvidenceConfig,
    opt: &OptimizerConfig,
    scenario: &Scenario,
) -> Result<GradientCheck> {
    if slots.len() != forces.len() {
        return Err(Error::Shape("one force per slot required".into()));
    }
    let objective = SlotObjective::new(initial, slots, theta, cfg, scenario)?;
    let x: Vec<f64> = forces.iter().flat_map(|f| [f[0], f[1]]).collect();
    let coarse = objective.gradient(&x, opt.fd_step);
    let fine = objective.gradient(&x, opt.fd_step / 2.0);
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let diff: Vec<f64> = coarse.iter().zip(&fine).map(|(a, b)| a - b).collect();
    let relative_error = norm(&diff) / norm(&coarse).max(norm(&fine)).max(1e-8);
    Ok(GradientCheck {
        coarse,
        fine,
        relative_error,
    })
}

/// Result of the mixed discrete/continuous search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DStarSolution {
    pub dstar: f64,
    pub times: Vec<usize>,
    pub agents: Vec<usize>,
    pub forces: Vec<Point>,
}

impl DStarSolution {
    pub fn corrections(&self) -> Vec<Correction> {
        self.times
            .iter()
            .zip(&self.agents)
            .zip(&self.forces)
            .map(|((t, a), f)| Correction::new(*t, *a, *f))
            .collect()
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}

/// All k-subsets of `0..n` in lexicographic order.
fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] < n - k + i {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        if idx[i] >= n - k + i {
            return out;
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Distinct slot assignments to try, at most `t_max` of them.
///
/// When every assignment fits in the budget they are enumerated;
/// otherwise they are drawn uniformly without replacement from a seeded
/// stream, so a larger budget sees a superset of a smaller one.
pub fn sample_assignments(num_slots: usize, k: usize, t_max: usize, seed: u64) -> Vec<Vec<usize>> {
    let total = binomial(num_slots, k);
    if total <= t_max as u128 {
        return combinations(num_slots, k);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(t_max);
    while out.len() < t_max {
        let mut pick = rand::seq::index::sample(&mut rng, num_slots, k).into_vec();
        pick.sort_unstable();
        if seen.insert(pick.clone()) {
            out.push(pick);
        }
    }
    out
}

/// Solves for `D*_K(theta)` from `initial`.
pub fn solve_dstar(
    initial: &Trajectory,
    theta: &RewardParams,
    k: usize,
    cfg: &EvidenceConfig,
    opt: &OptimizerConfig,
    scenario: &Scenario,
) -> Result<DStarSolution> {
    if k == 0 {
        return Err(Error::EmptySequence);
    }
    opt.validate()?;
    let slots = all_slots(scenario);
    if k > slots.len() {
        return Err(Error::InfeasibleK { k, slots: slots.len() });
    }
    let mut best: Option<(f64, Vec<Slot>, Vec<Point>)> = None;
    for pick in sample_assignments(slots.len(), k, opt.t_max, opt.seed) {
        let chosen: Vec<Slot> = pick.iter().map(|&i| slots[i]).collect();
        let sol = inner_optimize(&chosen, initial, theta, cfg, opt, scenario)?;
        if best.as_ref().is_none_or(|(b, _, _)| sol.evidence > *b) {
            best = Some((sol.evidence, chosen, sol.forces));
        }
    }
    let (dstar, chosen, forces) = best.expect("at least one assignment");
    Ok(DStarSolution {
        dstar,
        times: chosen.iter().map(|s| s.timestep).collect(),
        agents: chosen.iter().map(|s| s.agent).collect(),
        forces,
    })
}

/// Exhaustive search over every slot assignment and every force on a
/// square grid (clipped to the force disc).
#[derive(Debug, Clone, PartialEq)]
pub struct ExhaustiveResult {
    pub best: DStarSolution,
    /// Smallest evidence seen, for reporting gaps relative to the range.
    pub worst: f64,
    pub evaluated: u64,
}

pub fn exhaustive_dstar(
    initial: &Trajectory,
    theta: &RewardParams,
    k: usize,
    cfg: &EvidenceConfig,
    grid_step: f64,
    force_bound: f64,
    scenario: &Scenario,
) -> Result<ExhaustiveResult> {
    if k == 0 {
        return Err(Error::EmptySequence);
    }
    let slots = all_slots(scenario);
    if k > slots.len() {
        return Err(Error::InfeasibleK { k, slots: slots.len() });
    }
    let steps = (force_bound / grid_step).round() as i64;
    let grid: Vec<Point> = (-steps..=steps)
        .flat_map(|i| (-steps..=steps).map(move |j| [i as f64 * grid_step, j as f64 * grid_step]))
        .filter(|f| f[0] * f[0] + f[1] * f[1] <= force_bound * force_bound + 1e-12)
        .collect();
    let mut best: Option<(f64, Vec<Slot>, Vec<Point>)> = None;
    let mut worst = f64::INFINITY;
    let mut evaluated = 0u64;
    for pick in combinations(slots.len(), k) {
        let chosen: Vec<Slot> = pick.iter().map(|&i| slots[i]).collect();
        let objective = SlotObjective::new(initial, &chosen, theta, cfg, scenario)?;
        let mut odometer = vec![0usize; k];
        let mut x = vec![0.0; 2 * k];
        loop {
            for (j, &g) in odometer.iter().enumerate() {
                x[2 * j] = grid[g][0];
                x[2 * j + 1] = grid[g][1];
            }
            let v = objective.eval(&x);
            evaluated += 1;
            worst = worst.min(v);
            if best.as_ref().is_none_or(|(b, _, _)| v > *b) {
                let forces = odometer.iter().map(|&g| grid[g]).collect();
                best = Some((v, chosen.clone(), forces));
            }
            let mut j = 0;
            while j < k {
                odometer[j] += 1;
                if odometer[j] < grid.len() {
                    break;
                }
                odometer[j] = 0;
                j += 1;
            }
            if j == k {
                break;
            }
        }
    }
    let (dstar, chosen, forces) = best.expect("non-empty grid");
    Ok(ExhaustiveResult {
        best: DStarSolution {
            dstar,
            times: chosen.iter().map(|s| s.timestep).collect(),
            agents: chosen.iter().map(|s| s.agent).collect(),
            forces,
        },
        worst,
        evaluated,
    })
}

/// One stored `D*` value with the corrections that reach it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DStarEntry {
    pub dstar: f64,
    pub times: Vec<usize>,
    pub agents: Vec<usize>,
    pub forces: Vec<Point>,
    pub config_hash: String,
}

/// Offline table of `D*` values keyed by `"scenario_id/theta_index/K"`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DStarLibrary {
    entries: BTreeMap<String, DStarEntry>,
}

pub fn library_key(scenario_id: &str, theta_index: usize, k: usize) -> String {
    format!("{scenario_id}/{theta_index}/{k}")
}

impl DStarLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Library holding only `D*` values keyed like [`library_key`], as
    /// recorded in episode logs.
    pub fn from_dstar_table(table: &BTreeMap<String, f64>) -> Self {
        let entries = table
            .iter()
            .map(|(k, v)| {
                let e = DStarEntry {
                    dstar: *v,
                    times: Vec::new(),
                    agents: Vec::new(),
                    forces: Vec::new(),
                    config_hash: String::new(),
                };
                (k.clone(), e)
            })
            .collect();
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, scenario_id: &str, theta_index: usize, k: usize, entry: DStarEntry) {
        self.entries.insert(library_key(scenario_id, theta_index, k), entry);
    }

    pub fn entries(&self) -> impl Iterator<Item = (&String, &DStarEntry)> {
        self.entries.iter()
    }

    pub fn get(&self, scenario_id: &str, theta_index: usize, k: usize) -> Result<&DStarEntry> {
        let key = library_key(scenario_id, theta_index, k);
        self.entries.get(&key).ok_or(Error::LibraryMiss(key))
    }

    /// Largest stored `K' <= k` for this candidate.
    pub fn get_at_most(&self, scenario_id: &str, theta_index: usize, k: usize) -> Option<(usize, &DStarEntry)> {
        (1..=k)
            .rev()
            .find_map(|kk| self.get(scenario_id, theta_index, kk).ok().map(|e| (kk, e)))
    }

    /// Largest `K` stored for every candidate of the scenario.
    pub fn k_max(&self, scenario_id: &str, num_candidates: usize) -> usize {
        let mut k = 0;
        while (0..num_candidates).all(|t| self.get(scenario_id, t, k + 1).is_ok()) {
            k += 1;
        }
        k
    }

    /// Drops entries whose hash differs from `config_hash`.
    pub fn retain_hash(&mut self, config_hash: &str) {
        self.entries.retain(|_, e| e.config_hash == config_hash);
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("library serializes");
        s.push('\n');
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Writes atomically via a sibling temporary file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let wrap = |source| Error::LibraryWrite {
            path: path.display().to_string(),
            source,
        };
        let tmp = path.with_extension("json.partial");
        std::fs::write(&tmp, self.to_json()).map_err(wrap)?;
        std::fs::rename(&tmp, path).map_err(wrap)
    }
}

/// Stable hash of everything a library entry depends on.
pub fn config_hash(
    opt: &OptimizerConfig,
    cfg: &EvidenceConfig,
    scenario: &Scenario,
    initial: &Trajectory,
) -> String {
    #[derive(Serialize)]
    struct Input<'a> {
        optimizer: &'a OptimizerConfig,
        evidence: &'a EvidenceConfig,
        scenario: &'a Scenario,
        initial: &'a Trajectory,
    }
    let json = serde_json::to_string(&Input {
        optimizer: opt,
        evidence: cfg,
        scenario,
        initial,
    })
    .expect("hash input serializes");
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-entry seed so entries are independent of build order.
pub fn entry_seed(seed: u64, theta_index: usize, k: usize) -> u64 {
    splitmix(seed ^ splitmix(((theta_index as u64) << 32) | k as u64))
}

/// Computes every `(theta_index, K <= k_max)` entry missing from
/// `existing` (entries with a stale hash are recomputed), in parallel.
pub fn build_library(
    scenario: &Scenario,
    initial: &Trajectory,
    k_max: usize,
    cfg: &EvidenceConfig,
    opt: &OptimizerConfig,
    existing: Option<DStarLibrary>,
) -> Result<DStarLibrary> {
    let hash = config_hash(opt, cfg, scenario, initial);
    let mut library = existing.unwrap_or_default();
    library.retain_hash(&hash);
    let todo: Vec<(usize, usize)> = (0..scenario.num_candidates())
        .flat_map(|t| (1..=k_max).map(move |k| (t, k)))
        .filter(|&(t, k)| library.get(&scenario.id, t, k).is_err())
        .collect();
    let solved = todo
        .par_iter()
        .map(|&(t, k)| {
            let entry_opt = OptimizerConfig {
                seed: entry_seed(opt.seed, t, k),
                ..*opt
            };
            solve_dstar(initial, &scenario.theta(t), k, cfg, &entry_opt, scenario).map(|s| (t, k, s))
        })
        .collect::<Result<Vec<_>>>()?;
    for (t, k, s) in solved {
        log::debug!("D*[{}/{t}/{k}] = {:.6}", scenario.id, s.dstar);
        library.insert(
            &scenario.id,
            t,
            k,
            DStarEntry {
                dstar: s.dstar,
                times: s.times,
                agents: s.agents,
                forces: s.forces,
                config_hash: hash.clone(),
            },
        );
    }
    Ok(library)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomials() {
        assert_eq!(binomial(5, 2), 10);
        assert_eq!(binomial(38, 6), 2_760_681);
        assert_eq!(binomial(3, 4), 0);
    }

    #[test]
    fn combinations_are_lexicographic_and_complete() {
        let c = combinations(4, 2);
        assert_eq!(
            c,
            vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]
        );
        assert_eq!(combinations(5, 5), vec![vec![0, 1, 2, 3, 4]]);
        assert_eq!(combinations(7, 3).len(), 35);
    }

    #[test]
    fn sampling_is_distinct_and_prefix_stable() {
        let small = sample_assignments(30, 3, 50, 9);
        let large = sample_assignments(30, 3, 100, 9);
        assert_eq!(small.len(), 50);
        assert_eq!(&large[..50], &small[..]);
        let unique: HashSet<_> = large.iter().collect();
        assert_eq!(unique.len(), 100);
        // Budget covering everything enumerates.
        assert_eq!(sample_assignments(5, 2, 200, 1).len(), 10);
    }

    #[test]
    fn projection_clips_norm() {
        let mut f = vec![3.0, 4.0, 0.1, 0.0];
        project(&mut f, 1.0);
        assert!((f[0] - 0.6).abs() < 1e-15 && (f[1] - 0.8).abs() < 1e-15);
        assert_eq!(&f[2..], &[0.1, 0.0]);
    }

    #[test]
    fn library_keys_and_fallback() {
        let mut lib = DStarLibrary::new();
        let e = DStarEntry {
            dstar: 1.0,
            times: vec![1],
            agents: vec![0],
            forces: vec![[0.0, 0.0]],
            config_hash: "h".into(),
        };
        lib.insert("s", 0, 1, e.clone());
        lib.insert("s", 0, 3, e.clone());
        assert!(matches!(lib.get("s", 0, 2), Err(Error::LibraryMiss(k)) if k == "s/0/2"));
        assert_eq!(lib.get_at_most("s", 0, 2).unwrap().0, 1);
        assert_eq!(lib.get_at_most("s", 0, 7).unwrap().0, 3);
        assert!(lib.get_at_most("s", 1, 7).is_none());
        assert_eq!(lib.k_max("s", 1), 1);
        lib.retain_hash("other");
        assert!(lib.is_empty());
    }
}
