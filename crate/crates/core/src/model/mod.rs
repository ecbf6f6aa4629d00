//! Finite partially observable Markov (potential) games.
//!
//! Tables are stored sparsely in memory and densely in the JSON model file.
//! Joint actions are indexed lexicographically with agent 0 as the most
//! significant digit.

mod envs;
mod file;

pub use envs::{
    build, build_lbf, build_mabc, build_matiger, EnvKind, EnvParams, LIFT, LISTEN, OPEN_LEFT, OPEN_RIGHT,
    TRANSMIT,
};
pub use file::{load_model, save_model, ModelFile};

use crate::error::{Error, Result};
use crate::PROB_TOL;
use serde::Serialize;

/// A probability row stored as `(index, probability)` pairs with nonzero mass,
/// sorted by index.
pub type SparseDist = Vec<(usize, f64)>;

/// Raw tables for a model, before validation.
#[derive(Debug, Clone)]
pub struct ModelParts {
    pub states: Vec<String>,
    pub observations: Vec<Vec<String>>,
    pub actions: Vec<Vec<String>>,
    /// `[x][u]` next-state distribution.
    pub transition: Vec<Vec<SparseDist>>,
    /// `[i][x'][u]` observation distribution of agent `i` after landing in `x'`.
    pub observation_kernel: Vec<Vec<Vec<SparseDist>>>,
    /// `[i][x]` observation distribution at the initial step.
    pub initial_observation: Vec<Vec<SparseDist>>,
    /// `[i][x][u]`
    pub reward: Vec<Vec<Vec<f64>>>,
    /// `[x][u]`
    pub potential: Vec<Vec<f64>>,
    pub discount: f64,
    pub initial_state_dist: Vec<f64>,
}

/// A validated tabular game. Immutable after construction.
#[derive(Debug, Clone)]
pub struct TabularPomg {
    parts: ModelParts,
    joint_actions: Vec<Vec<usize>>,
    strides: Vec<usize>,
    phi_min: f64,
    phi_max: f64,
}

/// Residuals and structural facts about a model. Never clamps anything.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ModelReport {
    pub transition_residual: f64,
    pub observation_residual: f64,
    pub initial_observation_residual: f64,
    pub initial_state_residual: f64,
    /// Most negative probability entry found (0 when none are negative).
    pub min_probability: f64,
    pub reachable_states: usize,
    pub common_reward: bool,
    pub phi_min: f64,
    pub phi_max: f64,
}

impl ModelReport {
    pub fn max_residual(&self) -> f64 {
        self.transition_residual
            .max(self.observation_residual)
            .max(self.initial_observation_residual)
            .max(self.initial_state_residual)
            .max(-self.min_probability)
    }
}

fn row_residual(row: &[(usize, f64)]) -> f64 {
    (row.iter().map(|&(_, p)| p).sum::<f64>() - 1.0).abs()
}

fn row_min(row: &[(usize, f64)]) -> f64 {
    row.iter().map(|&(_, p)| p).fold(0.0, f64::min)
}

/// Normalize a list of `(index, prob)` pairs: merge duplicates, drop zeros, sort.
pub fn sparse_from_pairs(mut pairs: Vec<(usize, f64)>) -> SparseDist {
    pairs.sort_by_key(|&(i, _)| i);
    let mut out: SparseDist = Vec::with_capacity(pairs.len());
    for (i, p) in pairs {
        match out.last_mut() {
            Some((j, q)) if *j == i => *q += p,
            _ => out.push((i, p)),
        }
    }
    out.retain(|&(_, p)| p != 0.0);
    out
}

pub fn sparse_from_dense(row: &[f64]) -> SparseDist {
    row.iter()
        .enumerate()
        .filter(|(_, &p)| p != 0.0)
        .map(|(i, &p)| (i, p))
        .collect()
}

pub fn dense_from_sparse(row: &[(usize, f64)], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for &(i, p) in row {
        out[i] = p;
    }
    out
}

impl TabularPomg {
    /// Validates the parts and builds the model.
    pub fn from_parts(parts: ModelParts) -> Result<Self> {
        check_shapes(&parts)?;
        let model = Self::from_parts_unchecked(parts);
        model.check_stochastic()?;
        Ok(model)
    }

    /// Builds a model without stochasticity checks. Shapes must still be
    /// consistent; use [`validate_model`] to inspect residuals.
    pub fn from_parts_unchecked(parts: ModelParts) -> Self {
        let n = parts.actions.len();
        let sizes: Vec<usize> = parts.actions.iter().map(Vec::len).collect();
        let mut strides = vec![1usize; n];
        for i in (0..n.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * sizes[i + 1];
        }
        let n_joint: usize = sizes.iter().product();
        let joint_actions = (0..n_joint)
            .map(|u| (0..n).map(|i| (u / strides[i]) % sizes[i]).collect())
            .collect();
        let (phi_min, phi_max) = parts
            .potential
            .iter()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        Self {
            parts,
            joint_actions,
            strides,
            phi_min,
            phi_max,
        }
    }

    fn check_stochastic(&self) -> Result<()> {
        let p = &self.parts;
        let bad = |field: String, row: &[(usize, f64)]| -> Result<()> {
            let res = row_residual(row);
            if res > PROB_TOL || row_min(row) < 0.0 {
                return Err(Error::load(
                    field,
                    format!(
                        "row is not a probability distribution (sum {:.15}, residual {res:e})",
                        row.iter().map(|&(_, q)| q).sum::<f64>()
                    ),
                ));
            }
            Ok(())
        };
        for (x, rows) in p.transition.iter().enumerate() {
            for (u, row) in rows.iter().enumerate() {
                bad(format!("transition[{x}][{u}]"), row)?;
            }
        }
        for (i, per) in p.observation_kernel.iter().enumerate() {
            for (x, rows) in per.iter().enumerate() {
                for (u, row) in rows.iter().enumerate() {
                    bad(format!("observation_kernel[{i}][{x}][{u}]"), row)?;
                }
            }
        }
        for (i, rows) in p.initial_observation.iter().enumerate() {
            for (x, row) in rows.iter().enumerate() {
                bad(format!("initial_observation[{i}][{x}]"), row)?;
            }
        }
        bad(
            "initial_state_dist".into(),
            &sparse_from_dense(&p.initial_state_dist),
        )?;
        if p.initial_state_dist.iter().any(|&v| v < 0.0) {
            return Err(Error::load("initial_state_dist", "negative entry"));
        }
        Ok(())
    }

    pub fn parts(&self) -> &ModelParts {
        &self.parts
    }

    pub fn n_agents(&self) -> usize {
        self.parts.actions.len()
    }

    pub fn n_states(&self) -> usize {
        self.parts.states.len()
    }

    pub fn n_actions(&self, i: usize) -> usize {
        self.parts.actions[i].len()
    }

    pub fn n_observations(&self, i: usize) -> usize {
        self.parts.observations[i].len()
    }

    pub fn n_joint_actions(&self) -> usize {
        self.joint_actions.len()
    }

    /// Per-agent components of joint action `u`.
    pub fn joint_action(&self, u: usize) -> &[usize] {
        &self.joint_actions[u]
    }

    pub fn joint_index(&self, actions: &[usize]) -> usize {
        actions
            .iter()
            .zip(&self.strides)
            .map(|(&a, &s)| a * s)
            .sum()
    }

    pub fn discount(&self) -> f64 {
        self.parts.discount
    }

    pub fn transition(&self, x: usize, u: usize) -> &[(usize, f64)] {
        &self.parts.transition[x][u]
    }

    pub fn observation(&self, i: usize, x_next: usize, u: usize) -> &[(usize, f64)] {
        &self.parts.observation_kernel[i][x_next][u]
    }

    pub fn initial_observation(&self, i: usize, x: usize) -> &[(usize, f64)] {
        &self.parts.initial_observation[i][x]
    }

    pub fn reward(&self, i: usize, x: usize, u: usize) -> f64 {
        self.parts.reward[i][x][u]
    }

    pub fn potential(&self, x: usize, u: usize) -> f64 {
        self.parts.potential[x][u]
    }

    pub fn initial_state_dist(&self) -> &[f64] {
        &self.parts.initial_state_dist
    }

    pub fn phi_min(&self) -> f64 {
        self.phi_min
    }

    pub fn phi_max(&self) -> f64 {
        self.phi_max
    }

    /// Upper end of the potential after shifting it so its minimum is at most
    /// zero. This is the `φ_max` that makes `|Q_φ| ≤ φ_max/(1−β)` hold for
    /// the shifted potential; shifts leave every advantage unchanged.
    pub fn phi_span(&self) -> f64 {
        self.phi_max - self.phi_min.min(0.0)
    }

    /// Largest absolute per-step reward over all agents and the potential.
    pub fn max_abs_reward(&self) -> f64 {
        let r = self
            .parts
            .reward
            .iter()
            .flatten()
            .flatten()
            .fold(0.0f64, |m, &v| m.max(v.abs()));
        r.max(self.phi_min.abs()).max(self.phi_max.abs())
    }

    pub fn is_common_reward(&self) -> bool {
        self.parts.reward.iter().all(|ri| {
            ri.iter()
                .zip(&self.parts.potential)
                .all(|(a, b)| a.iter().zip(b).all(|(p, q)| p == q))
        })
    }
}

fn check_shapes(p: &ModelParts) -> Result<()> {
    let n = p.actions.len();
    let nx = p.states.len();
    if n == 0 {
        return Err(Error::load("n_agents", "must be at least 1"));
    }
    if nx == 0 {
        return Err(Error::load("states", "must be nonempty"));
    }
    if p.observations.len() != n {
        return Err(Error::load("observations", "one list per agent required"));
    }
    for i in 0..n {
        if p.actions[i].is_empty() {
            return Err(Error::load(format!("actions[{i}]"), "must be nonempty"));
        }
        if p.observations[i].is_empty() {
            return Err(Error::load(format!("observations[{i}]"), "must be nonempty"));
        }
    }
    if !(p.discount > 0.0 && p.discount < 1.0) {
        return Err(Error::load("discount", "must lie strictly inside (0, 1)"));
    }
    let nu: usize = p.actions.iter().map(Vec::len).product();
    let check_xu = |name: &str, len_x: usize, len_u: &dyn Fn(usize) -> usize| -> Result<()> {
        if len_x != nx {
            return Err(Error::load(name, format!("expected {nx} state rows, got {len_x}")));
        }
        for x in 0..nx {
            if len_u(x) != nu {
                return Err(Error::load(
                    format!("{name}[{x}]"),
                    format!("expected {nu} joint-action rows, got {}", len_u(x)),
                ));
            }
        }
        Ok(())
    };
    check_xu("transition", p.transition.len(), &|x| p.transition[x].len())?;
    check_xu("potential", p.potential.len(), &|x| p.potential[x].len())?;
    for row in p.transition.iter().flatten() {
        if row.iter().any(|&(j, _)| j >= nx) {
            return Err(Error::load("transition", "next-state index out of range"));
        }
    }
    if p.observation_kernel.len() != n || p.initial_observation.len() != n || p.reward.len() != n
    {
        return Err(Error::load(
            "observation_kernel",
            "observation_kernel, initial_observation and reward need one entry per agent",
        ));
    }
    for i in 0..n {
        let ny = p.observations[i].len();
        let name = format!("observation_kernel[{i}]");
        check_xu(&name, p.observation_kernel[i].len(), &|x| {
            p.observation_kernel[i][x].len()
        })?;
        if p.observation_kernel[i]
            .iter()
            .flatten()
            .chain(p.initial_observation[i].iter())
            .any(|row| row.iter().any(|&(j, _)| j >= ny))
        {
            return Err(Error::load(name, "observation index out of range"));
        }
        if p.initial_observation[i].len() != nx {
            return Err(Error::load(
                format!("initial_observation[{i}]"),
                format!("expected {nx} rows"),
            ));
        }
        check_xu(&format!("reward[{i}]"), p.reward[i].len(), &|x| p.reward[i][x].len())?;
    }
    if p.initial_state_dist.len() != nx {
        return Err(Error::load("initial_state_dist", format!("expected length {nx}")));
    }
    let finite = p
        .reward
        .iter()
        .flatten()
        .flatten()
        .chain(p.potential.iter().flatten())
        .all(|v| v.is_finite());
    if !finite {
        return Err(Error::load("reward", "non-finite entry"));
    }
    Ok(())
}

/// Computes all invariant residuals of a model without failing.
pub fn validate_model(model: &TabularPomg) -> ModelReport {
    let p = model.parts();
    let mut min_probability = 0.0f64;
    let mut fold = |rows: &mut dyn Iterator<Item = &SparseDist>| -> f64 {
        let mut worst = 0.0f64;
        for row in rows {
            worst = worst.max(row_residual(row));
            min_probability = min_probability.min(row_min(row));
        }
        worst
    };
    let transition_residual = fold(&mut p.transition.iter().flatten());
    let observation_residual = fold(&mut p.observation_kernel.iter().flatten().flatten());
    let initial_observation_residual = fold(&mut p.initial_observation.iter().flatten());
    let init = sparse_from_dense(&p.initial_state_dist);
    let initial_state_residual = row_residual(&init);
    min_probability = min_probability.min(row_min(&init));

    ModelReport {
        transition_residual,
        observation_residual,
        initial_observation_residual,
        initial_state_residual,
        min_probability,
        reachable_states: reachable_states(model).len(),
        common_reward: model.is_common_reward(),
        phi_min: model.phi_min(),
        phi_max: model.phi_max(),
    }
}

/// States reachable from the initial distribution under any actions.
pub fn reachable_states(model: &TabularPomg) -> Vec<usize> {
    let nx = model.n_states();
    let mut seen = vec![false; nx];
    let mut stack: Vec<usize> = (0..nx)
        .filter(|&x| model.initial_state_dist()[x] > 0.0)
        .collect();
    for &x in &stack {
        seen[x] = true;
    }
    while let Some(x) = stack.pop() {
        for u in 0..model.n_joint_actions() {
            for &(y, p) in model.transition(x, u) {
                if p > 0.0 && !seen[y] {
                    seen[y] = true;
                    stack.push(y);
                }
            }
        }
    }
    (0..nx).filter(|&x| seen[x]).collect()
}
