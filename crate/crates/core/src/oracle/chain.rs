//! The augmented Markov chain over `(x, w, l₁..lₙ, y₁..yₙ)`.
//!
//! The reachable set and the per-joint-action successor lists do not depend
//! on the policy (softmax policies put mass on every action), so they are
//! enumerated once in [`ChainStructure`] and re-weighted per policy in
//! [`AugmentedChain`].

use crate::error::{Error, Result};
use crate::internal::InternalStateSpec;
use crate::model::TabularPomg;
use crate::policy::JointPolicy;
use super::solve::Csr;
use std::collections::HashMap;
use std::sync::Arc;

/// Product of per-agent sparse observation rows.
pub(crate) fn joint_observations(rows: &[&[(usize, f64)]]) -> Vec<(Vec<usize>, f64)> {
    let mut out = vec![(Vec::with_capacity(rows.len()), 1.0)];
    for row in rows {
        let mut next = Vec::with_capacity(out.len() * row.len());
        for (prefix, p) in &out {
            for &(y, q) in row.iter() {
                let mut v = prefix.clone();
                v.push(y);
                next.push((v, p * q));
            }
        }
        out = next;
    }
    out
}

/// Policy-independent enumeration of the reachable augmented states.
#[derive(Debug)]
pub struct ChainStructure {
    n_agents: usize,
    n_joint: usize,
    /// `[x, w, l_0..l_{n-1}, y_0..y_{n-1}]` per augmented state.
    keys: Vec<Vec<usize>>,
    index: HashMap<Vec<usize>, usize>,
    initial: Vec<(usize, f64)>,
    succ_offsets: Vec<usize>,
    succ: Vec<(u32, f64)>,
    /// `[i][s]` flat info-point index of agent `i` at state `s`.
    info: Vec<Vec<usize>>,
    /// Joint information `(w, l, y)` id per state.
    joint_info: Vec<usize>,
    joint_info_index: HashMap<Vec<usize>, usize>,
    n_info: Vec<usize>,
}

impl ChainStructure {
    /// Enumerates every augmented state reachable from the initial
    /// distribution. Fails with a size error once more than `cap` states are
    /// found; the reported requirement is the unpruned product bound.
    pub fn build(model: &TabularPomg, spec: &InternalStateSpec, cap: usize) -> Result<Self> {
        let n = model.n_agents();
        if spec.n_agents() != n {
            return Err(Error::Contract("spec and model disagree on the agent count".into()));
        }
        let n_joint = model.n_joint_actions();
        let bound = {
            let mut b = model.n_states() as u128 * spec.n_shared() as u128;
            for i in 0..n {
                b = b
                    .saturating_mul(spec.n_local(i) as u128)
                    .saturating_mul(model.n_observations(i) as u128);
            }
            b
        };
        let too_big = || Error::Size {
            what: "augmented chain",
            required: bound,
            cap: cap as u128,
        };

        let mut keys: Vec<Vec<usize>> = Vec::new();
        let mut index: HashMap<Vec<usize>, usize> = HashMap::new();
        let mut intern = |key: Vec<usize>, keys: &mut Vec<Vec<usize>>| -> Result<usize> {
            if let Some(&s) = index.get(&key) {
                return Ok(s);
            }
            if keys.len() >= cap {
                return Err(too_big());
            }
            let s = keys.len();
            index.insert(key.clone(), s);
            keys.push(key);
            Ok(s)
        };

        let mut initial = Vec::new();
        for (x, &px) in model.initial_state_dist().iter().enumerate() {
            if px <= 0.0 {
                continue;
            }
            let rows: Vec<&[(usize, f64)]> = (0..n).map(|i| model.initial_observation(i, x)).collect();
            for (y, py) in joint_observations(&rows) {
                let mut key = Vec::with_capacity(2 + 2 * n);
                key.push(x);
                key.push(spec.initial_shared());
                key.extend((0..n).map(|i| spec.initial_local(i)));
                key.extend(y);
                let s = intern(key, &mut keys)?;
                initial.push((s, px * py));
            }
        }
        initial.sort_by_key(|&(s, _)| s);

        let mut succ_offsets = vec![0];
        let mut succ = Vec::new();
        let mut s = 0;
        while s < keys.len() {
            let key = keys[s].clone();
            let x = key[0];
            let w = key[1];
            let l = &key[2..2 + n];
            let y = &key[2 + n..];
            for u in 0..n_joint {
                let ua = model.joint_action(u);
                let w_next = spec.shared_next(w, y, ua);
                let l_next: Vec<usize> = (0..n).map(|i| spec.local_next(i, l[i], y[i], ua[i])).collect();
                let start = succ.len();
                for &(xn, px) in model.transition(x, u) {
                    let rows: Vec<&[(usize, f64)]> = (0..n).map(|i| model.observation(i, xn, u)).collect();
                    for (yn, py) in joint_observations(&rows) {
                        let p = px * py;
                        if p == 0.0 {
                            continue;
                        }
                        let mut k = Vec::with_capacity(2 + 2 * n);
                        k.push(xn);
                        k.push(w_next);
                        k.extend_from_slice(&l_next);
                        k.extend(yn);
                        let t = intern(k, &mut keys)?;
                        succ.push((t as u32, p));
                    }
                }
                succ[start..].sort_by_key(|&(t, _)| t);
                succ_offsets.push(succ.len());
            }
            s += 1;
        }

        let info: Vec<Vec<usize>> = (0..n)
            .map(|i| {
                keys.iter()
                    .map(|k| spec.info_index_at(i, k[1], k[2 + i], k[2 + n + i]))
                    .collect()
            })
            .collect();
        let mut joint_info_index: HashMap<Vec<usize>, usize> = HashMap::new();
        let joint_info = keys
            .iter()
            .map(|k| {
                let next = joint_info_index.len();
                *joint_info_index.entry(k[1..].to_vec()).or_insert(next)
            })
            .collect();

        Ok(Self {
            n_agents: n,
            n_joint,
            keys,
            index,
            initial,
            succ_offsets,
            succ,
            info,
            joint_info,
            joint_info_index,
            n_info: (0..n).map(|i| spec.n_info_points(i)).collect(),
        })
    }

    pub fn n_states(&self) -> usize {
        self.keys.len()
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn n_joint_actions(&self) -> usize {
        self.n_joint
    }

    pub fn n_info_points(&self, i: usize) -> usize {
        self.n_info[i]
    }

    pub fn key(&self, s: usize) -> &[usize] {
        &self.keys[s]
    }

    pub fn state_of(&self, key: &[usize]) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn x(&self, s: usize) -> usize {
        self.keys[s][0]
    }

    /// Initial augmented distribution as `(state, probability)`.
    pub fn initial(&self) -> &[(usize, f64)] {
        &self.initial
    }

    pub fn successors(&self, s: usize, u: usize) -> &[(u32, f64)] {
        let k = s * self.n_joint + u;
        &self.succ[self.succ_offsets[k]..self.succ_offsets[k + 1]]
    }

    pub fn info(&self, i: usize, s: usize) -> usize {
        self.info[i][s]
    }

    pub fn joint_info(&self, s: usize) -> usize {
        self.joint_info[s]
    }

    pub fn n_joint_info(&self) -> usize {
        self.joint_info_index.len()
    }

    /// Joint information id of `(w, l, y)` if it is reachable.
    pub fn joint_info_of(&self, w: usize, l: &[usize], y: &[usize]) -> Option<usize> {
        let mut k = Vec::with_capacity(1 + l.len() + y.len());
        k.push(w);
        k.extend_from_slice(l);
        k.extend_from_slice(y);
        self.joint_info_index.get(&k).copied()
    }
}

/// Augmented chain weighted by a fixed joint policy.
#[derive(Debug, Clone)]
pub struct AugmentedChain {
    pub structure: Arc<ChainStructure>,
    stamp: u64,
    /// `[s · |U| + u]` joint action probabilities.
    action_probs: Vec<f64>,
    /// `[i][h · |U_i| + a]` per-agent policy rows.
    agent_probs: Vec<Vec<f64>>,
    agent_actions: Vec<usize>,
    transitions: Csr,
}

impl AugmentedChain {
    pub fn new(structure: Arc<ChainStructure>, model: &TabularPomg, policy: &JointPolicy) -> Result<Self> {
        let n = structure.n_agents();
        if policy.n_agents() != n {
            return Err(Error::Contract("policy agent count does not match the chain".into()));
        }
        for (i, t) in policy.tables.iter().enumerate() {
            if t.n_points() != structure.n_info_points(i) || t.n_actions() != model.n_actions(i) {
                return Err(Error::Contract(format!(
                    "agent {i} policy table does not match the internal-state spec"
                )));
            }
        }
        let agent_probs: Vec<Vec<f64>> = policy.tables.iter().map(|t| t.prob_table()).collect();
        let agent_actions: Vec<usize> = (0..n).map(|i| model.n_actions(i)).collect();
        let nu = structure.n_joint_actions();
        let ns = structure.n_states();
        let mut action_probs = vec![0.0; ns * nu];
        for s in 0..ns {
            for u in 0..nu {
                let ua = model.joint_action(u);
                action_probs[s * nu + u] = (0..n)
                    .map(|i| agent_probs[i][structure.info(i, s) * agent_actions[i] + ua[i]])
                    .product();
            }
        }
        let mut row_offsets = Vec::with_capacity(ns + 1);
        row_offsets.push(0);
        let mut rows: Vec<(u32, f64)> = Vec::new();
        let mut acc: Vec<(u32, f64)> = Vec::new();
        for s in 0..ns {
            acc.clear();
            for u in 0..nu {
                let pu = action_probs[s * nu + u];
                if pu == 0.0 {
                    continue;
                }
                acc.extend(structure.successors(s, u).iter().map(|&(t, p)| (t, p * pu)));
            }
            acc.sort_by_key(|&(t, _)| t);
            let start = rows.len();
            for &(t, p) in &acc {
                if rows.len() > start && rows[rows.len() - 1].0 == t {
                    let k = rows.len() - 1;
                    rows[k].1 += p;
                } else {
                    rows.push((t, p));
                }
            }
            row_offsets.push(rows.len());
        }
        Ok(Self {
            structure,
            stamp: policy.stamp(),
            action_probs,
            agent_probs,
            agent_actions,
            transitions: Csr {
                offsets: row_offsets,
                entries: rows,
            },
        })
    }

    pub fn stamp(&self) -> u64 {
        self.stamp
    }

    pub fn n_states(&self) -> usize {
        self.structure.n_states()
    }

    pub fn row(&self, s: usize) -> &[(u32, f64)] {
        self.transitions.row(s)
    }

    /// Policy-weighted transition operator.
    pub fn transitions(&self) -> &Csr {
        &self.transitions
    }

    pub fn action_prob(&self, s: usize, u: usize) -> f64 {
        self.action_probs[s * self.structure.n_joint_actions() + u]
    }

    /// `π_i(a | info_i(s))`.
    pub fn agent_prob(&self, i: usize, s: usize, a: usize) -> f64 {
        self.agent_probs[i][self.structure.info(i, s) * self.agent_actions[i] + a]
    }

    /// Row of `π_i` at flat info point `h`.
    pub fn agent_row(&self, i: usize, h: usize) -> &[f64] {
        let na = self.agent_actions[i];
        &self.agent_probs[i][h * na..(h + 1) * na]
    }

    pub fn n_agent_actions(&self, i: usize) -> usize {
        self.agent_actions[i]
    }

    /// Largest deviation of a transition row sum from 1.
    pub fn max_row_residual(&self) -> f64 {
        (0..self.n_states())
            .map(|s| (self.row(s).iter().map(|&(_, p)| p).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Builds the structure and weights it by `policy` in one call.
pub fn build_chain(
    model: &TabularPomg,
    spec: &InternalStateSpec,
    policy: &JointPolicy,
    cap: usize,
) -> Result<AugmentedChain> {
    let structure = Arc::new(ChainStructure::build(model, spec, cap)?);
    AugmentedChain::new(structure, model, policy)
}
