//! Exact history-conditioned beliefs over the hidden state and their
//! distance to the beliefs implied by the internal-state compression.
//!
//! A common-information history fixes the shared state, every local state
//! and the current joint observation, so the posterior over `(x, y, m)` is a
//! point mass on `(y, m)` times a posterior over `x`. Nodes carrying the same
//! joint information and the same posterior have identical futures; they are
//! merged and their probabilities summed.

use super::chain::{joint_observations, AugmentedChain, ChainStructure};
use super::OccupancyMeasure;
use crate::error::{Error, Result};
use crate::internal::InternalStateSpec;
use crate::model::TabularPomg;
use crate::policy::JointPolicy;
use std::collections::HashMap;

/// Occupancy-conditional posteriors `d(x | w, l, y)` per joint information id.
#[derive(Debug, Clone)]
pub struct CompressedBeliefs {
    pub stamp: u64,
    /// `[ĥ]` sparse posterior over `x`; empty for zero-occupancy ids.
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl CompressedBeliefs {
    pub fn from_occupancy(chain: &AugmentedChain, occ: &OccupancyMeasure) -> Result<Self> {
        if occ.stamp != chain.stamp() {
            return Err(Error::Contract("occupancy does not belong to this chain".into()));
        }
        let st = &chain.structure;
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); st.n_joint_info()];
        for s in 0..st.n_states() {
            if occ.d[s] > 0.0 {
                rows[st.joint_info(s)].push((st.x(s), occ.d[s]));
            }
        }
        for row in &mut rows {
            row.sort_by_key(|&(x, _)| x);
            let total: f64 = row.iter().map(|&(_, p)| p).sum();
            row.iter_mut().for_each(|(_, p)| *p /= total);
        }
        Ok(Self {
            stamp: chain.stamp(),
            rows,
        })
    }
}

/// One merged history node.
#[derive(Debug, Clone)]
pub struct BeliefNode {
    pub depth: usize,
    /// Parent node and the joint action taken there; `None` at the root.
    pub parent: Option<(usize, usize)>,
    pub shared: usize,
    pub local: Vec<usize>,
    pub observation: Vec<usize>,
    pub joint_info: usize,
    /// Probability of reaching this node under the history policy.
    pub weight: f64,
    /// Dense posterior over `x`.
    pub posterior: Vec<f64>,
    /// Total variation to the compressed belief of `joint_info`.
    pub tv: f64,
}

#[derive(Debug, Clone)]
pub struct BeliefTable {
    pub horizon: usize,
    pub discount: f64,
    pub nodes: Vec<BeliefNode>,
}

impl BeliefTable {
    /// Representative history of a node as `(joint observation, joint action)`
    /// pairs followed by the current joint observation.
    pub fn history(&self, node: usize) -> (Vec<(Vec<usize>, usize)>, Vec<usize>) {
        let mut steps = Vec::new();
        let mut k = node;
        while let Some((p, u)) = self.nodes[k].parent {
            steps.push((self.nodes[p].observation.clone(), u));
            k = p;
        }
        steps.reverse();
        (steps, self.nodes[node].observation.clone())
    }

    pub fn history_label(&self, model: &TabularPomg, node: usize) -> String {
        let (steps, last) = self.history(node);
        let mut parts: Vec<String> = steps
            .iter()
            .map(|(y, u)| format!("y{:?}u{:?}", y, model.joint_action(*u)))
            .collect();
        parts.push(format!("y{last:?}"));
        parts.join(" ")
    }

    /// `Σ_{k≤H} β^k E[TV_k]` under the history policy.
    pub fn discounted_tv(&self) -> f64 {
        self.nodes
            .iter()
            .map(|n| self.discount.powi(n.depth as i32) * n.weight * n.tv)
            .sum()
    }

    /// Largest deviation of a posterior's mass from 1.
    pub fn max_mass_residual(&self) -> f64 {
        self.nodes
            .iter()
            .map(|n| (n.posterior.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

fn tv_dense_sparse(dense: &[f64], sparse: &[(usize, f64)]) -> f64 {
    if sparse.is_empty() {
        return 1.0;
    }
    let mut diff = dense.to_vec();
    for &(x, p) in sparse {
        diff[x] -= p;
    }
    (0.5 * diff.iter().map(|v| v.abs()).sum::<f64>()).min(1.0)
}

fn quantize(p: &[f64]) -> Vec<i64> {
    p.iter().map(|v| (v * 1e12).round() as i64).collect()
}

/// Enumerates common-information histories up to depth `horizon`, weighted
/// by `history_policy`, and compares each exact posterior with `compressed`.
/// Fails with a size error when more than `node_cap` merged nodes appear.
pub fn exact_beliefs(
    model: &TabularPomg,
    spec: &InternalStateSpec,
    structure: &ChainStructure,
    history_policy: &JointPolicy,
    compressed: &CompressedBeliefs,
    horizon: usize,
    node_cap: usize,
) -> Result<BeliefTable> {
    let n = model.n_agents();
    let nx = model.n_states();
    let probs: Vec<Vec<f64>> = history_policy.tables.iter().map(|t| t.prob_table()).collect();
    let too_big = |needed: usize| Error::Size {
        what: "belief table",
        required: needed as u128,
        cap: node_cap as u128,
    };
    let mut nodes: Vec<BeliefNode> = Vec::new();
    let make_node = |depth,
                     parent,
                     shared: usize,
                     local: Vec<usize>,
                     observation: Vec<usize>,
                     weight,
                     posterior: Vec<f64>|
     -> Result<BeliefNode> {
        let joint_info = structure
            .joint_info_of(shared, &local, &observation)
            .ok_or_else(|| Error::Contract("history reaches an internal state outside the chain".into()))?;
        let tv = tv_dense_sparse(&posterior, &compressed.rows[joint_info]);
        Ok(BeliefNode {
            depth,
            parent,
            shared,
            local,
            observation,
            joint_info,
            weight,
            posterior,
            tv,
        })
    };

    // Depth 0: x ~ μ₀, y ~ initial observation.
    let mut roots: HashMap<Vec<usize>, Vec<f64>> = HashMap::new();
    for (x, &px) in model.initial_state_dist().iter().enumerate() {
        if px <= 0.0 {
            continue;
        }
        let rows: Vec<&[(usize, f64)]> = (0..n).map(|i| model.initial_observation(i, x)).collect();
        for (y, py) in joint_observations(&rows) {
            if py > 0.0 {
                roots.entry(y).or_insert_with(|| vec![0.0; nx])[x] += px * py;
            }
        }
    }
    let mut roots: Vec<(Vec<usize>, Vec<f64>)> = roots.into_iter().collect();
    roots.sort_by(|a, b| a.0.cmp(&b.0));
    for (y, alpha) in roots {
        let mass: f64 = alpha.iter().sum();
        let post = alpha.iter().map(|a| a / mass).collect();
        let local = (0..n).map(|i| spec.initial_local(i)).collect();
        nodes.push(make_node(0, None, spec.initial_shared(), local, y, mass, post)?);
    }

    let mut level = 0..nodes.len();
    for depth in 1..=horizon {
        let mut merged: HashMap<(usize, Vec<i64>), usize> = HashMap::new();
        let start = nodes.len();
        for p in level.clone() {
            let (w, l, y, weight, post) = {
                let node = &nodes[p];
                (
                    node.shared,
                    node.local.clone(),
                    node.observation.clone(),
                    node.weight,
                    node.posterior.clone(),
                )
            };
            let info: Vec<usize> = (0..n).map(|i| spec.info_index_at(i, w, l[i], y[i])).collect();
            for u in 0..model.n_joint_actions() {
                let ua = model.joint_action(u);
                let pu: f64 = (0..n)
                    .map(|i| probs[i][info[i] * model.n_actions(i) + ua[i]])
                    .product();
                if pu == 0.0 {
                    continue;
                }
                let w_next = spec.shared_next(w, &y, ua);
                let l_next: Vec<usize> = (0..n).map(|i| spec.local_next(i, l[i], y[i], ua[i])).collect();
                let mut pred = vec![0.0; nx];
                for (x, &bx) in post.iter().enumerate() {
                    if bx != 0.0 {
                        for &(xn, q) in model.transition(x, u) {
                            pred[xn] += bx * q;
                        }
                    }
                }
                let mut by_obs: HashMap<Vec<usize>, Vec<f64>> = HashMap::new();
                for (xn, &px) in pred.iter().enumerate() {
                    if px == 0.0 {
                        continue;
                    }
                    let rows: Vec<&[(usize, f64)]> = (0..n).map(|i| model.observation(i, xn, u)).collect();
                    for (yn, py) in joint_observations(&rows) {
                        if py > 0.0 {
                            by_obs.entry(yn).or_insert_with(|| vec![0.0; nx])[xn] += px * py;
                        }
                    }
                }
                let mut by_obs: Vec<(Vec<usize>, Vec<f64>)> = by_obs.into_iter().collect();
                by_obs.sort_by(|a, b| a.0.cmp(&b.0));
                for (yn, alpha) in by_obs {
                    let py: f64 = alpha.iter().sum();
                    let post_next: Vec<f64> = alpha.iter().map(|a| a / py).collect();
                    let child_weight = weight * pu * py;
                    let node = make_node(depth, Some((p, u)), w_next, l_next.clone(), yn, child_weight, post_next)?;
                    let key = (node.joint_info, quantize(&node.posterior));
                    match merged.get(&key) {
                        Some(&k) => nodes[k].weight += child_weight,
                        None => {
                            if nodes.len() >= node_cap {
                                return Err(too_big(nodes.len() + 1));
                            }
                            merged.insert(key, nodes.len());
                            nodes.push(node);
                        }
                    }
                }
            }
        }
        level = start..nodes.len();
    }
    Ok(BeliefTable {
        horizon,
        discount: model.discount(),
        nodes,
    })
}

/// Worst-case history/compression distance.
#[derive(Debug, Clone)]
pub struct DbReport {
    pub d_b: f64,
    pub argmax_node: usize,
    pub argmax_history: String,
    /// `(w, max TV over histories compressing to w)`, sorted by `w`.
    pub per_shared: Vec<(usize, f64)>,
    pub horizon: usize,
    /// `Σ_{k>H} β^k`: discounted weight of the unenumerated depths.
    pub tail_weight: f64,
    /// `Σ_{k≤H} β^k E[TV_k]`.
    pub discounted_tv: f64,
}

impl DbReport {
    /// `Σ_k β^k E[TV_k]` with the unenumerated depths bounded by `d_b`.
    pub fn discounted_tv_bound(&self) -> f64 {
        self.discounted_tv + self.d_b * self.tail_weight
    }
}

pub fn distance_db(model: &TabularPomg, beliefs: &BeliefTable) -> DbReport {
    let mut best = (0.0f64, 0usize);
    let mut per: HashMap<usize, f64> = HashMap::new();
    for (k, n) in beliefs.nodes.iter().enumerate() {
        if n.tv > best.0 {
            best = (n.tv, k);
        }
        let e = per.entry(n.shared).or_insert(0.0);
        *e = e.max(n.tv);
    }
    let mut per_shared: Vec<(usize, f64)> = per.into_iter().collect();
    per_shared.sort_by_key(|&(w, _)| w);
    let beta = beliefs.discount;
    DbReport {
        d_b: best.0,
        argmax_node: best.1,
        argmax_history: if beliefs.nodes.is_empty() {
            String::new()
        } else {
            beliefs.history_label(model, best.1)
        },
        per_shared,
        horizon: beliefs.horizon,
        tail_weight: beta.powi(beliefs.horizon as i32 + 1) / (1.0 - beta),
        discounted_tv: beliefs.discounted_tv(),
    }
}
