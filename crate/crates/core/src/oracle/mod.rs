//! Exact evaluation of finite-state-controller joint policies on the
//! augmented chain: values, occupancy measures, marginal advantages and
//! beliefs.

mod belief;
mod chain;
pub mod solve;

pub use belief::{distance_db, exact_beliefs, BeliefNode, BeliefTable, CompressedBeliefs, DbReport};
pub use chain::{build_chain, AugmentedChain, ChainStructure};

use crate::error::{Error, Result};
use crate::internal::InternalStateSpec;
use crate::model::TabularPomg;
use crate::policy::JointPolicy;
use std::sync::Arc;

/// Which per-step payoff a value table is computed for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardSelector {
    Agent(usize),
    Potential,
}

impl RewardSelector {
    fn value(self, model: &TabularPomg, x: usize, u: usize) -> f64 {
        match self {
            RewardSelector::Agent(i) => model.reward(i, x, u),
            RewardSelector::Potential => model.potential(x, u),
        }
    }
}

/// `V(s̃)` and `Q(s̃, u)` on the augmented chain.
#[derive(Debug, Clone)]
pub struct ValueTables {
    pub stamp: u64,
    pub selector: RewardSelector,
    pub v: Vec<f64>,
    /// `[s · |U| + u]`
    pub q: Vec<f64>,
    n_joint: usize,
}

impl ValueTables {
    pub fn q(&self, s: usize, u: usize) -> f64 {
        self.q[s * self.n_joint + u]
    }
}

/// Solves `(I − βP_π)V = r_π` and forms `Q(s̃,u) = r(x,u) + β E[V(s̃')]`.
pub fn solve_values(chain: &AugmentedChain, model: &TabularPomg, selector: RewardSelector) -> Result<ValueTables> {
    let st = &chain.structure;
    let beta = model.discount();
    let nu = st.n_joint_actions();
    let ns = st.n_states();
    let r_pi: Vec<f64> = (0..ns)
        .map(|s| {
            let x = st.x(s);
            (0..nu)
                .map(|u| chain.action_prob(s, u) * selector.value(model, x, u))
                .sum()
        })
        .collect();
    let v = solve::solve_discounted(chain.transitions(), &r_pi, beta)?;
    let mut q = vec![0.0; ns * nu];
    for s in 0..ns {
        let x = st.x(s);
        for u in 0..nu {
            let ev: f64 = st.successors(s, u).iter().map(|&(t, p)| p * v[t as usize]).sum();
            q[s * nu + u] = selector.value(model, x, u) + beta * ev;
        }
    }
    Ok(ValueTables {
        stamp: chain.stamp(),
        selector,
        v,
        q,
        n_joint: nu,
    })
}

/// `E_{s̃⁰}[V(s̃⁰)]`.
pub fn exact_objective(chain: &AugmentedChain, values: &ValueTables) -> Result<f64> {
    if values.stamp != chain.stamp() {
        return Err(Error::Contract("value tables were computed under another policy".into()));
    }
    Ok(chain
        .structure
        .initial()
        .iter()
        .map(|&(s, p)| p * values.v[s])
        .sum())
}

/// `Σ_{k<H} β^k E[r(x^k,u^k)]`, the objective of horizon-`H` rollouts.
pub fn truncated_objective(
    chain: &AugmentedChain,
    model: &TabularPomg,
    selector: RewardSelector,
    horizon: usize,
) -> f64 {
    let st = &chain.structure;
    let ns = st.n_states();
    let nu = st.n_joint_actions();
    let beta = model.discount();
    let r_pi: Vec<f64> = (0..ns)
        .map(|s| {
            (0..nu)
                .map(|u| chain.action_prob(s, u) * selector.value(model, st.x(s), u))
                .sum()
        })
        .collect();
    let mut mu = vec![0.0; ns];
    for &(s, p) in st.initial() {
        mu[s] += p;
    }
    let mut total = 0.0;
    let mut disc = 1.0;
    for _ in 0..horizon {
        total += disc * mu.iter().zip(&r_pi).map(|(a, b)| a * b).sum::<f64>();
        let mut next = vec![0.0; ns];
        for (s, &m) in mu.iter().enumerate() {
            if m != 0.0 {
                for &(t, p) in chain.row(s) {
                    next[t as usize] += m * p;
                }
            }
        }
        mu = next;
        disc *= beta;
    }
    total
}

/// Discounted visitation distribution `d = (1−β) Σ_k β^k μ₀ P_π^k`.
#[derive(Debug, Clone)]
pub struct OccupancyMeasure {
    pub stamp: u64,
    pub d: Vec<f64>,
    /// `[i][h]` marginal over agent `i`'s information points.
    pub agent: Vec<Vec<f64>>,
}

impl OccupancyMeasure {
    /// Smallest positive marginal over all agents and info points.
    pub fn min_positive(&self) -> f64 {
        self.agent
            .iter()
            .flatten()
            .copied()
            .filter(|&v| v > 0.0)
            .fold(f64::INFINITY, f64::min)
    }

    /// `max_{i,ĥ_i : d>0} 1/d_i(ĥ_i)`.
    pub fn max_reciprocal(&self) -> f64 {
        1.0 / self.min_positive()
    }

    pub fn total_mass(&self) -> f64 {
        self.d.iter().sum()
    }
}

pub fn compute_occupancy(chain: &AugmentedChain, beta: f64) -> Result<OccupancyMeasure> {
    let st = &chain.structure;
    let ns = st.n_states();
    let mut b = vec![0.0; ns];
    for &(s, p) in st.initial() {
        b[s] += (1.0 - beta) * p;
    }
    let d = solve::solve_discounted(&chain.transitions().transpose(), &b, beta)?;
    let agent = (0..st.n_agents())
        .map(|i| {
            let mut m = vec![0.0; st.n_info_points(i)];
            for (s, &ds) in d.iter().enumerate() {
                m[st.info(i, s)] += ds;
            }
            m
        })
        .collect();
    Ok(OccupancyMeasure {
        stamp: chain.stamp(),
        d,
        agent,
    })
}

/// Marginal `Q_i(ĥ_i,u_i)` and `A_i(ĥ_i,u_i)` for one agent.
#[derive(Debug, Clone)]
pub struct AgentAdvantage {
    pub agent: usize,
    pub stamp: u64,
    /// `[h · |U_i| + a]`
    pub q: Vec<f64>,
    pub adv: Vec<f64>,
    pub occupancy: Vec<f64>,
    /// Info points with zero occupancy; their rows are zero.
    pub unvisited: Vec<usize>,
    pub n_actions: usize,
}

impl AgentAdvantage {
    pub fn adv_row(&self, h: usize) -> &[f64] {
        &self.adv[h * self.n_actions..(h + 1) * self.n_actions]
    }

    pub fn q_row(&self, h: usize) -> &[f64] {
        &self.q[h * self.n_actions..(h + 1) * self.n_actions]
    }

    pub fn max_abs(&self) -> f64 {
        self.adv.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.adv.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `Q_i(ĥ_i,u_i) = E[Q(s̃,(u_i,u_{−i}))]` with the hidden components drawn
/// from the occupancy conditional `d(·|ĥ_i)` and `u_{−i} ~ π_{−i}`;
/// `A_i = Q_i − Σ_u π_i(u|ĥ_i) Q_i(ĥ_i,u)`.
pub fn marginal_advantage(
    chain: &AugmentedChain,
    model: &TabularPomg,
    values: &ValueTables,
    occ: &OccupancyMeasure,
    i: usize,
) -> Result<AgentAdvantage> {
    if values.stamp != chain.stamp() || occ.stamp != chain.stamp() {
        return Err(Error::Contract("policy stamps of chain, values and occupancy differ".into()));
    }
    let st = &chain.structure;
    let n = st.n_agents();
    let na = model.n_actions(i);
    let np = st.n_info_points(i);
    let nu = st.n_joint_actions();
    let mut q = vec![0.0; np * na];
    for s in 0..st.n_states() {
        let ds = occ.d[s];
        if ds == 0.0 {
            continue;
        }
        let h = st.info(i, s);
        for u in 0..nu {
            let ua = model.joint_action(u);
            let others: f64 = (0..n)
                .filter(|&j| j != i)
                .map(|j| chain.agent_prob(j, s, ua[j]))
                .product();
            if others != 0.0 {
                q[h * na + ua[i]] += ds * others * values.q(s, u);
            }
        }
    }
    let mut adv = vec![0.0; np * na];
    let mut unvisited = Vec::new();
    for h in 0..np {
        let dh = occ.agent[i][h];
        if dh <= 0.0 {
            unvisited.push(h);
            q[h * na..(h + 1) * na].iter_mut().for_each(|v| *v = 0.0);
            continue;
        }
        let row = &mut q[h * na..(h + 1) * na];
        row.iter_mut().for_each(|v| *v /= dh);
        let pi = chain.agent_row(i, h);
        let mean: f64 = pi.iter().zip(row.iter()).map(|(p, v)| p * v).sum();
        for a in 0..na {
            adv[h * na + a] = row[a] - mean;
        }
    }
    Ok(AgentAdvantage {
        agent: i,
        stamp: chain.stamp(),
        q,
        adv,
        occupancy: occ.agent[i].clone(),
        unvisited,
        n_actions: na,
    })
}

/// Advantage conditioned on the joint information `ĥ = (w, l, y)`:
/// `A(ĥ,u) = Σ_x d(x|ĥ)(Q(x,ĥ,u) − V(x,ĥ))`.
#[derive(Debug, Clone)]
pub struct JointAdvantage {
    pub stamp: u64,
    /// `[ĥ · |U| + u]`
    pub adv: Vec<f64>,
    pub n_joint: usize,
}

pub fn joint_info_advantage(
    chain: &AugmentedChain,
    values: &ValueTables,
    occ: &OccupancyMeasure,
) -> Result<JointAdvantage> {
    if values.stamp != chain.stamp() || occ.stamp != chain.stamp() {
        return Err(Error::Contract("policy stamps of chain, values and occupancy differ".into()));
    }
    let st = &chain.structure;
    let nu = st.n_joint_actions();
    let nh = st.n_joint_info();
    let mut adv = vec![0.0; nh * nu];
    let mut mass = vec![0.0; nh];
    for s in 0..st.n_states() {
        let ds = occ.d[s];
        if ds == 0.0 {
            continue;
        }
        let h = st.joint_info(s);
        mass[h] += ds;
        for u in 0..nu {
            adv[h * nu + u] += ds * (values.q(s, u) - values.v[s]);
        }
    }
    for h in 0..nh {
        if mass[h] > 0.0 {
            adv[h * nu..(h + 1) * nu].iter_mut().for_each(|v| *v /= mass[h]);
        }
    }
    Ok(JointAdvantage {
        stamp: chain.stamp(),
        adv,
        n_joint: nu,
    })
}

/// `Σ_s d'(s) Σ_u π'(u|s) A(ĥ(s),u)`: the expected joint-information
/// advantage of one policy's tables under another policy's occupancy.
pub fn expected_joint_advantage(
    adv: &JointAdvantage,
    chain_new: &AugmentedChain,
    occ_new: &OccupancyMeasure,
) -> Result<f64> {
    if occ_new.stamp != chain_new.stamp() {
        return Err(Error::Contract("occupancy does not belong to this chain".into()));
    }
    let st = &chain_new.structure;
    let nu = adv.n_joint;
    Ok((0..st.n_states())
        .map(|s| {
            let h = st.joint_info(s);
            occ_new.d[s]
                * (0..nu)
                    .map(|u| chain_new.action_prob(s, u) * adv.adv[h * nu + u])
                    .sum::<f64>()
        })
        .sum())
}

/// Objective values of one joint policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub per_agent: Vec<f64>,
    pub potential: f64,
}

/// Everything the trainer and evaluator need about one joint policy.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub policy: JointPolicy,
    pub chain: AugmentedChain,
    pub occupancy: OccupancyMeasure,
    pub potential_values: ValueTables,
    pub agent_values: Vec<ValueTables>,
    pub advantages: Vec<AgentAdvantage>,
    pub objective: Objective,
}

impl Evaluation {
    pub fn stamp(&self) -> u64 {
        self.chain.stamp()
    }

    /// Advantage tables in the layout [`crate::policy::npg_step`] expects.
    pub fn advantage_tables(&self) -> Vec<Vec<f64>> {
        self.advantages.iter().map(|a| a.adv.clone()).collect()
    }

    pub fn max_abs_advantage(&self) -> Vec<f64> {
        self.advantages.iter().map(AgentAdvantage::max_abs).collect()
    }
}

/// Exact oracle bound to a model and compressor. The chain structure is
/// enumerated once and shared across policies.
#[derive(Debug, Clone)]
pub struct Oracle<'a> {
    pub model: &'a TabularPomg,
    pub spec: &'a InternalStateSpec,
    pub structure: Arc<ChainStructure>,
    common_reward: bool,
}

impl<'a> Oracle<'a> {
    pub fn new(model: &'a TabularPomg, spec: &'a InternalStateSpec, cap: usize) -> Result<Self> {
        Ok(Self {
            model,
            spec,
            structure: Arc::new(ChainStructure::build(model, spec, cap)?),
            common_reward: model.is_common_reward(),
        })
    }

    pub fn chain(&self, policy: &JointPolicy) -> Result<AugmentedChain> {
        AugmentedChain::new(self.structure.clone(), self.model, policy)
    }

    /// Objective of every agent and of the potential, without advantages.
    pub fn objective(&self, policy: &JointPolicy) -> Result<Objective> {
        let chain = self.chain(policy)?;
        let pot = solve_values(&chain, self.model, RewardSelector::Potential)?;
        let potential = exact_objective(&chain, &pot)?;
        let per_agent = if self.common_reward {
            vec![potential; self.model.n_agents()]
        } else {
            (0..self.model.n_agents())
                .map(|i| {
                    let v = solve_values(&chain, self.model, RewardSelector::Agent(i))?;
                    exact_objective(&chain, &v)
                })
                .collect::<Result<_>>()?
        };
        Ok(Objective { per_agent, potential })
    }

    /// `J_i` of agent `i` only.
    pub fn agent_objective(&self, policy: &JointPolicy, i: usize) -> Result<f64> {
        let chain = self.chain(policy)?;
        let sel = if self.common_reward {
            RewardSelector::Potential
        } else {
            RewardSelector::Agent(i)
        };
        let v = solve_values(&chain, self.model, sel)?;
        exact_objective(&chain, &v)
    }

    /// Histories weighted by `history`, compared with the beliefs implied by
    /// the occupancy of `compression`.
    pub fn beliefs(
        &self,
        history: &JointPolicy,
        compression: &JointPolicy,
        horizon: usize,
        node_cap: usize,
    ) -> Result<BeliefTable> {
        let chain = self.chain(compression)?;
        let occ = compute_occupancy(&chain, self.model.discount())?;
        let compressed = CompressedBeliefs::from_occupancy(&chain, &occ)?;
        exact_beliefs(self.model, self.spec, &self.structure, history, &compressed, horizon, node_cap)
    }

    pub fn distance_db(&self, policy: &JointPolicy, horizon: usize, node_cap: usize) -> Result<DbReport> {
        let table = self.beliefs(policy, policy, horizon, node_cap)?;
        Ok(distance_db(self.model, &table))
    }

    pub fn evaluate(&self, policy: &JointPolicy) -> Result<Evaluation> {
        let chain = self.chain(policy)?;
        let n = self.model.n_agents();
        let beta = self.model.discount();
        let occupancy = compute_occupancy(&chain, beta)?;
        let potential_values = solve_values(&chain, self.model, RewardSelector::Potential)?;
        let agent_values: Vec<ValueTables> = if self.common_reward {
            vec![potential_values.clone(); n]
        } else {
            (0..n)
                .map(|i| solve_values(&chain, self.model, RewardSelector::Agent(i)))
                .collect::<Result<_>>()?
        };
        let advantages = (0..n)
            .map(|i| marginal_advantage(&chain, self.model, &agent_values[i], &occupancy, i))
            .collect::<Result<Vec<_>>>()?;
        let potential = exact_objective(&chain, &potential_values)?;
        let per_agent = agent_values
            .iter()
            .map(|v| exact_objective(&chain, v))
            .collect::<Result<_>>()?;
        Ok(Evaluation {
            policy: policy.clone(),
            chain,
            occupancy,
            potential_values,
            agent_values,
            advantages,
            objective: Objective { per_agent, potential },
        })
    }
}

