//! NE-gap measurement, convergence constants and numerical checks of the
//! inequalities behind the convergence bound.

mod bound;
mod fisher;
mod lemmas;
mod sweep;

pub use bound::{eps_fsc, explicit_rhs, theorem_bound_check, BoundConstants, BoundReport};
pub use sweep::{lemma_sweep, InstanceResiduals, ResidualSummary, SweepConfig, SweepReport, RESIDUAL_TOL};
pub use fisher::{fisher_consistency_check, FisherReport, FISHER_MAX_ENTRIES};
pub use lemmas::{
    gap_correction, kappa, lemma1_check, lemma2_check, lemma3_check, lemma4_check, max_visited_advantage,
    weighted_log_normalizers, BeliefSettings, Lemma1Report, Lemma2Report, Lemma3Report, Lemma4Input, Lemma4Report,
};

use crate::error::{Error, Result};
use crate::oracle::{
    compute_occupancy, exact_objective, marginal_advantage, solve_values, AgentAdvantage, OccupancyMeasure, Oracle,
    RewardSelector,
};
use crate::policy::{JointPolicy, PolicyTable};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Logit given to excluded actions of a deterministic table; `exp` of it is 0.
const DETERMINISTIC_LOGIT: f64 = -1e4;

/// Tolerance for members of the argmax set in [`compute_a`].
pub const ARGMAX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BrMethod {
    /// Every deterministic table over the reachable info points.
    Exhaustive,
    /// Single-agent NPG with the other agents frozen.
    NpgBr,
    /// Exhaustive when within budget, NPG otherwise.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BrConfig {
    pub method: BrMethod,
    /// Largest number of deterministic tables enumerated.
    pub exhaustive_budget: u64,
    pub npg_iterations: usize,
    /// NPG stops once no visited row has an advantage above this.
    pub npg_tolerance: f64,
}

impl Default for BrConfig {
    fn default() -> Self {
        Self {
            method: BrMethod::Auto,
            exhaustive_budget: 1 << 12,
            npg_iterations: 200,
            npg_tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BestResponse {
    pub agent: usize,
    pub table: PolicyTable,
    pub value: f64,
    /// `Exhaustive` or `NpgBr`, never `Auto`.
    pub method: BrMethod,
    pub evaluations: usize,
}

/// Info points of agent `i` that occur in the reachable chain.
fn reachable_points(oracle: &Oracle, i: usize) -> Vec<usize> {
    let st = &oracle.structure;
    let mut seen = vec![false; st.n_info_points(i)];
    for s in 0..st.n_states() {
        seen[st.info(i, s)] = true;
    }
    (0..seen.len()).filter(|&h| seen[h]).collect()
}

fn selector(oracle: &Oracle, i: usize) -> RewardSelector {
    if oracle.model.is_common_reward() {
        RewardSelector::Potential
    } else {
        RewardSelector::Agent(i)
    }
}

fn deterministic_table(i: usize, na: usize, n_points: usize, choice: &[(usize, usize)]) -> PolicyTable {
    let mut theta = vec![0.0; n_points * na];
    for h in 0..n_points {
        theta[h * na + 1..(h + 1) * na].iter_mut().for_each(|t| *t = DETERMINISTIC_LOGIT);
    }
    for &(h, a) in choice {
        let row = &mut theta[h * na..(h + 1) * na];
        row.iter_mut().for_each(|t| *t = DETERMINISTIC_LOGIT);
        row[a] = 0.0;
    }
    PolicyTable::from_theta(i, na, theta).expect("finite logits")
}

/// Number of deterministic tables of agent `i` over its reachable info points.
pub fn exhaustive_count(oracle: &Oracle, i: usize) -> u128 {
    let na = oracle.model.n_actions(i) as u128;
    let k = reachable_points(oracle, i).len() as u32;
    na.checked_pow(k).unwrap_or(u128::MAX)
}

fn exhaustive(oracle: &Oracle, policy: &JointPolicy, i: usize, budget: u64) -> Result<BestResponse> {
    let count = exhaustive_count(oracle, i);
    if count > budget as u128 {
        return Err(Error::Size {
            what: "exhaustive best response",
            required: count,
            cap: budget as u128,
        });
    }
    let na = oracle.model.n_actions(i);
    let points = reachable_points(oracle, i);
    let n_points = oracle.structure.n_info_points(i);
    let decode = |mut code: u64| -> Vec<(usize, usize)> {
        points
            .iter()
            .map(|&h| {
                let a = (code % na as u64) as usize;
                code /= na as u64;
                (h, a)
            })
            .collect()
    };
    let values: Vec<f64> = (0..count as u64)
        .into_par_iter()
        .map(|code| {
            let table = deterministic_table(i, na, n_points, &decode(code));
            oracle.agent_objective(&policy.with_agent(table), i)
        })
        .collect::<Result<_>>()?;
    let (best, value) = values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc });
    Ok(BestResponse {
        agent: i,
        table: deterministic_table(i, na, n_points, &decode(best as u64)),
        value,
        method: BrMethod::Exhaustive,
        evaluations: count as usize,
    })
}

/// Value and marginal advantage of agent `i` under `policy`.
fn agent_view(oracle: &Oracle, policy: &JointPolicy, i: usize) -> Result<(f64, AgentAdvantage)> {
    let chain = oracle.chain(policy)?;
    let occ = compute_occupancy(&chain, oracle.model.discount())?;
    let values = solve_values(&chain, oracle.model, selector(oracle, i))?;
    let adv = marginal_advantage(&chain, oracle.model, &values, &occ, i)?;
    Ok((exact_objective(&chain, &values)?, adv))
}

fn npg_br(oracle: &Oracle, policy: &JointPolicy, i: usize, cfg: &BrConfig) -> Result<BestResponse> {
    let mut current = policy.tables[i].clone();
    let mut best = (f64::NEG_INFINITY, current.clone());
    let mut evaluations = 0;
    for _ in 0..cfg.npg_iterations.max(1) {
        let (value, adv) = agent_view(oracle, &policy.with_agent(current.clone()), i)?;
        evaluations += 1;
        if value > best.0 {
            best = (value, current.clone());
        }
        let visited_max = (0..current.n_points())
            .filter(|&h| adv.occupancy[h] > 0.0)
            .flat_map(|h| adv.adv_row(h).iter().copied())
            .fold(0.0f64, f64::max);
        if visited_max < cfg.npg_tolerance {
            break;
        }
        // normalised step: the largest logit move per iteration is 10
        let scale = 10.0 / adv.max_abs();
        let theta: Vec<f64> = current
            .theta()
            .iter()
            .zip(&adv.adv)
            .map(|(t, a)| t + scale * a)
            .collect();
        current = PolicyTable::from_theta(i, current.n_actions(), theta)?;
    }
    // rounding to the greedy deterministic table removes the slow tail of
    // the softmax approach to a vertex
    let n_points = current.n_points();
    let greedy: Vec<(usize, usize)> = (0..n_points).map(|h| (h, current.greedy_action(h))).collect();
    let rounded = deterministic_table(i, current.n_actions(), n_points, &greedy);
    let value = oracle.agent_objective(&policy.with_agent(rounded.clone()), i)?;
    evaluations += 1;
    if value > best.0 {
        best = (value, rounded);
    }
    Ok(BestResponse {
        agent: i,
        table: best.1,
        value: best.0,
        method: BrMethod::NpgBr,
        evaluations,
    })
}

/// Best response of agent `i` within its finite-state-controller class,
/// the other agents held at `policy`.
pub fn best_response_fsc(oracle: &Oracle, policy: &JointPolicy, i: usize, cfg: &BrConfig) -> Result<BestResponse> {
    if i >= oracle.model.n_agents() {
        return Err(Error::Param(format!("agent {i} out of range")));
    }
    match cfg.method {
        BrMethod::Exhaustive => exhaustive(oracle, policy, i, cfg.exhaustive_budget),
        BrMethod::NpgBr => npg_br(oracle, policy, i, cfg),
        BrMethod::Auto => {
            if exhaustive_count(oracle, i) <= cfg.exhaustive_budget as u128 {
                exhaustive(oracle, policy, i, cfg.exhaustive_budget)
            } else {
                npg_br(oracle, policy, i, cfg)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct GapReport {
    /// `J_i(π)`.
    pub baseline: Vec<f64>,
    /// `J_i(best response, π_{−i})`.
    pub values: Vec<f64>,
    /// `max(values − baseline, 0)` per agent.
    pub per_agent: Vec<f64>,
    pub methods: Vec<BrMethod>,
    pub best_responses: Vec<PolicyTable>,
    pub ne_gap: f64,
    /// Some raw difference was negative and was clamped to 0. Within
    /// solver tolerance this is rounding; larger values mean the
    /// deterministic class missed a better stochastic table.
    pub clamped: Vec<f64>,
}

/// Solver-level tolerance below which a negative gap counts as rounding.
pub const GAP_TOL: f64 = 1e-9;

pub fn ne_gap(oracle: &Oracle, policy: &JointPolicy, cfg: &BrConfig) -> Result<GapReport> {
    let n = oracle.model.n_agents();
    let baseline = oracle.objective(policy)?.per_agent;
    let mut values = Vec::with_capacity(n);
    let mut per_agent = Vec::with_capacity(n);
    let mut methods = Vec::with_capacity(n);
    let mut best_responses = Vec::with_capacity(n);
    let mut clamped = Vec::new();
    for i in 0..n {
        let br = best_response_fsc(oracle, policy, i, cfg)?;
        let raw = br.value - baseline[i];
        if raw < 0.0 {
            clamped.push(raw);
        }
        values.push(br.value);
        per_agent.push(raw.max(0.0));
        methods.push(br.method);
        best_responses.push(br.table);
    }
    let ne_gap = per_agent.iter().copied().fold(0.0, f64::max);
    Ok(GapReport {
        baseline,
        values,
        per_agent,
        methods,
        best_responses,
        ne_gap,
        clamped,
    })
}

/// `a = min_i min_{ĥ_i : d>0} Σ_{u ∈ argmax Q_i(ĥ_i,·)} π_i(u|ĥ_i)`, with the
/// argmax set taken up to [`ARGMAX_TOL`].
pub fn compute_a(policy: &JointPolicy, advantages: &[AgentAdvantage]) -> f64 {
    let mut a = 1.0f64;
    for adv in advantages {
        let table = &policy.tables[adv.agent];
        for h in 0..table.n_points() {
            if adv.occupancy[h] <= 0.0 {
                continue;
            }
            a = a.min(argmax_mass(&table.probs(h), adv.q_row(h)));
        }
    }
    a
}

/// `π` mass on the `ARGMAX_TOL`-tied maximisers of `q`.
pub fn argmax_mass(pi: &[f64], q: &[f64]) -> f64 {
    let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    pi.iter()
        .zip(q)
        .filter(|(_, &v)| v >= best - ARGMAX_TOL)
        .map(|(p, _)| p)
        .sum()
}

/// Running-max surrogate `M̂ = max_t max_{i,ĥ_i : d>0} 1/d_i^{π^t}(ĥ_i)`.
/// It only sees visited policies, so it is a lower bound on the supremum
/// over all policies.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MHat {
    value: f64,
}

impl MHat {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, occ: &OccupancyMeasure) -> f64 {
        self.update_min_occupancy(occ.min_positive())
    }

    pub fn update_min_occupancy(&mut self, min_occupancy: f64) -> f64 {
        if min_occupancy > 0.0 {
            self.value = self.value.max(1.0 / min_occupancy);
        }
        self.value
    }

    pub fn value(&self) -> f64 {
        self.value
    }
}

/// [`MHat`] over a list of occupancy measures.
pub fn compute_m<'a>(occs: impl IntoIterator<Item = &'a OccupancyMeasure>) -> f64 {
    let mut m = MHat::new();
    for o in occs {
        m.update(o);
    }
    m.value()
}
