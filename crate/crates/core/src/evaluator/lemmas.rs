//! Numerical checks of the four inequalities behind the convergence bound.
//! Every check returns `residual = rhs-side slack`, which should be
//! non-negative up to solver tolerance.

use super::{ne_gap, BrConfig, GapReport};
use crate::error::{Error, Result};
use crate::oracle::{
    expected_joint_advantage, joint_info_advantage, AgentAdvantage, Evaluation, OccupancyMeasure, Oracle,
};
use crate::policy::{kl, npg_step_multiplicative, JointPolicy, Normalizers};

/// Truncation of the exact belief enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BeliefSettings {
    pub horizon: usize,
    pub node_cap: usize,
}

impl Default for BeliefSettings {
    fn default() -> Self {
        Self {
            horizon: 4,
            node_cap: 2_000_000,
        }
    }
}

/// `c = 2 φ̄ d_b / (1−β)²`, the belief-mismatch correction to the NE-gap.
pub fn gap_correction(phi_span: f64, d_b: f64, beta: f64) -> f64 {
    2.0 * phi_span * d_b / ((1.0 - beta) * (1.0 - beta))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lemma1Report {
    /// `Φ(π′) − Φ(π)`.
    pub lhs: f64,
    pub rhs: f64,
    /// `E_{d^{π′}, π′}[A_φ^π] / (1−β)`.
    pub advantage_term: f64,
    /// `2φ̄/(1−β) · (Σ_{k≤H} β^k E[TV_k] + d_b Σ_{k>H} β^k)`.
    pub belief_term: f64,
    pub d_b: f64,
    pub tail_weight: f64,
    pub residual: f64,
}

/// Potential difference between `new` and `old` against the advantage of
/// `old` under the occupancy of `new` plus the belief-mismatch term. Histories
/// are drawn under `new`; compressed beliefs come from `old`.
pub fn lemma1_check(
    oracle: &Oracle,
    new: &JointPolicy,
    old: &JointPolicy,
    beliefs: BeliefSettings,
) -> Result<Lemma1Report> {
    let beta = oracle.model.discount();
    let phi = oracle.model.phi_span();
    let e_old = oracle.evaluate(old)?;
    let chain_new = oracle.chain(new)?;
    let occ_new = crate::oracle::compute_occupancy(&chain_new, beta)?;
    let pot_new = crate::oracle::solve_values(&chain_new, oracle.model, crate::oracle::RewardSelector::Potential)?;
    let lhs = crate::oracle::exact_objective(&chain_new, &pot_new)? - e_old.objective.potential;

    let adv = joint_info_advantage(&e_old.chain, &e_old.potential_values, &e_old.occupancy)?;
    let advantage_term = expected_joint_advantage(&adv, &chain_new, &occ_new)? / (1.0 - beta);

    let table = oracle.beliefs(new, old, beliefs.horizon, beliefs.node_cap)?;
    let db = crate::oracle::distance_db(oracle.model, &table);
    let belief_term = 2.0 * phi / (1.0 - beta) * db.discounted_tv_bound();
    let rhs = advantage_term + belief_term;
    Ok(Lemma1Report {
        lhs,
        rhs,
        advantage_term,
        belief_term,
        d_b: db.d_b,
        tail_weight: db.tail_weight,
        residual: rhs - lhs,
    })
}

#[derive(Debug, Clone)]
pub struct Lemma2Report {
    pub gap: GapReport,
    /// `max_i max_{ĥ_i,u_i} A_i(ĥ_i,u_i)` over visited rows.
    pub max_advantage: f64,
    pub d_b: f64,
    pub correction: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

/// Largest advantage entry over rows with positive occupancy.
pub fn max_visited_advantage(advantages: &[AgentAdvantage]) -> f64 {
    advantages
        .iter()
        .flat_map(|a| {
            (0..a.occupancy.len())
                .filter(|&h| a.occupancy[h] > 0.0)
                .flat_map(move |h| a.adv_row(h).iter().copied())
        })
        .fold(0.0, f64::max)
}

/// NE-gap against the largest advantage plus the belief correction.
pub fn lemma2_check(
    oracle: &Oracle,
    policy: &JointPolicy,
    br: &BrConfig,
    beliefs: BeliefSettings,
) -> Result<Lemma2Report> {
    let beta = oracle.model.discount();
    let eval = oracle.evaluate(policy)?;
    let gap = ne_gap(oracle, policy, br)?;
    let d_b = oracle.distance_db(policy, beliefs.horizon, beliefs.node_cap)?.d_b;
    let max_advantage = max_visited_advantage(&eval.advantages);
    let correction = gap_correction(oracle.model.phi_span(), d_b, beta);
    let lhs = gap.ne_gap;
    let rhs = max_advantage / (1.0 - beta) + correction;
    Ok(Lemma2Report {
        gap,
        max_advantage,
        d_b,
        correction,
        lhs,
        rhs,
        residual: rhs - lhs,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lemma3Report {
    /// `E_{d^{t+1}, π^{t+1}}[A_φ^{π^t}] / (1−β)`.
    pub lhs: f64,
    pub kappa: f64,
    /// `Σ_j Σ_h d_j^{t+1}(h) KL(π_j^{t+1}(·|h) ‖ π_j^t(·|h))`.
    pub kl_per_agent: f64,
    /// The reading that charges every agent's KL sum to each of the `n` agents.
    pub kl_all_agents: f64,
    /// `Σ_i Σ_h d_i^{t+1}(h) log g_i(h)`.
    pub log_g: f64,
    pub rhs: f64,
    /// `lhs − rhs` with the per-agent KL reading.
    pub residual: f64,
    /// `lhs − rhs` with the `n`-fold KL reading.
    pub residual_all_agents: f64,
}

/// `κ = 1/η − 2nφ̄/(1−β)²`.
pub fn kappa(eta: f64, n: usize, phi_span: f64, beta: f64) -> f64 {
    1.0 / eta - 2.0 * n as f64 * phi_span / ((1.0 - beta) * (1.0 - beta))
}

/// `Σ_i Σ_h d_i(h) log g_i(h)`.
pub fn weighted_log_normalizers(occ: &OccupancyMeasure, normalizers: &Normalizers) -> f64 {
    occ.agent
        .iter()
        .zip(normalizers)
        .map(|(d, g)| d.iter().zip(g).map(|(d, g)| d * g.ln()).sum::<f64>())
        .sum()
}

const STEP_TOL: f64 = 1e-9;

/// One-step improvement of consecutive NPG iterates `prev → next`.
pub fn lemma3_check(
    oracle: &Oracle,
    prev: &Evaluation,
    next: &Evaluation,
    normalizers: &Normalizers,
    eta: f64,
) -> Result<Lemma3Report> {
    let beta = oracle.model.discount();
    let n = oracle.model.n_agents();
    if next.policy.iteration != prev.policy.iteration + 1 {
        return Err(Error::Contract(format!(
            "iterates {} and {} are not consecutive",
            prev.policy.iteration, next.policy.iteration
        )));
    }
    let (probs, g) = npg_step_multiplicative(&prev.policy, &prev.advantage_tables(), eta, beta)?;
    for (i, table) in next.policy.tables.iter().enumerate() {
        let dev = table
            .prob_table()
            .iter()
            .zip(&probs[i])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if dev > STEP_TOL {
            return Err(Error::Contract(format!(
                "agent {i} of iterate {} is not the NPG step of its predecessor (deviation {dev:e})",
                next.policy.iteration
            )));
        }
    }
    let g_dev = g
        .iter()
        .flatten()
        .zip(normalizers.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if g.iter().map(Vec::len).ne(normalizers.iter().map(Vec::len)) || g_dev > STEP_TOL {
        return Err(Error::Contract("normalizers do not belong to this step".into()));
    }

    let adv = joint_info_advantage(&prev.chain, &prev.potential_values, &prev.occupancy)?;
    let lhs = expected_joint_advantage(&adv, &next.chain, &next.occupancy)? / (1.0 - beta);
    let kl_per_agent: f64 = (0..n)
        .map(|j| {
            let (p_new, p_old) = (&next.policy.tables[j], &prev.policy.tables[j]);
            next.occupancy.agent[j]
                .iter()
                .enumerate()
                .filter(|(_, &d)| d > 0.0)
                .map(|(h, d)| d * kl(&p_new.probs(h), &p_old.probs(h)))
                .sum::<f64>()
        })
        .sum();
    let kl_all_agents = n as f64 * kl_per_agent;
    let log_g = weighted_log_normalizers(&next.occupancy, normalizers);
    let kappa = kappa(eta, n, oracle.model.phi_span(), beta);
    let rhs = kappa * kl_per_agent + log_g / eta;
    let rhs_all = kappa * kl_all_agents + log_g / eta;
    Ok(Lemma3Report {
        lhs,
        kappa,
        kl_per_agent,
        kl_all_agents,
        log_g,
        rhs,
        residual: lhs - rhs,
        residual_all_agents: lhs - rhs_all,
    })
}

/// Inputs of [`lemma4_check`]: the advantages of `π^t`, the normalizers of
/// its NPG step and the occupancy of `π^{t+1}`.
#[derive(Debug, Clone, Copy)]
pub struct Lemma4Input<'a> {
    pub advantages: &'a [AgentAdvantage],
    pub normalizers: &'a Normalizers,
    pub next_occupancy: &'a OccupancyMeasure,
    pub eta: f64,
    pub beta: f64,
    pub a: f64,
    pub m: f64,
    pub gap: f64,
    pub d_b: f64,
    pub phi_span: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lemma4Report {
    /// `Σ_i Σ_h d_i^{t+1}(h) log g_i(h)`.
    pub lhs: f64,
    /// `(aη²/3M) max(gap − c, 0)²`.
    pub rhs: f64,
    pub residual: f64,
    /// `min over visited rows of log g_i(h) − (a/3)(η max_u A_i(h,u)/(1−β))²`.
    pub pointwise_residual: f64,
}

/// Relative slack allowed when comparing `M` against `1/d^{t+1}`.
const M_TOL: f64 = 1e-9;

pub fn lemma4_check(input: &Lemma4Input) -> Result<Lemma4Report> {
    let Lemma4Input {
        advantages,
        normalizers,
        next_occupancy,
        eta,
        beta,
        a,
        m,
        gap,
        d_b,
        phi_span,
    } = *input;
    if !(eta > 0.0 && eta <= (1.0 - beta) * (1.0 - beta)) {
        return Err(Error::Contract(format!("step size {eta} exceeds (1−β)² = {}", (1.0 - beta).powi(2))));
    }
    if !(a > 0.0 && a <= 1.0) {
        return Err(Error::Contract(format!("a = {a} is outside (0, 1]")));
    }
    if next_occupancy.max_reciprocal() > m * (1.0 + M_TOL) {
        return Err(Error::Contract(format!(
            "M = {m} is below 1/d of the next iterate ({})",
            next_occupancy.max_reciprocal()
        )));
    }
    if advantages.len() != normalizers.len() {
        return Err(Error::Contract("one normalizer table per agent required".into()));
    }
    let lhs = weighted_log_normalizers(next_occupancy, normalizers);
    let excess = (gap - gap_correction(phi_span, d_b, beta)).max(0.0);
    let rhs = a * eta * eta / (3.0 * m) * excess * excess;

    let mut pointwise = f64::INFINITY;
    for (adv, g) in advantages.iter().zip(normalizers) {
        for (h, &gh) in g.iter().enumerate() {
            if adv.occupancy[h] <= 0.0 {
                continue;
            }
            let top = adv.adv_row(h).iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let bound = a / 3.0 * (eta * top / (1.0 - beta)).powi(2);
            pointwise = pointwise.min(gh.ln() - bound);
        }
    }
    Ok(Lemma4Report {
        lhs,
        rhs,
        residual: lhs - rhs,
        pointwise_residual: pointwise,
    })
}
