//! Tabular softmax policies over information points and the closed-form
//! natural policy gradient step.

use crate::error::{Error, Result};
use crate::internal::{InternalStateSpec, SpecConfig};
use crate::model::TabularPomg;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::hash::{Hash, Hasher};

/// Softmax parameters of one agent, row-major over `(info point, action)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    pub agent: usize,
    n_actions: usize,
    theta: Vec<f64>,
}

/// Numerically stable softmax of one parameter row.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = row.iter().map(|&t| (t - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

impl PolicyTable {
    pub fn uniform(agent: usize, n_points: usize, n_actions: usize) -> Self {
        Self {
            agent,
            n_actions,
            theta: vec![0.0; n_points * n_actions],
        }
    }

    pub fn from_theta(agent: usize, n_actions: usize, theta: Vec<f64>) -> Result<Self> {
        if n_actions == 0 || !theta.len().is_multiple_of(n_actions) {
            return Err(Error::Param("theta length is not a multiple of the action count".into()));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::Param("theta contains non-finite entries".into()));
        }
        Ok(Self {
            agent,
            n_actions,
            theta,
        })
    }

    /// Builds a table reproducing the given probability rows via `θ = ln p`.
    pub fn from_probabilities(agent: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let n_actions = rows.first().map_or(0, Vec::len);
        let mut theta = Vec::with_capacity(rows.len() * n_actions);
        for (h, row) in rows.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if row.len() != n_actions
                || row.iter().any(|&p| !(p > 0.0 && p <= 1.0))
                || (sum - 1.0).abs() > crate::PROB_TOL
            {
                return Err(Error::Param(format!(
                    "row {h} of agent {agent} is not a strictly positive distribution"
                )));
            }
            theta.extend(row.iter().map(|p| p.ln()));
        }
        Self::from_theta(agent, n_actions, theta)
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_points(&self) -> usize {
        self.theta.len() / self.n_actions
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_row(&self, h: usize) -> &[f64] {
        &self.theta[h * self.n_actions..(h + 1) * self.n_actions]
    }

    pub fn theta_row_mut(&mut self, h: usize) -> &mut [f64] {
        &mut self.theta[h * self.n_actions..(h + 1) * self.n_actions]
    }

    /// `π_i(· | ĥ)` for flat info-point index `h`.
    pub fn probs(&self, h: usize) -> Vec<f64> {
        softmax(self.theta_row(h))
    }

    /// Probability rows for every information point, row-major.
    pub fn prob_table(&self) -> Vec<f64> {
        (0..self.n_points()).flat_map(|h| self.probs(h)).collect()
    }

    /// Most likely action, lowest index on ties.
    pub fn greedy_action(&self, h: usize) -> usize {
        argmax(self.theta_row(h))
    }
}

/// Index of the maximum, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

pub fn action_probabilities(policy: &PolicyTable, h: usize) -> Vec<f64> {
    policy.probs(h)
}

/// One policy table per agent plus the NPG iteration counter.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPolicy {
    pub tables: Vec<PolicyTable>,
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitMode {
    Uniform,
    /// Probability rows per agent, indexed like the info points.
    Given(Vec<Vec<Vec<f64>>>),
    /// `θ ~ N(0, scale²)` i.i.d., from `seed`.
    Random { scale: f64, seed: u64 },
}

impl JointPolicy {
    pub fn n_agents(&self) -> usize {
        self.tables.len()
    }

    /// Stamp identifying the exact parameters; values computed under one
    /// policy carry its stamp.
    pub fn stamp(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for t in &self.tables {
            t.agent.hash(&mut h);
            t.n_actions.hash(&mut h);
            for v in &t.theta {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    /// Returns a copy with agent `i`'s table replaced.
    pub fn with_agent(&self, table: PolicyTable) -> Self {
        let mut out = self.clone();
        let i = table.agent;
        out.tables[i] = table;
        out
    }

    /// Agents whose tables differ between `self` and `other`.
    pub fn differing_agents(&self, other: &JointPolicy) -> Vec<usize> {
        (0..self.n_agents())
            .filter(|&i| self.tables[i].theta != other.tables[i].theta)
            .collect()
    }
}

pub fn init_policy(spec: &InternalStateSpec, model: &TabularPomg, mode: &InitMode) -> Result<JointPolicy> {
    let n = model.n_agents();
    if spec.n_agents() != n {
        return Err(Error::Param("spec and model disagree on the agent count".into()));
    }
    let tables = match mode {
        InitMode::Uniform => (0..n)
            .map(|i| PolicyTable::uniform(i, spec.n_info_points(i), model.n_actions(i)))
            .collect(),
        InitMode::Given(rows) => {
            if rows.len() != n {
                return Err(Error::Param("one probability table per agent required".into()));
            }
            rows.iter()
                .enumerate()
                .map(|(i, r)| {
                    if r.len() != spec.n_info_points(i) {
                        return Err(Error::Param(format!(
                            "agent {i}: expected {} rows, got {}",
                            spec.n_info_points(i),
                            r.len()
                        )));
                    }
                    let t = PolicyTable::from_probabilities(i, r)?;
                    if t.n_actions() != model.n_actions(i) {
                        return Err(Error::Param(format!("agent {i}: wrong action count")));
                    }
                    Ok(t)
                })
                .collect::<Result<Vec<_>>>()?
        }
        InitMode::Random { scale, seed } => {
            if !(scale.is_finite() && *scale >= 0.0) {
                return Err(Error::Param("random init scale must be finite and >= 0".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let normal = Normal::new(0.0, *scale).map_err(|e| Error::Param(e.to_string()))?;
            (0..n)
                .map(|i| {
                    let len = spec.n_info_points(i) * model.n_actions(i);
                    let theta = (0..len).map(|_| normal.sample(&mut rng)).collect();
                    PolicyTable::from_theta(i, model.n_actions(i), theta)
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    Ok(JointPolicy {
        tables,
        iteration: 0,
    })
}

/// Per-agent normalizers `g_i(ĥ_i)`, one entry per info point.
pub type Normalizers = Vec<Vec<f64>>;

fn check_advantages(policy: &JointPolicy, advantages: &[Vec<f64>], eta: f64, beta: f64) -> Result<()> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::Contract(format!("step size must be positive, got {eta}")));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Contract("discount must lie in (0, 1)".into()));
    }
    if advantages.len() != policy.n_agents() {
        return Err(Error::Contract("one advantage table per agent required".into()));
    }
    for (t, a) in policy.tables.iter().zip(advantages) {
        if a.len() != t.theta.len() {
            return Err(Error::Contract(format!(
                "agent {} advantage table has {} entries, expected {}",
                t.agent,
                a.len(),
                t.theta.len()
            )));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract(format!("agent {} has a non-finite advantage", t.agent)));
        }
    }
    Ok(())
}

/// Multiplicative form: `π'(u|ĥ) = π(u|ĥ)·exp(η A/(1−β)) / g(ĥ)`. Returns the
/// new probability tables and the normalizers.
pub fn npg_step_multiplicative(
    policy: &JointPolicy,
    advantages: &[Vec<f64>],
    eta: f64,
    beta: f64,
) -> Result<(Vec<Vec<f64>>, Normalizers)> {
    check_advantages(policy, advantages, eta, beta)?;
    let c = eta / (1.0 - beta);
    let mut probs = Vec::with_capacity(policy.n_agents());
    let mut norms = Vec::with_capacity(policy.n_agents());
    for (t, adv) in policy.tables.iter().zip(advantages) {
        let na = t.n_actions;
        let mut p_all = Vec::with_capacity(t.theta.len());
        let mut g_all = Vec::with_capacity(t.n_points());
        for h in 0..t.n_points() {
            let p = t.probs(h);
            let a = &adv[h * na..(h + 1) * na];
            let w: Vec<f64> = p.iter().zip(a).map(|(&p, &a)| p * (c * a).exp()).collect();
            let g: f64 = w.iter().sum();
            p_all.extend(w.iter().map(|v| v / g));
            g_all.push(g);
        }
        probs.push(p_all);
        norms.push(g_all);
    }
    Ok((probs, norms))
}

/// Simultaneous NPG step for all agents:
/// `θ_{ĥ,u} ← θ_{ĥ,u} + η A(ĥ,u)/(1−β)`. Also returns the normalizers
/// `g_i(ĥ_i) = Σ_u π_i(u|ĥ_i) exp(η A_i(ĥ_i,u)/(1−β))`.
pub fn npg_step(
    policy: &JointPolicy,
    advantages: &[Vec<f64>],
    eta: f64,
    beta: f64,
) -> Result<(JointPolicy, Normalizers)> {
    let (_, norms) = npg_step_multiplicative(policy, advantages, eta, beta)?;
    let c = eta / (1.0 - beta);
    let tables = policy
        .tables
        .iter()
        .zip(advantages)
        .map(|(t, adv)| {
            let theta = t.theta.iter().zip(adv).map(|(&th, &a)| th + c * a).collect();
            PolicyTable {
                agent: t.agent,
                n_actions: t.n_actions,
                theta,
            }
        })
        .collect();
    Ok((
        JointPolicy {
            tables,
            iteration: policy.iteration + 1,
        },
        norms,
    ))
}

/// `KL(p(·|h) ‖ q(·|h))`.
pub fn policy_kl(p: &PolicyTable, q: &PolicyTable, h: usize) -> f64 {
    kl(&p.probs(h), &q.probs(h))
}

pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a / b).ln())
        .sum::<f64>()
        .max(0.0)
}

/// JSON form of one agent's table.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentPolicyFile {
    pub agent: usize,
    pub info_point_labels: Vec<String>,
    /// `[info point][action]`
    pub theta: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyFile {
    pub internal_state: SpecConfig,
    pub iteration: usize,
    pub agents: Vec<AgentPolicyFile>,
}

impl PolicyFile {
    pub fn from_policy(policy: &JointPolicy, spec: &InternalStateSpec, model: &TabularPomg) -> Self {
        let agents = policy
            .tables
            .iter()
            .map(|t| AgentPolicyFile {
                agent: t.agent,
                info_point_labels: spec
                    .enumerate_info_points(t.agent)
                    .iter()
                    .map(|p| spec.info_label(model, p))
                    .collect(),
                theta: t.theta.chunks(t.n_actions).map(<[f64]>::to_vec).collect(),
            })
            .collect();
        Self {
            internal_state: spec.config(),
            iteration: policy.iteration,
            agents,
        }
    }

    /// Restores the policy, checking it against the internal-state spec it will run under.
    pub fn into_policy(self, spec: &InternalStateSpec, model: &TabularPomg) -> Result<JointPolicy> {
        if self.internal_state != spec.config() {
            return Err(Error::Param(format!(
                "policy was trained with internal state {:?}, config uses {:?}",
                self.internal_state,
                spec.config()
            )));
        }
        if self.agents.len() != model.n_agents() {
            return Err(Error::Param("policy agent count does not match the model".into()));
        }
        let tables = self
            .agents
            .into_iter()
            .enumerate()
            .map(|(i, a)| {
                if a.agent != i || a.theta.len() != spec.n_info_points(i) {
                    return Err(Error::Param(format!(
                        "agent {i}: expected {} info points, got {}",
                        spec.n_info_points(i),
                        a.theta.len()
                    )));
                }
                let na = model.n_actions(i);
                if a.theta.iter().any(|r| r.len() != na) {
                    return Err(Error::Param(format!("agent {i}: rows must have {na} actions")));
                }
                PolicyTable::from_theta(i, na, a.theta.concat())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(JointPolicy {
            tables,
            iteration: self.iteration,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::internal::make_window_spec;
    use crate::model::{build_mabc, build_matiger, EnvParams};
    use proptest::prelude::*;

    fn single(theta: Vec<f64>) -> JointPolicy {
        let na = theta.len();
        JointPolicy {
            tables: vec![PolicyTable::from_theta(0, na, theta).unwrap()],
            iteration: 0,
        }
    }

    #[test]
    fn uniform_rows() {
        let m = build_matiger(&EnvParams::matiger()).unwrap();
        let s = make_window_spec(&m, 1, 1 << 20).unwrap();
        let p = init_policy(&s, &m, &InitMode::Uniform).unwrap();
        for t in &p.tables {
            for h in 0..t.n_points() {
                let row = t.probs(h);
                assert!(row.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn given_rows_reproduced() {
        let m = build_mabc(&EnvParams::mabc()).unwrap();
        let s = make_window_spec(&m, 0, 1 << 20).unwrap();
        let rows = vec![vec![vec![0.9, 0.1], vec![0.3, 0.7]]; 2];
        let p = init_policy(&s, &m, &InitMode::Given(rows)).unwrap();
        let got = p.tables[1].probs(0);
        assert!((got[0] - 0.9).abs() < 1e-12 && (got[1] - 0.1).abs() < 1e-12);
        let bad = vec![vec![vec![0.9, 0.2], vec![0.5, 0.5]]; 2];
        assert!(matches!(
            init_policy(&s, &m, &InitMode::Given(bad)),
            Err(Error::Param(_))
        ));
    }

    #[test]
    fn softmax_cases() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        let big = softmax(&[1000.0, 0.0]);
        assert_eq!(big[0], 1.0);
        assert!(big[1] >= 0.0 && big[1] < 1e-300);
        for c in [-50.0, 0.0, 7.5, 300.0] {
            let p = softmax(&[c, c + 3f64.ln()]);
            assert!((p[0] - 0.25).abs() < 1e-12 && (p[1] - 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_advantage_is_fixpoint() {
        let p = single(vec![0.3, -1.2, 0.5]);
        let (next, g) = npg_step(&p, &[vec![0.0; 3]], 0.1, 0.9).unwrap();
        assert_eq!(next.tables[0].theta(), p.tables[0].theta());
        assert_eq!(g, vec![vec![1.0]]);
        assert_eq!(next.iteration, 1);
    }

    #[test]
    fn two_action_step_arithmetic() {
        let p = single(vec![0.0, 0.0]);
        // η/(1−β) = 1
        let (next, g) = npg_step(&p, &[vec![1.0, -1.0]], 0.5, 0.5).unwrap();
        let probs = next.tables[0].probs(0);
        assert!((probs[0] - 0.880797077977882).abs() < 1e-12);
        assert!((probs[1] - 0.119202922022118).abs() < 1e-12);
        let e = std::f64::consts::E;
        assert!((g[0][0] - (e + 1.0 / e) / 2.0).abs() < 1e-12);
        assert!((g[0][0] - 1.5430806348152437).abs() < 1e-12);
    }

    #[test]
    fn constant_shift_of_advantage() {
        let p = single(vec![0.2, -0.4, 1.0]);
        let a = vec![0.5, -0.3, 0.1];
        let shifted: Vec<f64> = a.iter().map(|v| v + 2.0).collect();
        let (eta, beta) = (0.05, 0.9);
        let (p1, g1) = npg_step(&p, &[a], eta, beta).unwrap();
        let (p2, g2) = npg_step(&p, &[shifted], eta, beta).unwrap();
        for (x, y) in p1.tables[0].probs(0).iter().zip(p2.tables[0].probs(0)) {
            assert!((x - y).abs() < 1e-12);
        }
        let scale = (eta * 2.0 / (1.0 - beta)).exp();
        assert!((g2[0][0] - g1[0][0] * scale).abs() < 1e-12);
    }

    #[test]
    fn npg_rejects_bad_inputs() {
        let p = single(vec![0.0, 0.0]);
        assert!(matches!(
            npg_step(&p, &[vec![f64::NAN, 0.0]], 0.1, 0.9),
            Err(Error::Contract(_))
        ));
        assert!(npg_step(&p, &[vec![0.0, 0.0]], 0.0, 0.9).is_err());
        assert!(npg_step(&p, &[vec![0.0]], 0.1, 0.9).is_err());
    }

    #[test]
    fn kl_values() {
        let p = single(vec![0.0, 0.0]).tables.remove(0);
        let q = single(vec![0.0, 3f64.ln()]).tables.remove(0);
        assert_eq!(policy_kl(&p, &p, 0), 0.0);
        let want = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((policy_kl(&p, &q, 0) - want).abs() < 1e-12);
        assert!((want - 0.14384103622589045).abs() < 1e-12);
    }

    #[test]
    fn pinsker_on_random_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let normal = Normal::new(0.0, 2.0).unwrap();
        for _ in 0..1000 {
            let k = 2 + (normal.sample(&mut rng) as f64).abs() as usize % 5;
            let a: Vec<f64> = (0..k).map(|_| normal.sample(&mut rng)).collect();
            let b: Vec<f64> = (0..k).map(|_| normal.sample(&mut rng)).collect();
            let (p, q) = (softmax(&a), softmax(&b));
            let l1: f64 = p.iter().zip(&q).map(|(x, y)| (x - y).abs()).sum();
            assert!(kl(&p, &q) >= 0.5 * l1 * l1 - 1e-12);
        }
    }

    #[test]
    fn policy_json_round_trip_is_bit_exact() {
        let m = build_mabc(&EnvParams::mabc()).unwrap();
        let s = make_window_spec(&m, 1, 1 << 20).unwrap();
        let p = init_policy(&s, &m, &InitMode::Random { scale: 1.3, seed: 4 }).unwrap();
        let text = PolicyFile::from_policy(&p, &s, &m).to_json().unwrap();
        let back: PolicyFile = serde_json::from_str(&text).unwrap();
        let q = back.into_policy(&s, &m).unwrap();
        assert_eq!(p, q);
        let s2 = make_window_spec(&m, 2, 1 << 20).unwrap();
        let back: PolicyFile = serde_json::from_str(&text).unwrap();
        assert!(back.into_policy(&s2, &m).is_err());
    }

    proptest! {
        #[test]
        fn both_update_forms_agree(
            theta in proptest::collection::vec(-5.0f64..5.0, 12),
            adv in proptest::collection::vec(-10.0f64..10.0, 12),
            eta in 0.001f64..0.5,
            beta in 0.1f64..0.99,
        ) {
            let p = JointPolicy { tables: vec![PolicyTable::from_theta(0, 3, theta).unwrap()], iteration: 0 };
            let (next, _) = npg_step(&p, &[adv.clone()], eta, beta).unwrap();
            let (mult, _) = npg_step_multiplicative(&p, &[adv.clone()], eta, beta).unwrap();
            for (a, b) in next.tables[0].prob_table().iter().zip(&mult[0]) {
                prop_assert!((a - b).abs() < 1e-10);
            }
            // tilt toward larger advantages
            for h in 0..4 {
                let p0 = p.tables[0].probs(h);
                let p1 = next.tables[0].probs(h);
                for a in 0..3 {
                    for b in 0..3 {
                        if adv[h * 3 + a] > adv[h * 3 + b] + 1e-9 {
                            prop_assert!(p1[a] / p0[a] > p1[b] / p0[b]);
                        }
                    }
                }
            }
        }
    }
}
