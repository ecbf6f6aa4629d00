//! The simultaneous internal-state NPG loop.

use crate::error::{Error, Result};
use crate::evaluator::{compute_a, ne_gap, BeliefSettings, BrConfig, MHat};
use crate::internal::InternalStateSpec;
use crate::mc::{mc_advantages, McConfig};
use crate::model::TabularPomg;
use crate::oracle::{Evaluation, Oracle};
use crate::policy::{init_policy, npg_step, InitMode, JointPolicy};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::time::Instant;

/// `(1−β)² / (2 n φ)`.
pub fn theorem_step_size(n_agents: usize, beta: f64, phi: f64) -> Result<f64> {
    if !(phi > 0.0 && phi.is_finite()) {
        return Err(Error::Param(format!(
            "the theorem step size needs a positive potential bound, got {phi}"
        )));
    }
    if n_agents == 0 || !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Param("need at least one agent and β in (0, 1)".into()));
    }
    Ok((1.0 - beta) * (1.0 - beta) / (2.0 * n_agents as f64 * phi))
}

/// Step size of the convergence bound with `φ̄ = φ_max − min(φ_min, 0)`, the potential bound
/// after shifting the potential to be non-negative.
pub fn default_step_size(model: &TabularPomg) -> Result<f64> {
    theorem_step_size(model.n_agents(), model.discount(), model.phi_span())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepSize {
    Theorem,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum AdvantageSource {
    Exact,
    /// One batch of rollouts per iteration shared by all agents.
    MonteCarlo { samples: usize, horizon: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub step: StepSize,
    pub advantages: AdvantageSource,
    pub init: InitMode,
    pub seed: u64,
    /// NE-gap and `d_b` are logged every `cadence` iterations and at the
    /// first and last iteration; 0 disables them.
    pub cadence: usize,
    pub beliefs: BeliefSettings,
    pub best_response: BrConfig,
    /// Largest augmented chain the oracle may enumerate.
    pub chain_cap: usize,
    pub record_wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            step: StepSize::Theorem,
            advantages: AdvantageSource::Exact,
            init: InitMode::Uniform,
            seed: 0,
            cadence: 10,
            beliefs: BeliefSettings::default(),
            best_response: BrConfig::default(),
            chain_cap: 1_000_000,
            record_wall_clock: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Param("iterations must be at least 1".into()));
        }
        if let StepSize::Fixed(eta) = self.step {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(Error::Param(format!("step size must be positive, got {eta}")));
            }
        }
        if let AdvantageSource::MonteCarlo { samples, horizon } = self.advantages {
            if samples == 0 || horizon == 0 {
                return Err(Error::Param("Monte-Carlo mode needs samples and horizon".into()));
            }
        }
        Ok(())
    }

    pub fn eta(&self, model: &TabularPomg) -> Result<f64> {
        match self.step {
            StepSize::Theorem => default_step_size(model),
            StepSize::Fixed(eta) => Ok(eta),
        }
    }

    fn logs_expensive(&self, t: usize) -> bool {
        self.cadence > 0 && (t.is_multiple_of(self.cadence) || t + 1 == self.iterations)
    }
}

/// Metrics of the policy `π^t` the update at iteration `t` started from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainRecord {
    pub iter: usize,
    pub potential: f64,
    pub per_agent: Vec<f64>,
    pub ne_gap: Option<f64>,
    pub a: f64,
    pub d_b: Option<f64>,
    pub min_occupancy: f64,
    pub max_abs_adv: Vec<f64>,
    pub wall_ms: Option<f64>,
}

impl TrainRecord {
    fn check_finite(&self) -> Result<()> {
        let scalars = [("potential", self.potential), ("a", self.a), ("min_occupancy", self.min_occupancy)];
        let optional = [("ne_gap", self.ne_gap), ("d_b", self.d_b)];
        let bad = scalars
            .iter()
            .find(|(_, v)| !v.is_finite())
            .map(|(w, _)| w.to_string())
            .or_else(|| optional.iter().find(|(_, v)| v.is_some_and(|v| !v.is_finite())).map(|(w, _)| w.to_string()))
            .or_else(|| self.per_agent.iter().any(|v| !v.is_finite()).then(|| "J_i".to_string()))
            .or_else(|| self.max_abs_adv.iter().any(|v| !v.is_finite()).then(|| "advantage".to_string()));
        match bad {
            Some(what) => Err(Error::NonFinite { iteration: self.iter, what }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// `π^T`.
    pub policy: JointPolicy,
    /// One record per iteration `t = 0..T−1`.
    pub records: Vec<TrainRecord>,
    pub eta: f64,
    /// `M̂` over `π^0, …, π^T`.
    pub m_hat: f64,
    pub final_potential: f64,
}

/// Runs `T` simultaneous NPG steps from the configured initial policy.
pub fn train(model: &TabularPomg, spec: &InternalStateSpec, config: &TrainConfig) -> Result<TrainOutcome> {
    let policy = init_policy(spec, model, &config.init)?;
    train_from(model, spec, config, policy)
}

/// Like [`train`], starting from `policy`.
pub fn train_from(
    model: &TabularPomg,
    spec: &InternalStateSpec,
    config: &TrainConfig,
    mut policy: JointPolicy,
) -> Result<TrainOutcome> {
    config.validate()?;
    let eta = config.eta(model)?;
    let beta = model.discount();
    let oracle = Oracle::new(model, spec, config.chain_cap)?;
    let mut m_hat = MHat::new();
    let mut records = Vec::with_capacity(config.iterations);

    for t in 0..config.iterations {
        let start = Instant::now();
        let eval = oracle.evaluate(&policy)?;
        debug_assert_eq!(eval.stamp(), policy.stamp());
        m_hat.update(&eval.occupancy);

        let advantages = match config.advantages {
            AdvantageSource::Exact => eval.advantage_tables(),
            AdvantageSource::MonteCarlo { samples, horizon } => {
                let seed = config.seed.wrapping_add((t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let cfg = McConfig::new(model, samples, horizon, seed);
                mc_advantages(model, spec, &policy, &cfg)?
                    .into_iter()
                    .map(|a| a.adv)
                    .collect()
            }
        };

        let (ne, d_b) = if config.logs_expensive(t) {
            let gap = ne_gap(&oracle, &policy, &config.best_response)?.ne_gap;
            let d_b = oracle
                .distance_db(&policy, config.beliefs.horizon, config.beliefs.node_cap)?
                .d_b;
            (Some(gap), Some(d_b))
        } else {
            (None, None)
        };
        let mut record = metrics(t, &eval, ne, d_b);
        let (next, _) = npg_step(&policy, &advantages, eta, beta)?;
        record.wall_ms = config
            .record_wall_clock
            .then(|| start.elapsed().as_secs_f64() * 1e3);
        record.check_finite()?;
        records.push(record);
        policy = next;
    }

    let last = oracle.evaluate(&policy)?;
    m_hat.update(&last.occupancy);
    if !last.objective.potential.is_finite() {
        return Err(Error::NonFinite {
            iteration: config.iterations,
            what: "potential".into(),
        });
    }
    Ok(TrainOutcome {
        policy,
        records,
        eta,
        m_hat: m_hat.value(),
        final_potential: last.objective.potential,
    })
}

/// Exact metrics of one evaluated policy.
pub fn metrics(t: usize, eval: &Evaluation, ne_gap: Option<f64>, d_b: Option<f64>) -> TrainRecord {
    TrainRecord {
        iter: t,
        potential: eval.objective.potential,
        per_agent: eval.objective.per_agent.clone(),
        ne_gap,
        a: compute_a(&eval.policy, &eval.advantages),
        d_b,
        min_occupancy: eval.occupancy.min_positive(),
        max_abs_adv: eval.max_abs_advantage(),
        wall_ms: None,
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| format!("{v:e}")).unwrap_or_default()
}

/// Writes records as CSV. `max_abs_adv` is the maximum over agents.
pub fn write_csv<W: Write>(mut out: W, records: &[TrainRecord]) -> Result<()> {
    let n = records.first().map_or(0, |r| r.per_agent.len());
    let mut header = vec!["iter".to_string(), "potential".to_string()];
    header.extend((0..n).map(|k| format!("j_agent_{k}")));
    header.extend(["ne_gap", "a", "d_b", "min_occupancy", "max_abs_adv", "wall_ms"].map(String::from));
    writeln!(out, "{}", header.join(","))?;
    for r in records {
        let mut row = vec![r.iter.to_string(), format!("{:e}", r.potential)];
        row.extend(r.per_agent.iter().map(|v| format!("{v:e}")));
        row.push(cell(r.ne_gap));
        row.push(format!("{:e}", r.a));
        row.push(cell(r.d_b));
        row.push(format!("{:e}", r.min_occupancy));
        row.push(format!("{:e}", r.max_abs_adv.iter().copied().fold(0.0, f64::max)));
        row.push(cell(r.wall_ms));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
