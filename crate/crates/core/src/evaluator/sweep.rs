//! Randomized sweeps of the four inequality checks.

use super::lemmas::{lemma1_check, lemma2_check, lemma3_check, lemma4_check, BeliefSettings, Lemma4Input};
use super::{compute_a, BrConfig, MHat};
use crate::error::Result;
use crate::oracle::Oracle;
use crate::policy::{init_policy, npg_step, InitMode};
use crate::trainer::default_step_size;
use rayon::prelude::*;
use serde::Serialize;

/// Residuals below this count as violations.
pub const RESIDUAL_TOL: f64 = -1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub instances: usize,
    pub seed: u64,
    /// Standard deviation of the random logits.
    pub init_scale: f64,
    pub beliefs: BeliefSettings,
    pub best_response: BrConfig,
    /// Step sizes cycle through these multiples of the theorem step size,
    /// capped at `(1−β)²`.
    pub step_fractions: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            instances: 50,
            seed: 0,
            init_scale: 1.0,
            beliefs: BeliefSettings {
                horizon: 3,
                node_cap: 2_000_000,
            },
            best_response: BrConfig::default(),
            step_fractions: vec![1.0, 0.5, 0.1],
        }
    }
}

/// Residuals of one random instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceResiduals {
    pub index: usize,
    pub eta: f64,
    pub lemma1: f64,
    pub lemma2: f64,
    pub lemma3: f64,
    /// KL-descent residual with every agent charged the KL sum of all agents.
    pub lemma3_all_agents: f64,
    pub lemma4: f64,
    pub lemma4_pointwise: f64,
    pub d_b: f64,
    pub ne_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualSummary {
    pub instances: usize,
    pub min_residual: f64,
    pub worst_instance: usize,
    pub violations: usize,
}

impl ResidualSummary {
    fn of(rows: &[InstanceResiduals], pick: impl Fn(&InstanceResiduals) -> f64) -> Self {
        let (worst_instance, min_residual) = rows
            .iter()
            .map(|r| (r.index, pick(r)))
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        Self {
            instances: rows.len(),
            min_residual,
            worst_instance,
            violations: rows.iter().filter(|r| pick(r) < RESIDUAL_TOL).count(),
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub lemma1: ResidualSummary,
    pub lemma2: ResidualSummary,
    pub lemma3: ResidualSummary,
    pub lemma3_all_agents: ResidualSummary,
    pub lemma4: ResidualSummary,
    pub lemma4_pointwise: ResidualSummary,
    pub instances: Vec<InstanceResiduals>,
}

impl SweepReport {
    /// All four inequalities hold on every instance. The `n`-fold KL reading
    /// of the KL-descent check is reported but not required.
    pub fn passed(&self) -> bool {
        [&self.lemma1, &self.lemma2, &self.lemma3, &self.lemma4, &self.lemma4_pointwise]
            .iter()
            .all(|s| s.passed())
    }
}

fn instance(oracle: &Oracle, cfg: &SweepConfig, index: usize) -> Result<InstanceResiduals> {
    let model = oracle.model;
    let beta = model.discount();
    let seed = cfg.seed.wrapping_add(2 * index as u64);
    let random = |s| init_policy(oracle.spec, model, &InitMode::Random { scale: cfg.init_scale, seed: s });
    let (p, q) = (random(seed)?, random(seed + 1)?);

    let l1 = lemma1_check(oracle, &q, &p, cfg.beliefs)?;
    let l2 = lemma2_check(oracle, &p, &cfg.best_response, cfg.beliefs)?;

    let fraction = cfg.step_fractions[index % cfg.step_fractions.len().max(1)];
    let eta = (fraction * default_step_size(model)?).min((1.0 - beta) * (1.0 - beta));
    let prev = oracle.evaluate(&p)?;
    let (next_policy, g) = npg_step(&p, &prev.advantage_tables(), eta, beta)?;
    let next = oracle.evaluate(&next_policy)?;
    let l3 = lemma3_check(oracle, &prev, &next, &g, eta)?;

    let mut m = MHat::new();
    m.update(&prev.occupancy);
    m.update(&next.occupancy);
    let l4 = lemma4_check(&Lemma4Input {
        advantages: &prev.advantages,
        normalizers: &g,
        next_occupancy: &next.occupancy,
        eta,
        beta,
        a: compute_a(&p, &prev.advantages),
        m: m.value(),
        gap: l2.gap.ne_gap,
        d_b: l2.d_b,
        phi_span: model.phi_span(),
    })?;
    Ok(InstanceResiduals {
        index,
        eta,
        lemma1: l1.residual,
        lemma2: l2.residual,
        lemma3: l3.residual,
        lemma3_all_agents: l3.residual_all_agents,
        lemma4: l4.residual,
        lemma4_pointwise: l4.pointwise_residual,
        d_b: l2.d_b,
        ne_gap: l2.gap.ne_gap,
    })
}

/// Runs every check on `cfg.instances` random policy pairs. Instances run in
/// parallel and are reported in index order.
pub fn lemma_sweep(oracle: &Oracle, cfg: &SweepConfig) -> Result<SweepReport> {
    let instances: Vec<InstanceResiduals> = (0..cfg.instances)
        .into_par_iter()
        .map(|k| instance(oracle, cfg, k))
        .collect::<Result<_>>()?;
    Ok(SweepReport {
        lemma1: ResidualSummary::of(&instances, |r| r.lemma1),
        lemma2: ResidualSummary::of(&instances, |r| r.lemma2),
        lemma3: ResidualSummary::of(&instances, |r| r.lemma3),
        lemma3_all_agents: ResidualSummary::of(&instances, |r| r.lemma3_all_agents),
        lemma4: ResidualSummary::of(&instances, |r| r.lemma4),
        lemma4_pointwise: ResidualSummary::of(&instances, |r| r.lemma4_pointwise),
        instances,
    })
}
