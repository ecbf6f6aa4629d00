//! Explicit finite-`T` form of the convergence bound.

use super::lemmas::gap_correction;
use crate::error::{Error, Result};
use crate::trainer::TrainRecord;
use serde::Serialize;
use std::collections::BTreeMap;

/// Constants entering the bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundConstants {
    pub n_agents: usize,
    pub beta: f64,
    pub phi_span: f64,
    pub eta: f64,
    pub a: f64,
    /// Running-max surrogate `M̂`; a lower bound on the supremum over all
    /// policies.
    pub m_hat: f64,
    /// Truncated-horizon belief distance.
    pub d_b: f64,
}

impl BoundConstants {
    /// `a` as the minimum over the records, `M̂` from the smallest logged
    /// occupancy and `d_b` as the largest logged value (0 when none is
    /// logged).
    pub fn from_records(records: &[TrainRecord], n_agents: usize, beta: f64, phi_span: f64, eta: f64) -> Self {
        let a = records.iter().map(|r| r.a).fold(1.0, f64::min);
        let min_occ = records.iter().map(|r| r.min_occupancy).fold(f64::INFINITY, f64::min);
        let d_b = records.iter().filter_map(|r| r.d_b).fold(0.0, f64::max);
        Self {
            n_agents,
            beta,
            phi_span,
            eta,
            a,
            m_hat: if min_occ.is_finite() && min_occ > 0.0 { 1.0 / min_occ } else { 1.0 },
            d_b,
        }
    }
}

/// `ε_FSC = 2√2 φ̄/(1−β) · √(d̃² + 3Mn d̃/(a(1−β)))` with `d̃ = d_b/(1−β)`.
pub fn eps_fsc(c: &BoundConstants) -> f64 {
    let one = 1.0 - c.beta;
    let dt = c.d_b / one;
    let inner = dt * dt + 3.0 * c.m_hat * c.n_agents as f64 * dt / (c.a * one);
    2.0 * 2f64.sqrt() * c.phi_span / one * inner.sqrt()
}

/// `√(12Mnφ̄²/(a(1−β)³T) + 2c² + 12Mnφ̄c/(a(1−β)²))` with the gap
/// correction `c`; the last two terms equal `ε_FSC²`.
pub fn explicit_rhs(c: &BoundConstants, t: usize) -> f64 {
    let one = 1.0 - c.beta;
    let mn = c.m_hat * c.n_agents as f64;
    let corr = gap_correction(c.phi_span, c.d_b, c.beta);
    let leading = 12.0 * mn * c.phi_span * c.phi_span / (c.a * one.powi(3) * t as f64);
    let residual = 2.0 * corr * corr + 12.0 * mn * c.phi_span * corr / (c.a * one * one);
    (leading + residual).sqrt()
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub constants: BoundConstants,
    pub iterations: usize,
    /// `(1/T) Σ_t NE-gap(π^t)`.
    pub lhs: f64,
    pub rhs: f64,
    pub eps_fsc: f64,
    pub holds: bool,
    /// Belief distances are truncated at a finite horizon; the bound is only
    /// as reliable as that truncation.
    pub d_b_truncated: bool,
    /// Minimum residual of each supporting inequality, filled in by callers
    /// that ran the checks.
    pub lemma_residuals: BTreeMap<String, f64>,
}

/// Compares the averaged NE-gap of a run against [`explicit_rhs`]. Every
/// record must carry a gap.
pub fn theorem_bound_check(records: &[TrainRecord], constants: BoundConstants) -> Result<BoundReport> {
    if records.is_empty() {
        return Err(Error::Contract("no training records".into()));
    }
    let gaps: Vec<f64> = records
        .iter()
        .map(|r| {
            r.ne_gap
                .ok_or_else(|| Error::Contract(format!("iteration {} has no NE-gap", r.iter)))
        })
        .collect::<Result<_>>()?;
    if !(constants.a > 0.0 && constants.a <= 1.0) {
        return Err(Error::Contract(format!("a = {} is outside (0, 1]", constants.a)));
    }
    let t = gaps.len();
    let lhs = gaps.iter().sum::<f64>() / t as f64;
    let rhs = explicit_rhs(&constants, t);
    Ok(BoundReport {
        constants,
        iterations: t,
        lhs,
        rhs,
        eps_fsc: eps_fsc(&constants),
        holds: lhs <= rhs,
        d_b_truncated: records.iter().any(|r| r.d_b.is_some()),
        lemma_residuals: BTreeMap::new(),
    })
}
