//! Explicit Fisher-preconditioned step compared with the closed-form update.

use crate::error::{Error, Result};
use crate::oracle::Oracle;
use crate::policy::{npg_step, softmax};
use nalgebra::{DMatrix, DVector};

/// Largest parameter count `|ĥ_i|·|U_i|` for which `F_i` is built densely.
pub const FISHER_MAX_ENTRIES: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct FisherReport {
    /// Max over rows of the L1 distance between the two induced policies.
    pub max_prob_deviation: f64,
    /// Max parameter difference; nonzero values along row-constant
    /// directions do not change the policy.
    pub max_theta_deviation: f64,
    /// `∇_{θ_i} J_i` from the score-function formula.
    pub gradient: Vec<f64>,
    pub rank: usize,
}

/// Builds `F_i = Σ_h d_i(h) (diag π_i(·|h) − π_i π_iᵀ)` as a block-diagonal
/// matrix, applies `θ_i + η F_i^† ∇J_i` and compares the induced policy with
/// the closed-form step.
pub fn fisher_consistency_check(
    oracle: &Oracle,
    policy: &crate::policy::JointPolicy,
    i: usize,
    eta: f64,
) -> Result<FisherReport> {
    let n = oracle.model.n_agents();
    if i >= n {
        return Err(Error::Param(format!("agent {i} out of range")));
    }
    let table = &policy.tables[i];
    let (np, na) = (table.n_points(), table.n_actions());
    let k = np * na;
    if k > FISHER_MAX_ENTRIES {
        return Err(Error::Size {
            what: "Fisher matrix",
            required: k as u128,
            cap: FISHER_MAX_ENTRIES as u128,
        });
    }
    let beta = oracle.model.discount();
    let eval = oracle.evaluate(policy)?;
    let adv = &eval.advantages[i];

    let mut f = DMatrix::<f64>::zeros(k, k);
    let mut grad = DVector::<f64>::zeros(k);
    for h in 0..np {
        let d = adv.occupancy[h];
        let pi = table.probs(h);
        let a = adv.adv_row(h);
        for u in 0..na {
            grad[h * na + u] = d * pi[u] * a[u] / (1.0 - beta);
            for v in 0..na {
                let diag = if u == v { pi[u] } else { 0.0 };
                f[(h * na + u, h * na + v)] = d * (diag - pi[u] * pi[v]);
            }
        }
    }
    let svd = f.svd(true, true);
    let tol = 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let pinv = svd.pseudo_inverse(tol).map_err(|e| Error::Contract(e.to_string()))?;
    let step = pinv * &grad;
    let theta: Vec<f64> = table.theta().iter().zip(step.iter()).map(|(t, s)| t + eta * s).collect();

    let (closed, _) = npg_step(policy, &eval.advantage_tables(), eta, beta)?;
    let closed = &closed.tables[i];
    let mut max_prob_deviation = 0.0f64;
    let mut max_theta_deviation = 0.0f64;
    for h in 0..np {
        let row = &theta[h * na..(h + 1) * na];
        let p = softmax(row);
        let q = closed.probs(h);
        max_prob_deviation = max_prob_deviation.max(p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum());
        for (a, b) in row.iter().zip(closed.theta_row(h)) {
            max_theta_deviation = max_theta_deviation.max((a - b).abs());
        }
    }
    Ok(FisherReport {
        max_prob_deviation,
        max_theta_deviation,
        gradient: grad.iter().copied().collect(),
        rank,
    })
}
