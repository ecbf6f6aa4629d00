//! Monte-Carlo rollouts and return/advantage estimators.
//!
//! Trajectories are split into at most [`MAX_BLOCKS`] blocks whose layout
//! depends only on the sample count. Block `b` draws from ChaCha stream `b`
//! of the seed and blocks are merged in index order, so every estimate is a
//! function of `(seed, config)` alone, whatever the thread count.

use crate::error::{Error, Result};
use crate::internal::InternalStateSpec;
use crate::model::TabularPomg;
use crate::policy::JointPolicy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::io::Write;

pub const MAX_BLOCKS: usize = 128;

fn sample_sparse<R: Rng>(rng: &mut R, row: &[(usize, f64)]) -> usize {
    let mut t = rng.gen::<f64>();
    for &(k, p) in row {
        if t < p {
            return k;
        }
        t -= p;
    }
    row.last().map(|&(k, _)| k).unwrap_or(0)
}

fn sample_dense<R: Rng>(rng: &mut R, row: &[f64]) -> usize {
    let mut t = rng.gen::<f64>();
    for (k, &p) in row.iter().enumerate() {
        if t < p {
            return k;
        }
        t -= p;
    }
    // rounding left some mass: fall back to the last supported action
    row.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn block_stream(seed: u64, block: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(block as u64);
    rng
}

fn blocks(n: usize) -> Vec<std::ops::Range<usize>> {
    let nb = n.clamp(1, MAX_BLOCKS);
    (0..nb).map(|b| b * n / nb..(b + 1) * n / nb).collect()
}

/// One sampled step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Step {
    pub x: usize,
    pub y: Vec<usize>,
    pub w: usize,
    pub l: Vec<usize>,
    pub u: Vec<usize>,
    pub rewards: Vec<f64>,
    pub potential: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub seed: u64,
    pub stream: u64,
    pub horizon: usize,
    pub steps: Vec<Step>,
    /// `Σ_k β^k r_i(k)` per agent.
    pub returns: Vec<f64>,
    pub potential_return: f64,
}

/// Reusable per-rollout buffers, filled by [`Simulator::run`].
struct Simulator<'a> {
    model: &'a TabularPomg,
    spec: &'a InternalStateSpec,
    probs: Vec<Vec<f64>>,
    /// `[k][i]` info point and action.
    info: Vec<Vec<usize>>,
    action: Vec<Vec<usize>>,
    reward: Vec<Vec<f64>>,
    potential: Vec<f64>,
    y: Vec<usize>,
    l: Vec<usize>,
}

impl<'a> Simulator<'a> {
    fn new(model: &'a TabularPomg, spec: &'a InternalStateSpec, policy: &JointPolicy) -> Self {
        let n = model.n_agents();
        Self {
            model,
            spec,
            probs: policy.tables.iter().map(|t| t.prob_table()).collect(),
            info: Vec::new(),
            action: Vec::new(),
            reward: Vec::new(),
            potential: Vec::new(),
            y: vec![0; n],
            l: vec![0; n],
        }
    }

    /// Simulates `len` steps; `record` receives every step when present.
    fn run<R: Rng>(&mut self, rng: &mut R, len: usize, mut record: Option<&mut Vec<Step>>) {
        let m = self.model;
        let spec = self.spec;
        let n = m.n_agents();
        self.info.resize(len, vec![0; n]);
        self.action.resize(len, vec![0; n]);
        self.reward.resize(len, vec![0.0; n]);
        self.potential.resize(len, 0.0);
        let mut x = sample_dense(rng, m.initial_state_dist());
        for i in 0..n {
            self.y[i] = sample_sparse(rng, m.initial_observation(i, x));
            self.l[i] = spec.initial_local(i);
        }
        let mut w = spec.initial_shared();
        let mut ua = vec![0; n];
        for k in 0..len {
            for i in 0..n {
                let h = spec.info_index_at(i, w, self.l[i], self.y[i]);
                let na = m.n_actions(i);
                ua[i] = sample_dense(rng, &self.probs[i][h * na..(h + 1) * na]);
                self.info[k][i] = h;
                self.action[k][i] = ua[i];
            }
            let u = m.joint_index(&ua);
            for i in 0..n {
                self.reward[k][i] = m.reward(i, x, u);
            }
            self.potential[k] = m.potential(x, u);
            if let Some(steps) = record.as_deref_mut() {
                steps.push(Step {
                    x,
                    y: self.y.clone(),
                    w,
                    l: self.l.clone(),
                    u: ua.clone(),
                    rewards: self.reward[k].clone(),
                    potential: self.potential[k],
                });
            }
            let w_next = spec.shared_next(w, &self.y, &ua);
            for i in 0..n {
                self.l[i] = spec.local_next(i, self.l[i], self.y[i], ua[i]);
            }
            w = w_next;
            x = sample_sparse(rng, m.transition(x, u));
            for i in 0..n {
                self.y[i] = sample_sparse(rng, m.observation(i, x, u));
            }
        }
    }
}

/// Samples one trajectory of `horizon` steps from stream `stream` of `seed`.
pub fn rollout(
    model: &TabularPomg,
    spec: &InternalStateSpec,
    policy: &JointPolicy,
    seed: u64,
    stream: u64,
    horizon: usize,
) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(Error::Param("rollout horizon must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut sim = Simulator::new(model, spec, policy);
    let mut steps = Vec::with_capacity(horizon);
    sim.run(&mut rng, horizon, Some(&mut steps));
    let beta = model.discount();
    let n = model.n_agents();
    let mut returns = vec![0.0; n];
    let mut potential_return = 0.0;
    let mut disc = 1.0;
    for s in &steps {
        for i in 0..n {
            returns[i] += disc * s.rewards[i];
        }
        potential_return += disc * s.potential;
        disc *= beta;
    }
    Ok(Trajectory {
        seed,
        stream,
        horizon,
        steps,
        returns,
        potential_return,
    })
}

/// Writes trajectories as JSON lines.
pub fn write_trajectories<W: Write>(mut out: W, trajectories: &[Trajectory]) -> Result<()> {
    for t in trajectories {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// A Monte-Carlo point estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub samples: usize,
    /// `β^H·max|r|/(1−β)`: worst-case effect of truncating at `H`.
    pub bias_bound: f64,
}

fn estimate(values: &[f64], bias_bound: f64) -> McEstimate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    McEstimate {
        mean,
        std_err: (var / n).sqrt(),
        samples: values.len(),
        bias_bound,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McObjective {
    pub per_agent: Vec<McEstimate>,
    pub potential: McEstimate,
}

/// Mean discounted return of horizon-`horizon` rollouts.
pub fn mc_objective(
    model: &TabularPomg,
    spec: &InternalStateSpec,
    policy: &JointPolicy,
    samples: usize,
    horizon: usize,
    seed: u64,
) -> Result<McObjective> {
    if samples < 2 {
        return Err(Error::Param("at least two samples are needed for a standard error".into()));
    }
    if horizon == 0 {
        return Err(Error::Param("rollout horizon must be at least 1".into()));
    }
    let n = model.n_agents();
    let beta = model.discount();
    let per_block: Vec<Vec<Vec<f64>>> = blocks(samples)
        .into_par_iter()
        .enumerate()
        .map(|(b, range)| {
            let mut rng = block_stream(seed, b);
            let mut sim = Simulator::new(model, spec, policy);
            range
                .map(|_| {
                    sim.run(&mut rng, horizon, None);
                    let mut ret = vec![0.0; n + 1];
                    let mut disc = 1.0;
                    for k in 0..horizon {
                        for i in 0..n {
                            ret[i] += disc * sim.reward[k][i];
                        }
                        ret[n] += disc * sim.potential[k];
                        disc *= beta;
                    }
                    ret
                })
                .collect()
        })
        .collect();
    let rows: Vec<&Vec<f64>> = per_block.iter().flatten().collect();
    let tail = beta.powi(horizon as i32) / (1.0 - beta);
    let column = |c: usize| rows.iter().map(|r| r[c]).collect::<Vec<_>>();
    let phi_abs = model.phi_max().abs().max(model.phi_min().abs());
    Ok(McObjective {
        per_agent: (0..n)
            .map(|i| estimate(&column(i), tail * model.max_abs_reward()))
            .collect(),
        potential: estimate(&column(n), tail * phi_abs),
    })
}

/// Settings of the advantage estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig {
    pub samples: usize,
    /// Visits are counted at steps `k < horizon`.
    pub horizon: usize,
    /// Extra steps simulated after `horizon` so that tail returns of late
    /// visits are not cut short.
    pub tail: usize,
    pub seed: u64,
}

impl McConfig {
    /// Tail long enough that the cut-off return is below `1e-6·max|r|/(1−β)`.
    pub fn new(model: &TabularPomg, samples: usize, horizon: usize, seed: u64) -> Self {
        let beta = model.discount();
        let tail = (1e-6f64.ln() / beta.ln()).ceil().max(0.0) as usize;
        Self {
            samples,
            horizon,
            tail,
            seed,
        }
    }
}

/// Estimated marginal advantage of one agent.
#[derive(Debug, Clone)]
pub struct McAdvantage {
    pub agent: usize,
    pub n_actions: usize,
    /// `[h · |U_i| + a]`
    pub q: Vec<f64>,
    pub adv: Vec<f64>,
    /// Delta-method standard error of each `adv` entry.
    pub std_err: Vec<f64>,
    pub visits: Vec<u64>,
    /// Info points never visited; their rows are zero.
    pub unvisited_rows: Vec<usize>,
    /// Visited info points with actions never tried; those entries are zero.
    pub unvisited_actions: Vec<(usize, usize)>,
    pub samples: usize,
    /// `β^{H+tail}·max|r|/(1−β)` bound on the cut-off of every tail return.
    pub bias_bound: f64,
}

impl McAdvantage {
    pub fn adv_row(&self, h: usize) -> &[f64] {
        &self.adv[h * self.n_actions..(h + 1) * self.n_actions]
    }
}

/// Per-block discounted visit sums: numerator `Σ β^k G_k` and weight `Σ β^k`.
#[derive(Clone)]
struct Sums {
    num: Vec<Vec<f64>>,
    den: Vec<Vec<f64>>,
    visits: Vec<Vec<u64>>,
}

/// Discount-weighted every-visit estimator of `Q_i(ĥ_i,u_i)` for all agents:
/// the ratio `E[Σ_k β^k 1{ĥ_i^k=h, u_i^k=a} G_i^k] / E[Σ_k β^k 1{ĥ_i^k=h, u_i^k=a}]`,
/// whose limit is the occupancy-conditional marginal `Q_i`. Rows are then
/// centred under `π_i` (renormalised over tried actions).
pub fn mc_advantages(
    model: &TabularPomg,
    spec: &InternalStateSpec,
    policy: &JointPolicy,
    cfg: &McConfig,
) -> Result<Vec<McAdvantage>> {
    if cfg.samples == 0 || cfg.horizon == 0 {
        return Err(Error::Param("advantage estimation needs samples >= 1 and horizon >= 1".into()));
    }
    let n = model.n_agents();
    let beta = model.discount();
    let len = cfg.horizon + cfg.tail;
    let sizes: Vec<usize> = (0..n)
        .map(|i| spec.n_info_points(i) * model.n_actions(i))
        .collect();
    let per_block: Vec<Sums> = blocks(cfg.samples)
        .into_par_iter()
        .enumerate()
        .map(|(b, range)| {
            let mut rng = block_stream(cfg.seed, b);
            let mut sim = Simulator::new(model, spec, policy);
            let mut sums = Sums {
                num: sizes.iter().map(|&s| vec![0.0; s]).collect(),
                den: sizes.iter().map(|&s| vec![0.0; s]).collect(),
                visits: sizes.iter().map(|&s| vec![0; s]).collect(),
            };
            let mut g = vec![0.0; n];
            for _ in range {
                sim.run(&mut rng, len, None);
                g.iter_mut().for_each(|v| *v = 0.0);
                for k in (0..len).rev() {
                    for i in 0..n {
                        g[i] = sim.reward[k][i] + beta * g[i];
                    }
                    if k < cfg.horizon {
                        let wk = beta.powi(k as i32);
                        for i in 0..n {
                            let e = sim.info[k][i] * model.n_actions(i) + sim.action[k][i];
                            sums.num[i][e] += wk * g[i];
                            sums.den[i][e] += wk;
                            sums.visits[i][e] += 1;
                        }
                    }
                }
            }
            sums
        })
        .collect();

    let bias_bound = beta.powi(len as i32) * model.max_abs_reward() / (1.0 - beta);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let na = model.n_actions(i);
        let np = spec.n_info_points(i);
        let size = sizes[i];
        let mut num = vec![0.0; size];
        let mut den = vec![0.0; size];
        let mut visits = vec![0u64; size];
        for s in &per_block {
            for e in 0..size {
                num[e] += s.num[i][e];
                den[e] += s.den[i][e];
                visits[e] += s.visits[i][e];
            }
        }
        let q: Vec<f64> = (0..size)
            .map(|e| if den[e] > 0.0 { num[e] / den[e] } else { 0.0 })
            .collect();
        let table = &policy.tables[i];
        let mut adv = vec![0.0; size];
        let mut std_err = vec![0.0; size];
        let mut unvisited_rows = Vec::new();
        let mut unvisited_actions = Vec::new();
        // centring weights renormalised over tried actions
        let mut weights = vec![0.0; size];
        for h in 0..np {
            let row = h * na..(h + 1) * na;
            if den[row.clone()].iter().all(|&d| d == 0.0) {
                unvisited_rows.push(h);
                continue;
            }
            let pi = table.probs(h);
            let mass: f64 = (0..na).filter(|&a| den[h * na + a] > 0.0).map(|a| pi[a]).sum();
            for a in 0..na {
                if den[h * na + a] > 0.0 {
                    weights[h * na + a] = pi[a] / mass;
                } else {
                    unvisited_actions.push((h, a));
                }
            }
            let baseline: f64 = row.clone().map(|e| weights[e] * q[e]).sum();
            for e in row {
                if den[e] > 0.0 {
                    adv[e] = q[e] - baseline;
                }
            }
        }
        // delta method over i.i.d. blocks
        let mut var = vec![0.0; size];
        let mut z = vec![0.0; size];
        for s in &per_block {
            for e in 0..size {
                z[e] = if den[e] > 0.0 {
                    (s.num[i][e] - q[e] * s.den[i][e]) / den[e]
                } else {
                    0.0
                };
            }
            for h in 0..np {
                let zbar: f64 = (h * na..(h + 1) * na).map(|e| weights[e] * z[e]).sum();
                for e in h * na..(h + 1) * na {
                    if den[e] > 0.0 {
                        var[e] += (z[e] - zbar).powi(2);
                    }
                }
            }
        }
        let nb = per_block.len() as f64;
        let correction = if nb > 1.0 { nb / (nb - 1.0) } else { 1.0 };
        for e in 0..size {
            std_err[e] = (var[e] * correction).sqrt();
        }
        out.push(McAdvantage {
            agent: i,
            n_actions: na,
            q,
            adv,
            std_err,
            visits,
            unvisited_rows,
            unvisited_actions,
            samples: cfg.samples,
            bias_bound,
        });
    }
    Ok(out)
}

/// [`mc_advantages`] restricted to agent `i`.
pub fn mc_advantage(
    model: &TabularPomg,
    spec: &InternalStateSpec,
    policy: &JointPolicy,
    i: usize,
    cfg: &McConfig,
) -> Result<McAdvantage> {
    if i >= model.n_agents() {
        return Err(Error::Param(format!("agent {i} out of range")));
    }
    Ok(mc_advantages(model, spec, policy, cfg)?.swap_remove(i))
}
