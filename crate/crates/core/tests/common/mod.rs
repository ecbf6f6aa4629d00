#![allow(dead_code)]

use ispg::model::{ModelParts, SparseDist};
use ispg::policy::{init_policy, InitMode};
use ispg::{InternalStateSpec, JointPolicy, TabularPomg};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CAP: usize = 1_000_000;

fn random_row(rng: &mut ChaCha8Rng, n: usize) -> SparseDist {
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.iter().enumerate().map(|(k, v)| (k, v / s)).collect()
}

fn joint(n: usize, na: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..na).map(move |a| {
                    let mut q = p.clone();
                    q.push(a);
                    q
                })
            })
            .collect();
    }
    out
}

/// `n` agents that all observe the state exactly; random common reward.
pub fn fully_observable(n: usize, nx: usize, na: usize, beta: f64, seed: u64) -> TabularPomg {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nu = joint(n, na).len();
    let transition: Vec<Vec<SparseDist>> = (0..nx)
        .map(|_| (0..nu).map(|_| random_row(&mut rng, nx)).collect())
        .collect();
    let potential: Vec<Vec<f64>> = (0..nx)
        .map(|_| (0..nu).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let exact: Vec<Vec<SparseDist>> = (0..nx).map(|x| vec![vec![(x, 1.0)]; nu]).collect();
    let names = |p: &str, k: usize| (0..k).map(|j| format!("{p}{j}")).collect::<Vec<_>>();
    TabularPomg::from_parts(ModelParts {
        states: names("x", nx),
        observations: vec![names("y", nx); n],
        actions: vec![names("a", na); n],
        transition,
        observation_kernel: vec![exact; n],
        initial_observation: vec![(0..nx).map(|x| vec![(x, 1.0)]).collect(); n],
        reward: vec![potential.clone(); n],
        potential,
        discount: beta,
        initial_state_dist: random_row(&mut rng, nx).iter().map(|&(_, p)| p).collect(),
    })
    .unwrap()
}

/// Observations are pure noise and the state is redrawn from `μ₀` every step.
pub fn uninformative(seed: u64) -> TabularPomg {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, nx, na, ny) = (2, 3, 2, 2);
    let nu = na * na;
    let mu0 = random_row(&mut rng, nx);
    let potential: Vec<Vec<f64>> = (0..nx)
        .map(|_| (0..nu).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let noise: SparseDist = vec![(0, 0.5), (1, 0.5)];
    let names = |p: &str, k: usize| (0..k).map(|j| format!("{p}{j}")).collect::<Vec<_>>();
    TabularPomg::from_parts(ModelParts {
        states: names("x", nx),
        observations: vec![names("y", ny); n],
        actions: vec![names("a", na); n],
        transition: vec![vec![mu0.clone(); nu]; nx],
        observation_kernel: vec![vec![vec![noise.clone(); nu]; nx]; n],
        initial_observation: vec![vec![noise.clone(); nx]; n],
        reward: vec![potential.clone(); n],
        potential,
        discount: 0.9,
        initial_state_dist: mu0.iter().map(|&(_, p)| p).collect(),
    })
    .unwrap()
}

pub fn random_policy(spec: &InternalStateSpec, model: &TabularPomg, seed: u64) -> JointPolicy {
    init_policy(spec, model, &InitMode::Random { scale: 1.0, seed }).unwrap()
}

/// Joint action probability `π(u | x)` of a policy on a fully observable
/// model under the `t_w = 0` compressor (info point index = state).
pub fn fo_joint_prob(model: &TabularPomg, policy: &JointPolicy, x: usize, u: usize) -> f64 {
    model
        .joint_action(u)
        .iter()
        .enumerate()
        .map(|(i, &a)| policy.tables[i].probs(x)[a])
        .product()
}

/// Classic MDP evaluation by value iteration: `(V, Q)` indexed by `x` and `(x, u)`.
pub fn mdp_values(model: &TabularPomg, policy: &JointPolicy) -> (Vec<f64>, Vec<Vec<f64>>) {
    let nx = model.n_states();
    let nu = model.n_joint_actions();
    let beta = model.discount();
    let mut v = vec![0.0; nx];
    loop {
        let q: Vec<Vec<f64>> = (0..nx)
            .map(|x| {
                (0..nu)
                    .map(|u| {
                        model.potential(x, u)
                            + beta * model.transition(x, u).iter().map(|&(y, p)| p * v[y]).sum::<f64>()
                    })
                    .collect()
            })
            .collect();
        let nv: Vec<f64> = (0..nx)
            .map(|x| (0..nu).map(|u| fo_joint_prob(model, policy, x, u) * q[x][u]).sum())
            .collect();
        let delta = nv.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = nv;
        if delta < 1e-15 {
            return (v, q);
        }
    }
}

/// Discounted state visitation `(1−β) Σ β^k Pr(x^k = x)` by power iteration.
pub fn mdp_occupancy(model: &TabularPomg, policy: &JointPolicy) -> Vec<f64> {
    let nx = model.n_states();
    let beta = model.discount();
    let mut mu = model.initial_state_dist().to_vec();
    let mut d = vec![0.0; nx];
    let mut disc = 1.0 - beta;
    while disc > 1e-17 {
        for x in 0..nx {
            d[x] += disc * mu[x];
        }
        let mut next = vec![0.0; nx];
        for x in 0..nx {
            for u in 0..model.n_joint_actions() {
                let pu = fo_joint_prob(model, policy, x, u);
                for &(y, p) in model.transition(x, u) {
                    next[y] += mu[x] * pu * p;
                }
            }
        }
        mu = next;
        disc *= beta;
    }
    d
}

/// One agent; every state is absorbing and observed exactly, so each state is
/// a separate bandit with rewards `rewards[x][a]`.
pub fn bandit(rewards: Vec<Vec<f64>>, mu0: Vec<f64>, beta: f64) -> TabularPomg {
    let nx = rewards.len();
    let na = rewards[0].len();
    let names = |p: &str, k: usize| (0..k).map(|j| format!("{p}{j}")).collect::<Vec<_>>();
    TabularPomg::from_parts(ModelParts {
        states: names("x", nx),
        observations: vec![names("y", nx)],
        actions: vec![names("a", na)],
        transition: (0..nx).map(|x| vec![vec![(x, 1.0)]; na]).collect(),
        observation_kernel: vec![(0..nx).map(|x| vec![vec![(x, 1.0)]; na]).collect()],
        initial_observation: vec![(0..nx).map(|x| vec![(x, 1.0)]).collect()],
        reward: vec![rewards.clone()],
        potential: rewards,
        discount: beta,
        initial_state_dist: mu0,
    })
    .unwrap()
}
