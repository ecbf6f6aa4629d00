//! Benchmark environments rebuilt as tabular models: Multi-Agent Tiger,
//! Multi-Access Broadcast Channel, and two-agent Level-Based Foraging.

use super::{sparse_from_pairs, ModelParts, SparseDist, TabularPomg};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Matiger,
    Mabc,
    Lbf,
    Custom,
}

/// Parameters for the built-in environments. Unused fields are ignored by
/// environments that do not need them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvParams {
    pub env: EnvKind,
    pub listen_accuracy: f64,
    pub arrival_probs: Vec<f64>,
    pub collision_accuracy: f64,
    pub grid_width: usize,
    pub grid_height: usize,
    pub sight_range: usize,
    pub cooperative_lift: bool,
    pub food_reward: f64,
    /// Largest LBF state enumeration accepted.
    pub state_cap: usize,
    /// Episode length for Monte-Carlo rollouts only.
    pub episode_horizon: usize,
    pub discount: f64,
    /// Model file for `env = "custom"`.
    pub model_path: Option<String>,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            env: EnvKind::Matiger,
            listen_accuracy: 0.85,
            arrival_probs: vec![0.9, 0.1],
            collision_accuracy: 0.9,
            grid_width: 4,
            grid_height: 4,
            sight_range: 1,
            cooperative_lift: false,
            food_reward: 1.0,
            state_cap: 20_000,
            episode_horizon: 10,
            discount: 0.95,
            model_path: None,
        }
    }
}

impl EnvParams {
    pub fn matiger() -> Self {
        Self::default()
    }

    pub fn mabc() -> Self {
        Self {
            env: EnvKind::Mabc,
            ..Self::default()
        }
    }

    pub fn lbf() -> Self {
        Self {
            env: EnvKind::Lbf,
            episode_horizon: 50,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Param(format!("{name} = {v} is outside [0, 1]")))
            }
        };
        prob("listen_accuracy", self.listen_accuracy)?;
        prob("collision_accuracy", self.collision_accuracy)?;
        for &p in &self.arrival_probs {
            prob("arrival_probs", p)?;
        }
        if self.grid_width < 2 || self.grid_height < 2 {
            return Err(Error::Param("grid dimensions must be at least 2".into()));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::Param("discount must lie in (0, 1)".into()));
        }
        if self.episode_horizon == 0 {
            return Err(Error::Param("episode_horizon must be at least 1".into()));
        }
        Ok(())
    }
}

/// Builds the environment selected by `params.env`.
pub fn build(params: &EnvParams) -> Result<TabularPomg> {
    match params.env {
        EnvKind::Matiger => build_matiger(params),
        EnvKind::Mabc => build_mabc(params),
        EnvKind::Lbf => build_lbf(params),
        EnvKind::Custom => {
            let path = params
                .model_path
                .as_deref()
                .ok_or_else(|| Error::Param("custom environment needs model_path".into()))?;
            super::load_model(path)
        }
    }
}

fn names(prefix: &[&str]) -> Vec<String> {
    prefix.iter().map(|s| s.to_string()).collect()
}

/// Independent per-agent joint action table for `n` agents with `k` actions each.
fn joint_actions(n: usize, k: usize) -> Vec<Vec<usize>> {
    let total = k.pow(n as u32);
    (0..total)
        .map(|mut u| {
            let mut a = vec![0; n];
            for i in (0..n).rev() {
                a[i] = u % k;
                u /= k;
            }
            a
        })
        .collect()
}

fn common_reward(potential: &[Vec<f64>], n: usize) -> Vec<Vec<Vec<f64>>> {
    vec![potential.to_vec(); n]
}

pub const OPEN_LEFT: usize = 0;
pub const OPEN_RIGHT: usize = 1;
pub const LISTEN: usize = 2;

/// Two-agent Multi-Agent Tiger. States: tiger behind the left (0) or right (1)
/// door. Actions: open-left, open-right, listen. Observations: hear-left,
/// hear-right.
pub fn build_matiger(params: &EnvParams) -> Result<TabularPomg> {
    let acc = params.listen_accuracy;
    if !(acc > 0.5 && acc <= 1.0) {
        return Err(Error::Param(format!(
            "listen_accuracy must lie in (0.5, 1], got {acc}"
        )));
    }
    if !(params.discount > 0.0 && params.discount < 1.0) {
        return Err(Error::Param("discount must lie in (0, 1)".into()));
    }
    let n = 2;
    let ja = joint_actions(n, 3);
    let uniform: SparseDist = vec![(0, 0.5), (1, 0.5)];

    let contribution = |tiger: usize, a: usize| -> f64 {
        match a {
            LISTEN => -1.0,
            door if door == tiger => -100.0,
            _ => 10.0,
        }
    };

    let mut transition = Vec::new();
    let mut potential = Vec::new();
    for x in 0..2 {
        let mut trow = Vec::new();
        let mut prow = Vec::new();
        for u in &ja {
            let opened = u.iter().any(|&a| a != LISTEN);
            trow.push(if opened { uniform.clone() } else { vec![(x, 1.0)] });
            prow.push(u.iter().map(|&a| contribution(x, a)).sum());
        }
        transition.push(trow);
        potential.push(prow);
    }

    let hear = |x_next: usize, u: &[usize]| -> SparseDist {
        if u.iter().any(|&a| a != LISTEN) {
            uniform.clone()
        } else {
            sparse_from_pairs(vec![(x_next, acc), (1 - x_next, 1.0 - acc)])
        }
    };
    let obs_agent: Vec<Vec<SparseDist>> = (0..2)
        .map(|x| ja.iter().map(|u| hear(x, u)).collect())
        .collect();

    TabularPomg::from_parts(ModelParts {
        states: names(&["tiger-left", "tiger-right"]),
        observations: vec![names(&["hear-left", "hear-right"]); n],
        actions: vec![names(&["open-left", "open-right", "listen"]); n],
        transition,
        observation_kernel: vec![obs_agent; n],
        initial_observation: vec![vec![uniform.clone(); 2]; n],
        reward: common_reward(&potential, n),
        potential,
        discount: params.discount,
        initial_state_dist: vec![0.5, 0.5],
    })
}

pub const TRANSMIT: usize = 0;

/// Two-node Multi-Access Broadcast Channel. State index `2·b₁ + b₂` with
/// `b = 1` for a full buffer. Actions: transmit, idle. Observations:
/// no-collision, collision (noisy channel feedback).
pub fn build_mabc(params: &EnvParams) -> Result<TabularPomg> {
    let n = 2;
    if params.arrival_probs.len() != n {
        return Err(Error::Param("MABC needs one arrival probability per node".into()));
    }
    for &p in params
        .arrival_probs
        .iter()
        .chain(std::iter::once(&params.collision_accuracy))
    {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Param(format!("probability {p} outside [0, 1]")));
        }
    }
    if !(params.discount > 0.0 && params.discount < 1.0) {
        return Err(Error::Param("discount must lie in (0, 1)".into()));
    }
    let arrival = &params.arrival_probs;
    let acc = params.collision_accuracy;
    let ja = joint_actions(n, 2);
    let full = |x: usize, i: usize| (x >> (n - 1 - i)) & 1 == 1;

    let mut transition = Vec::new();
    let mut potential = Vec::new();
    for x in 0..4 {
        let mut trow = Vec::new();
        let mut prow = Vec::new();
        for u in &ja {
            let senders: Vec<usize> = (0..n).filter(|&i| u[i] == TRANSMIT).collect();
            let success = senders.len() == 1 && full(x, senders[0]);
            prow.push(if success { 1.0 } else { 0.0 });
            // per-node probability that the buffer is full next step
            let p_full: Vec<f64> = (0..n)
                .map(|i| {
                    let emptied = success && senders[0] == i;
                    if full(x, i) && !emptied {
                        1.0
                    } else {
                        arrival[i]
                    }
                })
                .collect();
            let pairs = (0..4)
                .map(|y| {
                    let p: f64 = (0..n)
                        .map(|i| if full(y, i) { p_full[i] } else { 1.0 - p_full[i] })
                        .product();
                    (y, p)
                })
                .collect();
            trow.push(sparse_from_pairs(pairs));
        }
        transition.push(trow);
        potential.push(prow);
    }

    let feedback = |collision: bool| -> SparseDist {
        let c = usize::from(collision);
        sparse_from_pairs(vec![(c, acc), (1 - c, 1.0 - acc)])
    };
    let obs_agent: Vec<Vec<SparseDist>> = (0..4)
        .map(|_| {
            ja.iter()
                .map(|u| feedback(u.iter().filter(|&&a| a == TRANSMIT).count() >= 2))
                .collect()
        })
        .collect();
    let initial_state_dist = (0..4)
        .map(|x| {
            (0..n)
                .map(|i| if full(x, i) { arrival[i] } else { 1.0 - arrival[i] })
                .product()
        })
        .collect();

    TabularPomg::from_parts(ModelParts {
        states: names(&["empty,empty", "empty,full", "full,empty", "full,full"]),
        observations: vec![names(&["no-collision", "collision"]); n],
        actions: vec![names(&["transmit", "idle"]); n],
        transition,
        observation_kernel: vec![obs_agent; n],
        initial_observation: vec![vec![feedback(false); 4]; n],
        reward: common_reward(&potential, n),
        potential,
        discount: params.discount,
        initial_state_dist,
    })
}

/// Direction signals used by LBF observations.
pub const SIGNALS: [&str; 6] = ["none", "N", "S", "E", "W", "here"];
pub const LIFT: usize = 4;

struct Grid {
    w: usize,
    h: usize,
}

impl Grid {
    fn cells(&self) -> usize {
        self.w * self.h
    }
    fn rc(&self, c: usize) -> (i64, i64) {
        ((c / self.w) as i64, (c % self.w) as i64)
    }
    fn step(&self, c: usize, a: usize) -> Option<usize> {
        let (r, col) = self.rc(c);
        let (nr, nc) = match a {
            0 => (r - 1, col),
            1 => (r + 1, col),
            2 => (r, col - 1),
            3 => (r, col + 1),
            _ => return Some(c),
        };
        if nr < 0 || nc < 0 || nr >= self.h as i64 || nc >= self.w as i64 {
            None
        } else {
            Some(nr as usize * self.w + nc as usize)
        }
    }
    fn adjacent(&self, a: usize, b: usize) -> bool {
        let (r1, c1) = self.rc(a);
        let (r2, c2) = self.rc(b);
        (r1 - r2).abs() + (c1 - c2).abs() == 1
    }
    fn signal(&self, from: usize, to: usize, sight: usize) -> usize {
        if self.adjacent(from, to) {
            return 5;
        }
        let (r1, c1) = self.rc(from);
        let (r2, c2) = self.rc(to);
        let (dy, dx) = (r2 - r1, c2 - c1);
        if dy.abs().max(dx.abs()) as usize > sight {
            return 0;
        }
        if dy.abs() >= dx.abs() {
            if dy < 0 {
                1
            } else {
                2
            }
        } else if dx > 0 {
            3
        } else {
            4
        }
    }
}

/// Two-agent, one-food Level-Based Foraging on a grid. States are
/// `(agent-1 cell, agent-2 cell, food cell)` with pairwise distinct cells,
/// plus a final absorbing `done` state.
pub fn build_lbf(params: &EnvParams) -> Result<TabularPomg> {
    if params.grid_width < 2 || params.grid_height < 2 {
        return Err(Error::Param("grid dimensions must be at least 2".into()));
    }
    if !(params.discount > 0.0 && params.discount < 1.0) {
        return Err(Error::Param("discount must lie in (0, 1)".into()));
    }
    let g = Grid {
        w: params.grid_width,
        h: params.grid_height,
    };
    let nc = g.cells();
    let required = nc as u128 * (nc as u128 - 1) * (nc as u128 - 2) + 1;
    if required > params.state_cap as u128 {
        return Err(Error::Size {
            what: "LBF state enumeration",
            required,
            cap: params.state_cap as u128,
        });
    }
    let n = 2;
    let mut configs = Vec::new();
    let mut index = std::collections::HashMap::new();
    for a in 0..nc {
        for b in 0..nc {
            for f in 0..nc {
                if a != b && a != f && b != f {
                    index.insert((a, b, f), configs.len());
                    configs.push((a, b, f));
                }
            }
        }
    }
    let done = configs.len();
    let nx = done + 1;
    let ja = joint_actions(n, 6);

    let mut states: Vec<String> = configs
        .iter()
        .map(|(a, b, f)| format!("a1={a},a2={b},food={f}"))
        .collect();
    states.push("done".into());

    let mut transition = Vec::with_capacity(nx);
    let mut potential = Vec::with_capacity(nx);
    for &(a, b, f) in &configs {
        let mut trow = Vec::with_capacity(ja.len());
        let mut prow = Vec::with_capacity(ja.len());
        for u in &ja {
            let lifting = |i: usize, cell: usize| u[i] == LIFT && g.adjacent(cell, f);
            let collected = if params.cooperative_lift {
                lifting(0, a) && lifting(1, b)
            } else {
                lifting(0, a) || lifting(1, b)
            };
            if collected {
                trow.push(vec![(done, 1.0)]);
                prow.push(params.food_reward);
                continue;
            }
            let target = |cell: usize, act: usize| match g.step(cell, act) {
                Some(t) if t != f => t,
                _ => cell,
            };
            let (mut ta, mut tb) = (target(a, u[0]), target(b, u[1]));
            if ta == tb || (ta == b && tb == a) {
                ta = a;
                tb = b;
            }
            // moving into a cell the other agent keeps occupying is blocked
            if ta == b && tb == b {
                ta = a;
            }
            if tb == a && ta == a {
                tb = b;
            }
            trow.push(vec![(index[&(ta, tb, f)], 1.0)]);
            prow.push(0.0);
        }
        transition.push(trow);
        potential.push(prow);
    }
    transition.push(vec![vec![(done, 1.0)]; ja.len()]);
    potential.push(vec![0.0; ja.len()]);

    let ny = nc * 36;
    let observations: Vec<String> = (0..ny)
        .map(|y| format!("cell={},food={},other={}", y / 36, SIGNALS[(y / 6) % 6], SIGNALS[y % 6]))
        .collect();
    let sight = params.sight_range;
    let obs_of = |i: usize, x: usize| -> usize {
        if x == done {
            return 0;
        }
        let (a, b, f) = configs[x];
        let (own, other) = if i == 0 { (a, b) } else { (b, a) };
        (own * 6 + g.signal(own, f, sight)) * 6 + g.signal(own, other, sight)
    };
    let observation_kernel: Vec<Vec<Vec<SparseDist>>> = (0..n)
        .map(|i| {
            (0..nx)
                .map(|x| vec![vec![(obs_of(i, x), 1.0)]; ja.len()])
                .collect()
        })
        .collect();
    let initial_observation: Vec<Vec<SparseDist>> = (0..n)
        .map(|i| (0..nx).map(|x| vec![(obs_of(i, x), 1.0)]).collect())
        .collect();
    let mut initial_state_dist = vec![1.0 / done as f64; nx];
    initial_state_dist[done] = 0.0;

    TabularPomg::from_parts(ModelParts {
        states,
        observations: vec![observations; n],
        actions: vec![names(&["up", "down", "left", "right", "lift", "noop"]); n],
        transition,
        observation_kernel,
        initial_observation,
        reward: common_reward(&potential, n),
        potential,
        discount: params.discount,
        initial_state_dist,
    })
}
