//! Finite internal-state compressors.
//!
//! The built-in compressor is the finite window: each agent's local state
//! holds its own last `t_w` (observation, action) pairs and the shared state
//! holds every agent's last `t_w` broadcast observations. Pre-history slots
//! hold a padding symbol. Each agent broadcasts its current observation, so
//! the joint message `z` is the joint observation.
//!
//! Arbitrary deterministic update tables can be supplied instead through
//! [`CompressorTables`].

use crate::error::{Error, Result};
use crate::model::TabularPomg;
use serde::{Deserialize, Serialize};

/// How the internal state is configured in experiment files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum SpecConfig {
    Window { t_w: usize },
    /// Tables are read from the `compressor` field of the model file.
    Custom,
}

/// User-supplied update maps.
///
/// `shared_update` is indexed `[(w · |Z| + z) · |U| + u]` where `z` is the
/// joint observation (lexicographic, agent 0 most significant) and `u` the
/// joint action. `local_update[i]` is indexed `[(l · |Y_i| + y) · |U_i| + u]`;
/// the agent's own message equals `y` so it is not a separate axis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompressorTables {
    pub n_shared: usize,
    pub shared_update: Vec<usize>,
    pub n_local: Vec<usize>,
    pub local_update: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Window { t_w: usize },
    Tables(CompressorTables),
}

/// Agent `i`'s information point `(w, l_i, y_i)`.
///
/// `shared` is the part of the shared state agent `i` reads: for windows, the
/// other agents' observation windows (its own slot duplicates `l_i`); for
/// table compressors, the full shared state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct InfoPoint {
    pub agent: usize,
    pub shared: usize,
    pub local: usize,
    pub observation: usize,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InternalStateSpec {
    kind: Kind,
    obs_sizes: Vec<usize>,
    act_sizes: Vec<usize>,
    /// Size of one agent's observation window, `(|Y_i|+1)^{t_w}`.
    obs_window: Vec<usize>,
    n_shared: usize,
    n_local: Vec<usize>,
    n_view: Vec<usize>,
    joint_obs_strides: Vec<usize>,
}

fn pow_checked(base: usize, exp: usize) -> u128 {
    (0..exp).fold(1u128, |acc, _| acc.saturating_mul(base as u128))
}

impl InternalStateSpec {
    /// Window compressor of length `t_w`. `cap` bounds the largest per-agent
    /// policy table `|view_i|·|ℒ_i|·|𝒴_i|·|𝒰_i|`.
    pub fn window(model: &TabularPomg, t_w: usize, cap: usize) -> Result<Self> {
        let n = model.n_agents();
        let obs_sizes: Vec<usize> = (0..n).map(|i| model.n_observations(i)).collect();
        let act_sizes: Vec<usize> = (0..n).map(|i| model.n_actions(i)).collect();
        let obs_window: Vec<u128> = obs_sizes.iter().map(|&y| pow_checked(y + 1, t_w)).collect();
        let n_local: Vec<u128> = (0..n)
            .map(|i| pow_checked(obs_sizes[i] * act_sizes[i] + 1, t_w))
            .collect();
        let n_shared = obs_window.iter().fold(1u128, |a, &b| a.saturating_mul(b));
        let n_view: Vec<u128> = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i)
                    .fold(1u128, |a, j| a.saturating_mul(obs_window[j]))
            })
            .collect();
        let required = (0..n)
            .map(|i| {
                n_view[i]
                    .saturating_mul(n_local[i])
                    .saturating_mul(obs_sizes[i] as u128)
                    .saturating_mul(act_sizes[i] as u128)
            })
            .max()
            .unwrap_or(0)
            .max(n_shared);
        if required > cap as u128 {
            return Err(Error::Size {
                what: "internal-state enumeration",
                required,
                cap: cap as u128,
            });
        }
        Ok(Self {
            kind: Kind::Window { t_w },
            joint_obs_strides: strides(&obs_sizes),
            obs_window: obs_window.iter().map(|&v| v as usize).collect(),
            n_shared: n_shared as usize,
            n_local: n_local.iter().map(|&v| v as usize).collect(),
            n_view: n_view.iter().map(|&v| v as usize).collect(),
            obs_sizes,
            act_sizes,
        })
    }

    /// Compressor backed by explicit update tables.
    pub fn from_tables(model: &TabularPomg, tables: CompressorTables) -> Result<Self> {
        let n = model.n_agents();
        let obs_sizes: Vec<usize> = (0..n).map(|i| model.n_observations(i)).collect();
        let act_sizes: Vec<usize> = (0..n).map(|i| model.n_actions(i)).collect();
        let nz: usize = obs_sizes.iter().product();
        let nu = model.n_joint_actions();
        let bad = |m: String| Error::load("compressor", m);
        if tables.n_shared == 0 || tables.shared_update.len() != tables.n_shared * nz * nu {
            return Err(bad(format!(
                "shared_update needs {} entries",
                tables.n_shared * nz * nu
            )));
        }
        if tables.shared_update.iter().any(|&w| w >= tables.n_shared) {
            return Err(bad("shared_update maps outside the shared set".into()));
        }
        if tables.n_local.len() != n || tables.local_update.len() != n {
            return Err(bad("one local table per agent required".into()));
        }
        for i in 0..n {
            let nl = tables.n_local[i];
            let want = nl * obs_sizes[i] * act_sizes[i];
            if nl == 0 || tables.local_update[i].len() != want {
                return Err(bad(format!("local_update[{i}] needs {want} entries")));
            }
            if tables.local_update[i].iter().any(|&l| l >= nl) {
                return Err(bad(format!("local_update[{i}] maps outside its set")));
            }
        }
        Ok(Self {
            n_shared: tables.n_shared,
            n_local: tables.n_local.clone(),
            n_view: vec![tables.n_shared; n],
            obs_window: vec![1; n],
            joint_obs_strides: strides(&obs_sizes),
            obs_sizes,
            act_sizes,
            kind: Kind::Tables(tables),
        })
    }

    pub fn n_agents(&self) -> usize {
        self.obs_sizes.len()
    }

    /// `Some(t_w)` for window compressors.
    pub fn window_length(&self) -> Option<usize> {
        match self.kind {
            Kind::Window { t_w } => Some(t_w),
            Kind::Tables(_) => None,
        }
    }

    pub fn config(&self) -> SpecConfig {
        match self.kind {
            Kind::Window { t_w } => SpecConfig::Window { t_w },
            Kind::Tables(_) => SpecConfig::Custom,
        }
    }

    pub fn n_shared(&self) -> usize {
        self.n_shared
    }

    pub fn n_local(&self, i: usize) -> usize {
        self.n_local[i]
    }

    /// Number of distinct shared views agent `i` can read.
    pub fn n_view(&self, i: usize) -> usize {
        self.n_view[i]
    }

    pub fn initial_shared(&self) -> usize {
        0
    }

    pub fn initial_local(&self, _i: usize) -> usize {
        0
    }

    pub fn joint_observation_index(&self, y: &[usize]) -> usize {
        y.iter().zip(&self.joint_obs_strides).map(|(a, s)| a * s).sum()
    }

    /// Next shared state; `z` is the joint message (joint observation) and `u`
    /// the per-agent actions.
    pub fn update_shared(&self, w: usize, z: &[usize], u: &[usize]) -> Result<usize> {
        let n = self.n_agents();
        if w >= self.n_shared
            || z.len() != n
            || u.len() != n
            || (0..n).any(|i| z[i] >= self.obs_sizes[i] || u[i] >= self.act_sizes[i])
        {
            return Err(Error::Contract("update_shared argument out of range".into()));
        }
        Ok(self.shared_next(w, z, u))
    }

    /// Unchecked [`update_shared`](Self::update_shared).
    pub fn shared_next(&self, w: usize, z: &[usize], u: &[usize]) -> usize {
        match &self.kind {
            Kind::Window { t_w } => {
                if *t_w == 0 {
                    return 0;
                }
                let mut out = 0;
                let mut rest = w;
                let mut digits = vec![0; z.len()];
                for j in (0..z.len()).rev() {
                    digits[j] = rest % self.obs_window[j];
                    rest /= self.obs_window[j];
                }
                for j in 0..z.len() {
                    let base = self.obs_sizes[j] + 1;
                    let next = (digits[j] * base + z[j] + 1) % self.obs_window[j];
                    out = out * self.obs_window[j] + next;
                }
                out
            }
            Kind::Tables(t) => {
                let nz: usize = self.obs_sizes.iter().product();
                let nu: usize = self.act_sizes.iter().product();
                let zi = self.joint_observation_index(z);
                let ui = u.iter().zip(strides(&self.act_sizes)).map(|(a, s)| a * s).sum::<usize>();
                t.shared_update[(w * nz + zi) * nu + ui]
            }
        }
    }

    /// Next local state of agent `i`; `z` is the agent's own message.
    pub fn update_local(&self, i: usize, l: usize, y: usize, u: usize, z: usize) -> Result<usize> {
        if i >= self.n_agents()
            || l >= self.n_local[i]
            || y >= self.obs_sizes[i]
            || u >= self.act_sizes[i]
            || z >= self.obs_sizes[i]
        {
            return Err(Error::Contract("update_local argument out of range".into()));
        }
        Ok(self.local_next(i, l, y, u))
    }

    /// Unchecked [`update_local`](Self::update_local).
    pub fn local_next(&self, i: usize, l: usize, y: usize, u: usize) -> usize {
        match &self.kind {
            Kind::Window { t_w } => {
                if *t_w == 0 {
                    return 0;
                }
                let base = self.obs_sizes[i] * self.act_sizes[i] + 1;
                (l * base + 1 + y * self.act_sizes[i] + u) % self.n_local[i]
            }
            Kind::Tables(t) => {
                t.local_update[i][(l * self.obs_sizes[i] + y) * self.act_sizes[i] + u]
            }
        }
    }

    /// The part of shared state `w` that agent `i` reads.
    pub fn view(&self, i: usize, w: usize) -> usize {
        match self.kind {
            Kind::Window { .. } => {
                let n = self.n_agents();
                let mut rest = w;
                let mut digits = vec![0; n];
                for j in (0..n).rev() {
                    digits[j] = rest % self.obs_window[j];
                    rest /= self.obs_window[j];
                }
                (0..n)
                    .filter(|&j| j != i)
                    .fold(0, |acc, j| acc * self.obs_window[j] + digits[j])
            }
            Kind::Tables(_) => w,
        }
    }

    pub fn n_info_points(&self, i: usize) -> usize {
        self.n_view[i] * self.n_local[i] * self.obs_sizes[i]
    }

    pub fn n_actions(&self, i: usize) -> usize {
        self.act_sizes[i]
    }

    pub fn n_observations(&self, i: usize) -> usize {
        self.obs_sizes[i]
    }

    /// Flat index of `(view, l, y)` for agent `i`.
    pub fn info_index(&self, i: usize, view: usize, l: usize, y: usize) -> usize {
        (view * self.n_local[i] + l) * self.obs_sizes[i] + y
    }

    /// Flat index of the information point seen by agent `i` at full shared
    /// state `w`.
    pub fn info_index_at(&self, i: usize, w: usize, l: usize, y: usize) -> usize {
        self.info_index(i, self.view(i, w), l, y)
    }

    pub fn info_point(&self, i: usize, index: usize) -> InfoPoint {
        let ny = self.obs_sizes[i];
        let nl = self.n_local[i];
        InfoPoint {
            agent: i,
            shared: index / (ny * nl),
            local: (index / ny) % nl,
            observation: index % ny,
            index,
        }
    }

    /// All information points of agent `i` in lexicographic `(w, l, y)` order.
    pub fn enumerate_info_points(&self, i: usize) -> Vec<InfoPoint> {
        (0..self.n_info_points(i))
            .map(|k| self.info_point(i, k))
            .collect()
    }

    /// Observation-window slots of agent `j` inside shared state `w`, oldest
    /// first; `None` marks padding.
    pub fn shared_slots(&self, w: usize, j: usize) -> Vec<Option<usize>> {
        let Some(t_w) = self.window_length() else {
            return Vec::new();
        };
        let n = self.n_agents();
        let mut rest = w;
        let mut win = 0;
        for k in (0..n).rev() {
            if k == j {
                win = rest % self.obs_window[k];
            }
            rest /= self.obs_window[k];
        }
        decode_digits(win, self.obs_sizes[j] + 1, t_w)
            .into_iter()
            .map(|d| d.checked_sub(1))
            .collect()
    }

    /// Local-window slots of agent `i`, oldest first, as `(y, u)` pairs.
    pub fn local_slots(&self, i: usize, l: usize) -> Vec<Option<(usize, usize)>> {
        let Some(t_w) = self.window_length() else {
            return Vec::new();
        };
        let na = self.act_sizes[i];
        decode_digits(l, self.obs_sizes[i] * na + 1, t_w)
            .into_iter()
            .map(|d| d.checked_sub(1).map(|s| (s / na, s % na)))
            .collect()
    }

    /// Human-readable label of an information point.
    pub fn info_label(&self, model: &TabularPomg, point: &InfoPoint) -> String {
        let i = point.agent;
        let y = &model.parts().observations[i][point.observation];
        match self.window_length() {
            Some(t_w) => {
                let n = self.n_agents();
                let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
                let mut rest = point.shared;
                let mut wins = vec![0; others.len()];
                for k in (0..others.len()).rev() {
                    wins[k] = rest % self.obs_window[others[k]];
                    rest /= self.obs_window[others[k]];
                }
                let fmt_obs = |j: usize, d: usize| {
                    d.checked_sub(1)
                        .map_or("_".to_string(), |o| model.parts().observations[j][o].clone())
                };
                let w: Vec<String> = others
                    .iter()
                    .zip(&wins)
                    .map(|(&j, &win)| {
                        decode_digits(win, self.obs_sizes[j] + 1, t_w)
                            .into_iter()
                            .map(|d| fmt_obs(j, d))
                            .collect::<Vec<_>>()
                            .join(" ")
                    })
                    .collect();
                let l: Vec<String> = self
                    .local_slots(i, point.local)
                    .into_iter()
                    .map(|s| {
                        s.map_or("_".to_string(), |(yy, uu)| {
                            format!(
                                "{}/{}",
                                model.parts().observations[i][yy],
                                model.parts().actions[i][uu]
                            )
                        })
                    })
                    .collect();
                format!("w=[{}] l=[{}] y={y}", w.join("; "), l.join(" "))
            }
            None => format!("w={} l={} y={y}", point.shared, point.local),
        }
    }
}

fn strides(sizes: &[usize]) -> Vec<usize> {
    let mut s = vec![1; sizes.len()];
    for i in (0..sizes.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * sizes[i + 1];
    }
    s
}

fn decode_digits(mut v: usize, base: usize, len: usize) -> Vec<usize> {
    let mut d = vec![0; len];
    for k in (0..len).rev() {
        d[k] = v % base;
        v /= base;
    }
    d
}

/// Builds the window compressor; convenience for the free-function API.
pub fn make_window_spec(model: &TabularPomg, t_w: usize, cap: usize) -> Result<InternalStateSpec> {
    InternalStateSpec::window(model, t_w, cap)
}
