//! Dense JSON model files.

use super::{dense_from_sparse, sparse_from_dense, ModelParts, TabularPomg};
use crate::error::{Error, Result};
use crate::internal::CompressorTables;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// On-disk model schema. Tables are dense and row-major; joint actions are
/// indexed lexicographically by agent order.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub n_agents: usize,
    pub states: Vec<String>,
    pub observations: Vec<Vec<String>>,
    pub actions: Vec<Vec<String>>,
    /// `[x][u][x']`
    pub transition: Vec<Vec<Vec<f64>>>,
    /// `[i][x'][u][y_i]`
    pub observation_kernel: Vec<Vec<Vec<Vec<f64>>>>,
    /// `[i][x][u]`
    pub reward: Vec<Vec<Vec<f64>>>,
    /// `[x][u]`
    pub potential: Vec<Vec<f64>>,
    pub discount: f64,
    pub initial_state_dist: Vec<f64>,
    /// `[i][x][y_i]`; when absent the observation row for joint action 0 is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_observation: Option<Vec<Vec<Vec<f64>>>>,
    /// Optional user-supplied internal-state update tables.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compressor: Option<CompressorTables>,
}

impl ModelFile {
    pub fn from_model(model: &TabularPomg) -> Self {
        let p = model.parts();
        let nx = model.n_states();
        let n = model.n_agents();
        Self {
            n_agents: n,
            states: p.states.clone(),
            observations: p.observations.clone(),
            actions: p.actions.clone(),
            transition: p
                .transition
                .iter()
                .map(|rows| rows.iter().map(|r| dense_from_sparse(r, nx)).collect())
                .collect(),
            observation_kernel: (0..n)
                .map(|i| {
                    let ny = model.n_observations(i);
                    p.observation_kernel[i]
                        .iter()
                        .map(|rows| rows.iter().map(|r| dense_from_sparse(r, ny)).collect())
                        .collect()
                })
                .collect(),
            reward: p.reward.clone(),
            potential: p.potential.clone(),
            discount: p.discount,
            initial_state_dist: p.initial_state_dist.clone(),
            initial_observation: Some(
                (0..n)
                    .map(|i| {
                        let ny = model.n_observations(i);
                        p.initial_observation[i]
                            .iter()
                            .map(|r| dense_from_sparse(r, ny))
                            .collect()
                    })
                    .collect(),
            ),
            compressor: None,
        }
    }

    pub fn into_model(self) -> Result<TabularPomg> {
        if self.n_agents != self.actions.len() {
            return Err(Error::load(
                "n_agents",
                format!("{} agents declared, {} action lists", self.n_agents, self.actions.len()),
            ));
        }
        let dense_len = |field: &str, row: &[f64], len: usize| -> Result<()> {
            if row.len() != len {
                return Err(Error::load(field, format!("row length {} != {len}", row.len())));
            }
            Ok(())
        };
        let nx = self.states.len();
        for row in self.transition.iter().flatten() {
            dense_len("transition", row, nx)?;
        }
        if self.observation_kernel.len() != self.n_agents {
            return Err(Error::load("observation_kernel", "one table per agent required"));
        }
        for (i, t) in self.observation_kernel.iter().enumerate() {
            let ny = self.observations.get(i).map_or(0, Vec::len);
            for row in t.iter().flatten() {
                dense_len(&format!("observation_kernel[{i}]"), row, ny)?;
            }
        }
        let initial_observation = match self.initial_observation {
            Some(t) => t
                .iter()
                .map(|rows| rows.iter().map(|r| sparse_from_dense(r)).collect())
                .collect(),
            None => self
                .observation_kernel
                .iter()
                .map(|per| {
                    per.iter()
                        .map(|rows| {
                            rows.first()
                                .map(|r| sparse_from_dense(r))
                                .unwrap_or_default()
                        })
                        .collect()
                })
                .collect(),
        };
        TabularPomg::from_parts(ModelParts {
            states: self.states,
            observations: self.observations,
            actions: self.actions,
            transition: self
                .transition
                .iter()
                .map(|rows| rows.iter().map(|r| sparse_from_dense(r)).collect())
                .collect(),
            observation_kernel: self
                .observation_kernel
                .iter()
                .map(|per| {
                    per.iter()
                        .map(|rows| rows.iter().map(|r| sparse_from_dense(r)).collect())
                        .collect()
                })
                .collect(),
            initial_observation,
            reward: self.reward,
            potential: self.potential,
            discount: self.discount,
            initial_state_dist: self.initial_state_dist,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::load("model file", e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TabularPomg> {
    ModelFile::read(path)?.into_model()
}

pub fn save_model(model: &TabularPomg, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, ModelFile::from_model(model).to_json()?)?;
    Ok(())
}
