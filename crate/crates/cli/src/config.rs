//! Experiment configuration read from TOML.

use crate::CliError;
use ispg::evaluator::{BeliefSettings, BrConfig, BrMethod, SweepConfig};
use ispg::policy::InitMode;
use ispg::trainer::{AdvantageSource, StepSize, TrainConfig};
use ispg::EnvParams;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Output directory; `--out` overrides it.
    pub out: PathBuf,
    pub env: EnvParams,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("run"),
            env: EnvParams::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
        }
    }
}

/// `"theorem"` or a positive number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepSpec {
    Value(f64),
    Named(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdvantageKind {
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    Uniform,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub t_w: usize,
    pub iterations: usize,
    pub step: StepSpec,
    pub advantages: AdvantageKind,
    pub mc_samples: usize,
    pub mc_horizon: usize,
    pub init: InitKind,
    pub init_scale: f64,
    /// NE-gap and `d_b` every `cadence` iterations plus first and last; 0 disables.
    pub cadence: usize,
    pub belief_horizon: usize,
    pub node_cap: usize,
    pub chain_cap: usize,
    /// Adds per-iteration wall time to the CSV, which then differs between runs.
    pub record_wall_clock: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            t_w: 1,
            iterations: 100,
            step: StepSpec::Named("theorem".into()),
            advantages: AdvantageKind::Exact,
            mc_samples: 2000,
            mc_horizon: 100,
            init: InitKind::Uniform,
            init_scale: 1.0,
            cadence: 10,
            belief_horizon: 4,
            node_cap: 2_000_000,
            chain_cap: 1_000_000,
            record_wall_clock: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub method: BrMethod,
    pub budget: u64,
    pub npg_iterations: usize,
    pub npg_tolerance: f64,
    /// Random instances per inequality in `verify`.
    pub instances: usize,
    /// Belief horizon of the inequality checks.
    pub belief_horizon: usize,
    /// Iterations of the training run whose NE-gaps feed the bound check.
    pub bound_iterations: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            method: BrMethod::Auto,
            budget: 1 << 12,
            npg_iterations: 200,
            npg_tolerance: 1e-4,
            instances: 50,
            belief_horizon: 3,
            bound_iterations: 50,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.env.validate()?;
        self.train_config()?.validate()?;
        let t = &self.train;
        if t.belief_horizon == 0 && t.cadence > 0 {
            return Err(CliError::Validation(
                "train.belief_horizon must be at least 1".into(),
            ));
        }
        if !(t.init_scale.is_finite() && t.init_scale >= 0.0) {
            return Err(CliError::Validation(
                "train.init_scale must be finite and >= 0".into(),
            ));
        }
        let e = &self.eval;
        if e.instances == 0 || e.bound_iterations == 0 {
            return Err(CliError::Validation(
                "eval.instances and eval.bound_iterations must be positive".into(),
            ));
        }
        if !(e.npg_tolerance > 0.0) {
            return Err(CliError::Validation(
                "eval.npg_tolerance must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn step(&self) -> Result<StepSize, CliError> {
        match &self.train.step {
            StepSpec::Value(v) if *v > 0.0 && v.is_finite() => Ok(StepSize::Fixed(*v)),
            StepSpec::Named(s) if s == "theorem" => Ok(StepSize::Theorem),
            other => Err(CliError::Validation(format!(
                "train.step must be \"theorem\" or a positive number, got {other:?}"
            ))),
        }
    }

    pub fn best_response(&self) -> BrConfig {
        BrConfig {
            method: self.eval.method,
            exhaustive_budget: self.eval.budget,
            npg_iterations: self.eval.npg_iterations,
            npg_tolerance: self.eval.npg_tolerance,
        }
    }

    pub fn init_mode(&self) -> InitMode {
        match self.train.init {
            InitKind::Uniform => InitMode::Uniform,
            InitKind::Random => InitMode::Random {
                scale: self.train.init_scale,
                seed: self.seed,
            },
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let t = &self.train;
        Ok(TrainConfig {
            iterations: t.iterations,
            step: self.step()?,
            advantages: match t.advantages {
                AdvantageKind::Exact => AdvantageSource::Exact,
                AdvantageKind::MonteCarlo => AdvantageSource::MonteCarlo {
                    samples: t.mc_samples,
                    horizon: t.mc_horizon,
                },
            },
            init: self.init_mode(),
            seed: self.seed,
            cadence: t.cadence,
            beliefs: BeliefSettings {
                horizon: t.belief_horizon,
                node_cap: t.node_cap,
            },
            best_response: self.best_response(),
            chain_cap: t.chain_cap,
            record_wall_clock: t.record_wall_clock,
        })
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            instances: self.eval.instances,
            seed: self.seed,
            init_scale: self.train.init_scale.max(f64::MIN_POSITIVE),
            beliefs: BeliefSettings {
                horizon: self.eval.belief_horizon,
                node_cap: self.train.node_cap,
            },
            best_response: self.best_response(),
            ..SweepConfig::default()
        }
    }
}

/// Annotated defaults printed by `--help`.
pub const DEFAULTS_HELP: &str = "\
Config file (TOML), every key optional:
  seed = 0                      # also settable with --seed
  out = \"run\"                   # also settable with --out
  [env]
  env = \"matiger\"               # matiger | mabc | lbf | custom
  listen_accuracy = 0.85
  arrival_probs = [0.9, 0.1]
  collision_accuracy = 0.9
  grid_width = 4
  grid_height = 4
  sight_range = 1
  cooperative_lift = false
  food_reward = 1.0
  state_cap = 20000
  episode_horizon = 10          # Monte-Carlo rollouts only
  discount = 0.95
  model_path = \"model.json\"     # env = \"custom\" only
  [train]
  t_w = 1                       # window length of the internal states
  iterations = 100
  step = \"theorem\"              # or a positive number
  advantages = \"exact\"          # exact | monte-carlo
  mc_samples = 2000
  mc_horizon = 100
  init = \"uniform\"              # uniform | random (N(0, init_scale²) logits)
  init_scale = 1.0
  cadence = 10                  # NE-gap/d_b logging period, 0 = off
  belief_horizon = 4
  node_cap = 2000000
  chain_cap = 1000000
  record_wall_clock = false     # true makes the CSV non-reproducible
  [eval]
  method = \"auto\"               # exhaustive | npg-br | auto
  budget = 4096                 # largest exhaustive enumeration
  npg_iterations = 200
  npg_tolerance = 1e-4
  instances = 50                # random instances per inequality (verify)
  belief_horizon = 3            # belief horizon of the inequality checks
  bound_iterations = 50         # training run length for the bound check

Unknown keys are rejected.";
