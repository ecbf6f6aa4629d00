//! Tabular internal-state natural policy gradient for partially observable
//! Markov potential games.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`]: finite games, benchmark environments and the JSON model format.
//! * [`internal`]: finite shared/local internal-state compressors.
//! * [`policy`]: softmax policy tables and the closed-form NPG step.
//! * [`oracle`]: exact augmented-chain values, occupancies, advantages and beliefs.
//! * [`mc`]: Monte-Carlo rollouts and estimators.
//! * [`trainer`]: the simultaneous NPG loop.
//! * [`evaluator`]: NE-gap, convergence constants and inequality checks.

pub mod error;
pub mod evaluator;
pub mod internal;
pub mod mc;
pub mod model;
pub mod oracle;
pub mod policy;
pub mod trainer;

pub use error::{Error, Result};
pub use internal::{InfoPoint, InternalStateSpec};
pub use model::{EnvParams, ModelReport, TabularPomg};
pub use policy::{JointPolicy, PolicyTable};

/// Row-sum tolerance for probability tables.
pub const PROB_TOL: f64 = 1e-12;
