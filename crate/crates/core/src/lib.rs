//! Role-ordered multi-agent trajectory forecasting.
//!
//! Players are scored, soft-ranked and softly permuted into role slots, a
//! graph convolution runs over the slots, and a temporal convolutional
//! decoder predicts future positions that are then mapped back to players.

pub mod decoder;
pub mod diffcore;
pub mod error;
pub mod gamedata;
pub mod metrics;
mod nn;
pub mod oracles;
pub mod ordernn;
pub mod perturb;
pub mod rolegcn;
pub mod softsort;
pub mod trainer;

pub use diffcore::{check_gradients, DifferentiableOp, GradientReport, Rng, RngState, Tensor};
pub use error::{Error, Result};
pub use gamedata::{AgentRole, DatasetSplit, SynthConfig, TrajectorySequence};
pub use metrics::{ForecastErrors, MetricsRow};
pub use nn::Dense;
pub use oracles::{OrderingKind, OrderingSpec, ReferenceFrame};
pub use ordernn::{ScoreNetwork, SoftPermutation};
pub use perturb::{PerturbKind, PerturbSpec};
pub use rolegcn::{AdjacencyConfig, AdjacencyPair, RoleGcn};
pub use softsort::{Permutahedron, SoftRankResult};
pub use trainer::{Checkpoint, ExperimentConfig, Forecaster, Variant};
