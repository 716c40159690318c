//! Desk-scale simulator for federated class-incremental learning.
//!
//! Clients see a stream of tasks with disjoint class sets and keep a small
//! exemplar buffer of earlier tasks. The classifier is a fixed simplex
//! equiangular tight frame (ETF) that is rebuilt from a shared seed whenever
//! the class set grows. Local training adds an angular-structure distillation
//! term that pulls the cosine geometry of a batch toward the geometry of its
//! prototypes. At inference, an energy-gated correction removes head-subspace
//! drift from features of earlier classes.
//!
//! Modules:
//!
//! - [`geometry`]: ETF prototypes, head/tail projectors, subspace energies.
//! - [`model`]: small feature extractor, classification and structure losses.
//! - [`data`]: synthetic data, Dirichlet partitioning, replay buffers.
//! - [`fed`]: the federated round/task protocol and energy statistics.
//! - [`egc`]: inference-time gate, correction and prediction.
//! - [`harness`]: configuration, experiment driver, metrics and CSV output.

pub mod data;
pub mod egc;
mod error;
pub mod fed;
pub mod geometry;
pub mod harness;
pub mod model;
pub mod seed;

pub use data::{Dataset, ReplayBuffer, ReplayPolicy, Sample, TaskLayout};
pub use egc::{EgcConfig, Prediction};
pub use error::{Error, Result};
pub use fed::{ClientState, EnergyStats, ServerState};
pub use geometry::{EtfPrototypes, OrthoBasis, SubspaceProjectors};
pub use harness::{ExperimentConfig, ExperimentSummary};
pub use model::{ExtractorKind, GsaConfig, ModelParams, ModelShape};
