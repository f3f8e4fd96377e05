//! Structural causal models for simulating the long-term effects of
//! decision policies.
//!
//! The crate covers graph construction and seeded simulation, atomic and
//! policy interventions, counterfactual inference by exact abduction,
//! off-policy evaluation (model-based, importance sampling and
//! counterfactual), and two model families: a contextual bandit and a
//! multi-step lending model.

pub mod bandit;
pub mod counterfactual;
pub mod error;
pub mod graph;
pub mod intervention;
pub mod lending;
pub mod mechanism;
pub mod model_json;
pub mod ope;
pub mod prior;
pub mod rng;
pub mod simulate;
pub mod value;
pub mod world;

pub use counterfactual::{abduct, abduct_with, counterfactual_worlds, NoisePosterior, NoiseRegion, SupportPolicy};
pub use error::{Error, Result};
pub use graph::{GraphSpec, NodeId, NodeKind, NodeSpec, ScmGraph};
pub use intervention::{compose, do_atomic, do_policy, interventional_estimate, Intervention};
pub use mechanism::{build_mechanism, Equation, Input, Mechanism};
pub use model_json::{read_model, write_model, ModelDescription};
pub use ope::{EvaluationReport, LoggedDataset, Method, Policy, Query};
pub use prior::NoisePrior;
pub use simulate::{estimate, evaluate, sample_exogenous, sample_worlds, Estimate};
pub use value::ValueKind;
pub use world::{Exogenous, Values, World};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
