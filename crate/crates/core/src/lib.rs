//! Recurrent sum-product-max networks: learning from sequential decision data and
//! computing maximum expected utility and policies for finite horizons.

pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod data;
pub mod structure;
pub mod validity;
pub mod builder;
pub mod evaluator;
pub mod envs;
pub mod io;
pub mod fuzz;
pub mod bench;

pub use error::{Error, Result};
pub use eval::{evaluate_bottom_up, EvalOptions, Evaluation, Evidence, Mode, Observation};
pub use graph::{DualValue, Network, NodeId, NodeKind, Scope, Symbol, VarId};
pub use model::{
    PartialOrder, RspmnModel, Slot, TemplateNetwork, TopNetwork, VarKind, VariableMeta,
};
