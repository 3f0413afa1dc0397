//! Cross-world causal inference: structural causal models with
//! observational, interventional-counterfactual, and backtracking-
//! counterfactual query engines, unified regime semantics, and
//! counterfactual explanation/attribution tooling.

pub mod dist;
pub mod error;
pub mod expr;
pub mod gaussian;
pub mod io;
pub mod kernel;
pub mod particle;
pub mod rng;
pub mod scm;
pub mod tabular;
pub mod value;

pub mod backtracking;
pub mod explain;
pub mod interventional;
pub mod unified;

#[cfg(test)]
pub(crate) mod testutil;

pub use dist::{endogenous_distribution, endogenous_distribution_mc, Distribution};
pub use error::{Error, Result};
pub use expr::Expr;
pub use gaussian::Gaussian;
pub use kernel::{DistanceSpec, DistanceTerm, Kernel, KernelKind, Property};
pub use particle::Particles;
pub use scm::{Assignment, CausalModel, Domain, StructuralLaw, VarKind};
pub use tabular::Tabular;
pub use value::Value;
