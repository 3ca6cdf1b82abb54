// SPDX-License-Identifier: Apache-2.0

//! Dataflow mapping for multi-core compute-in-memory accelerators as a
//! mixed-integer program, with an exact analytical latency evaluator,
//! reference mappers and an exact branch-and-bound solver.
//!
//! The model and the arithmetic around it are generic over [`Scalar`]; the
//! aliases below fix the common instantiations.

pub mod arch;
pub mod baselines;
pub mod enumeration;
pub mod error;
pub mod latency;
pub mod mapping;
pub mod mip;
pub mod report;
pub mod scalar;
pub mod solve;
pub mod workload;

pub use arch::ArchSpec;
pub use enumeration::CandidateTable;
pub use error::{Error, Result};
pub use latency::{evaluate, LatencyReport};
pub use mapping::{verify_mapping, Mapping, MappingChoice, Problem, Violation};
pub use scalar::{ExactRatio, Scalar};
pub use workload::{Dim, FactorSet, FactorizationConfig, LayerShape, Operand, Workload};

/// Exact rational scalar used for model coefficients and weights.
pub type Rational = num_rational::Ratio<i64>;
/// Integer program with exact rational coefficients.
pub type RationalModel = mip::MipModel<Rational>;
/// Integer program with double-precision coefficients.
pub type FloatModel = mip::MipModel<f64>;
