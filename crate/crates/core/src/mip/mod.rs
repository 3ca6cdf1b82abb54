// SPDX-License-Identifier: Apache-2.0

//! The mapping problem as an integer program.

pub mod build;
pub mod gadgets;
pub mod model;

pub use build::{
    buffer_rows, build_latency_constraints, build_mapping_constraints, build_model, build_objective, build_size_constraints,
    latency_cap_for, latency_upper_bound, BuildOptions, MappingModel, ObjectiveWeights, RowVars, VarIndex,
};
pub use model::{Assignment, Constraint, Literal, MipModel, Sense, VarId, VarKind, Variable};
