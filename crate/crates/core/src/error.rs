// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("io: {0}")]
    Io(String),

    #[error("workload: {0}")]
    Workload(String),

    #[error("architecture: {field}: {message}")]
    Arch { field: String, message: String },

    #[error("configuration: {0}")]
    Config(String),

    #[error("factor list of length {len} exceeds the partition-enumeration cap {cap}; pre-merge factors first")]
    FactorListTooLong { len: usize, cap: usize },

    #[error("candidate explosion for operand {operand} at level {level}: {count} candidates exceed the cap {cap}; tighten the factorization config (larger alpha or smaller k_min)")]
    CandidateExplosion { operand: String, level: usize, count: usize, cap: usize },

    #[error("model build: {0}")]
    Build(String),

    #[error("infeasible before solve: {0}")]
    Infeasible(String),

    #[error("assignment violates {constraint}")]
    Violation { constraint: String },

    #[error("mps export: {0}")]
    Export(String),

    #[error("solution parse: {0}")]
    Parse(String),

    #[error("solver: {0}")]
    Solver(String),

    #[error("mapping space of {size} exceeds the exhaustive cap {cap}")]
    SpaceTooLarge { size: u128, cap: u128 },

    #[error("structure: {0}")]
    Structure(String),

    #[error("report: {0}")]
    Report(String),
}

impl Error {
    pub(crate) fn arch(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Arch { field: field.into(), message: message.into() }
    }
}
