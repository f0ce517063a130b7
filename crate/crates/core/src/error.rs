// Copyright 2026 The revive-afl Authors
// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: String, actual: String },

    #[error("non-finite values produced at layer {layer}")]
    NumericInstability { layer: usize },

    #[error("parameter vectors bound to different model specs ({left:#x} vs {right:#x})")]
    Binding { left: u64, right: u64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown client {0}")]
    UnknownClient(usize),

    #[error("client {0} already has a job in flight")]
    ClientBusy(usize),

    #[error("event queue exhausted")]
    SimulationExhausted,

    #[error("internal consistency violated: {0}")]
    Consistency(String),

    #[error("local training diverged on client {client}")]
    TrainingDivergence { client: usize },

    #[error("generator synthesis produced a non-finite loss")]
    SynthesisDivergence,

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dims(expected: impl ToString, actual: impl ToString) -> Self {
        Error::Dimension {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
