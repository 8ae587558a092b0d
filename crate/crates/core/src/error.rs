// Copyright 2026 The photonbox Authors
// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    /// Parameters violate a model invariant (invertibility, ranges, shapes).
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// A precondition of an oracle or operation does not hold for the given input.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The simulation left the state space or hit a degenerate outcome probability.
    #[error("numerical fault: {0}")]
    NumericalFault(String),

    /// Malformed configuration input.
    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },

    /// Configuration is well-formed but inconsistent.
    #[error("config error: {0}")]
    ConfigInvalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors that stem from user-supplied configuration or parameters.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::InvalidParams(_) | Error::Config { .. } | Error::ConfigInvalid(_)
        )
    }

    /// Tags a numerical fault with the trajectory it aborted.
    pub fn in_trajectory(self, traj: usize) -> Self {
        match self {
            Error::NumericalFault(msg) => Error::NumericalFault(format!("trajectory {traj}: {msg}")),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
