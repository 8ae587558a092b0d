// Copyright 2026 The photonbox Authors
// SPDX-License-Identifier: Apache-2.0

pub mod error;
pub mod argmax;
pub mod delayed_feedback;
pub mod filter;
pub mod fock_ops;
pub mod harness;
pub mod linearized;
pub mod openloop;
pub mod trajectory;

pub use error::{Error, Result};
pub use num_complex::Complex64;
