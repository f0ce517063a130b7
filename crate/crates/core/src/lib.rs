// Copyright 2026 The revive-afl Authors
// SPDX-License-Identifier: Apache-2.0

pub mod aggregate;
pub mod data;
pub mod dfkd;
pub mod error;
pub mod harness;
pub mod nn;
pub mod sim;

pub use error::{Error, Result};
