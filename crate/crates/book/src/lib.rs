// Copyright 2026 The revive-afl Authors
// SPDX-License-Identifier: Apache-2.0

//! Compiles and runs the code listings of the guide in `book/` as doctests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/staleness.md")]
pub mod staleness {}
#[doc = include_str!("../../../book/src/aggregation.md")]
pub mod aggregation {}
#[doc = include_str!("../../../book/src/distillation.md")]
pub mod distillation {}
#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
