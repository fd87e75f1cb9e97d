// SPDX-License-Identifier: MIT OR Apache-2.0

//! Minimal-alteration conversation benchmarks: dataset types, lexical
//! rewriting, a world-state oracle, an evaluation harness, robustness
//! metrics and a small traceable transformer for causal interventions.

pub mod alter;
pub mod error;
pub mod harness;
pub mod io;
pub mod lexical;
pub mod metrics;
pub mod model;
pub mod prompts;
pub mod rng;
pub mod validate;
pub mod synth;
pub mod tinylab;
pub mod world;

pub use error::{Error, Result};
pub use model::*;
pub use rng::SeededRng;
