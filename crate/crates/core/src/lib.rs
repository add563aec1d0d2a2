//! Desk-scale source-free active domain adaptation.
//!
//! A source classifier is adapted to a shifted, unlabeled target domain using
//! two supervisors: a small oracle-labeled query set, and a frozen
//! random-feature surrogate whose only learnable state is a bank of prompt
//! context vectors. The surrogate is first tuned on the query set ([`dfs`]),
//! then target model and prompts teach each other epoch by epoch ([`adl`]).
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the experiment
//! harness and the CLI live in the companion `dam-lab` crate.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod active;
pub mod adl;
pub mod datagen;
pub mod dfs;
pub mod diffcore;
mod error;
pub(crate) mod math;
pub mod models;
pub mod optim;
pub mod rng;
pub mod vilsurrogate;

pub use error::{Error, Result};
