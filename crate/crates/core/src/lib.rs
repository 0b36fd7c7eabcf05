//! Estimation for two-state nonparametric hidden Markov models near the i.i.d. frontier.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod density;
pub mod eigen;
pub mod empirical;
pub mod error;
pub mod grid;
pub mod harness;
pub mod model;
pub mod moments;
pub mod separation;
pub mod simulate;
pub mod stats;
pub mod synthetic;
pub mod wavelets;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/model.md")]
    pub struct Model;
    #[doc = include_str!("../../../book/src/wavelets.md")]
    pub struct Wavelets;
    #[doc = include_str!("../../../book/src/simulation.md")]
    pub struct Simulation;
    #[doc = include_str!("../../../book/src/moments.md")]
    pub struct Moments;
    #[doc = include_str!("../../../book/src/separation.md")]
    pub struct Separation;
    #[doc = include_str!("../../../book/src/densities.md")]
    pub struct Densities;
    #[doc = include_str!("../../../book/src/harness.md")]
    pub struct Harness;
}
