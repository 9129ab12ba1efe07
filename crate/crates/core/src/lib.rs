//! Performative recommendation with strategic content creators.
//!
//! The crate is organized bottom-up:
//!
//! - [`adcore`]: dense reverse-mode autodiff used by every objective.
//! - [`ranking`]: NDCG, intra-list diversity, their soft relaxations, MMR.
//! - [`graph`]: user/item recommendation graphs and their generators.
//! - [`strategic`]: creator targets and the closed-form best response.
//! - [`groundtruth`]: synthetic worlds and the relevance oracle.
//! - [`learning`]: training objectives, Adam ascent, lambda tuning.
//! - [`dynamics`]: retraining rounds and method policies.
//! - [`cli`]: experiment drivers, CSV output, plots and verifiers.

// `!(x > 0.0)` guards also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::manual_is_multiple_of)]

pub mod adcore;
pub mod cli;
pub mod dynamics;
pub mod error;
pub mod graph;
pub mod groundtruth;
pub mod learning;
pub mod ranking;
pub mod strategic;

pub use error::{Error, Result};
