//! Desk-scale laboratory for online self-supervised adaptation of a toy
//! modular driving model.
//!
//! The pipeline: a deterministic kinematic world ([`worldsim`]) feeds a
//! small perception/prediction/planning stack ([`model`]) built on a
//! reverse-mode autodiff core ([`autodiff`]). After offline pretraining
//! ([`trainer`]), the [`evopsf`] loop watches the planner's score entropy,
//! and when it rises past a threshold it updates the model online from its
//! own next-frame perception, restricted to the objects the planner attends
//! to most and filtered by detection confidence. [`metrics`] and
//! [`harness`] measure and orchestrate the whole thing.

pub mod autodiff;
pub mod error;
pub mod evopsf;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod trainer;
pub mod worldsim;

pub use error::{Error, Result};
