//! Tri-level "learning from mistakes" architecture search.
//!
//! Two learners share a continuous cell architecture. The first is trained
//! on the training split; its validation mistakes, combined with encoder
//! similarity and label agreement, re-weight training examples for the
//! second learner; the architecture, encoder and coefficient vector are
//! then moved to reduce the second learner's validation loss.
//!
//! The crate is `no_std` + `alloc`. File formats, configuration and the
//! command line live in the companion `lfm` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod evaluation;
pub mod models;
pub mod params;
pub mod reweight;
pub mod rng;
pub mod search_space;
pub mod tensor;
pub mod trilevel;

pub use error::{Error, Result};
