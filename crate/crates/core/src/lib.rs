//! Tracking of periodic point sets through a constrained flow network, with
//! dense displacement fields and Lagrangian strain on top.
//!
//! The usual path is [`pipeline::track`] on a [`model::FrameSequence`],
//! then [`pipeline::densify`] and [`pipeline::strain_series`] on the
//! recovered trajectories.

pub mod config;
pub mod error;
pub mod eval;
pub mod features;
pub mod field;
pub mod io;
pub mod model;
pub mod network;
pub mod pipeline;
pub mod sampling;
pub mod solver;
pub mod strain;
pub mod synth;

pub use error::Error;
