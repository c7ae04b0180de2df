//! Occlusion-aware visual active tracking in a planar simulator.
//!
//! The crate is organised the way the tracking loop runs:
//!
//! * [`features`] builds synthetic instance manifolds and the target prototype
//!   (initialisation, cosine matching, EMA enhancement) together with the
//!   Monte-Carlo harness for the prototype separation results.
//! * [`estimator`] is the confidence-aware Kalman filter over bounding boxes.
//! * [`sim`] is the world: projection, ray-cast visibility, entity behaviours,
//!   episodes and metrics.
//! * [`dataset`] generates occlusion scenarios with A* expert trajectories.
//! * [`planner`] is the conditional denoising-diffusion trajectory planner.
//! * [`agent`] wires everything into the closed-loop policy.
//! * [`cli`] implements the `oavat` subcommands.

pub mod agent;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod estimator;
pub mod features;
pub mod planner;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
