//! Momentum-conserving graph-network dynamics for systems of spheres.
//!
//! The crate is organised bottom-up:
//!
//! * [`geom`] holds 3-vectors and rotations.
//! * [`nn`] is a small reverse-mode autodiff engine with MLPs and Adam.
//! * [`frames`] builds the edge-local reference frames.
//! * [`graph`] turns a frame of body states into nodes, edges and wall ghosts.
//! * [`model`] is the message-passing network that predicts per-frame updates.
//! * [`dem`] is the soft-sphere simulator that produces ground truth.
//! * [`train`], [`rollout`] and [`verify`] fit, run and audit the model.

pub mod dem;
pub mod error;
pub mod frames;
pub mod geom;
pub mod graph;
pub mod model;
pub mod nn;
pub mod rollout;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use geom::{Rotation, Vec3};
