//! Episode-based policy search over Gaussian search distributions for
//! open-loop quadruped gaits.
//!
//! The crate is organised bottom-up:
//!
//! - [`policy`]: cyclic von Mises basis and the central-pattern-generator
//!   trajectory it produces.
//! - [`control`]: PD law turning desired joint positions and velocities into
//!   clamped torques.
//! - [`sim`]: a deterministic surrogate quadruped with stance-foot trunk
//!   transport, a static-stability fall heuristic and the episode reward.
//! - [`search`]: the Gaussian search distribution and gait-symmetry
//!   covariance templates built from quarter-phase weight permutations.
//! - [`algos`]: likelihood-ratio policy gradient and relative entropy policy
//!   search updates.
//! - [`harness`]: multi-trial experiment runner and CSV outputs.

// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algos;
pub mod control;
pub mod error;
pub mod harness;
pub mod policy;
pub mod search;
pub mod sim;

pub use error::{Error, Result};

/// Number of actuated joints (hip + knee on each of four legs).
pub const NUM_JOINTS: usize = 8;
/// Number of legs.
pub const NUM_LEGS: usize = 4;
