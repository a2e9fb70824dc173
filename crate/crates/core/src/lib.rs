//! Simulation laboratory for generalised preferential attachment trees.
//!
//! A tree grows one node at a time; the newcomer attaches to an existing node
//! `v` with probability proportional to `f(outdeg(v))`. Two engines sample the
//! same law of trees:
//!
//! * [`discrete::TreeState`] runs the attachment chain step by step.
//! * [`cmj::CmjState`] runs the continuous-time branching embedding, where each
//!   node gives birth after independent exponential waiting times with rates
//!   `f(0), f(1), ...`, and records the jump times `tau_k`.
//!
//! Weights are carried as base-2 logarithms ([`numerics::LogWeight`]) so that
//! the counter-example attachment function, whose values reach `2^(2^27)`,
//! can be simulated without overflow.

pub mod analysis;
pub mod attachment;
pub mod cmj;
pub mod discrete;
mod error;
pub mod numerics;

pub use attachment::{AttachmentSpec, BlockLayout, TailRule};
pub use error::{Error, Result};
pub use numerics::{LogWeight, RngStream};
