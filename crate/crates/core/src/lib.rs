//! Control layer and cost simulator for early-abort image generation.
//!
//! Iterative generators asked for several objects often finish without some
//! of them. Rather than evaluating finished images and regenerating, this
//! crate models the alternative: predict mid-run whether the final image
//! will contain every requested object (and satisfy any requested spatial
//! relations), abort doomed runs at a critical timestep, and restart with a
//! fresh seed under a bounded retry policy.
//!
//! - [`gating`]: object/relation domain types, the joint gate, and the
//!   pluggable presence detectors.
//! - [`pfi`]: projection of an intermediate latent to a predicted final
//!   state on toy latent processes.
//! - [`cost`]: Monte Carlo simulation and closed-form analysis of the time
//!   saved (or lost) by gating.
//! - [`orchestrator`]: the seed-restart state machine with fallback seed
//!   selection, plus a manifest replay driver.
//! - [`evaluation`]: fidelity metrics over labeled generation records and
//!   the manifest schema they travel in.

pub mod cost;
pub mod error;
pub mod evaluation;
pub mod gating;
pub mod orchestrator;
pub mod pfi;
pub mod rng;

pub use error::{Error, Result};
