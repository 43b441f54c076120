//! Joint trajectory and transmit-power design for a UAV sending
//! confidential data to a ground receiver while a ground eavesdropper
//! listens, with finite-blocklength coding.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: scenario types and the closed-form rate expressions.
//! - [`surrogate`]: first-order convex surrogates of the trajectory and
//!   power subproblems, emitted as [`surrogate::StructuredConvexProgram`]s.
//! - [`solver`]: a barrier interior-point method for those programs.
//! - [`driver`]: the alternating successive-convex-approximation loop and
//!   the two benchmark schemes.
//! - [`cli`]: configuration files, CSV output and the command-line verbs.
//!
//! The guide in `book/` walks through the same pieces with runnable
//! snippets; they are compiled and run as doc-tests of this crate.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod driver;
pub mod model;
pub mod solver;
pub mod surrogate;

pub use driver::{run_ftp_inf, run_jtpo, run_poft, RunResult, SchemeId};
pub use model::{PowerProfile, ScenarioConfig, Trajectory};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/link-model.md")]
    mod link_model {}
    #[doc = include_str!("../../../book/src/surrogates.md")]
    mod surrogates {}
    #[doc = include_str!("../../../book/src/solver.md")]
    mod solver {}
    #[doc = include_str!("../../../book/src/alternating.md")]
    mod alternating {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
