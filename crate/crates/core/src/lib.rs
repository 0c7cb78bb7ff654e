//! Uplink Massive MIMO simulator and user-cell association toolkit.
//!
//! The crate simulates the uplink of a multicell Massive MIMO network
//! (correlated Rayleigh fading, pilot-based MMSE channel estimation, MR and
//! multicell-MMSE combining), solves the capacitated sum-rate-maximizing
//! user-BS association exactly via min-cost max-flow, and trains a small
//! feedforward network to predict that association from user positions alone.
//!
//! Modules follow the processing pipeline:
//! - [`propagation`]: geometry, spatial correlation, channels, pilots, MMSE
//!   channel estimates.
//! - [`receiver`]: combining vectors, instantaneous SINRs, Monte-Carlo
//!   ergodic rate matrices.
//! - [`assignment`]: exact capacitated association solver plus a brute-force
//!   oracle and the sum-rate objective.
//! - [`dataset`]: labeled sample generation, feature/label codecs, splits and
//!   the newline-delimited JSON container format.
//! - [`mlp`]: from-scratch fully connected network with backprop and
//!   Nesterov-corrected Adam.
//! - [`cli`]: the `generate` / `train` / `eval` / `selftest` commands.

pub mod assignment;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod mlp;
pub mod propagation;
pub mod receiver;

pub use error::{Error, Result};
