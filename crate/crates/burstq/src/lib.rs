//! Decoding-failure analysis for random block codes over two-state
//! burst-noise channels, and the queueing consequences of retransmission.
//!
//! The crate follows one pipeline end to end:
//!
//! * [`channel`] describes finite-state channels whose state modulates a
//!   binary symmetric crossover, in discrete time or through a generator.
//! * [`occupation`] gives the joint law of the time spent in the bad state
//!   together with the endpoint states, both exactly per block length and in
//!   the slow-transition limit, plus a general weighted-occupation CDF.
//! * [`bounds`] turns occupation laws into random-coding failure bounds,
//!   with optional detection margins for decision feedback.
//! * [`exact`] computes the exact failure probability of a random code
//!   under threshold decoding, the quantity the bounds chase.
//! * [`queueing`] feeds block-level success probabilities into a
//!   phase-modulated M/G/1-type queue and solves for stationary tails.
//! * [`montecarlo`] cross-checks the analytic path by direct simulation.
//! * [`pipeline`] wires the stages together: margin selection, traffic
//!   calibration, parameter sweeps, and figure/CSV emission.

pub mod bounds;
pub mod channel;
mod error;
pub mod exact;
pub mod math;
pub mod montecarlo;
pub mod occupation;
pub mod pipeline;
pub mod queueing;

pub use error::{Error, Result};
