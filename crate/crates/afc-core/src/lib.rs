//! Simulator and analysis toolkit for the full spin-wave atomic-frequency-
//! comb (AFC) optical memory protocol.
//!
//! The crate covers the protocol end to end:
//!
//! - [`comb`]: comb geometry, the analytic forward-efficiency formulas,
//!   inversion of measured observables to comb parameters, and comb design.
//! - [`propagation`]: causal linear filtering of weak complex envelopes
//!   through an optical-depth spectrum, echo detection, photon counting.
//! - [`spinwave`]: the three-level layer (Rabi transfer, spin dephasing,
//!   laser phase noise, partial readouts) and the full storage sequence.
//! - [`prep`]: rate-equation hole burning that tailors the comb from an
//!   inhomogeneously broadened ion ensemble.
//! - [`fit`]: weighted least-squares estimators for the derived quantities.
//! - [`experiments`]: scripted, seeded experiment presets over the
//!   simulator.
//!
//! Units everywhere: ordinary frequencies in MHz, times in us, powers in
//! mW. Data-parallel loops honour the `parallel` feature (see [`exec`]).

pub mod comb;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod fft;
pub mod fit;
pub mod grid;
pub mod io;
pub mod prep;
pub mod propagation;
pub mod spinwave;

pub use error::{Error, Result};
