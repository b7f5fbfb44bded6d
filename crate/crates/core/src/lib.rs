//! Numerical laboratory for quasiperiodic SL(2,R) cocycles and the almost
//! Mathieu operator.
//!
//! The crate is organized in layers:
//! * [`arithmetic`] — exact continued-fraction arithmetic for frequencies,
//!   torus norms, and resonance scans;
//! * [`mat2`] — closed-form 2x2 matrix operations;
//! * [`cocycle`] — iteration, Lyapunov exponents, fibered rotation numbers,
//!   growth profiles;
//! * [`spectrum`] — periodic-approximant band spectra, integrated density of
//!   states, gap labels and gap-decay experiments;
//! * [`kam`] — analytic conjugation steps (non-resonant and resonant), the
//!   full iteration with structured tracing, and the rotation-number-guided
//!   backward step;
//! * [`duality`] — Fourier rows of conjugacies, dual lattice sequences,
//!   Wronskian diagnostics and finite-box localization experiments;
//! * [`growth`] — piecewise growth-envelope predictions and measured-vs-
//!   predicted growth reports.

pub mod arithmetic;
pub mod cocycle;
pub mod duality;
pub mod error;
pub mod fourier;
pub mod growth;
pub mod kam;
pub mod mat2;
pub mod spectrum;

pub use error::{Error, Result};
