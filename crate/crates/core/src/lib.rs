//! Biometric identification of quasi-periodic physiological signals by
//! relative compression.
//!
//! The pipeline is: low-pass filter, first-order differences, a per-identity
//! Lloyd-Max quantizer, and an extended-alphabet finite-context model
//! ([`xafcm::XaModel`]) per enrolled identity. A test segment is attributed to
//! the identity whose model needs the fewest bits to describe it, measured as
//! a normalized relative compression ([`identity::nrc`]).

pub mod dataset;
pub mod error;
pub mod eval;
pub mod identity;
pub mod quantizer;
pub mod signal;
pub mod xafcm;

pub use error::{DecodeError, DecodeErrorKind, Error, Result};
