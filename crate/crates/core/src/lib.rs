//! Spectral reasoning over time-domain signals.
//!
//! A signal is preconditioned ([`signal`]), turned into a rational or Krylov
//! spectral estimate ([`pade`], [`lanczos`]), decomposed into Lorentzian atoms
//! ([`sparse`]), projected onto discrete predicates ([`symbolic`]) and reasoned
//! over with stratified Horn rules that leave a replayable proof trace
//! ([`rules`]). [`pipeline`] wires the stages together.

pub mod error;
pub mod lanczos;
mod linalg;
pub mod pade;
pub mod pipeline;
pub mod rules;
pub mod signal;
pub mod sparse;
pub mod symbolic;

pub use error::{Error, Result};
pub use linalg::C64;
