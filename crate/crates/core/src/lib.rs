//! Robust beamforming simulator for RIS-aided RSMA downlinks under three
//! hardware imperfections: RIS amplitude-phase coupling, transceiver hardware
//! impairments, and imperfect successive interference cancellation.
//!
//! The crate provides:
//! - the practical RIS element model and its truncated-Taylor amplitude
//!   moments ([`ris`]),
//! - channel generation with deterministic seeding ([`channel`]),
//! - SINR / achievable-rate evaluation for RSMA, SDMA and NOMA under the full
//!   impairment model ([`rate`]),
//! - the closed-form asymptotic SNR analysis and its Monte Carlo validation
//!   ([`asymptotic`]),
//! - the alternating optimization pipeline: fractional-programming precoder
//!   updates ([`precoder`]), ADMM phase-shift optimization with a coupled
//!   amplitude-phase manifold projection ([`phase`]), and the outer loop with
//!   baseline designs ([`ao`]),
//! - Monte Carlo experiment campaigns with reproducible seeding and
//!   plot-ready CSV output ([`campaign`]).

pub mod ao;
pub mod asymptotic;
pub mod campaign;
pub mod channel;
pub mod error;
pub mod phase;
pub mod precoder;
pub mod rate;
pub mod ris;
pub(crate) mod solver;
pub(crate) mod stats;
pub mod units;
pub mod validate;

pub use error::{Result, RismaError};
