//! Sequential quasi-Monte Carlo (SQMC) particle filtering.
//!
//! The crate provides the building blocks of an SQMC filter and its plain
//! SMC baseline over a generic Feynman–Kac model:
//!
//! * [`lowdisc`]: Sobol' point sets with digital-shift or Owen nested scrambling,
//!   and star discrepancy;
//! * [`hilbert`]: Hilbert-curve indexing and sorting of particles;
//! * [`transforms`]: inverse normal CDF, Gaussian inverse-Rosenblatt maps and
//!   the logistic map of the state space into the unit cube;
//! * [`resample`]: inverse-transform, systematic and sorted-uniform resampling;
//! * [`fk`]: the model trait, the SMC and SQMC engines and evidence estimates;
//! * [`smoothing`]: forward (additive and path) and backward smoothing;
//! * [`pmmh`]: particle marginal Metropolis–Hastings and chain diagnostics;
//! * [`models`]: bundled models with Kalman / RTS reference solutions.

pub mod fk;
pub mod hilbert;
pub mod lowdisc;
pub mod models;
pub mod pmmh;
pub mod resample;
pub mod seed;
pub mod smoothing;
pub mod transforms;
