//! Experiment harness and command-line front end for the `sqmc` filters:
//! replicated SMC/SQMC comparisons, gain tables, CSV and SVG reports.

pub mod cli;
pub mod experiment;
pub mod io;
pub mod report;
pub mod setup;
