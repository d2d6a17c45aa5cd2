//! Simulation designs, Monte Carlo drivers, sample-file IO and the property
//! self-test suite for scaled product medians.

pub mod config;
pub mod experiments;
pub mod generators;
pub mod io;
pub mod selftest;
pub mod table;
