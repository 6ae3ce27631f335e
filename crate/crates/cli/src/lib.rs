//! Command-line and HTTP front ends for brand attention scoring.

pub mod service;
pub mod setup;
