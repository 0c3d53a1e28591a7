//! Simulation and analysis toolkit for chemical-reaction demodulators of
//! concentration-modulated molecular-communication signals.

pub mod circuit;
pub mod config;
pub mod crn;
pub mod dcs2;
pub mod demod;
pub mod experiments;
pub mod hill;
pub mod rdme;
pub mod rng;
pub mod signal;
pub mod trajectory;
