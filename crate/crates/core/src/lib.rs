//! Discrete-event simulation of load-balanced parent selection in
//! low-power lossy networks.

pub mod automaton;
pub mod metrics;
pub mod netmodel;
pub mod protocol;
pub mod rng;
pub mod simcore;
