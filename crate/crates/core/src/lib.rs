//! Simulation toolkit for digital over-the-air gradient aggregation with
//! balanced numeral encoding, a non-coherent multi-antenna receiver, analog
//! and majority-vote baselines, closed-form error analysis, and a desk-scale
//! federated training loop.

pub mod baselines;
pub mod feel;
pub mod numerals;
pub mod phy;
pub mod stats;
