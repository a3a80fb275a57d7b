//! Hybrid HMM-GMM / mixture-density-network model of packet-level traffic.
//!
//! The pipeline learns a small hidden-state backbone over normalized
//! `(log payload, inter-arrival time)` features, refines each state's
//! emission with a feed-forward mixture density network trained on
//! posterior-weighted likelihood, and samples synthetic flows in real time
//! from cached per-state mixtures.

pub mod generator;
pub mod hmm;
pub mod mdn;
pub mod metrics;
pub mod pipeline;
pub mod trace;
