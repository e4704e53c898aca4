//! Federated GAN intrusion detection.
//!
//! Nodes train a small generator/discriminator pair on the traffic they see
//! ([`gan`]), proxy servers combine node updates with priority-derived
//! impacts ([`aggregate`], [`coordination`]) and a central server combines
//! the cluster models the same way. [`sim`] drives the whole hierarchy
//! deterministically from a seed; [`io`] covers configuration, CSV
//! features, checkpoints and the metrics stream.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregate;
pub mod coordination;
pub mod eval;
pub mod gan;
pub mod io;
pub mod mlp;
pub mod rng;
pub mod sim;
