//! Core of the puncturing lab: a mini-slot URLLC puncturing simulator, a small
//! dense Q-network engine with hand-written backpropagation, the three
//! exploration agents (epsilon-greedy, variance-based, maximum-entropy) and the
//! training and probing procedures built on top of them.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, plotting and the
//! command line live in the `punctlab` companion crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod agents;
mod error;
pub mod nn;
pub mod rng;
pub mod sim;
pub mod trainer;

pub use error::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;
