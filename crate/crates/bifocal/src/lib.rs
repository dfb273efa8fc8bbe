//! A small, self-contained RNN transducer built around a switching recurrent
//! cell: several LSTM branches of different widths share one timeline, a
//! per-frame signal picks which branch runs, and learned projections carry
//! state across branch switches. The crate covers training (hand-derived
//! gradients, no autodiff), greedy/beam decoding, a parameter/FLOPs costing
//! model, a streaming catch-up latency simulator, and a synthetic task
//! generator for end-to-end checks.

pub mod cell;
pub mod checkpoint;
pub mod config;
pub mod costing;
pub mod data;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod lstm;
pub mod numerics;
pub mod schedule;
pub mod stream_sim;
pub mod train;
pub mod transducer;

pub use error::{Error, Result};
