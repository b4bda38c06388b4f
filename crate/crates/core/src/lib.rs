//! Optimal decentralized LQ control over delay-labeled networks.
//!
//! The pipeline runs: network graph → delay matrix → information graph →
//! coupled Riccati recursions → controller realization, which can then be
//! simulated centrally or as a message-passing protocol, and checked against
//! a brute-force disturbance-feedback optimizer.

pub mod blockmat;
pub mod controller;
pub mod error;
pub mod fixtures;
pub mod generate;
pub mod infograph;
pub mod io;
pub mod messaging;
pub mod netgraph;
pub mod oracle;
pub mod problem;
pub mod riccati;

pub use blockmat::{BlockMatrix, BlockPartition, Blocking, NodeSet};
pub use error::{Error, Result};
pub use infograph::{InfoGraph, NoiseSymbol};
pub use netgraph::{delay_matrix, Delay, DelayMatrix, Edge, NetworkGraph};
pub use problem::{Disturbances, Horizon, LqProblem, Stage};
