//! Core library for agent-driven design and training of variational quantum
//! circuits on a small regression benchmark.

pub mod circuit;
pub mod sim;
pub mod dataset;
pub mod rng;
pub mod nn;
pub mod arch;
pub mod tools;
pub mod agent;
