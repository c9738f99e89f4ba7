//! Minimax lower-bound constructions for learning autonomous ODEs from trajectory data.

pub mod cli;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod hypotheses;
pub mod kernels;
pub mod region;
pub mod smoothness;
pub mod statmodel;
