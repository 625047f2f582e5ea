#![allow(clippy::needless_range_loop)]

pub mod benchmark;
pub mod bnb;
pub mod cli;
pub mod envelope;
pub mod error;
pub mod heuristic;
pub mod lp;
pub mod report;
pub mod scenario;
pub mod stats;
pub mod utility;
