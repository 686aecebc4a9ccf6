pub(crate) mod linalg;
pub mod panel;
pub mod splines;
pub mod clustering;
pub mod tvc;
pub mod baselines;
pub mod shapley;
pub mod config;
pub mod simulate;
pub mod report;
pub mod cli;
