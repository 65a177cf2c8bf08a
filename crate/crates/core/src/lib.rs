//! Smart-bin fleet simulation, fog-gateway batching and the city service
//! that turns bin and station reports into crew work.

pub mod canonical;
pub mod cli;
pub mod central;
pub mod domain;
pub mod gateway;
pub mod sensing;
pub mod simulator;
