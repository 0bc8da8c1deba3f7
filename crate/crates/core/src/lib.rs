pub mod analysis;
pub mod cli;
pub mod config;
pub mod datagen;
pub mod dataset;
pub mod designs;
pub mod error;
pub mod montecarlo;
pub mod model;
pub mod rng;

#[cfg(test)]
mod testutil;
