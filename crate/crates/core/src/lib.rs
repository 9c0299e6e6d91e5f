//! Learn how decision makers combine task features, an AI recommendation and
//! a feature-attribution explanation, then optimize explanations that steer
//! those decisions toward chosen targets.

pub mod behavior;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod explain;
pub mod manipulate;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod sim;
pub mod synth;
pub mod targets;

pub use error::{Error, Result};
