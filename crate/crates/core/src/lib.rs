pub mod agents;
pub mod config;
pub mod dynamics;
pub mod env;
pub mod guard;
pub mod line;
pub mod metrics;
pub mod neural;
