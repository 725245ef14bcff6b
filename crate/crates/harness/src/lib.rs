//! Scenario harness for the visual predictive controller: configuration,
//! closed-loop scenarios, metrics, prediction study and artifact output.

pub mod config;
pub mod metrics;
pub mod oracles;
pub mod output;
pub mod predict;
pub mod scenarios;
pub mod selftest;
pub mod svg;
pub mod trajectory;

pub use config::{ScenarioConfig, ScenarioKind};
pub use scenarios::{run_scenario, ScenarioReport};
