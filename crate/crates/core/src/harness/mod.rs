//! Experiment harness: configuration files, the layer corpus, comparison
//! workflows, reports and the acceptance suite.

pub mod config;
pub mod corpus;
pub mod report;
pub mod run;
pub mod validate;

pub use config::{load_config, parse_config, Config, CONFIG_SCHEMA};
pub use corpus::{amdahl_end_to_end, corpus, corpus_layers, desk_scale, find_layer, find_network, networks, NetworkLayer, NetworkSpec};
pub use report::{emit_report, Format, Report};
pub use run::{cmd_compare, cmd_report, cmd_simulate, cmd_sweep, operands, CompareOptions};
pub use validate::{cmd_validate, Outcome, ValidateOptions};
