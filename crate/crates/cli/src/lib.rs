//! Protocol configs, experiment runners and result persistence for the
//! `poscm` command-line tool.

pub mod catalog;
pub mod config;
pub mod record;
pub mod runners;

pub use config::{ConfigError, Experiment, ProtocolConfig};
pub use record::{emit_plot_data, read_plot_data, Check, RunRecord, Table};
pub use runners::{run, RunError};
