//! Subcommand implementations.

mod audit;
mod domain_gap;
mod partition_inspect;
mod run;
mod sweep;

pub use audit::cmd_audit;
pub use domain_gap::cmd_domain_gap;
pub use partition_inspect::cmd_partition_inspect;
pub use run::cmd_run;
pub use sweep::cmd_sweep;
