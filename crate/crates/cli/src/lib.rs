//! Library side of the `declip` command-line tool: the evaluation table,
//! the per-region waveform report and the mapping from failures to exit
//! codes. The binary only parses flags and moves files around.

mod error;
pub mod eval;
pub mod region;

pub use error::{exit_code, HarnessError, Result, EXIT_DATA, EXIT_NUMERICAL, EXIT_USAGE};
pub use eval::{evaluate, write_csv, write_pretty, EvalRow, EvalSpec, Method, SCHEMA_VERSION};
pub use region::{region_report, write_dump, RegionReport};
