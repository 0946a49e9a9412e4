//! The heat-exchanger application: problem setup from a configuration,
//! design functionals, export, verification suites and the command line.

pub mod cli;
pub mod config;
pub mod export;
pub mod problem;
pub mod verify;

pub use cli::cli_main;
pub use config::{Configuration, ProblemConfig};
pub use export::{export_fields, read_vtk, HistoryWriter, VtkPointData, HISTORY_HEADER};
pub use problem::{
    build_problem, cost_functional, initial_design, pressure_drop, BufferZone, HxProblem, PortRoles,
};
pub use verify::{run_verification, SuiteReport};
