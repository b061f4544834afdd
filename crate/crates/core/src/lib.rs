//! Intent handover for mobile AI agents, as a deterministic discrete-event
//! simulation.
//!
//! A user's intent is decomposed into subtasks that execute on edge nodes.
//! When the user is about to leave a node's coverage, the hosting agent ranks
//! neighbouring nodes from swarm-collected metrics and ships a handover
//! package (task state, learned policy, semantic TTL, link parameters) to the
//! best one, so execution resumes without recomputation. Rendezvous points
//! cache packages and keep an audit log. Outcomes feed back into the ranking
//! weights and the state-transfer vs full-offload choice.
//!
//! ```no_run
//! let sc = waan::load_scenario("scenarios/casestudy.scenario").unwrap();
//! let out = waan::run(&sc, 1, waan::Mode::Waan).unwrap();
//! let report = waan::report_from_trace(&out.trace).unwrap();
//! println!("{} units executed", report.executed_units());
//! ```

pub mod adapt;
pub mod domain;
pub mod handover;
pub mod kernel;
pub mod matrix;
pub mod rendezvous;
pub mod report;
pub mod scenario;
pub mod sim;
pub mod swarm;
pub mod trace;

pub use matrix::{run_matrix, Cell};
pub use report::{report_from_trace, RunReport};
pub use scenario::{load_scenario, parse_scenario, Mode, Scenario, ScenarioError};
pub use sim::{run, RunError, RunOutput};
pub use trace::TraceLine;
