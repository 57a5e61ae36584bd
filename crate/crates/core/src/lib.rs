//! Simulation and verification laboratory for the naming game on the
//! complete graph.
//!
//! * [`model`]: the full process, with an agent-clock scheduler and a
//!   per-edge graphical construction.
//! * [`observables`]: word ledger, cluster index and agreement statistics,
//!   maintained per event.
//! * [`reduced`]: the two-word `(X, Y, Z)` chain and its Gillespie simulation.
//! * [`ode`]: the mean-field system, its fixed points and the consensus constant.
//! * [`concentration`]: empirical checks of martingale and Poisson tail bounds
//!   and the branching dominator of cluster growth.
//! * [`harness`]: declarative ensembles, regressions and CSV/JSON output.

pub mod concentration;
pub mod harness;
pub mod model;
pub mod observables;
pub mod ode;
pub mod reduced;
pub mod rng;
pub mod stats;
