//! Small dense SDP solver for block-LMI problems over symmetric-matrix variables.

mod block;
mod layout;
mod solver;
mod trace;

pub use block::{FrobeniusBall, LmiBlock};
pub use layout::SdpVariableLayout;
pub use solver::{
    find_strictly_feasible, newton_step, solve, solve_observed, Iterate, NewtonStep, SdpProblem, SolverOptions,
    SolverReport, SolverStatus,
};
pub use trace::{TraceRow, TraceWriter};
