//! Core library for a concolic truncation detector.
//!
//! The pieces fit together like this: [`isa`] parses and concretely runs a
//! small x86-64-flavoured assembly dialect, [`bitvec`] is the bit-vector
//! expression language used for symbolic values, [`engine`] runs a program
//! concretely while mirroring every input-derived value symbolically,
//! [`shadow`] tracks declared integer widths through registers and stack
//! slots, [`checker`] turns suspicious width changes into solver jobs, and
//! [`solver`] decides them by bounded model enumeration, falling back to an
//! SMT-LIB dump when the search space is too large. [`replay`] re-runs a
//! produced witness input and reports whether the truncation actually
//! changes the value at the flagged instruction.

pub mod bitvec;
pub mod checker;
pub mod engine;
pub mod isa;
pub mod replay;
pub mod report;
pub mod shadow;
pub mod smtlib;
pub mod solver;

pub use bitvec::{Assignment, BvExpr, VarId};
pub use engine::{
    analyze, run_program, Analysis, AnalyzeOptions, BranchRecord, EngineConfig, EngineError,
    PendingSite, RunOutcome,
};
pub use replay::{reproduce, ReplayOutcome, ReplaySpec};
pub use report::{RunReport, TruncationKind, TruncationWarning, Verdict, WarningRecord};
pub use solver::{SolverConfig, SolverJob, SolverVerdict};
