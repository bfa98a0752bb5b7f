//! Verification instruments: finite differences, exhaustive trajectory
//! enumeration, and the gradient-norm probe.

mod enumerate;
mod fd;
mod probe;

pub use enumerate::{
    all_trajectories, entropy_ascent, enumerate_trajectories, monte_carlo_check, toy_model, EnumerationReport,
    MonteCarloReport, NamedGradient, Projection, Reward, TRAJECTORY_BUDGET,
};
pub use fd::{finite_diff_check, model_gradient_check, model_loss, LossPart, relative_error, ArrayError, FdOptions, FdReport};
pub use probe::{grad_norm_probe, write_csv, GradNormProfile, ProbeTarget, CSV_HEADER, DEFAULT_PROBE_STEPS};
mod reference;
pub use reference::{plain_equivalence, EquivalenceReport, PlainLstm, Reduction, ReferenceBackward, ReferenceForward};
mod ops;
pub use ops::{op_checks, op_names};
mod suite;
pub use suite::{render_table, run_suite, Category, CheckResult, SuiteOptions, WORKED_EXAMPLES};
