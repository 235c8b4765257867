//! Alternating gradient and proximal sweeps, and the perturbed drivers built on them.

mod constants;
mod driver;
mod sweep;
mod trace;

pub use constants::{
    default_budget, derive_constants, iteration_bound, DerivedConstants, PagdInputs, ProofScales, RunConstants,
    Variant, MAX_BUDGET,
};
pub use driver::{check_penalty, pagd_run, papp_run, run, warn_penalty, RunOptions};
pub use sweep::{agd_sweep, app_sweep, solve_prox_block, GradSweep, InnerMethod, InnerSolveConfig, ProxSweep};
pub use trace::{IterRecord, Method, PerturbationEvent, Termination, Trace};
