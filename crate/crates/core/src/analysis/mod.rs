//! Feasibility, cost bounds and the sparsest-stabilizing-controller
//! pathway.

mod armp;
mod bounds;
mod feasibility;
mod sparsest;

pub use armp::{build_armp, discrete_rank_test, ArmpInstance, ArmpPoint, ARMP_EPS};
pub use bounds::{
    bounds, lower_bound, relaxation_sdp, upper_bound_output, upper_bound_state, BoundsReport, UpperBound,
};
pub use feasibility::{
    certificate_from_gain, feasibility_test, multiplier_step, FeasibilityReport, Verdict, FEAS_TOL,
};
pub use sparsest::{rank_penalty, sparsest_controller, SparsestResult};
