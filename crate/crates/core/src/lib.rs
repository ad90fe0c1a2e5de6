//! Weakly supervised multi-class classification through a convex relaxation
//! of the soft-max loss with intercept.
//!
//! The pipeline is:
//!
//! 1. describe the task with a [`problem::WeakDataset`] (bags, bag labels,
//!    feasible latent labels, instance weights) and build its
//!    [`problem::ReductionMap`];
//! 2. build the reweighted Gram matrix with [`kernel`];
//! 3. minimise the relaxed objective over the elliptope with
//!    [`outer::solve_outer`], which calls the entropic inner solver
//!    [`inner::solve_inner`] for every function evaluation;
//! 4. round the relaxed equivalence matrix with [`rounding::spectral_round`]
//!    and refine with [`rounding::em_refine`].

pub mod error;
pub mod inner;
pub mod io;
pub mod kernel;
pub mod kmeans;
pub mod lbfgs;
pub mod linalg;
pub mod outer;
pub mod problem;
pub mod rounding;
pub mod softmax;
pub mod transport;

pub use error::{Error, Result};
