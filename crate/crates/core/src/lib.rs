//! Numerical laboratory for ResNEst, A-ResNEst and DenseNEst models:
//! forward evaluation, exact gradients, closed-form Hessians of the
//! prediction-weight problem, convex lower-bound solves, gradient-descent
//! training, and a suite of mechanical checks for the models' landscape
//! guarantees (risk lower bounds, local-minimum quality, saddle curvature,
//! DenseNEst-to-ResNEst embedding) at desk scale.

pub mod backprop;
pub mod data;
pub mod error;
pub mod hessian;
pub mod linalg;
pub mod models;
pub mod optimize;
pub mod rng;
pub mod risk;
pub mod verify;

pub use error::{Error, Result};
pub use linalg::{EigResult, Matrix};
pub use models::{
    AResNEstParams, Activation, BlockFn, DenseNEstConfig, DenseNEstParams, FeatureMatrices,
    FeatureWeights, ResNEstConfig, ResNEstParams,
};
pub use risk::{Dataset, Loss};
