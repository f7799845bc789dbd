//! Built-in losses with analytic constants, falsifiers for the properties
//! those constants promise, and a synthetic data generator.

mod falsify;
mod losses;
mod synthetic;

pub use falsify::{
    check_cocoercivity, check_strong_convexity_inequality, estimate_constants_empirical,
    FalsifierOutcome, SamplingDomain, MIN_ESTIMATION_TRIALS,
};
pub use losses::{
    ConstantLoss, CorruptedGradient, LeastSquaresLoss, LinearLoss, LogisticLoss, QuadraticLoss,
    SigmoidLoss, TinyMlpLoss, MLP_MAX_HIDDEN, SIGMOID_CURVATURE_BOUND,
};
pub use synthetic::{LabelModel, Synthetic};

use crate::error::{Error, Result};
use crate::model::{Loss, RegularityConstants};

/// Constants valid on the radius-`R` ball. With `allow_estimate`, a loss
/// without analytic constants falls back to its estimated ones
/// (`certified == false`); otherwise that case is an error.
pub fn certify_constants(
    loss: &dyn Loss,
    radius: Option<f64>,
    allow_estimate: bool,
) -> Result<RegularityConstants> {
    match loss.certify(radius) {
        Err(Error::Uncertifiable(_)) if allow_estimate => Ok(loss.constants()),
        other => other,
    }
}
