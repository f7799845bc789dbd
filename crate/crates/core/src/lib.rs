//! Stability laboratory for the stochastic gradient method.
//!
//! Runs SGM with certified update rules on neighboring datasets, measures
//! how far the paired iterates drift apart, and compares the measurements
//! with closed-form uniform-stability and excess-risk bounds.

pub mod bounds;
pub mod error;
pub mod experiment;
pub mod lab;
pub mod model;
pub mod problems;
pub mod rng;
pub mod rules;
pub mod sgm;

pub use error::{Error, Result};
pub use model::{
    empirical_risk, finite_diff_gradient_check, make_neighbor, population_risk_estimate,
    Convexity, DataDistribution, Dataset, Example, ExampleSet, FiniteSupport, Loss, NeighborPair,
    ParamVector, RegularityConstants,
};
