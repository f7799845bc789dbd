//! Sampling falsifiers for the regularity properties the stability proofs
//! rely on. Each one draws parameter pairs uniformly from a ball (half of
//! them close together) and reports the worst case seen.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{contract, Result};
use crate::model::{Convexity, Example, Loss, ParamVector, RegularityConstants};
use crate::rng::{derive_seed, stream_rng, uniform_in_ball, Stream};

/// Where falsifiers draw parameters and examples from.
#[derive(Debug, Clone, Copy)]
pub struct SamplingDomain {
    pub feature_dim: usize,
    pub feature_bound: f64,
    pub radius: f64,
    pub label_bound: f64,
}

impl SamplingDomain {
    pub fn new(feature_dim: usize, feature_bound: f64, radius: f64) -> Self {
        Self {
            feature_dim,
            feature_bound,
            radius,
            label_bound: 1.0,
        }
    }

    pub fn with_label_bound(mut self, label_bound: f64) -> Self {
        self.label_bound = label_bound;
        self
    }
}

pub const MIN_ESTIMATION_TRIALS: usize = 1000;

struct Draw {
    z: Example,
    u: ParamVector,
    v: ParamVector,
}

fn draw(loss: &dyn Loss, dom: &SamplingDomain, rng: &mut ChaCha8Rng) -> Draw {
    let mut x = uniform_in_ball(rng, dom.feature_dim, dom.feature_bound);
    // Half the examples sit on the boundary sphere, where Lipschitz bounds bind.
    if rng.random::<bool>() {
        let n = crate::model::norm(&x);
        if n > 0.0 {
            x.iter_mut().for_each(|xi| *xi *= dom.feature_bound / n);
        }
    }
    let y = if loss.binary_labels() {
        if rng.random::<bool>() {
            1.0
        } else {
            -1.0
        }
    } else {
        rng.random_range(-dom.label_bound..=dom.label_bound)
    };
    let d = loss.param_dim(dom.feature_dim);
    let u = uniform_in_ball(rng, d, dom.radius);
    let v = if rng.random::<bool>() {
        uniform_in_ball(rng, d, dom.radius)
    } else {
        let step = uniform_in_ball(rng, d, 0.05 * dom.radius);
        let mut v: Vec<f64> = u.iter().zip(&step).map(|(a, b)| a + b).collect();
        let n = crate::model::norm(&v);
        if n > dom.radius {
            v.iter_mut().for_each(|vi| *vi *= dom.radius / n);
        }
        v
    };
    Draw {
        z: Example::new(x, y).expect("sampled features are finite"),
        u: ParamVector::from_raw(u),
        v: ParamVector::from_raw(v),
    }
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    stream_rng(derive_seed(seed, trial as u64), Stream::Falsifier)
}

/// Sampled constants on the radius-`R` ball: `L̂` is the largest gradient
/// norm seen, `β̂` the largest gradient difference ratio, `ρ̂` the largest
/// value. The result is never certified.
pub fn estimate_constants_empirical(
    loss: &dyn Loss,
    dom: &SamplingDomain,
    trials: usize,
    seed: u64,
) -> Result<RegularityConstants> {
    if trials < MIN_ESTIMATION_TRIALS {
        return Err(contract(format!(
            "constant estimation needs at least {MIN_ESTIMATION_TRIALS} trials, got {trials}"
        )));
    }
    let (l, b, r) = (0..trials)
        .into_par_iter()
        .map(|t| {
            let Draw { z, u, v } = draw(loss, dom, &mut trial_rng(seed, t));
            let gu = loss.gradient(&u, &z);
            let gv = loss.gradient(&v, &z);
            let dist = u.distance(&v);
            let ratio = if dist > 1e-12 { gu.distance(&gv) / dist } else { 0.0 };
            let value = loss.value(&u, &z).max(loss.value(&v, &z));
            (gu.norm().max(gv.norm()), ratio, value)
        })
        .reduce(
            || (0.0, 0.0, f64::NEG_INFINITY),
            |a, b| (a.0.max(b.0), a.1.max(b.1), a.2.max(b.2)),
        );
    Ok(RegularityConstants {
        lipschitz: l,
        smoothness: b,
        strong_convexity: 0.0,
        range_bound: r.max(0.0),
        domain_radius: Some(dom.radius),
        certified: false,
    })
}

/// Result of a slack falsifier.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FalsifierOutcome {
    Checked { min_slack: f64, pairs: usize },
    Skipped { reason: String },
}

impl FalsifierOutcome {
    pub fn min_slack(&self) -> Option<f64> {
        match self {
            Self::Checked { min_slack, .. } => Some(*min_slack),
            Self::Skipped { .. } => None,
        }
    }
}

fn min_slack_over(
    loss: &dyn Loss,
    dom: &SamplingDomain,
    trials: usize,
    seed: u64,
    slack: impl Fn(&Draw) -> f64 + Sync,
) -> FalsifierOutcome {
    let min_slack = (0..trials)
        .into_par_iter()
        .map(|t| slack(&draw(loss, dom, &mut trial_rng(seed, t))))
        .reduce(|| f64::INFINITY, f64::min);
    FalsifierOutcome::Checked {
        min_slack,
        pairs: trials,
    }
}

/// Minimum over sampled pairs of
/// `⟨∇f(v) − ∇f(w), v − w⟩ − (1/β)‖∇f(v) − ∇f(w)‖²`, which is nonnegative
/// for convex β-smooth losses.
pub fn check_cocoercivity(
    loss: &dyn Loss,
    dom: &SamplingDomain,
    trials: usize,
    seed: u64,
) -> Result<FalsifierOutcome> {
    if loss.convexity() == Convexity::NonConvex {
        return Err(contract(format!(
            "co-coercivity is only implied for convex losses; `{}` is non-convex",
            loss.name()
        )));
    }
    let beta = loss.constants().smoothness;
    if beta <= 0.0 {
        return Ok(FalsifierOutcome::Skipped {
            reason: format!(
                "`{}` has smoothness 0, so the inequality degenerates to a vacuous bound",
                loss.name()
            ),
        });
    }
    Ok(min_slack_over(loss, dom, trials, seed, |d| {
        let gu = loss.gradient(&d.u, &d.z);
        let gv = loss.gradient(&d.v, &d.z);
        let dg = gu.sub(&gv);
        dg.dot(&d.u.sub(&d.v)) - dg.dot(&dg) / beta
    }))
}

/// Minimum over sampled pairs of
/// `f(u) − f(v) − ⟨∇f(v), u − v⟩ − (γ/2)‖u − v‖²`.
pub fn check_strong_convexity_inequality(
    loss: &dyn Loss,
    gamma: f64,
    dom: &SamplingDomain,
    trials: usize,
    seed: u64,
) -> Result<FalsifierOutcome> {
    if loss.convexity() != Convexity::StronglyConvex {
        return Err(contract(format!(
            "`{}` does not claim strong convexity",
            loss.name()
        )));
    }
    Ok(min_slack_over(loss, dom, trials, seed, |d| {
        let diff = d.u.sub(&d.v);
        loss.value(&d.u, &d.z)
            - loss.value(&d.v, &d.z)
            - loss.gradient(&d.v, &d.z).dot(&diff)
            - 0.5 * gamma * diff.dot(&diff)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{
        ConstantLoss, LeastSquaresLoss, LinearLoss, LogisticLoss, QuadraticLoss, SigmoidLoss,
    };

    const TOL: f64 = -1e-9;

    #[test]
    fn constant_loss_estimates_zero() {
        let c = estimate_constants_empirical(&ConstantLoss::new(3.0), &SamplingDomain::new(3, 1.0, 1.0), 1000, 1)
            .unwrap();
        assert_eq!((c.lipschitz, c.smoothness), (0.0, 0.0));
        assert!(!c.certified);
    }

    #[test]
    fn too_few_trials_rejected() {
        let dom = SamplingDomain::new(2, 1.0, 1.0);
        assert!(estimate_constants_empirical(&ConstantLoss::new(0.0), &dom, 999, 1).is_err());
    }

    #[test]
    fn estimates_stay_below_certified_constants() {
        let dom = SamplingDomain::new(4, 1.0, 2.0);
        let losses: Vec<Box<dyn Loss>> = vec![
            Box::new(LeastSquaresLoss::new(1.0, 1.0, 0.0, 2.0)),
            Box::new(LeastSquaresLoss::new(1.0, 1.0, 0.3, 2.0)),
            Box::new(LogisticLoss::new(1.0, 0.1, Some(2.0))),
            Box::new(SigmoidLoss::new(1.0)),
        ];
        for loss in &losses {
            let cert = loss.certify(Some(2.0)).unwrap();
            let est = estimate_constants_empirical(loss.as_ref(), &dom, 5000, 3).unwrap();
            assert!(est.lipschitz <= cert.lipschitz * (1.0 + 1e-9), "{}", loss.name());
            assert!(est.smoothness <= cert.smoothness * (1.0 + 1e-9), "{}", loss.name());
            assert!(est.range_bound <= cert.range_bound * (1.0 + 1e-9), "{}", loss.name());
        }
        let ls = estimate_constants_empirical(losses[0].as_ref(), &dom, 5000, 3).unwrap();
        assert!(ls.smoothness <= 1.0 + 1e-9 && ls.smoothness > 0.5);
    }

    #[test]
    fn estimates_are_deterministic() {
        let dom = SamplingDomain::new(3, 1.0, 1.0);
        let loss = SigmoidLoss::new(2.0);
        let a = estimate_constants_empirical(&loss, &dom, 2000, 9).unwrap();
        let b = estimate_constants_empirical(&loss, &dom, 2000, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cocoercivity_of_identity_gradient_is_tight() {
        let dom = SamplingDomain::new(3, 1.0, 1.0);
        let s = check_cocoercivity(&QuadraticLoss::new(1.0, Some(1.0)), &dom, 2000, 1)
            .unwrap()
            .min_slack()
            .unwrap();
        assert!(s.abs() < 1e-12);
    }

    #[test]
    fn cocoercivity_holds_for_convex_losses() {
        let dom = SamplingDomain::new(4, 1.0, 3.0);
        for loss in [
            &LogisticLoss::new(1.0, 0.0, None) as &dyn Loss,
            &LeastSquaresLoss::new(1.0, 1.0, 0.1, 3.0),
        ] {
            let s = check_cocoercivity(loss, &dom, 10_000, 5).unwrap().min_slack().unwrap();
            assert!(s >= TOL, "{}: {s}", loss.name());
        }
    }

    #[test]
    fn cocoercivity_rejects_nonconvex_and_skips_linear() {
        let dom = SamplingDomain::new(2, 1.0, 1.0);
        assert!(check_cocoercivity(&SigmoidLoss::new(1.0), &dom, 10, 1).is_err());
        let out = check_cocoercivity(&LinearLoss { feature_bound: 1.0 }, &dom, 10, 1).unwrap();
        assert!(matches!(out, FalsifierOutcome::Skipped { .. }));
    }

    #[test]
    fn strong_convexity_slack() {
        let dom = SamplingDomain::new(3, 1.0, 2.0);
        let q = QuadraticLoss::new(0.7, Some(2.0));
        let s = check_strong_convexity_inequality(&q, 0.7, &dom, 2000, 2).unwrap().min_slack().unwrap();
        assert!(s.abs() < 1e-12);

        let ls = LeastSquaresLoss::new(1.0, 1.0, 0.1, 2.0);
        let s = check_strong_convexity_inequality(&ls, 0.1, &dom, 10_000, 2).unwrap().min_slack().unwrap();
        assert!(s >= TOL);

        let inflated = ls.constants().smoothness + 1.0;
        let s = check_strong_convexity_inequality(&ls, inflated, &dom, 10_000, 2).unwrap().min_slack().unwrap();
        assert!(s < 0.0);

        assert!(check_strong_convexity_inequality(&LogisticLoss::new(1.0, 0.0, None), 0.1, &dom, 10, 1).is_err());
    }
}
