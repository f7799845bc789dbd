//! Update maps `G: Ω → Ω` with certified expansiveness `η` and boundedness `σ`.

use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::model::{norm, Convexity, Example, Loss, ParamVector, RegularityConstants};
use crate::rng::{derive_seed, stream_rng, uniform_in_ball, Stream};

/// Step sizes indexed from `t = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSizeSchedule {
    Constant { alpha: f64 },
    /// `α_t = c / t`
    InverseT { c: f64 },
    /// `α_t = 1 / (γ t)`
    InverseStrong { gamma: f64 },
}

impl StepSizeSchedule {
    pub fn alpha(&self, t: usize) -> f64 {
        let t = t.max(1) as f64;
        match *self {
            Self::Constant { alpha } => alpha,
            Self::InverseT { c } => c / t,
            Self::InverseStrong { gamma } => 1.0 / (gamma * t),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = match *self {
            Self::Constant { alpha } => alpha,
            Self::InverseT { c } => c,
            Self::InverseStrong { gamma } => gamma,
        };
        if p > 0.0 && p.is_finite() {
            Ok(())
        } else {
            Err(contract(format!("step-size parameter must be positive and finite: {self:?}")))
        }
    }

    /// `sum_{t=1}^{T} α_t`
    pub fn sum(&self, steps: usize) -> f64 {
        (1..=steps).map(|t| self.alpha(t)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropoutMode {
    /// Bernoulli keep-mask, then rescale so `‖Dv‖ = s‖v‖` whenever the
    /// masked vector is nonzero; `0` otherwise.
    NormExact,
    /// Keep with probability `q`, scale kept coordinates by `1/q`, so
    /// `E[Dv] = v`. Its boundedness certificate is approximate.
    Inverted,
}

/// Random dropout operator `D` applied to the gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dropout {
    pub rate: f64,
    pub keep_prob: f64,
    pub mode: DropoutMode,
}

impl Dropout {
    pub fn norm_exact(rate: f64, keep_prob: f64) -> Self {
        Self {
            rate,
            keep_prob,
            mode: DropoutMode::NormExact,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(contract("dropout keep probability must be in (0, 1]"));
        }
        if self.mode == DropoutMode::NormExact && !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(contract("dropout rate must be positive"));
        }
        Ok(())
    }

    /// Probability that every coordinate is dropped.
    pub fn zero_mask_probability(&self, dim: usize) -> f64 {
        (1.0 - self.keep_prob).powi(dim as i32)
    }

    /// Draws one Bernoulli per coordinate regardless of `v`, so two points
    /// fed the same generator state see the same mask.
    pub fn apply(&self, v: &mut [f64], rng: &mut dyn RngCore) {
        let before = norm(v);
        for x in v.iter_mut() {
            if !rng.random_bool(self.keep_prob) {
                *x = 0.0;
            }
        }
        match self.mode {
            DropoutMode::NormExact => {
                let after = norm(v);
                if after > 0.0 {
                    let k = self.rate * before / after;
                    v.iter_mut().for_each(|x| *x *= k);
                }
            }
            DropoutMode::Inverted => v.iter_mut().for_each(|x| *x /= self.keep_prob),
        }
    }
}

/// Regularizer `g` of a proximal step `argmin_v ½‖w − v‖² + α g(v)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProxTerm {
    /// Indicator of the ball of the given radius.
    Ball { radius: f64 },
    /// `λ‖v‖₁`
    L1 { lambda: f64 },
    /// `λ‖v‖₂`
    Norm { lambda: f64 },
    /// `(λ/2)‖v‖₂²`
    SquaredNorm { lambda: f64 },
}

/// `sign(a) max(|a| − t, 0)`, mapping exact zero to zero.
pub fn soft_threshold(a: f64, t: f64) -> f64 {
    if a > t {
        a - t
    } else if a < -t {
        a + t
    } else {
        0.0
    }
}

pub fn project_to_ball(w: &mut [f64], radius: f64) {
    let n = norm(w);
    if n > radius {
        let k = radius / n;
        w.iter_mut().for_each(|x| *x *= k);
    }
}

impl ProxTerm {
    pub fn apply(&self, alpha: f64, w: &mut [f64]) {
        match *self {
            Self::Ball { radius } => project_to_ball(w, radius),
            Self::L1 { lambda } => w.iter_mut().for_each(|x| *x = soft_threshold(*x, alpha * lambda)),
            Self::Norm { lambda } => {
                let n = norm(w);
                let k = if n > alpha * lambda { 1.0 - alpha * lambda / n } else { 0.0 };
                w.iter_mut().for_each(|x| *x *= k);
            }
            Self::SquaredNorm { lambda } => {
                let k = 1.0 / (1.0 + alpha * lambda);
                w.iter_mut().for_each(|x| *x *= k);
            }
        }
    }
}

/// One step of the stochastic gradient method or a proximal map.
#[derive(Debug, Clone, Copy)]
pub enum UpdateRule<'a> {
    Gradient {
        loss: &'a dyn Loss,
        example: &'a Example,
        alpha: f64,
    },
    /// `w ↦ (1 − αμ)w − α∇f(w)`
    WeightDecay {
        loss: &'a dyn Loss,
        example: &'a Example,
        alpha: f64,
        decay: f64,
    },
    /// `w ↦ w − α D(∇f(w))`
    Dropout {
        loss: &'a dyn Loss,
        example: &'a Example,
        alpha: f64,
        dropout: Dropout,
    },
    /// Gradient rescaled to norm at most `clip` before the step.
    Clipped {
        loss: &'a dyn Loss,
        example: &'a Example,
        alpha: f64,
        clip: f64,
    },
    /// Inner step followed by projection onto the ball of radius `radius`.
    Projected { inner: &'a UpdateRule<'a>, radius: f64 },
    Proximal { prox: ProxTerm, alpha: f64, dim: usize },
}

fn clip_to(g: &mut ParamVector, c: f64) {
    project_to_ball(g.as_mut_slice(), c);
}

impl UpdateRule<'_> {
    pub fn dim(&self) -> usize {
        match self {
            Self::Gradient { loss, example, .. }
            | Self::WeightDecay { loss, example, .. }
            | Self::Dropout { loss, example, .. }
            | Self::Clipped { loss, example, .. } => loss.param_dim(example.dim()),
            Self::Projected { inner, .. } => inner.dim(),
            Self::Proximal { dim, .. } => *dim,
        }
    }

    pub fn alpha(&self) -> f64 {
        match self {
            Self::Gradient { alpha, .. }
            | Self::WeightDecay { alpha, .. }
            | Self::Dropout { alpha, .. }
            | Self::Clipped { alpha, .. }
            | Self::Proximal { alpha, .. } => *alpha,
            Self::Projected { inner, .. } => inner.alpha(),
        }
    }

    pub fn is_random(&self) -> bool {
        match self {
            Self::Dropout { .. } => true,
            Self::Projected { inner, .. } => inner.is_random(),
            _ => false,
        }
    }

    /// The mapped point. Only dropout consumes `rng`.
    pub fn apply(&self, w: &ParamVector, rng: &mut dyn RngCore) -> ParamVector {
        match *self {
            Self::Gradient { loss, example, alpha } => {
                let mut out = w.clone();
                out.axpy(-alpha, &loss.gradient(w, example));
                out
            }
            Self::WeightDecay {
                loss,
                example,
                alpha,
                decay,
            } => {
                let mut out = w.clone();
                out.scale(1.0 - alpha * decay);
                out.axpy(-alpha, &loss.gradient(w, example));
                out
            }
            Self::Dropout {
                loss,
                example,
                alpha,
                dropout,
            } => {
                let mut g = loss.gradient(w, example);
                dropout.apply(g.as_mut_slice(), rng);
                let mut out = w.clone();
                out.axpy(-alpha, &g);
                out
            }
            Self::Clipped {
                loss,
                example,
                alpha,
                clip,
            } => {
                let mut g = loss.gradient(w, example);
                clip_to(&mut g, clip);
                let mut out = w.clone();
                out.axpy(-alpha, &g);
                out
            }
            Self::Projected { inner, radius } => {
                let mut out = inner.apply(w, rng);
                project_to_ball(out.as_mut_slice(), radius);
                out
            }
            Self::Proximal { prox, alpha, .. } => {
                let mut out = w.clone();
                prox.apply(alpha, out.as_mut_slice());
                out
            }
        }
    }
}

/// Certified `η` (expansiveness) and `σ` (boundedness) of a rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleCertificate {
    pub eta: f64,
    pub sigma: f64,
    /// `σ` bounds `E‖w − G(w)‖` over the dropout mask rather than every draw.
    pub in_expectation: bool,
    /// Constants the certificate depends on.
    pub assumptions: Vec<String>,
    /// Every downgrade or caveat applied while certifying.
    pub warnings: Vec<String>,
    /// False when the loss constants are estimates or a bound is approximate.
    pub certified: bool,
}

impl RuleCertificate {
    fn new(eta: f64, sigma: f64, assumptions: &[&str], certified: bool) -> Self {
        Self {
            eta,
            sigma,
            in_expectation: false,
            assumptions: assumptions.iter().map(|s| s.to_string()).collect(),
            warnings: Vec::new(),
            certified,
        }
    }

    fn warn(&mut self, msg: String) {
        self.warnings.push(msg);
    }
}

/// Tightest `η` for a gradient step on a loss with the given class and
/// constants, with a warning whenever a convexity-based claim is dropped
/// because the step is too large.
fn gradient_eta(convexity: Convexity, beta: f64, gamma: f64, alpha: f64, cert: &mut RuleCertificate) -> f64 {
    let smooth = 1.0 + alpha * beta;
    if convexity == Convexity::StronglyConvex && gamma > 0.0 {
        if alpha <= 2.0 / (beta + gamma) {
            cert.assumptions.push("strong_convexity".into());
            return 1.0 - alpha * beta * gamma / (beta + gamma);
        }
        cert.warn(format!(
            "step {alpha} exceeds 2/(β+γ) = {}; strong-convexity contraction dropped",
            2.0 / (beta + gamma)
        ));
    }
    if convexity != Convexity::NonConvex {
        if alpha * beta <= 2.0 {
            cert.assumptions.push("convexity".into());
            return 1.0;
        }
        cert.warn(format!(
            "step {alpha} exceeds 2/β = {}; certificate downgraded to η = 1 + αβ = {smooth}",
            2.0 / beta
        ));
    }
    smooth
}

/// Certificate for `rule` given the constants of its loss. The domain radius
/// of `constants` bounds `‖w‖` where a rule's displacement depends on it.
pub fn certify(rule: &UpdateRule<'_>, constants: &RegularityConstants) -> RuleCertificate {
    let RegularityConstants {
        lipschitz: l,
        smoothness: beta,
        strong_convexity: gamma,
        domain_radius,
        certified,
        ..
    } = *constants;
    match *rule {
        UpdateRule::Gradient { loss, alpha, .. } => {
            let mut c = RuleCertificate::new(0.0, alpha * l, &["lipschitz", "smoothness"], certified);
            c.eta = gradient_eta(loss.convexity(), beta, gamma, alpha, &mut c);
            c
        }
        UpdateRule::WeightDecay {
            loss, alpha, decay, ..
        } => {
            let mut c = RuleCertificate::new(0.0, 0.0, &["lipschitz", "smoothness", "domain_radius"], certified);
            // Same map as a gradient step on f + (μ/2)‖w‖².
            let generic = (1.0 - alpha * decay).abs() + alpha * beta;
            let eta = if loss.convexity() == Convexity::NonConvex {
                generic
            } else {
                let mut scratch = c.clone();
                let reg = gradient_eta(Convexity::StronglyConvex, beta + decay, gamma + decay, alpha, &mut scratch);
                if reg <= generic {
                    c.assumptions = scratch.assumptions;
                }
                reg.min(generic)
            };
            c.eta = eta;
            c.sigma = match domain_radius {
                Some(r) => alpha * (decay * r + l),
                None => {
                    c.warn("weight decay displacement needs a bounded domain; σ is unbounded".into());
                    f64::INFINITY
                }
            };
            c
        }
        UpdateRule::Dropout { alpha, dropout, .. } => {
            let mut c = RuleCertificate::new(0.0, 0.0, &["lipschitz"], certified);
            c.in_expectation = true;
            match dropout.mode {
                DropoutMode::NormExact => {
                    c.sigma = dropout.rate * alpha * l;
                    c.eta = f64::INFINITY;
                    c.warn("norm-exact dropout rescales by a mask-dependent factor; η is not certified".into());
                }
                DropoutMode::Inverted => {
                    c.sigma = alpha * l / dropout.keep_prob.sqrt();
                    c.eta = 1.0 + alpha * beta / dropout.keep_prob;
                    c.assumptions.push("smoothness".into());
                    c.certified = false;
                    c.warn("inverted dropout: σ = αL/√q bounds the mean step via Jensen (approximate)".into());
                }
            }
            c
        }
        UpdateRule::Clipped {
            loss, alpha, clip, ..
        } => {
            let mut c = RuleCertificate::new(0.0, alpha * clip.min(l), &["lipschitz", "smoothness"], certified);
            c.eta = if clip >= l {
                // clipping never activates
                gradient_eta(loss.convexity(), beta, gamma, alpha, &mut c)
            } else {
                1.0 + alpha * beta
            };
            c
        }
        UpdateRule::Projected { inner, radius } => {
            let domain = Some(domain_radius.map_or(radius, |r| r.min(radius)));
            let mut c = certify(inner, &RegularityConstants {
                domain_radius: domain,
                ..*constants
            });
            c.assumptions.push("projection".into());
            c
        }
        UpdateRule::Proximal { prox, alpha, dim } => {
            let mut c = RuleCertificate::new(1.0, 0.0, &[], true);
            match prox {
                ProxTerm::Ball { radius } => {
                    c.sigma = match domain_radius {
                        Some(r) => (r - radius).max(0.0),
                        None => f64::INFINITY,
                    };
                    c.assumptions.push("domain_radius".into());
                }
                ProxTerm::L1 { lambda } => c.sigma = alpha * lambda * (dim as f64).sqrt(),
                ProxTerm::Norm { lambda } => c.sigma = alpha * lambda,
                ProxTerm::SquaredNorm { lambda } => {
                    c.eta = 1.0 / (1.0 + alpha * lambda);
                    c.sigma = match domain_radius {
                        Some(r) => alpha * lambda * r / (1.0 + alpha * lambda),
                        None => f64::INFINITY,
                    };
                    c.assumptions.push("domain_radius".into());
                }
            }
            c
        }
    }
}

pub const MIN_RULE_TRIALS: usize = 1000;
pub const DROPOUT_MASK_DRAWS: usize = 256;

fn pair(rng: &mut ChaCha8Rng, dim: usize, radius: f64) -> (ParamVector, ParamVector) {
    loop {
        let u = uniform_in_ball(rng, dim, radius);
        let v = if rng.random::<bool>() {
            uniform_in_ball(rng, dim, radius)
        } else {
            let step = uniform_in_ball(rng, dim, 0.05 * radius);
            let mut v: Vec<f64> = u.iter().zip(&step).map(|(a, b)| a + b).collect();
            project_to_ball(&mut v, radius);
            v
        };
        let (u, v) = (ParamVector::from_raw(u), ParamVector::from_raw(v));
        if u.distance(&v) >= 1e-8 {
            return (u, v);
        }
    }
}

/// Largest `‖G(v) − G(w)‖ / ‖v − w‖` over pairs drawn in the radius-`R`
/// ball. Random rules use the same mask for both points of a pair.
pub fn empirical_expansiveness(rule: &UpdateRule<'_>, radius: f64, trials: usize, seed: u64) -> Result<f64> {
    if trials < MIN_RULE_TRIALS {
        return Err(contract(format!("need at least {MIN_RULE_TRIALS} trials")));
    }
    let dim = rule.dim();
    Ok((0..trials)
        .into_par_iter()
        .map(|t| {
            let s = derive_seed(seed, t as u64);
            let (u, v) = pair(&mut stream_rng(s, Stream::Falsifier), dim, radius);
            let mask = stream_rng(s, Stream::Dropout);
            let gu = rule.apply(&u, &mut mask.clone());
            let gv = rule.apply(&v, &mut mask.clone());
            gu.distance(&gv) / u.distance(&v)
        })
        .reduce(|| 0.0, f64::max))
}

/// Largest `‖w − G(w)‖` over points drawn in the radius-`R` ball. For random
/// rules each point's displacement is averaged over 256 mask draws first.
pub fn empirical_boundedness(rule: &UpdateRule<'_>, radius: f64, trials: usize, seed: u64) -> Result<f64> {
    if trials < MIN_RULE_TRIALS {
        return Err(contract(format!("need at least {MIN_RULE_TRIALS} trials")));
    }
    let dim = rule.dim();
    let draws = if rule.is_random() { DROPOUT_MASK_DRAWS } else { 1 };
    Ok((0..trials)
        .into_par_iter()
        .map(|t| {
            let s = derive_seed(seed, t as u64);
            let w = ParamVector::from_raw(uniform_in_ball(&mut stream_rng(s, Stream::Falsifier), dim, radius));
            let mut mask = stream_rng(s, Stream::Dropout);
            (0..draws).map(|_| w.distance(&rule.apply(&w, &mut mask))).sum::<f64>() / draws as f64
        })
        .reduce(|| 0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{LeastSquaresLoss, LinearLoss, LogisticLoss, QuadraticLoss, SigmoidLoss, TinyMlpLoss};
    use proptest::prelude::{prop, prop_assert, proptest};

    fn no_rng() -> ChaCha8Rng {
        stream_rng(0, Stream::Dropout)
    }

    fn z(x: &[f64], y: f64) -> Example {
        Example::new(x.to_vec(), y).unwrap()
    }

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn apply_examples() {
        let q = QuadraticLoss::new(1.0, None);
        let ex = z(&[0.0, 0.0], 0.0);
        let g = UpdateRule::Gradient { loss: &q, example: &ex, alpha: 0.5 };
        assert_eq!(g.apply(&pv(&[2.0, 0.0]), &mut no_rng()).as_slice(), &[1.0, 0.0]);

        let p = UpdateRule::Proximal { prox: ProxTerm::L1 { lambda: 1.0 }, alpha: 1.0, dim: 2 };
        assert_eq!(p.apply(&pv(&[3.0, -0.5]), &mut no_rng()).as_slice(), &[2.0, 0.0]);

        let zero = QuadraticLoss::new(0.0, None);
        let inner = UpdateRule::Gradient { loss: &zero, example: &ex, alpha: 1.0 };
        let proj = UpdateRule::Projected { inner: &inner, radius: 1.0 };
        let out = proj.apply(&pv(&[3.0, 4.0]), &mut no_rng());
        assert!((out.as_slice()[0] - 0.6).abs() < 1e-15 && (out.as_slice()[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn certificate_examples() {
        let lg = LogisticLoss::new(1.0, 0.0, None);
        let c = lg.constants();
        let ex = z(&[1.0], 1.0);
        let rule = UpdateRule::Gradient { loss: &lg, example: &ex, alpha: 2.0 / c.smoothness };
        let cert = certify(&rule, &c);
        assert_eq!(cert.eta, 1.0);
        assert!(cert.warnings.is_empty());

        let q = QuadraticLoss::new(1.0, Some(1.0));
        let rule = UpdateRule::Gradient { loss: &q, example: &ex, alpha: 1.0 };
        assert_eq!(certify(&rule, &q.constants()).eta, 0.5);

        let sg = SigmoidLoss::new(8.0);
        let d = UpdateRule::Dropout { loss: &sg, example: &ex, alpha: 0.1, dropout: Dropout::norm_exact(0.5, 0.5) };
        let cert = certify(&d, &sg.constants());
        assert!((cert.sigma - 0.1).abs() < 1e-15);
        assert!(cert.in_expectation);
    }

    #[test]
    fn oversized_convex_step_is_downgraded_with_warning() {
        let lg = LogisticLoss::new(1.0, 0.0, None);
        let c = lg.constants();
        let ex = z(&[1.0], 1.0);
        let rule = UpdateRule::Gradient { loss: &lg, example: &ex, alpha: 3.0 / c.smoothness };
        let cert = certify(&rule, &c);
        assert_eq!(cert.eta, 1.0 + 3.0);
        assert_eq!(cert.warnings.len(), 1);
    }

    #[test]
    fn projection_keeps_inner_certificate() {
        let ls = LeastSquaresLoss::new(1.0, 1.0, 0.2, 2.0);
        let c = ls.constants();
        let ex = z(&[0.5, 0.5], 0.3);
        for alpha in [0.1, 0.5, 1.0, 3.0] {
            let inner = UpdateRule::Gradient { loss: &ls, example: &ex, alpha };
            let outer = UpdateRule::Projected { inner: &inner, radius: 2.0 };
            let (ci, co) = (certify(&inner, &c), certify(&outer, &c));
            assert!(co.eta <= ci.eta);
            assert_eq!(co.sigma, ci.sigma);
        }
    }

    #[test]
    fn weight_decay_matches_regularized_gradient() {
        let ls = LeastSquaresLoss::new(1.0, 1.0, 0.0, 2.0);
        let mu = 0.3;
        let reg = LeastSquaresLoss::new(1.0, 1.0, mu, 2.0);
        let mut rng = stream_rng(4, Stream::Falsifier);
        for _ in 0..200 {
            let x = uniform_in_ball(&mut rng, 3, 1.0);
            let ex = z(&x, rng.random_range(-1.0..1.0));
            let w = pv(&uniform_in_ball(&mut rng, 3, 2.0));
            let a = UpdateRule::WeightDecay { loss: &ls, example: &ex, alpha: 0.4, decay: mu }.apply(&w, &mut no_rng());
            let b = UpdateRule::Gradient { loss: &reg, example: &ex, alpha: 0.4 }.apply(&w, &mut no_rng());
            for (p, q) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((p - q).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn empirical_expansiveness_respects_certificates() {
        let ex = z(&[0.6, -0.8], 1.0);
        let prox = UpdateRule::Proximal { prox: ProxTerm::L1 { lambda: 0.3 }, alpha: 1.0, dim: 2 };
        assert!(empirical_expansiveness(&prox, 3.0, 5000, 1).unwrap() <= 1.0 + 1e-12);

        let lg = LogisticLoss::new(1.0, 0.0, None);
        let beta = lg.constants().smoothness;
        let g = UpdateRule::Gradient { loss: &lg, example: &ex, alpha: 2.0 / beta };
        assert!(empirical_expansiveness(&g, 5.0, 5000, 2).unwrap() <= 1.0 + 1e-9);

        let sg = SigmoidLoss::new(1.0);
        let g = UpdateRule::Gradient { loss: &sg, example: &ex, alpha: 0.1 };
        let eta = 1.0 + 0.1 * sg.constants().smoothness;
        assert!(empirical_expansiveness(&g, 5.0, 5000, 3).unwrap() <= eta);

        let sq = UpdateRule::Proximal { prox: ProxTerm::SquaredNorm { lambda: 1.0 }, alpha: 0.5, dim: 2 };
        assert!(empirical_expansiveness(&sq, 3.0, 2000, 4).unwrap() <= 1.0 / 1.5 + 1e-12);
    }

    #[test]
    fn empirical_boundedness_respects_certificates() {
        let ex = z(&[0.6, -0.8], 1.0);
        let lg = LogisticLoss::new(1.0, 0.0, None);
        let zero = UpdateRule::Gradient { loss: &lg, example: &ex, alpha: 0.0 };
        assert_eq!(empirical_boundedness(&zero, 3.0, 1000, 1).unwrap(), 0.0);

        let g = UpdateRule::Gradient { loss: &lg, example: &ex, alpha: 0.7 };
        let cert = certify(&g, &lg.constants());
        assert!(empirical_boundedness(&g, 3.0, 2000, 1).unwrap() <= cert.sigma * (1.0 + 1e-9));

        let mlp = TinyMlpLoss::new(2, 4, 1.0, 5.0, 1).unwrap();
        let c = UpdateRule::Clipped { loss: &mlp, example: &ex, alpha: 0.5, clip: 0.01 };
        assert!(empirical_boundedness(&c, 5.0, 2000, 1).unwrap() <= 0.5 * 0.01 * (1.0 + 1e-9));

        let d = UpdateRule::Dropout { loss: &lg, example: &ex, alpha: 0.5, dropout: Dropout::norm_exact(0.5, 0.7) };
        let cert = certify(&d, &lg.constants());
        assert!(empirical_boundedness(&d, 3.0, 1000, 1).unwrap() <= cert.sigma * (1.0 + 1e-2));
    }

    #[test]
    fn linear_gradient_step_is_isometry() {
        let lin = LinearLoss { feature_bound: 1.0 };
        let ex = z(&[0.3, 0.4], 0.0);
        let g = UpdateRule::Gradient { loss: &lin, example: &ex, alpha: 2.0 };
        assert!((empirical_expansiveness(&g, 1.0, 1000, 1).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn norm_exact_dropout_mean_ratio() {
        let d = Dropout::norm_exact(0.6, 0.8);
        let dim = 3;
        let v = [0.5, -1.0, 2.0];
        let mut rng = stream_rng(9, Stream::Dropout);
        let ratios: Vec<f64> = (0..100_000)
            .map(|_| {
                let mut u = v;
                d.apply(&mut u, &mut rng);
                norm(&u) / norm(&v)
            })
            .collect();
        let (mean, se) = crate::model::mean_stderr(&ratios);
        let expected = d.rate * (1.0 - d.zero_mask_probability(dim));
        assert!((mean - expected).abs() <= 3.0 * se + 1e-12, "{mean} vs {expected} (se {se})");
    }

    #[test]
    fn norm_prox_is_block_soft_threshold() {
        let mut w = [3.0, 4.0];
        ProxTerm::Norm { lambda: 1.0 }.apply(2.0, &mut w);
        assert!((w[0] - 1.8).abs() < 1e-15 && (w[1] - 2.4).abs() < 1e-15);
        let mut small = [0.3, 0.4];
        ProxTerm::Norm { lambda: 1.0 }.apply(2.0, &mut small);
        assert_eq!(small, [0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn soft_threshold_is_one_lipschitz(a in -10.0..10.0f64, b in -10.0..10.0f64, t in 0.0..5.0f64) {
            prop_assert!((soft_threshold(a, t) - soft_threshold(b, t)).abs() <= (a - b).abs() + 1e-15);
        }

        #[test]
        fn squared_norm_prox_contracts(
            v in prop::collection::vec(-5.0..5.0f64, 3),
            w in prop::collection::vec(-5.0..5.0f64, 3),
            alpha in 0.0..4.0f64,
        ) {
            let (mut pv_, mut pw) = (v.clone(), w.clone());
            let prox = ProxTerm::SquaredNorm { lambda: 1.0 };
            prox.apply(alpha, &mut pv_);
            prox.apply(alpha, &mut pw);
            let d: Vec<f64> = v.iter().zip(&w).map(|(a, b)| a - b).collect();
            let dp: Vec<f64> = pv_.iter().zip(&pw).map(|(a, b)| a - b).collect();
            prop_assert!(norm(&dp) <= norm(&d) / (1.0 + alpha) + 1e-12);
        }
    }
}
