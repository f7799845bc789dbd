//! Named randomized property checks over the built-in losses, update rules
//! and estimators.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bounds::{erm_vs_population_oracle, growth_recursion_unroll, Minimizer};
use crate::error::Result;
use crate::lab::hit_time_distribution;
use crate::model::{finite_diff_gradient_check, Convexity, Example, FiniteSupport, Loss, ParamVector};
use crate::problems::{
    check_cocoercivity, check_strong_convexity_inequality, estimate_constants_empirical, CorruptedGradient,
    LeastSquaresLoss, LogisticLoss, SamplingDomain, SigmoidLoss, TinyMlpLoss,
};
use crate::rng::{derive_seed, stream_rng, uniform_in_ball, Stream};
use crate::rules::{certify, empirical_boundedness, empirical_expansiveness, Dropout, ProxTerm, UpdateRule};
use crate::sgm::SamplingScheme;

/// Deliberate defects the suite must detect.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Every loss reports a rescaled, shifted gradient.
    Gradient,
}

pub const PROPERTY_NAMES: &[&str] = &[
    "finite_diff",
    "gradient_norm_bound",
    "constants_upper_bound",
    "cocoercivity",
    "strong_convexity",
    "expansiveness",
    "boundedness",
    "hit_time",
    "growth_recursion",
    "erm_oracle",
    "sigmoid_range",
    "dropout_mask",
];

/// Pairs sampled by the slack falsifiers.
pub const FALSIFIER_PAIRS: usize = 10_000;
/// Sampled points per update rule in the expansiveness and boundedness checks.
pub const RULE_TRIALS: usize = 10_000;
const SLACK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyResult {
    pub name: String,
    pub passed: bool,
    /// Worst observed value of the checked quantity.
    pub metric: f64,
    /// Largest acceptable value of `metric`.
    pub threshold: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropsReport {
    pub results: Vec<PropertyResult>,
    pub passed: bool,
}

impl PropsReport {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            2
        }
    }
}

struct Case {
    loss: Box<dyn Loss>,
    dom: SamplingDomain,
}

fn wrap<L: Loss + 'static>(l: L, fault: Option<Fault>) -> Box<dyn Loss> {
    match fault {
        Some(Fault::Gradient) => Box::new(CorruptedGradient { inner: l }),
        None => Box::new(l),
    }
}

fn cases(fault: Option<Fault>, seed: u64) -> Result<Vec<Case>> {
    let dim = 3;
    Ok(vec![
        Case {
            loss: wrap(LogisticLoss::new(1.0, 0.0, None), fault),
            dom: SamplingDomain::new(dim, 1.0, 5.0),
        },
        Case {
            loss: wrap(LogisticLoss::new(1.5, 0.1, Some(3.0)), fault),
            dom: SamplingDomain::new(dim, 1.5, 3.0),
        },
        Case {
            loss: wrap(LeastSquaresLoss::new(1.0, 1.0, 0.1, 2.0), fault),
            dom: SamplingDomain::new(dim, 1.0, 2.0),
        },
        Case {
            loss: wrap(LeastSquaresLoss::new(2.0, 0.5, 0.0, 1.0), fault),
            dom: SamplingDomain::new(dim, 2.0, 1.0).with_label_bound(0.5),
        },
        Case {
            loss: wrap(SigmoidLoss::new(1.0), fault),
            dom: SamplingDomain::new(dim, 1.0, 5.0),
        },
        Case {
            loss: wrap(TinyMlpLoss::new(dim, 4, 1.0, 2.0, derive_seed(seed, 99))?, fault),
            dom: SamplingDomain::new(dim, 1.0, 2.0),
        },
    ])
}

fn draw_point(rng: &mut ChaCha8Rng, loss: &dyn Loss, dom: &SamplingDomain) -> (ParamVector, Example) {
    let w = ParamVector::new(uniform_in_ball(rng, loss.param_dim(dom.feature_dim), dom.radius)).expect("finite");
    let x = uniform_in_ball(rng, dom.feature_dim, dom.feature_bound);
    let y = if loss.binary_labels() {
        if rng.random_bool(0.5) {
            1.0
        } else {
            -1.0
        }
    } else {
        rng.random_range(-dom.label_bound..=dom.label_bound)
    };
    (w, Example::new(x, y).expect("finite"))
}

fn result(name: &str, metric: f64, threshold: f64, detail: String) -> PropertyResult {
    PropertyResult {
        name: name.into(),
        passed: metric <= threshold,
        metric,
        threshold,
        detail,
    }
}

fn finite_diff(cases: &[Case], seed: u64) -> PropertyResult {
    let mut worst = (0.0_f64, "");
    for (k, c) in cases.iter().enumerate() {
        let mut rng = stream_rng(derive_seed(seed, k as u64), Stream::Falsifier);
        for _ in 0..200 {
            let (w, z) = draw_point(&mut rng, c.loss.as_ref(), &c.dom);
            let e = finite_diff_gradient_check(c.loss.as_ref(), &w, &z, 1e-6);
            if e > worst.0 {
                worst = (e, c.loss.name());
            }
        }
    }
    result("finite_diff", worst.0, 1e-5, format!("largest relative error on `{}`", worst.1))
}

fn gradient_norm_bound(cases: &[Case], seed: u64) -> PropertyResult {
    let mut worst = 0.0_f64;
    for (k, c) in cases.iter().enumerate() {
        let Ok(cst) = c.loss.certify(Some(c.dom.radius)) else { continue };
        let mut rng = stream_rng(derive_seed(seed, k as u64), Stream::Falsifier);
        for _ in 0..2000 {
            let (w, z) = draw_point(&mut rng, c.loss.as_ref(), &c.dom);
            worst = worst.max(c.loss.gradient(&w, &z).norm() / cst.lipschitz);
        }
    }
    result("gradient_norm_bound", worst, 1.0 + SLACK_TOL, "max ‖∇f‖ / L over certified losses".into())
}

fn constants_upper_bound(cases: &[Case], seed: u64) -> Result<PropertyResult> {
    let mut worst = 0.0_f64;
    for c in cases {
        let Ok(cst) = c.loss.certify(Some(c.dom.radius)) else { continue };
        let est = estimate_constants_empirical(c.loss.as_ref(), &c.dom, FALSIFIER_PAIRS, seed)?;
        worst = worst.max(est.lipschitz / cst.lipschitz);
        if cst.smoothness > 0.0 {
            worst = worst.max(est.smoothness / cst.smoothness);
        }
    }
    Ok(result(
        "constants_upper_bound",
        worst,
        1.0 + SLACK_TOL,
        "largest estimated/certified ratio of L and β".into(),
    ))
}

fn cocoercivity(cases: &[Case], seed: u64) -> Result<PropertyResult> {
    let mut worst = 0.0_f64;
    let mut checked = 0;
    for c in cases.iter().filter(|c| c.loss.convexity() != Convexity::NonConvex) {
        if let Some(s) = check_cocoercivity(c.loss.as_ref(), &c.dom, FALSIFIER_PAIRS, seed)?.min_slack() {
            worst = worst.max(-s);
            checked += 1;
        }
    }
    Ok(result("cocoercivity", worst, SLACK_TOL, format!("negated minimum slack over {checked} losses")))
}

fn strong_convexity(cases: &[Case], seed: u64) -> Result<PropertyResult> {
    let mut worst = 0.0_f64;
    for c in cases.iter().filter(|c| c.loss.convexity() == Convexity::StronglyConvex) {
        let gamma = c.loss.constants().strong_convexity;
        if let Some(s) = check_strong_convexity_inequality(c.loss.as_ref(), gamma, &c.dom, FALSIFIER_PAIRS, seed)?.min_slack() {
            worst = worst.max(-s);
        }
    }
    Ok(result("strong_convexity", worst, SLACK_TOL, "negated minimum slack".into()))
}

/// Runs `check` on gradient, weight-decay, clipped, dropout, projected and proximal
/// rules over every certified loss and step size, returning the worst
/// `observed − certified` and where it happened.
fn over_rules(cases: &[Case], seed: u64, check: impl Fn(&UpdateRule<'_>, f64, u64) -> Result<Option<f64>>) -> Result<(f64, String)> {
    let mut worst = (f64::NEG_INFINITY, String::new());
    let mut note = |v: Option<f64>, what: String| {
        if let Some(v) = v {
            if v > worst.0 {
                worst = (v, what);
            }
        }
    };
    for (k, c) in cases.iter().enumerate() {
        let Ok(cst) = c.loss.certify(Some(c.dom.radius)) else { continue };
        let mut rng = stream_rng(derive_seed(seed, k as u64), Stream::Init);
        let (_, z) = draw_point(&mut rng, c.loss.as_ref(), &c.dom);
        let loss = c.loss.as_ref();
        let r = c.dom.radius;
        let beta = cst.smoothness.max(1e-12);
        for a in [0.1 / beta, 1.0 / beta, 1.9 / beta, 3.0 / beta] {
            let rules = [
                UpdateRule::Gradient { loss, example: &z, alpha: a },
                UpdateRule::WeightDecay {
                    loss,
                    example: &z,
                    alpha: a,
                    decay: 0.1,
                },
                UpdateRule::Clipped {
                    loss,
                    example: &z,
                    alpha: a,
                    clip: 0.5 * cst.lipschitz,
                },
                UpdateRule::Dropout {
                    loss,
                    example: &z,
                    alpha: a,
                    dropout: Dropout::norm_exact(0.5, 0.5),
                },
            ];
            for (rule, kind) in rules.iter().zip(["gradient", "weight decay", "clipped", "dropout"]) {
                let s = derive_seed(seed, a.to_bits());
                note(check(rule, r, s)?, format!("{kind} step on `{}`, α = {a}", loss.name()));
                let projected = UpdateRule::Projected { inner: rule, radius: r };
                note(check(&projected, r, s)?, format!("projected {kind} step on `{}`, α = {a}", loss.name()));
            }
        }
    }
    let dim = 4;
    for (j, prox) in [
        ProxTerm::Ball { radius: 1.0 },
        ProxTerm::L1 { lambda: 0.3 },
        ProxTerm::Norm { lambda: 0.3 },
        ProxTerm::SquaredNorm { lambda: 0.3 },
    ]
    .into_iter()
    .enumerate()
    {
        let rule = UpdateRule::Proximal { prox, alpha: 0.5, dim };
        note(check(&rule, 3.0, derive_seed(seed, 1000 + j as u64))?, format!("prox {prox:?}"));
    }
    Ok(worst)
}

fn cert_constants(rule: &UpdateRule<'_>, radius: f64) -> crate::rules::RuleCertificate {
    let base_loss = |r: &UpdateRule<'_>| -> Option<crate::model::RegularityConstants> {
        match *r {
            UpdateRule::Gradient { loss, .. }
            | UpdateRule::WeightDecay { loss, .. }
            | UpdateRule::Dropout { loss, .. }
            | UpdateRule::Clipped { loss, .. } => loss.certify(Some(radius)).ok(),
            _ => None,
        }
    };
    let constants = match rule {
        UpdateRule::Projected { inner, .. } => base_loss(inner),
        other => base_loss(other),
    }
    .unwrap_or(crate::model::RegularityConstants {
        lipschitz: 0.0,
        smoothness: 0.0,
        strong_convexity: 0.0,
        range_bound: 0.0,
        domain_radius: Some(radius),
        certified: true,
    });
    let constants = crate::model::RegularityConstants {
        domain_radius: Some(constants.domain_radius.map_or(radius, |d| d.min(radius))),
        ..constants
    };
    certify(rule, &constants)
}

fn expansiveness(cases: &[Case], seed: u64) -> Result<PropertyResult> {
    let (worst, at) = over_rules(cases, seed, |rule, r, s| {
        let cert = cert_constants(rule, r);
        if !cert.eta.is_finite() {
            return Ok(None);
        }
        Ok(Some(empirical_expansiveness(rule, r, RULE_TRIALS, s)? - cert.eta))
    })?;
    Ok(result("expansiveness", worst, SLACK_TOL, format!("largest observed − certified η, at {at}")))
}

fn boundedness(cases: &[Case], seed: u64) -> Result<PropertyResult> {
    let (worst, at) = over_rules(cases, seed, |rule, r, s| {
        let cert = cert_constants(rule, r);
        if !cert.sigma.is_finite() {
            return Ok(None);
        }
        Ok(Some(empirical_boundedness(rule, r, RULE_TRIALS, s)? - cert.sigma))
    })?;
    Ok(result("boundedness", worst, SLACK_TOL, format!("largest observed − certified σ, at {at}")))
}

/// Largest deviation, in binomial standard errors, of the empirical hit-time
/// law from `1 − (1 − 1/n)^{t0}` (uniform) and `t0/n` (permutation).
pub fn hit_time_z_score(n: usize, trials: usize, seed: u64) -> Result<f64> {
    let mut worst = 0.0_f64;
    for scheme in [SamplingScheme::Uniform, SamplingScheme::Permutation] {
        let h = hit_time_distribution(scheme, n, n, trials, seed, false)?;
        for (t0, &p_hat) in h.cdf.iter().enumerate() {
            let p = match scheme {
                SamplingScheme::Uniform => 1.0 - (1.0 - 1.0 / n as f64).powi(t0 as i32),
                SamplingScheme::Permutation => t0 as f64 / n as f64,
            };
            let se = h.stderr(p);
            let z = if se > 0.0 {
                (p_hat - p).abs() / se
            } else if (p_hat - p).abs() < 1e-12 {
                0.0
            } else {
                f64::INFINITY
            };
            worst = worst.max(z);
        }
    }
    Ok(worst)
}

fn hit_time(seed: u64) -> Result<PropertyResult> {
    let z = hit_time_z_score(50, 10_000, seed)?;
    Ok(result("hit_time", z, 3.0, "largest |P̂(I ≤ t0) − P(I ≤ t0)| in standard errors, n = 50".into()))
}

/// Closed form of the growth recursion for constant `η` and `σ`.
pub fn growth_closed_form(n: usize, eta: f64, sigma: f64, steps: usize) -> f64 {
    let p = 1.0 / n as f64;
    // r − 1 for r = (1 − p)η + p·min(η, 1), formed without cancellation.
    let d = if eta >= 1.0 { (1.0 - p) * (eta - 1.0) } else { eta - 1.0 };
    if d == 0.0 {
        2.0 * p * sigma * steps as f64
    } else {
        2.0 * p * sigma * (steps as f64 * d.ln_1p()).exp_m1() / d
    }
}

/// Worst relative error between the unrolled recursion and its closed form
/// over `schedules` random constant-(η, σ) schedules, plus exact checks that
/// `η ≡ 1` gives `(2/n) Σ σ_t` for varying `σ_t`.
pub fn growth_recursion_error(schedules: usize, seed: u64) -> Result<f64> {
    let mut rng = stream_rng(seed, Stream::Falsifier);
    let mut worst = 0.0_f64;
    for k in 0..schedules {
        let n = rng.random_range(2..200usize);
        let steps = rng.random_range(1..300usize);
        let sigma = rng.random_range(0.0..2.0);
        let eta = match k % 3 {
            0 => 1.0,
            1 => rng.random_range(0.5..1.0),
            _ => rng.random_range(1.0..1.01),
        };
        let d = growth_recursion_unroll(n, &vec![eta; steps], &vec![sigma; steps])?;
        let exact = growth_closed_form(n, eta, sigma, steps);
        let got = *d.last().expect("nonempty");
        if exact > 0.0 {
            worst = worst.max((got - exact).abs() / exact);
        }
        let sig: Vec<f64> = (0..steps).map(|_| rng.random_range(0.0..1.0)).collect();
        let d = growth_recursion_unroll(n, &vec![1.0; steps], &sig)?;
        let exact = 2.0 * sig.iter().sum::<f64>() / n as f64;
        if exact > 0.0 {
            worst = worst.max((d[steps] - exact).abs() / exact);
        }
    }
    Ok(worst)
}

fn growth_recursion(seed: u64) -> Result<PropertyResult> {
    let e = growth_recursion_error(100, seed)?;
    Ok(result("growth_recursion", e, 1e-12, "worst relative error against closed forms".into()))
}

/// Smallest `population_min − E[min empirical]` over `instances` random
/// one-parameter problems; the inequality says it is never negative.
pub fn erm_oracle_min_slack(instances: usize, seed: u64) -> Result<f64> {
    let mut rng = stream_rng(seed, Stream::Falsifier);
    let mut worst = f64::INFINITY;
    for k in 0..instances {
        let atoms_n = rng.random_range(2..=4usize);
        let n = rng.random_range(2..=6usize);
        let logistic = k % 2 == 1;
        let atoms: Vec<Example> = (0..atoms_n)
            .map(|_| {
                let x = rng.random_range(-1.0..1.0);
                let y = if logistic {
                    if rng.random_bool(0.5) {
                        1.0
                    } else {
                        -1.0
                    }
                } else {
                    rng.random_range(-1.0..1.0)
                };
                Example::new(vec![x], y).expect("finite")
            })
            .collect();
        let weights: Vec<f64> = (0..atoms_n).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = weights.iter().sum();
        let support = FiniteSupport::new(atoms, weights.iter().map(|w| w / total).collect())?;
        let o = if logistic {
            let loss = LogisticLoss::new(1.0, 0.1, Some(5.0));
            erm_vs_population_oracle(&loss, &support, n, Minimizer::Grid { radius: 5.0, points: 201 })?
        } else {
            let loss = LeastSquaresLoss::new(1.0, 1.0, 0.0, 10.0);
            erm_vs_population_oracle(&loss, &support, n, Minimizer::LeastSquares { ridge: 0.0 })?
        };
        worst = worst.min(o.slack);
    }
    Ok(worst)
}

fn erm_oracle(seed: u64) -> Result<PropertyResult> {
    let s = erm_oracle_min_slack(20, seed)?;
    Ok(result("erm_oracle", -s, 1e-9, "negated smallest population − expected empirical minimum".into()))
}

fn sigmoid_range(seed: u64) -> PropertyResult {
    let loss = SigmoidLoss::new(1.0);
    let dom = SamplingDomain::new(3, 1.0, 20.0);
    let mut rng = stream_rng(seed, Stream::Falsifier);
    let mut outside = 0.0_f64;
    for _ in 0..5000 {
        let (w, z) = draw_point(&mut rng, &loss, &dom);
        let v = loss.value(&w, &z);
        outside = outside.max(-v).max(v - 1.0);
    }
    result("sigmoid_range", outside, 0.0, "largest excursion of the loss outside [0, 1]".into())
}

/// Largest z-score of the all-zero mask frequency against `(1 − q)^d`.
pub fn dropout_mask_z_score(draws: usize, seed: u64) -> f64 {
    let mut worst = 0.0_f64;
    for (k, (q, d)) in [(0.5, 1usize), (0.5, 3), (0.3, 2), (0.8, 2)].into_iter().enumerate() {
        let drop = Dropout::norm_exact(1.0, q);
        let p = drop.zero_mask_probability(d);
        let mut rng = stream_rng(derive_seed(seed, k as u64), Stream::Dropout);
        let mut zero = 0;
        for _ in 0..draws {
            let mut v = vec![1.0; d];
            drop.apply(&mut v, &mut rng);
            if v.iter().all(|x| *x == 0.0) {
                zero += 1;
            }
        }
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        worst = worst.max((zero as f64 / draws as f64 - p).abs() / se);
    }
    worst
}

fn dropout_mask(seed: u64) -> PropertyResult {
    let z = dropout_mask_z_score(20_000, seed);
    result("dropout_mask", z, 3.0, "largest all-zero mask frequency deviation in standard errors".into())
}

/// Runs every property whose name contains `filter`.
pub fn run_properties(filter: Option<&str>, fault: Option<Fault>, seed: u64) -> Result<PropsReport> {
    let selected: Vec<&str> = PROPERTY_NAMES
        .iter()
        .copied()
        .filter(|n| filter.is_none_or(|f| n.contains(f)))
        .collect();
    let cases = cases(fault, seed)?;
    let mut results = Vec::new();
    for name in selected {
        let s = derive_seed(seed, name.len() as u64 * 7919 + name.as_bytes()[0] as u64);
        let r = match name {
            "finite_diff" => finite_diff(&cases, s),
            "gradient_norm_bound" => gradient_norm_bound(&cases, s),
            "constants_upper_bound" => constants_upper_bound(&cases, s)?,
            "cocoercivity" => cocoercivity(&cases, s)?,
            "strong_convexity" => strong_convexity(&cases, s)?,
            "expansiveness" => expansiveness(&cases, s)?,
            "boundedness" => boundedness(&cases, s)?,
            "hit_time" => hit_time(s)?,
            "growth_recursion" => growth_recursion(s)?,
            "erm_oracle" => erm_oracle(s)?,
            "sigmoid_range" => sigmoid_range(s),
            "dropout_mask" => dropout_mask(s),
            _ => unreachable!("every listed property is dispatched"),
        };
        results.push(r);
    }
    let passed = results.iter().all(|r| r.passed);
    Ok(PropsReport { results, passed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_matches_unroll() {
        assert!(growth_recursion_error(30, 3).unwrap() < 1e-12);
    }

    #[test]
    fn filter_without_match_is_empty() {
        let r = run_properties(Some("no_such_property"), None, 0).unwrap();
        assert!(r.results.is_empty());
        assert_eq!(r.exit_code(), 0);
    }

    #[test]
    fn injected_gradient_fault_is_caught() {
        let clean = run_properties(Some("finite_diff"), None, 0).unwrap();
        assert!(clean.passed, "{clean:?}");
        let broken = run_properties(Some("finite_diff"), Some(Fault::Gradient), 0).unwrap();
        assert!(!broken.passed);
        assert_eq!(broken.exit_code(), 2);
    }
}
