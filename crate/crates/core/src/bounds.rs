//! Closed-form stability and risk bounds, the growth-recursion unroller,
//! and an enumeration oracle comparing ERM with the population minimizer.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{contract, Error, Result};
use crate::model::{Example, FiniteSupport, Loss, ParamVector};
use crate::rules::StepSizeSchedule;

/// `(2L²/n) Σ_{t≤T} α_t`
pub fn convex_bound(l: f64, n: usize, schedule: &StepSizeSchedule, steps: usize) -> f64 {
    2.0 * l * l * schedule.sum(steps) / n as f64
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(contract(format!("{name} must be positive and finite, got {v}")))
    }
}

/// `2L² / (γn)`
pub fn strongly_convex_bound(l: f64, gamma: f64, n: usize) -> Result<f64> {
    positive("gamma", gamma)?;
    Ok(2.0 * l * l / (gamma * n as f64))
}

/// `(2L² + βρ) / (γn)`
pub fn strongly_convex_decaying_bound(l: f64, beta: f64, rho: f64, gamma: f64, n: usize) -> Result<f64> {
    positive("gamma", gamma)?;
    if !(rho >= 0.0) {
        return Err(contract("rho must be nonnegative"));
    }
    Ok((2.0 * l * l + beta * rho) / (gamma * n as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NonconvexBound {
    pub value: f64,
    /// Burn-in length actually used, in `[1, n]`.
    pub t0: f64,
    /// Unconstrained optimizer `(2cL²)^{1/(q+1)} T^{q/(q+1)}`.
    pub t0_unclamped: f64,
    /// `q / (q + 1)` with `q = βc`.
    pub exponent: f64,
    pub clamped: bool,
}

/// Bound for non-convex `f ∈ [0, 1]` under steps `α_t ≤ c/t`. When the
/// optimal burn-in falls outside `[1, n]` it is clamped and the two-term
/// bound `t0/(n−1) + (2L²/(β(n−1)))(T/t0)^{βc}` is evaluated there instead.
/// The first term uses `n − 1` like the closed form, so the value is
/// continuous where the clamp starts.
pub fn nonconvex_bound(l: f64, beta: f64, c: f64, n: usize, steps: usize) -> Result<NonconvexBound> {
    if n < 2 {
        return Err(contract("n must be at least 2"));
    }
    positive("beta", beta)?;
    positive("c", c)?;
    let q = beta * c;
    let t = steps as f64;
    let nf = n as f64;
    let base = 2.0 * c * l * l;
    let t0 = base.powf(1.0 / (q + 1.0)) * t.powf(q / (q + 1.0));
    let exponent = q / (q + 1.0);
    if (1.0..=nf).contains(&t0) {
        Ok(NonconvexBound {
            value: (1.0 + 1.0 / q) / (nf - 1.0) * t0,
            t0,
            t0_unclamped: t0,
            exponent,
            clamped: false,
        })
    } else {
        let tc = t0.clamp(1.0, nf);
        Ok(NonconvexBound {
            value: tc / (nf - 1.0) + 2.0 * l * l / (beta * (nf - 1.0)) * (t / tc).powf(q),
            t0: tc,
            t0_unclamped: t0,
            exponent,
            clamped: true,
        })
    }
}

/// `(t0/n)ρ + L·E[δ_T | δ_{t0} = 0]`, with the second term supplied as `tail`.
pub fn burn_in_bound(t0: f64, n: usize, rho: f64, tail: f64) -> f64 {
    t0 / n as f64 * rho + tail
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AveragingBound {
    /// `αTL²/n`
    pub statement: f64,
    /// `α(T+1)L²/n`, the larger value; use this one for checks.
    pub proof: f64,
}

pub fn averaging_bound(l: f64, alpha: f64, steps: usize, n: usize) -> AveragingBound {
    let k = alpha * l * l / n as f64;
    AveragingBound {
        statement: k * steps as f64,
        proof: k * (steps + 1) as f64,
    }
}

/// Unrolls `Δ_{t+1} = (1 − 1/n) η_t Δ_t + (1/n)(min(η_t, 1) Δ_t + 2σ_t)` from
/// `Δ_0 = 0`, returning `Δ_0..Δ_T`.
pub fn growth_recursion_unroll(n: usize, eta: &[f64], sigma: &[f64]) -> Result<Vec<f64>> {
    if eta.len() != sigma.len() {
        return Err(Error::DimensionMismatch {
            expected: eta.len(),
            got: sigma.len(),
        });
    }
    if eta.iter().chain(sigma).any(|v| !(*v >= 0.0)) {
        return Err(contract("η and σ must be nonnegative"));
    }
    let p = 1.0 / n as f64;
    let mut out = Vec::with_capacity(eta.len() + 1);
    let mut d = 0.0;
    out.push(d);
    for (&e, &s) in eta.iter().zip(sigma) {
        d = (1.0 - p) * e * d + p * (e.min(1.0) * d + 2.0 * s);
        out.push(d);
    }
    Ok(out)
}

/// Excess-risk term `½D²/(Tα) + ½L²α` of the averaged iterate.
pub fn ny_risk_bound(d: f64, l: f64, steps: usize, alpha: f64) -> f64 {
    0.5 * d * d / (steps as f64 * alpha) + 0.5 * l * l * alpha
}

/// Optimal step `D/(L√T)` and the resulting excess `DL/√T`.
pub fn ny_optimal(d: f64, l: f64, steps: usize) -> (f64, f64) {
    let st = (steps as f64).sqrt();
    (d / (l * st), d * l / st)
}

/// `DL/√n`: one pass over `n` examples with the optimal step.
pub fn single_pass_bound(d: f64, l: f64, n: usize) -> f64 {
    d * l / (n as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MultipassBound {
    /// `(DL/√n) √((n + 2T)/T)`
    pub excess: f64,
    /// `D√n / (L√(T(n + 2T)))`
    pub alpha: f64,
}

pub fn multipass_risk_bound(d: f64, l: f64, n: usize, steps: usize) -> MultipassBound {
    let (nf, t) = (n as f64, steps as f64);
    MultipassBound {
        excess: d * l / nf.sqrt() * ((nf + 2.0 * t) / t).sqrt(),
        alpha: d * nf.sqrt() / (l * (t * (nf + 2.0 * t)).sqrt()),
    }
}

/// `E[R_S[w*_S]] + ε_opt + ε_stab`
pub fn risk_decomposition(expected_min_empirical: f64, eps_opt: f64, eps_stab: f64) -> Result<f64> {
    if !(eps_opt >= 0.0 && eps_stab >= 0.0) {
        return Err(contract("optimization and stability terms must be nonnegative"));
    }
    Ok(expected_min_empirical + eps_opt + eps_stab)
}

/// Largest number of datasets the enumeration oracle will visit.
pub const ENUMERATION_LIMIT: f64 = 1e6;

/// How the oracle minimizes one-dimensional weighted risks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Minimizer {
    /// `argmin Σ p_i ½(w x_i − y_i)² + (μ/2)w²` in closed form.
    LeastSquares { ridge: f64 },
    /// Grid over `[−radius, radius]` refined by golden-section search.
    Grid { radius: f64, points: usize },
}

fn minimize_1d(loss: &dyn Loss, atoms: &[Example], weights: &[f64], how: Minimizer) -> f64 {
    let risk = |w: f64| -> f64 {
        let p = ParamVector::from_raw(vec![w]);
        atoms
            .iter()
            .zip(weights)
            .filter(|(_, c)| **c > 0.0)
            .map(|(z, c)| c * loss.value(&p, z))
            .sum()
    };
    let w = match how {
        Minimizer::LeastSquares { ridge } => {
            let total: f64 = weights.iter().sum();
            let (mut sxx, mut sxy) = (0.0, 0.0);
            for (z, c) in atoms.iter().zip(weights) {
                sxx += c * z.features[0] * z.features[0];
                sxy += c * z.features[0] * z.label;
            }
            let den = sxx + ridge * total;
            if den > 0.0 {
                sxy / den
            } else {
                0.0
            }
        }
        Minimizer::Grid { radius, points } => {
            let points = points.max(3);
            let h = 2.0 * radius / (points - 1) as f64;
            let best = (0..points)
                .map(|k| -radius + k as f64 * h)
                .map(|w| (w, risk(w)))
                .fold((0.0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
            let (mut a, mut b) = ((best.0 - h).max(-radius), (best.0 + h).min(radius));
            let g = (5f64.sqrt() - 1.0) / 2.0;
            let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
            let (mut fc, mut fd) = (risk(c), risk(d));
            while b - a > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                if fc < fd {
                    b = d;
                    d = c;
                    fd = fc;
                    c = b - g * (b - a);
                    fc = risk(c);
                } else {
                    a = c;
                    c = d;
                    fc = fd;
                    d = a + g * (b - a);
                    fd = risk(d);
                }
            }
            let mid = 0.5 * (a + b);
            [mid, best.0].into_iter().min_by(|x, y| risk(*x).total_cmp(&risk(*y))).unwrap()
        }
    };
    risk(w) / weights.iter().sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErmOracle {
    /// `E_S[min_w R_S[w]]`, exact over all datasets.
    pub expected_min_empirical: f64,
    /// `min_w R[w]`
    pub population_min: f64,
    /// `population_min − expected_min_empirical`, nonnegative in theory.
    pub slack: f64,
    /// Distinct multisets visited.
    pub multisets: usize,
}

fn ln_factorial(k: usize) -> f64 {
    (1..=k).map(|i| (i as f64).ln()).sum()
}

/// Exact `E[R_S[w*_S]]` versus `R[w*]` for a one-parameter loss and a finite
/// support, by enumerating every multiset of `n` atoms with its multinomial
/// probability.
pub fn erm_vs_population_oracle(
    loss: &dyn Loss,
    support: &FiniteSupport,
    n: usize,
    how: Minimizer,
) -> Result<ErmOracle> {
    let atoms = support.atoms();
    if loss.param_dim(atoms[0].dim()) != 1 {
        return Err(contract("the enumeration oracle handles one-parameter losses only"));
    }
    let k = atoms.len();
    let count = (k as f64).powi(n as i32);
    if count > ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge {
            count,
            limit: ENUMERATION_LIMIT,
        });
    }
    let probs = support.probs();
    let population_min = minimize_1d(loss, atoms, probs, how);
    let mut counts = vec![0usize; k];
    let mut expected = 0.0;
    let mut visited = 0;
    let ln_n = ln_factorial(n);
    // Iterate over compositions of n into k parts.
    fn visit(
        slot: usize,
        left: usize,
        counts: &mut [usize],
        f: &mut dyn FnMut(&[usize]),
    ) {
        if slot + 1 == counts.len() {
            counts[slot] = left;
            f(counts);
            return;
        }
        for c in 0..=left {
            counts[slot] = c;
            visit(slot + 1, left - c, counts, f);
        }
    }
    visit(0, n, &mut counts, &mut |c: &[usize]| {
        let mut lp = ln_n;
        for (ci, pi) in c.iter().zip(probs) {
            if *ci > 0 {
                if *pi == 0.0 {
                    return;
                }
                lp += *ci as f64 * pi.ln() - ln_factorial(*ci);
            }
        }
        let weights: Vec<f64> = c.iter().map(|&x| x as f64).collect();
        expected += lp.exp() * minimize_1d(loss, atoms, &weights, how);
        visited += 1;
    });
    Ok(ErmOracle {
        expected_min_empirical: expected,
        population_min,
        slack: population_min - expected,
        multisets: visited,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Indicative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Empirical {
    pub mean: f64,
    pub stderr: f64,
}

/// A bound value with the inputs that produced it and, optionally, the
/// measurement it is checked against.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub name: String,
    pub inputs: BTreeMap<String, Value>,
    pub value: f64,
    pub internals: BTreeMap<String, Value>,
    pub empirical: Option<Empirical>,
    pub verdict: Option<Verdict>,
}

impl BoundReport {
    pub fn new(name: &str, value: f64) -> Self {
        Self {
            name: name.into(),
            inputs: BTreeMap::new(),
            value,
            internals: BTreeMap::new(),
            empirical: None,
            verdict: None,
        }
    }

    pub fn input(mut self, key: &str, v: impl Into<Value>) -> Self {
        self.inputs.insert(key.into(), v.into());
        self
    }

    pub fn internal(mut self, key: &str, v: impl Into<Value>) -> Self {
        self.internals.insert(key.into(), v.into());
        self
    }

    /// Attaches a measurement. The verdict is `pass` when
    /// `mean ≤ value + sigmas·stderr` and the constants are certified,
    /// `indicative` when they are not.
    pub fn compare(mut self, mean: f64, stderr: f64, certified: bool, sigmas: f64) -> Self {
        self.empirical = Some(Empirical { mean, stderr });
        self.inputs
            .insert("provenance".into(), json!(if certified { "certified" } else { "empirical" }));
        self.verdict = Some(if !certified {
            Verdict::Indicative
        } else if mean <= self.value + sigmas * stderr {
            Verdict::Pass
        } else {
            Verdict::Fail
        });
        self
    }
}

fn get(inputs: &BTreeMap<String, f64>, key: &str) -> Result<f64> {
    inputs
        .get(key)
        .copied()
        .ok_or_else(|| Error::Config(vec![format!("missing input `{key}`")]))
}

fn get_count(inputs: &BTreeMap<String, f64>, key: &str) -> Result<usize> {
    let v = get(inputs, key)?;
    if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(Error::Config(vec![format!("`{key}` must be a nonnegative integer, got {v}")]))
    }
}

pub const BOUND_NAMES: &[&str] = &[
    "convex",
    "strongly_convex",
    "strongly_convex_decaying",
    "nonconvex",
    "averaging",
    "growth_recursion",
    "ny",
    "single_pass",
    "multipass",
    "risk_decomposition",
];

/// Evaluates a named bound from numeric inputs (calculator mode).
pub fn evaluate(name: &str, inputs: &BTreeMap<String, f64>) -> Result<BoundReport> {
    let mut report = match name {
        "convex" => {
            let (l, n, t) = (get(inputs, "L")?, get_count(inputs, "n")?, get_count(inputs, "T")?);
            let schedule = match (inputs.get("alpha"), inputs.get("c")) {
                (Some(&alpha), None) => StepSizeSchedule::Constant { alpha },
                (None, Some(&c)) => StepSizeSchedule::InverseT { c },
                _ => return Err(Error::Config(vec!["convex bound needs exactly one of `alpha` or `c`".into()])),
            };
            BoundReport::new(name, convex_bound(l, n, &schedule, t)).internal("sum_alpha", schedule.sum(t))
        }
        "strongly_convex" => {
            let v = strongly_convex_bound(get(inputs, "L")?, get(inputs, "gamma")?, get_count(inputs, "n")?)?;
            BoundReport::new(name, v)
        }
        "strongly_convex_decaying" => {
            let v = strongly_convex_decaying_bound(
                get(inputs, "L")?,
                get(inputs, "beta")?,
                get(inputs, "rho")?,
                get(inputs, "gamma")?,
                get_count(inputs, "n")?,
            )?;
            BoundReport::new(name, v)
        }
        "nonconvex" => {
            let b = nonconvex_bound(
                get(inputs, "L")?,
                get(inputs, "beta")?,
                get(inputs, "c")?,
                get_count(inputs, "n")?,
                get_count(inputs, "T")?,
            )?;
            BoundReport::new(name, b.value)
                .internal("t0", b.t0)
                .internal("t0_unclamped", b.t0_unclamped)
                .internal("q", get(inputs, "beta")? * get(inputs, "c")?)
                .internal("exponent", b.exponent)
                .internal("clamped", b.clamped)
        }
        "averaging" => {
            let b = averaging_bound(get(inputs, "L")?, get(inputs, "alpha")?, get_count(inputs, "T")?, get_count(inputs, "n")?);
            BoundReport::new(name, b.proof).internal("statement", b.statement).internal("proof", b.proof)
        }
        "growth_recursion" => {
            let t = get_count(inputs, "T")?;
            let d = growth_recursion_unroll(
                get_count(inputs, "n")?,
                &vec![get(inputs, "eta")?; t],
                &vec![get(inputs, "sigma")?; t],
            )?;
            BoundReport::new(name, *d.last().unwrap())
        }
        "ny" => {
            let (d, l, t) = (get(inputs, "D")?, get(inputs, "L")?, get_count(inputs, "T")?);
            let (alpha_opt, best) = ny_optimal(d, l, t);
            match inputs.get("alpha") {
                Some(&alpha) => BoundReport::new(name, ny_risk_bound(d, l, t, alpha)),
                None => BoundReport::new(name, best),
            }
            .internal("optimal_alpha", alpha_opt)
            .internal("optimal_excess", best)
        }
        "single_pass" => BoundReport::new(name, single_pass_bound(get(inputs, "D")?, get(inputs, "L")?, get_count(inputs, "n")?)),
        "multipass" => {
            let b = multipass_risk_bound(get(inputs, "D")?, get(inputs, "L")?, get_count(inputs, "n")?, get_count(inputs, "T")?);
            BoundReport::new(name, b.excess).internal("alpha", b.alpha)
        }
        "risk_decomposition" => BoundReport::new(
            name,
            risk_decomposition(get(inputs, "erm")?, get(inputs, "eps_opt")?, get(inputs, "eps_stab")?)?,
        ),
        other => {
            return Err(Error::Config(vec![format!(
                "unknown bound `{other}`; expected one of {}",
                BOUND_NAMES.join(", ")
            )]))
        }
    };
    for (k, v) in inputs {
        report = report.input(k, *v);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{LeastSquaresLoss, LogisticLoss};
    use approx::assert_relative_eq;
    use proptest::prelude::{prop_assert, proptest};

    fn ex(x: f64, y: f64) -> Example {
        Example::new(vec![x], y).unwrap()
    }

    #[test]
    fn convex_examples() {
        let c = StepSizeSchedule::Constant { alpha: 0.01 };
        assert_relative_eq!(convex_bound(1.0, 100, &c, 100), 0.02, max_relative = 1e-12);
        assert_eq!(convex_bound(1.0, 100, &c, 0), 0.0);
        let inv = StepSizeSchedule::InverseT { c: 1.0 };
        assert_relative_eq!(convex_bound(1.0, 10, &inv, 3), 0.2 * (1.0 + 0.5 + 1.0 / 3.0), max_relative = 1e-15);
    }

    #[test]
    fn strongly_convex_examples() {
        assert_eq!(strongly_convex_bound(1.0, 1.0, 2).unwrap(), 1.0);
        assert_relative_eq!(strongly_convex_bound(2.0, 0.5, 100).unwrap(), 0.16, max_relative = 1e-12);
        assert_relative_eq!(
            strongly_convex_bound(1.0, 0.3, 50).unwrap(),
            2.0 * strongly_convex_bound(1.0, 0.3, 100).unwrap(),
            max_relative = 1e-15
        );
        assert!(strongly_convex_bound(1.0, 0.0, 10).is_err());
        assert_relative_eq!(strongly_convex_decaying_bound(1.0, 1.0, 1.0, 1.0, 100).unwrap(), 0.03, max_relative = 1e-12);
        assert_eq!(
            strongly_convex_decaying_bound(1.0, 1.0, 0.0, 1.0, 100).unwrap(),
            strongly_convex_bound(1.0, 1.0, 100).unwrap()
        );
    }

    #[test]
    fn nonconvex_examples() {
        let b = nonconvex_bound(1.0, 1.0, 1.0, 101, 100).unwrap();
        assert!(!b.clamped);
        assert_relative_eq!(b.value, 0.2 * 2f64.sqrt(), max_relative = 1e-12);
        assert_eq!(b.exponent, 0.5);

        let c: f64 = 3.0;
        let l = (1.0 / (2.0 * c)).sqrt();
        let b = nonconvex_bound(l, 1.0 / c, c, 1000, 400).unwrap();
        assert_relative_eq!(b.value, 2.0 / 999.0 * 20.0, max_relative = 1e-12);

        assert!(nonconvex_bound(1.0, 1.0, 100.0, 10, 10).unwrap().exponent > 0.99);
        assert!(nonconvex_bound(1.0, 1.0, 0.01, 10, 10).unwrap().exponent < 0.01);
    }

    #[test]
    fn nonconvex_clamps_large_burn_in() {
        let b = nonconvex_bound(1.0, 1.0, 1.0, 10, 10_000).unwrap();
        assert!(b.clamped && b.t0 == 10.0 && b.t0_unclamped > 10.0);
        let two_term = 10.0 / 9.0 + 2.0 / 9.0 * (10_000.0f64 / 10.0);
        assert_relative_eq!(b.value, two_term, max_relative = 1e-12);
    }

    #[test]
    fn nonconvex_continuous_at_the_clamp() {
        // βc = 1, 2cL² = 2: t0 = √(2T) reaches n = 10 at T = 50.
        let closed = nonconvex_bound(1.0, 1.0, 1.0, 10, 49).unwrap();
        assert!(!closed.clamped);
        assert_relative_eq!(closed.value, 2.0 * 98f64.sqrt() / 9.0, max_relative = 1e-12);
        let clamped = nonconvex_bound(1.0, 1.0, 1.0, 10, 51).unwrap();
        assert!(clamped.clamped);
        assert_relative_eq!(clamped.value, 10.0 / 9.0 + 2.0 / 9.0 * 5.1, max_relative = 1e-12);
        assert!(clamped.value > closed.value);
    }

    #[test]
    fn averaging_examples() {
        let b = averaging_bound(1.0, 0.01, 100, 100);
        assert_relative_eq!(b.statement, 0.01, max_relative = 1e-12);
        assert_relative_eq!(b.proof, 0.0101, max_relative = 1e-12);
        let one = averaging_bound(2.0, 0.1, 1, 10);
        assert_relative_eq!(one.proof, 2.0 * one.statement, max_relative = 1e-15);
    }

    #[test]
    fn recursion_matches_convex_closed_form() {
        let (l, n) = (1.7, 37);
        let alphas: Vec<f64> = (1..=200).map(|t| 0.3 / t as f64).collect();
        let sigma: Vec<f64> = alphas.iter().map(|a| a * l).collect();
        let d = growth_recursion_unroll(n, &vec![1.0; 200], &sigma).unwrap();
        let closed = convex_bound(l, n, &StepSizeSchedule::InverseT { c: 0.3 }, 200);
        assert_relative_eq!(l * d[200], closed, max_relative = 1e-12);
        let zero = growth_recursion_unroll(n, &vec![1.5; 10], &[0.0; 10]).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn recursion_stays_below_strongly_convex_limit() {
        let (l, gamma, alpha, n) = (1.0, 0.5, 0.4, 20);
        let t = 5000;
        let d = growth_recursion_unroll(n, &vec![1.0 - alpha * gamma; t], &vec![alpha * l; t]).unwrap();
        let limit = 2.0 * l / (gamma * n as f64);
        assert!(d.iter().all(|v| *v <= limit * (1.0 + 1e-12)));
    }

    #[test]
    fn risk_examples() {
        let (a, v) = ny_optimal(1.0, 1.0, 100);
        assert_relative_eq!(v, 0.1, max_relative = 1e-12);
        assert_relative_eq!(ny_risk_bound(1.0, 1.0, 100, a), 0.1, max_relative = 1e-12);
        assert_relative_eq!(ny_risk_bound(1.0, 1.0, 100, 2.0 * a) / v, 1.25, max_relative = 1e-12);
        assert_relative_eq!(ny_optimal(2.0, 3.0, 400).1, 0.3, max_relative = 1e-12);

        let m = multipass_risk_bound(1.0, 1.0, 100, 100);
        assert_relative_eq!(m.excess, 0.1 * 3f64.sqrt(), max_relative = 1e-12);
        let far = multipass_risk_bound(1.0, 1.0, 100, 100_000_000);
        assert!((far.excess / single_pass_bound(1.0, 1.0, 100) - 2f64.sqrt()).abs() < 1e-6);
        // the prescribed step attains the bound
        let alpha = m.alpha;
        let nf = 100.0;
        let attained = 0.5 / (100.0 * alpha) + 0.5 * alpha * (1.0 + 2.0 * 100.0 / nf);
        assert_relative_eq!(attained, m.excess, max_relative = 1e-12);

        assert_eq!(risk_decomposition(0.4, 0.0, 0.0).unwrap(), 0.4);
        assert!(risk_decomposition(0.4, -0.1, 0.0).is_err());
    }

    #[test]
    fn erm_oracle_two_atoms() {
        // f = ½(w − y)²: the within-sample variance halves the textbook values.
        let loss = LeastSquaresLoss::new(1.0, 1.0, 0.0, 2.0);
        let support = FiniteSupport::uniform(vec![ex(1.0, 0.0), ex(1.0, 1.0)]).unwrap();
        for how in [Minimizer::LeastSquares { ridge: 0.0 }, Minimizer::Grid { radius: 2.0, points: 401 }] {
            let o = erm_vs_population_oracle(&loss, &support, 2, how).unwrap();
            assert_relative_eq!(o.expected_min_empirical, 1.0 / 16.0, max_relative = 1e-9);
            assert_relative_eq!(o.population_min, 1.0 / 8.0, max_relative = 1e-9);
            assert_relative_eq!(o.slack, 1.0 / 16.0, max_relative = 1e-8);
        }
        let single = FiniteSupport::uniform(vec![ex(0.5, 0.3)]).unwrap();
        let o = erm_vs_population_oracle(&loss, &single, 5, Minimizer::LeastSquares { ridge: 0.0 }).unwrap();
        assert!(o.slack.abs() < 1e-15);
    }

    #[test]
    fn erm_oracle_limits() {
        let loss = LogisticLoss::new(1.0, 0.0, None);
        let atoms: Vec<Example> = (0..10).map(|i| ex(0.1 * i as f64, if i % 2 == 0 { 1.0 } else { -1.0 })).collect();
        let support = FiniteSupport::uniform(atoms).unwrap();
        assert!(matches!(
            erm_vs_population_oracle(&loss, &support, 7, Minimizer::Grid { radius: 5.0, points: 101 }),
            Err(Error::EnumerationTooLarge { .. })
        ));
    }

    #[test]
    fn calculator_mode() {
        let inputs: BTreeMap<String, f64> = [("L", 1.0), ("n", 100.0), ("alpha", 0.01), ("T", 100.0)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let r = evaluate("convex", &inputs).unwrap();
        assert_relative_eq!(r.value, 0.02, max_relative = 1e-12);
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["empirical"], Value::Null);
        assert_eq!(json["verdict"], Value::Null);
        assert!(evaluate("nope", &inputs).is_err());
        assert!(evaluate("strongly_convex", &inputs).is_err());
    }

    #[test]
    fn verdicts() {
        let r = BoundReport::new("x", 1.0);
        assert_eq!(r.clone().compare(0.5, 0.1, true, 0.0).verdict, Some(Verdict::Pass));
        assert_eq!(r.clone().compare(1.5, 0.1, true, 0.0).verdict, Some(Verdict::Fail));
        assert_eq!(r.compare(1.5, 0.1, false, 0.0).verdict, Some(Verdict::Indicative));
    }

    proptest! {
        #[test]
        fn nonconvex_monotone(l in 0.05..2.0f64, beta in 0.05..2.0f64, c in 0.05..5.0f64,
                              n in 2usize..500, t in 1usize..5000) {
            let b = nonconvex_bound(l, beta, c, n, t).unwrap().value;
            prop_assert!(nonconvex_bound(l, beta, c, n, t + 1).unwrap().value >= b * (1.0 - 1e-12));
            prop_assert!(nonconvex_bound(l, beta, c, n + 1, t).unwrap().value <= b * (1.0 + 1e-12));
        }

        #[test]
        fn multipass_factor_range(n in 1usize..10_000, extra in 0usize..100_000) {
            let t = n + extra;
            let r = multipass_risk_bound(1.0, 1.0, n, t).excess / single_pass_bound(1.0, 1.0, n);
            prop_assert!(r > 2f64.sqrt() && r <= 3f64.sqrt() * (1.0 + 1e-12));
        }
    }
}
