//! Paired runs on neighboring datasets and the Monte Carlo estimators built
//! on them.
//!
//! Both members of a pair consume the same index sequence and the same
//! dropout masks; only the substituted example differs. The loss deviation
//! is a maximum over a finite probe set, so every stability estimate here
//! is a lower bound on the true uniform-stability constant.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{contract, Result};
use crate::model::{
    empirical_risk, make_neighbor, mean_stderr, population_risk_estimate, DataDistribution, Dataset, Example,
    ExampleSet, Loss, NeighborPair, ParamVector, RegularityConstants,
};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::sgm::{index_sequence, run_sgm, validate_run, RunConfig, RunStatus, SamplingScheme, Stepper};

/// Growth-check tolerance on `δ`.
pub const GROWTH_TOL: f64 = 1e-9;
/// Fresh probes drawn per trial when nothing else is requested.
pub const DEFAULT_PROBE_SIZE: usize = 256;
pub const MIN_STABILITY_TRIALS: usize = 30;
pub const MIN_HIT_TIME_TRIALS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaRecord {
    pub t: usize,
    pub delta: f64,
    pub is_hit_step: bool,
    /// `None` at `t = 0`.
    pub alpha_t: Option<f64>,
    /// Per-block distances when the loss has more than one block.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub layers: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedTrace {
    pub records: Vec<DeltaRecord>,
    /// First 1-based step whose index is the substituted position.
    pub hit_time: Option<usize>,
    /// `max_z |f(w_T; z) − f(w_T'; z)|` over the probe set.
    pub probe_deviation: f64,
    pub probe_count: usize,
    pub final_delta: f64,
    pub final_layer_deltas: Vec<f64>,
    pub status: RunStatus,
    /// Steps at which the per-step growth inequality was checked.
    pub growth_checked: usize,
    /// Largest `δ_t − bound_t` seen over checked steps.
    pub max_growth_excess: Option<f64>,
    #[serde(skip)]
    pub output: ParamVector,
    #[serde(skip)]
    pub output_prime: ParamVector,
}

impl PairedTrace {
    pub fn is_diverged(&self) -> bool {
        matches!(self.status, RunStatus::Diverged { .. })
    }

    /// CSV with columns `t,delta,is_hit_step,alpha_t`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "delta", "is_hit_step", "alpha_t"])?;
        for r in &self.records {
            w.write_record([
                r.t.to_string(),
                r.delta.to_string(),
                r.is_hit_step.to_string(),
                r.alpha_t.map(|a| a.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn within_domain(c: &RegularityConstants, w: &ParamVector) -> bool {
    c.domain_radius.is_none_or(|r| w.norm() <= r * (1.0 + 1e-12))
}

#[allow(clippy::too_many_arguments)]
fn paired_with_indices(
    loss: &dyn Loss,
    base: &dyn ExampleSet,
    neighbor: &dyn ExampleSet,
    i_star: usize,
    indices: &[usize],
    config: &RunConfig,
    w0: &ParamVector,
    probes: &[Example],
) -> PairedTrace {
    let stepper = Stepper { loss, rules: &config.rules };
    let constants = loss.constants();
    let check_growth = constants.certified;
    let blocks = loss.blocks(base.feature_dim());
    let layered = blocks.len() > 1;
    let layer_deltas = |a: &ParamVector, b: &ParamVector| -> Vec<f64> {
        blocks.iter().map(|r| a.block_distance(b, r.clone())).collect()
    };
    let stride = config.stride();
    let steps = indices.len();
    let mut rng = stream_rng(config.seed, Stream::Dropout);
    let (mut w, mut v) = (w0.clone(), w0.clone());
    let mut avg = config.average.then(|| (ParamVector::zeros(w0.dim()), ParamVector::zeros(w0.dim())));
    let mut records = vec![DeltaRecord {
        t: 0,
        delta: 0.0,
        is_hit_step: false,
        alpha_t: None,
        layers: if layered { vec![0.0; blocks.len()] } else { Vec::new() },
    }];
    let mut hit_time = None;
    let mut status = RunStatus::Completed;
    let mut growth_checked = 0;
    let mut max_excess: Option<f64> = None;
    let mut cached: Option<(f64, f64, f64)> = None; // (alpha, eta, sigma)
    let mut delta = 0.0;
    for (k, &i) in indices.iter().enumerate() {
        let t = k + 1;
        let alpha = config.schedule.alpha(t);
        let hit = i == i_star;
        if hit && hit_time.is_none() {
            hit_time = Some(t);
        }
        let mut rng_prime = rng.clone();
        let nw = stepper.step(&w, base.example(i), alpha, &mut rng);
        let nv = stepper.step(&v, neighbor.example(i), alpha, &mut rng_prime);
        if !nw.is_finite() || !nv.is_finite() {
            status = RunStatus::Diverged { step: t };
            break;
        }
        let nd = nw.distance(&nv);
        if check_growth && within_domain(&constants, &w) && within_domain(&constants, &v) {
            let (eta, sigma) = match cached {
                Some((a, e, s)) if a == alpha => (e, s),
                _ => {
                    let c = stepper.certificate(base.example(i), alpha, &constants);
                    let es = if c.certified && !c.in_expectation { (c.eta, c.sigma) } else { (f64::INFINITY, f64::INFINITY) };
                    cached = Some((alpha, es.0, es.1));
                    es
                }
            };
            if eta.is_finite() && sigma.is_finite() {
                let bound = if hit { eta.min(1.0) * delta + 2.0 * sigma } else { eta * delta };
                let excess = nd - bound;
                max_excess = Some(max_excess.map_or(excess, |m| m.max(excess)));
                growth_checked += 1;
            }
        }
        w = nw;
        v = nv;
        delta = nd;
        if let Some((a, b)) = avg.as_mut() {
            let (da, db) = (w.sub(a), v.sub(b));
            a.axpy(1.0 / t as f64, &da);
            b.axpy(1.0 / t as f64, &db);
        }
        if hit || t % stride == 0 || t == steps {
            records.push(DeltaRecord {
                t,
                delta,
                is_hit_step: hit,
                alpha_t: Some(alpha),
                layers: if layered { layer_deltas(&w, &v) } else { Vec::new() },
            });
        }
    }
    let (output, output_prime) = match avg {
        Some((a, b)) if status == RunStatus::Completed => (a, b),
        _ => (w.clone(), v.clone()),
    };
    let probe_deviation = probes
        .iter()
        .map(|z| (loss.value(&output, z) - loss.value(&output_prime, z)).abs())
        .fold(0.0, f64::max);
    PairedTrace {
        records,
        hit_time,
        probe_deviation,
        probe_count: probes.len(),
        final_delta: delta,
        final_layer_deltas: layer_deltas(&w, &v),
        status,
        growth_checked,
        max_growth_excess: max_excess,
        output,
        output_prime,
    }
}

/// Runs SGM on `S` and `S'` in lockstep. Probes default to the two versions
/// of the substituted example.
pub fn run_paired(
    loss: &dyn Loss,
    pair: &NeighborPair,
    config: &RunConfig,
    w0: &ParamVector,
    probes: Option<&[Example]>,
) -> Result<PairedTrace> {
    let base = pair.base();
    let neighbor = pair.neighbor();
    validate_run(loss, base, config, w0)?;
    loss.validate_example(pair.replacement())?;
    let indices = index_sequence(config.seed, config.scheme, base.len(), config.steps, config.fixed_permutation)?;
    let default_probes = [pair.original().clone(), pair.replacement().clone()];
    let probes = probes.unwrap_or(&default_probes);
    Ok(paired_with_indices(loss, base, &neighbor, pair.index(), &indices, config, w0, probes))
}

/// Two paired runs that place the substituted example first (trace A) and
/// last (trace B) in the first epoch of a permutation schedule. Everything
/// else is shared.
pub fn early_vs_late_substitution(
    loss: &dyn Loss,
    pair: &NeighborPair,
    config: &RunConfig,
    w0: &ParamVector,
) -> Result<(PairedTrace, PairedTrace)> {
    if config.scheme != SamplingScheme::Permutation {
        return Err(contract("early-vs-late substitution needs the permutation scheme"));
    }
    let base = pair.base();
    let neighbor = pair.neighbor();
    validate_run(loss, base, config, w0)?;
    let n = base.len();
    let indices = index_sequence(config.seed, config.scheme, n, config.steps, config.fixed_permutation)?;
    let epoch = n.min(indices.len());
    let pos = indices[..epoch]
        .iter()
        .position(|&i| i == pair.index())
        .ok_or_else(|| contract("the run is shorter than one epoch"))?;
    let mut early = indices.clone();
    early.swap(0, pos);
    let mut late = indices;
    late.swap(epoch - 1, pos);
    let probes = [pair.original().clone(), pair.replacement().clone()];
    let a = paired_with_indices(loss, base, &neighbor, pair.index(), &early, config, w0, &probes);
    let b = paired_with_indices(loss, base, &neighbor, pair.index(), &late, config, w0, &probes);
    Ok((a, b))
}

/// Data for one Monte Carlo trial: a fresh sample, the substituted position
/// and its replacement, and the coupled run seed.
#[derive(Debug, Clone)]
pub struct Trial {
    pub pair: NeighborPair,
    pub run_seed: u64,
}

pub fn sample_trial(dist: &DataDistribution, n: usize, config: &RunConfig, seed: u64, trial: usize) -> Result<Trial> {
    let s = derive_seed(seed, trial as u64);
    let data = dist.sample_dataset(n, &mut stream_rng(s, Stream::Data))?;
    let mut sub = stream_rng(s, Stream::Substitution);
    let index = sub.random_range(0..n);
    let replacement = dist.sample(&mut sub);
    Ok(Trial {
        pair: make_neighbor(&data, index, replacement)?,
        run_seed: derive_seed(s, config.seed),
    })
}

fn trial_probes(dist: &DataDistribution, pair: &NeighborPair, probe_size: usize, seed: u64, trial: usize) -> Vec<Example> {
    let s = derive_seed(seed, trial as u64);
    let mut probes = dist.sample_n(probe_size, &mut stream_rng(s, Stream::Probe));
    probes.push(pair.original().clone());
    probes.push(pair.replacement().clone());
    probes
}

/// The paired run of trial `trial` as used by [`estimate_stability`].
#[allow(clippy::too_many_arguments)]
pub fn paired_trial(
    loss: &dyn Loss,
    dist: &DataDistribution,
    n: usize,
    config: &RunConfig,
    probe_size: usize,
    seed: u64,
    trial: usize,
    w0: &ParamVector,
) -> Result<PairedTrace> {
    let tr = sample_trial(dist, n, config, seed, trial)?;
    let probes = trial_probes(dist, &tr.pair, probe_size, seed, trial);
    let cfg = RunConfig {
        seed: tr.run_seed,
        ..config.clone()
    };
    run_paired(loss, &tr.pair, &cfg, w0, Some(&probes))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityEstimate {
    pub mean: f64,
    pub stderr: f64,
    /// Trials that completed and enter the means.
    pub trials: usize,
    /// Trials dropped because a run diverged.
    pub excluded: usize,
    pub probe_size: usize,
    pub mean_final_delta: f64,
    pub stderr_final_delta: f64,
    /// Largest per-step growth excess over all trials, if any step was checked.
    pub max_growth_excess: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
    #[serde(skip)]
    pub deviations: Vec<f64>,
    #[serde(skip)]
    pub final_deltas: Vec<f64>,
}

/// Mean probe-max loss deviation over independent paired trials, started
/// from `w0` (the origin when `None`).
#[allow(clippy::too_many_arguments)]
pub fn estimate_stability(
    loss: &dyn Loss,
    dist: &DataDistribution,
    n: usize,
    config: &RunConfig,
    trials: usize,
    probe_size: usize,
    seed: u64,
    w0: Option<&ParamVector>,
) -> Result<StabilityEstimate> {
    if trials < MIN_STABILITY_TRIALS {
        return Err(contract(format!("stability estimates need at least {MIN_STABILITY_TRIALS} trials")));
    }
    let origin = ParamVector::zeros(loss.param_dim(dist.feature_dim()));
    let w0 = w0.unwrap_or(&origin);
    let traces: Vec<PairedTrace> = (0..trials)
        .into_par_iter()
        .map(|k| paired_trial(loss, dist, n, config, probe_size, seed, k, w0))
        .collect::<Result<_>>()?;
    let kept: Vec<&PairedTrace> = traces.iter().filter(|t| !t.is_diverged()).collect();
    let deviations: Vec<f64> = kept.iter().map(|t| t.probe_deviation).collect();
    let final_deltas: Vec<f64> = kept.iter().map(|t| t.final_delta).collect();
    let (mean, stderr) = mean_stderr(&deviations);
    let (mean_final_delta, stderr_final_delta) = mean_stderr(&final_deltas);
    let max_growth_excess = traces
        .iter()
        .filter_map(|t| t.max_growth_excess)
        .reduce(f64::max);
    Ok(StabilityEstimate {
        mean,
        stderr,
        trials: kept.len(),
        excluded: traces.len() - kept.len(),
        probe_size,
        mean_final_delta,
        stderr_final_delta,
        max_growth_excess,
        config_digest: None,
        deviations,
        final_deltas,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapEstimate {
    /// Mean of `R_S[A(S)] − R[A(S)]`.
    pub mean: f64,
    pub stderr: f64,
    pub trials: usize,
    pub excluded: usize,
    /// Whether the population term was computed exactly.
    pub exact_population: bool,
    /// Same gap under the 0/1 loss, for classification losses.
    pub zero_one: Option<(f64, f64)>,
    #[serde(skip)]
    pub gaps: Vec<f64>,
}

fn zero_one_error(loss: &dyn Loss, w: &ParamVector, examples: impl Iterator<Item = (f64, Example)>) -> Option<f64> {
    let mut err = 0.0;
    for (p, z) in examples {
        let y = loss.predict(w, &z.features)?;
        if y != z.label {
            err += p;
        }
    }
    Some(err)
}

/// Mean generalization gap of the trained model over trials drawn exactly
/// as in [`estimate_stability`] with the same seed. Without a finite support,
/// the population risk uses `population_samples` fresh draws.
#[allow(clippy::too_many_arguments)]
pub fn estimate_generalization_gap(
    loss: &dyn Loss,
    dist: &DataDistribution,
    n: usize,
    config: &RunConfig,
    trials: usize,
    seed: u64,
    population_samples: usize,
    w0: Option<&ParamVector>,
) -> Result<GapEstimate> {
    if trials < 2 {
        return Err(contract("gap estimates need at least 2 trials"));
    }
    let origin = ParamVector::zeros(loss.param_dim(dist.feature_dim()));
    let w0 = w0.unwrap_or(&origin);
    let rows: Vec<Option<(f64, Option<f64>)>> = (0..trials)
        .into_par_iter()
        .map(|k| -> Result<Option<(f64, Option<f64>)>> {
            let tr = sample_trial(dist, n, config, seed, k)?;
            let cfg = RunConfig {
                seed: tr.run_seed,
                ..config.clone()
            };
            let data = tr.pair.base();
            let traj = run_sgm(loss, data, &cfg, w0)?;
            if traj.is_diverged() {
                return Ok(None);
            }
            let w = if config.average {
                crate::sgm::average_iterates(&traj)?
            } else {
                traj.final_w
            };
            let mut prng = stream_rng(derive_seed(seed, k as u64), Stream::Probe);
            let pop = population_risk_estimate(loss, &w, dist, population_samples, &mut prng)?;
            let gap = empirical_risk(loss, &w, data)? - pop.mean;
            let inv_n = 1.0 / n as f64;
            let train01 = zero_one_error(loss, &w, data.examples().iter().map(|z| (inv_n, z.clone())));
            let pop01 = match dist.support() {
                Some(s) => zero_one_error(loss, &w, s.probs().iter().copied().zip(s.atoms().iter().cloned())),
                None => {
                    let m = population_samples.max(1);
                    let draws = dist.sample_n(m, &mut prng);
                    zero_one_error(loss, &w, draws.into_iter().map(|z| (1.0 / m as f64, z)))
                }
            };
            Ok(Some((gap, train01.zip(pop01).map(|(a, b)| a - b))))
        })
        .collect::<Result<_>>()?;
    let kept: Vec<(f64, Option<f64>)> = rows.iter().flatten().copied().collect();
    let gaps: Vec<f64> = kept.iter().map(|r| r.0).collect();
    let (mean, stderr) = mean_stderr(&gaps);
    let zo: Option<Vec<f64>> = kept.iter().map(|r| r.1).collect();
    Ok(GapEstimate {
        mean,
        stderr,
        trials: kept.len(),
        excluded: rows.len() - kept.len(),
        exact_population: dist.support().is_some(),
        zero_one: zo.filter(|v| !v.is_empty()).map(|v| mean_stderr(&v)),
        gaps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HitTimeCdf {
    /// `cdf[t0] = P(I ≤ t0)` for `t0 = 0..=min(n, T)`.
    pub cdf: Vec<f64>,
    pub trials: usize,
}

impl HitTimeCdf {
    /// Binomial standard error of `cdf[t0]` under probability `p`.
    pub fn stderr(&self, p: f64) -> f64 {
        (p * (1.0 - p) / self.trials as f64).sqrt()
    }
}

/// Empirical law of the first step that touches a uniformly chosen index.
pub fn hit_time_distribution(
    scheme: SamplingScheme,
    n: usize,
    steps: usize,
    trials: usize,
    seed: u64,
    fixed_permutation: bool,
) -> Result<HitTimeCdf> {
    if trials < MIN_HIT_TIME_TRIALS {
        return Err(contract(format!("hit-time laws need at least {MIN_HIT_TIME_TRIALS} trials")));
    }
    let horizon = n.min(steps);
    let hits: Vec<Option<usize>> = (0..trials)
        .into_par_iter()
        .map(|k| -> Result<Option<usize>> {
            let s = derive_seed(seed, k as u64);
            let i_star = stream_rng(s, Stream::Substitution).random_range(0..n);
            let idx = index_sequence(s, scheme, n, horizon, fixed_permutation)?;
            Ok(idx.iter().position(|&i| i == i_star).map(|p| p + 1))
        })
        .collect::<Result<_>>()?;
    let mut counts = vec![0usize; horizon + 1];
    for h in hits.into_iter().flatten() {
        counts[h] += 1;
    }
    let mut acc = 0;
    let cdf = counts
        .iter()
        .map(|c| {
            acc += c;
            acc as f64 / trials as f64
        })
        .collect();
    Ok(HitTimeCdf { cdf, trials })
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            r[o] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (ranks(x), ranks(y));
    let m = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mx, my) = (m(&rx), m(&ry));
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// A dataset and the corresponding neighbor built by substituting a fresh
/// draw at a uniformly random position.
pub fn random_neighbor(dist: &DataDistribution, n: usize, seed: u64) -> Result<NeighborPair> {
    let data: Dataset = dist.sample_dataset(n, &mut stream_rng(seed, Stream::Data))?;
    let mut sub = stream_rng(seed, Stream::Substitution);
    let i = sub.random_range(0..n);
    make_neighbor(&data, i, dist.sample(&mut sub))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FiniteSupport;
    use crate::problems::{ConstantLoss, LabelModel, LeastSquaresLoss, LogisticLoss, SigmoidLoss, Synthetic, TinyMlpLoss};
    use crate::rules::{Dropout, StepSizeSchedule};

    fn ex(x: &[f64], y: f64) -> Example {
        Example::new(x.to_vec(), y).unwrap()
    }

    fn class_dist(p: usize, seed: u64) -> DataDistribution {
        DataDistribution::from_sampler(Synthetic::new(p, 1.0, LabelModel::Classification { flip_prob: 0.1 }, seed).unwrap())
    }

    fn cfg(steps: usize, alpha: f64, scheme: SamplingScheme, seed: u64) -> RunConfig {
        let mut c = RunConfig::new(steps, StepSizeSchedule::Constant { alpha }, scheme, seed);
        c.record_every = Some(1);
        c
    }

    #[test]
    fn degenerate_neighbor_never_separates() {
        let dist = class_dist(3, 1);
        let data = dist.sample_dataset(20, &mut stream_rng(1, Stream::Data)).unwrap();
        let pair = make_neighbor(&data, 4, data.examples()[4].clone()).unwrap();
        let mut c = cfg(200, 0.5, SamplingScheme::Uniform, 3);
        c.rules.dropout = Some(Dropout::norm_exact(0.5, 0.5));
        let tr = run_paired(&LogisticLoss::new(1.0, 0.0, None), &pair, &c, &ParamVector::zeros(3), None).unwrap();
        assert!(tr.records.iter().all(|r| r.delta == 0.0));
        assert_eq!(tr.probe_deviation, 0.0);
    }

    #[test]
    fn zero_before_hit_and_growth_within_certificate() {
        let dist = class_dist(4, 2);
        let loss = LogisticLoss::new(1.0, 0.0, None);
        for seed in 0..20 {
            let pair = random_neighbor(&dist, 30, seed).unwrap();
            let c = cfg(150, 2.0 / loss.constants().smoothness, SamplingScheme::Permutation, seed);
            let tr = run_paired(&loss, &pair, &c, &ParamVector::zeros(4), None).unwrap();
            let hit = tr.hit_time.unwrap();
            assert!(tr.records.iter().filter(|r| r.t < hit).all(|r| r.delta == 0.0));
            assert!(tr.growth_checked == 150);
            assert!(tr.max_growth_excess.unwrap() <= GROWTH_TOL);
            // δ_{t+1} ≤ δ_t + 2 α L on every step.
            let l = loss.constants().lipschitz;
            for w in tr.records.windows(2) {
                assert!(w[1].delta <= w[0].delta + 2.0 * w[1].alpha_t.unwrap() * l + 1e-12);
            }
            assert!(tr.probe_deviation <= l * tr.final_delta + 1e-9);
        }
    }

    #[test]
    fn one_dimensional_hand_unrolled_pair() {
        // f = ½(w − y)², x = 1: S = {y=0, y=1}, S' replaces position 1 with y = −1.
        let loss = LeastSquaresLoss::new(1.0, 1.0, 0.0, 5.0);
        let data = Dataset::new(vec![ex(&[1.0], 0.0), ex(&[1.0], 1.0)], 1.0).unwrap();
        let pair = make_neighbor(&data, 1, ex(&[1.0], -1.0)).unwrap();
        let c = cfg(2, 0.5, SamplingScheme::Uniform, 17);
        let idx = index_sequence(17, SamplingScheme::Uniform, 2, 2, false).unwrap();
        let label = |set: [f64; 2], i: usize| set[i];
        let (mut w, mut v) = (0.0, 0.0);
        for &i in &idx {
            w += 0.5 * (label([0.0, 1.0], i) - w);
            v += 0.5 * (label([0.0, -1.0], i) - v);
        }
        let tr = run_paired(&loss, &pair, &c, &ParamVector::zeros(1), None).unwrap();
        assert!((tr.final_delta - (w - v).abs()).abs() < 1e-15);
    }

    #[test]
    fn early_and_late_placement() {
        let dist = class_dist(3, 5);
        let pair = random_neighbor(&dist, 25, 8).unwrap();
        let c = cfg(100, 0.3, SamplingScheme::Permutation, 8);
        let (a, b) = early_vs_late_substitution(&SigmoidLoss::new(1.0), &pair, &c, &ParamVector::zeros(3)).unwrap();
        assert_eq!(a.hit_time, Some(1));
        assert_eq!(b.hit_time, Some(25));
        assert!(b.records.iter().filter(|r| r.t < 25).all(|r| r.delta == 0.0));
        let uniform = cfg(100, 0.3, SamplingScheme::Uniform, 8);
        assert!(early_vs_late_substitution(&SigmoidLoss::new(1.0), &pair, &uniform, &ParamVector::zeros(3)).is_err());
    }

    #[test]
    fn mlp_traces_report_layers() {
        let dist = class_dist(3, 5);
        let loss = TinyMlpLoss::new(3, 4, 1.0, 3.0, 2).unwrap();
        let pair = random_neighbor(&dist, 20, 1).unwrap();
        let mut rng = stream_rng(3, Stream::Init);
        let w0 = ParamVector::new(crate::rng::uniform_in_ball(&mut rng, loss.param_dim(3), 1.0)).unwrap();
        let tr = run_paired(&loss, &pair, &cfg(60, 0.5, SamplingScheme::Uniform, 2), &w0, None).unwrap();
        assert_eq!(tr.final_layer_deltas.len(), 2);
        let total = tr.final_layer_deltas.iter().map(|d| d * d).sum::<f64>().sqrt();
        assert!((total - tr.final_delta).abs() < 1e-12);
        assert_eq!(tr.growth_checked, 0);
    }

    #[test]
    fn zero_loss_has_zero_stability_and_gap() {
        let dist = class_dist(2, 1);
        let c = cfg(50, 0.1, SamplingScheme::Uniform, 1);
        let loss = ConstantLoss::new(0.7);
        let est = estimate_stability(&loss, &dist, 10, &c, 30, 16, 4, None).unwrap();
        assert_eq!((est.mean, est.stderr), (0.0, 0.0));
        let gap = estimate_generalization_gap(&loss, &dist, 10, &c, 30, 4, 100, None).unwrap();
        assert_eq!(gap.mean, 0.0);
    }

    #[test]
    fn stability_decreases_with_n() {
        let dist = class_dist(5, 3);
        let loss = LogisticLoss::new(1.0, 0.0, None);
        let c = RunConfig::new(100, StepSizeSchedule::Constant { alpha: 0.05 }, SamplingScheme::Uniform, 1);
        let est: Vec<f64> = [50, 100, 200]
            .iter()
            .map(|&n| estimate_stability(&loss, &dist, n, &c, 200, 64, 11, None).unwrap().mean)
            .collect();
        assert!(est[0] >= est[1] && est[1] >= est[2], "{est:?}");
    }

    #[test]
    fn noisy_labels_give_positive_gap() {
        let support = Synthetic::new(3, 1.0, LabelModel::Classification { flip_prob: 0.3 }, 1)
            .unwrap()
            .finite_support(40, 2)
            .unwrap();
        let dist = DataDistribution::finite(support);
        let loss = LogisticLoss::new(1.0, 0.0, None);
        let c = RunConfig::new(400, StepSizeSchedule::Constant { alpha: 1.0 }, SamplingScheme::Permutation, 1);
        let g = estimate_generalization_gap(&loss, &dist, 10, &c, 200, 5, 0, None).unwrap();
        assert!(g.exact_population);
        assert!(g.mean < -3.0 * g.stderr || g.mean > 3.0 * g.stderr);
        // training risk below population risk: the empirical term is smaller
        assert!(g.mean < 0.0);
        assert!(g.zero_one.is_some());
    }

    #[test]
    fn hit_time_laws() {
        let n = 20;
        let perm = hit_time_distribution(SamplingScheme::Permutation, n, 1000, 10_000, 1, false).unwrap();
        let uni = hit_time_distribution(SamplingScheme::Uniform, n, 1000, 10_000, 1, false).unwrap();
        assert_eq!(perm.cdf[0], 0.0);
        assert_eq!(perm.cdf.len(), n + 1);
        assert_eq!(perm.cdf[n], 1.0);
        for t0 in 1..=n {
            let p = t0 as f64 / n as f64;
            assert!((perm.cdf[t0] - p).abs() <= 3.0 * perm.stderr(p) + 1e-12);
            let q = 1.0 - (1.0 - 1.0 / n as f64).powi(t0 as i32);
            assert!((uni.cdf[t0] - q).abs() <= 3.0 * uni.stderr(q) + 1e-12);
        }
        assert!(hit_time_distribution(SamplingScheme::Uniform, n, 10, 100, 1, false).is_err());
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn trace_csv_header() {
        let support = FiniteSupport::uniform(vec![ex(&[1.0], 1.0), ex(&[-1.0], -1.0)]).unwrap();
        let dist = DataDistribution::finite(support);
        let pair = random_neighbor(&dist, 4, 1).unwrap();
        let tr = run_paired(&LogisticLoss::new(1.0, 0.0, None), &pair, &cfg(5, 0.1, SamplingScheme::Uniform, 1), &ParamVector::zeros(1), None).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,delta,is_hit_step,alpha_t\n0,0,false,\n"));
        assert_eq!(text.lines().count(), 7);
    }
}
