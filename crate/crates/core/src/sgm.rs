//! The stochastic gradient method: index sampling, rule assembly, trajectory
//! recording and iterate averaging.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::model::{check_param_dim, Example, ExampleSet, Loss, ParamVector, RegularityConstants};
use crate::rng::{stream_rng, Stream};
use crate::rules::{certify, Dropout, RuleCertificate, StepSizeSchedule, UpdateRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingScheme {
    /// Independent uniform index every step.
    Uniform,
    /// Random permutation per epoch, cycled.
    Permutation,
}

/// Optional modifications of the plain gradient step. At most one of
/// `weight_decay`, `dropout` and `clip` may be set; `projection` composes
/// with any of them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RuleOptions {
    pub weight_decay: Option<f64>,
    pub dropout: Option<Dropout>,
    pub clip: Option<f64>,
    pub projection: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub steps: usize,
    pub schedule: StepSizeSchedule,
    pub scheme: SamplingScheme,
    /// Reuse the first permutation every epoch instead of drawing a fresh one.
    pub fixed_permutation: bool,
    pub seed: u64,
    pub rules: RuleOptions,
    /// Recording stride; `None` means `max(1, T / 1000)`.
    pub record_every: Option<usize>,
    pub average: bool,
}

impl RunConfig {
    pub fn new(steps: usize, schedule: StepSizeSchedule, scheme: SamplingScheme, seed: u64) -> Self {
        Self {
            steps,
            schedule,
            scheme,
            fixed_permutation: false,
            seed,
            rules: RuleOptions::default(),
            record_every: None,
            average: false,
        }
    }

    pub fn stride(&self) -> usize {
        self.record_every.unwrap_or((self.steps / 1000).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(contract("a run needs at least one step"));
        }
        if self.record_every == Some(0) {
            return Err(contract("recording stride must be at least 1"));
        }
        self.schedule.validate()?;
        let r = &self.rules;
        let active = [r.weight_decay.is_some(), r.dropout.is_some(), r.clip.is_some()]
            .iter()
            .filter(|b| **b)
            .count();
        if active > 1 {
            return Err(contract("weight decay, dropout and clipping are mutually exclusive"));
        }
        if let Some(d) = r.dropout {
            d.validate()?;
        }
        for (name, v) in [("weight_decay", r.weight_decay), ("clip", r.clip), ("projection", r.projection)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(contract(format!("{name} must be positive, got {v}")));
                }
            }
        }
        Ok(())
    }
}

/// Indices `i_1..i_T`, a function of `(seed, scheme, n, T)` only.
pub fn index_sequence(
    seed: u64,
    scheme: SamplingScheme,
    n: usize,
    steps: usize,
    fixed_permutation: bool,
) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(contract("index sequences need n >= 2"));
    }
    let mut rng = stream_rng(seed, Stream::Index);
    Ok(match scheme {
        SamplingScheme::Uniform => (0..steps).map(|_| rng.random_range(0..n)).collect(),
        SamplingScheme::Permutation => {
            let mut perm: Vec<usize> = (0..n).collect();
            let mut out = Vec::with_capacity(steps);
            let mut first = true;
            while out.len() < steps {
                if first || !fixed_permutation {
                    perm.shuffle(&mut rng);
                    first = false;
                }
                let take = (steps - out.len()).min(n);
                out.extend_from_slice(&perm[..take]);
            }
            out
        }
    })
}

/// Builds the per-step rule from a configuration.
#[derive(Clone, Copy)]
pub(crate) struct Stepper<'a> {
    pub loss: &'a dyn Loss,
    pub rules: &'a RuleOptions,
}

impl<'a> Stepper<'a> {
    fn with_rule<T>(&self, z: &Example, alpha: f64, f: impl FnOnce(&UpdateRule<'_>) -> T) -> T {
        let loss = self.loss;
        let base = if let Some(decay) = self.rules.weight_decay {
            UpdateRule::WeightDecay { loss, example: z, alpha, decay }
        } else if let Some(dropout) = self.rules.dropout {
            UpdateRule::Dropout { loss, example: z, alpha, dropout }
        } else if let Some(clip) = self.rules.clip {
            UpdateRule::Clipped { loss, example: z, alpha, clip }
        } else {
            UpdateRule::Gradient { loss, example: z, alpha }
        };
        match self.rules.projection {
            Some(radius) => f(&UpdateRule::Projected { inner: &base, radius }),
            None => f(&base),
        }
    }

    pub fn step(&self, w: &ParamVector, z: &Example, alpha: f64, rng: &mut ChaCha8Rng) -> ParamVector {
        self.with_rule(z, alpha, |r| r.apply(w, rng))
    }

    pub fn certificate(&self, z: &Example, alpha: f64, constants: &RegularityConstants) -> RuleCertificate {
        self.with_rule(z, alpha, |r| certify(r, constants))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// A non-finite iterate appeared at this (1-based) step.
    Diverged { step: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub indices: Vec<usize>,
    /// `α_t` for `t = 1..=T`.
    pub alphas: Vec<f64>,
    /// `(t, w_t)` every stride steps, always including `t = 0` and the last step.
    pub recorded: Vec<(usize, ParamVector)>,
    /// Last finite iterate.
    pub final_w: ParamVector,
    average: Option<ParamVector>,
    pub status: RunStatus,
}

impl Trajectory {
    pub fn is_diverged(&self) -> bool {
        matches!(self.status, RunStatus::Diverged { .. })
    }

    /// CSV with columns `t,alpha_t,i_t,delta,w_norm,loss_on_probe_mean`; the
    /// `delta` column is empty for a single run and `i_t` is empty at `t = 0`.
    pub fn write_csv<W: Write>(&self, loss: &dyn Loss, probes: &[Example], writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "alpha_t", "i_t", "delta", "w_norm", "loss_on_probe_mean"])?;
        for (t, wt) in &self.recorded {
            let (alpha, idx) = if *t == 0 {
                (String::new(), String::new())
            } else {
                (self.alphas[t - 1].to_string(), self.indices[t - 1].to_string())
            };
            let probe_mean = if probes.is_empty() {
                String::new()
            } else {
                (probes.iter().map(|z| loss.value(wt, z)).sum::<f64>() / probes.len() as f64).to_string()
            };
            w.write_record([t.to_string(), alpha, idx, String::new(), wt.norm().to_string(), probe_mean])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Mean of `w_1..w_T`, available when the run was configured to average.
pub fn average_iterates(traj: &Trajectory) -> Result<ParamVector> {
    traj.average
        .clone()
        .ok_or_else(|| contract("iterate averaging was not enabled for this run"))
}

pub(crate) fn validate_run(loss: &dyn Loss, data: &dyn ExampleSet, config: &RunConfig, w0: &ParamVector) -> Result<()> {
    config.validate()?;
    if data.len() < 2 {
        return Err(Error::InvalidDataset("SGM needs n >= 2".into()));
    }
    check_param_dim(loss, w0, data.feature_dim())?;
    for i in 0..data.len() {
        loss.validate_example(data.example(i))?;
    }
    Ok(())
}

/// Runs SGM from `w0`. A non-finite iterate stops the run with a diverged
/// status instead of an error.
pub fn run_sgm(loss: &dyn Loss, data: &dyn ExampleSet, config: &RunConfig, w0: &ParamVector) -> Result<Trajectory> {
    validate_run(loss, data, config, w0)?;
    let indices = index_sequence(config.seed, config.scheme, data.len(), config.steps, config.fixed_permutation)?;
    Ok(run_with_indices(loss, data, config, w0, indices))
}

pub(crate) fn run_with_indices(
    loss: &dyn Loss,
    data: &dyn ExampleSet,
    config: &RunConfig,
    w0: &ParamVector,
    indices: Vec<usize>,
) -> Trajectory {
    let stepper = Stepper { loss, rules: &config.rules };
    let mut rng = stream_rng(config.seed, Stream::Dropout);
    let stride = config.stride();
    let steps = indices.len();
    let mut w = w0.clone();
    let mut recorded = vec![(0, w.clone())];
    let mut alphas = Vec::with_capacity(steps);
    let mut avg = config.average.then(|| ParamVector::zeros(w0.dim()));
    let mut status = RunStatus::Completed;
    for (k, &i) in indices.iter().enumerate() {
        let t = k + 1;
        let alpha = config.schedule.alpha(t);
        alphas.push(alpha);
        let next = stepper.step(&w, data.example(i), alpha, &mut rng);
        if !next.is_finite() {
            status = RunStatus::Diverged { step: t };
            break;
        }
        w = next;
        if let Some(a) = avg.as_mut() {
            let diff = w.sub(a);
            a.axpy(1.0 / t as f64, &diff);
        }
        if t % stride == 0 || t == steps {
            recorded.push((t, w.clone()));
        }
    }
    if let Some((t, _)) = recorded.last() {
        if *t != alphas.len() && status == RunStatus::Completed {
            recorded.push((alphas.len(), w.clone()));
        }
    }
    Trajectory {
        indices,
        alphas,
        recorded,
        final_w: w,
        average: avg,
        status,
    }
}
