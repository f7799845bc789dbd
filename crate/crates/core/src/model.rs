//! Parameters, examples, datasets, neighboring datasets, data distributions
//! and the loss interface every other module builds on.

use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};

/// A point in parameter space. Entries are finite at construction; arithmetic
/// performed by update rules may overflow, which callers detect with
/// [`ParamVector::is_finite`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    /// Wraps values without the finiteness check. Used on hot paths where the
    /// caller checks [`is_finite`](Self::is_finite) afterwards.
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn dot(&self, other: &Self) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &Self) {
        for (s, v) in self.0.iter_mut().zip(&x.0) {
            *s += a * v;
        }
    }

    pub fn scale(&mut self, a: f64) {
        for s in &mut self.0 {
            *s *= a;
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    /// Euclidean distance restricted to a block of coordinates.
    pub fn block_distance(&self, other: &Self, block: Range<usize>) -> f64 {
        norm(
            &self.0[block.clone()]
                .iter()
                .zip(&other.0[block])
                .map(|(a, b)| a - b)
                .collect::<Vec<_>>(),
        )
    }
}

impl fmt::Display for ParamVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, "]")
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// A labeled example `z = (x, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: f64,
}

impl Example {
    pub fn new(features: Vec<f64>, label: f64) -> Result<Self> {
        if features.iter().any(|v| !v.is_finite()) || !label.is_finite() {
            return Err(Error::InvalidExample("non-finite feature or label".into()));
        }
        Ok(Self { features, label })
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    pub fn feature_norm(&self) -> f64 {
        norm(&self.features)
    }
}

/// Read access to an indexed collection of examples. Implemented by
/// [`Dataset`] and by the lazily materialized neighbor [`NeighborView`], so
/// the training loop runs unchanged on either.
pub trait ExampleSet: Sync {
    fn len(&self) -> usize;
    fn example(&self, i: usize) -> &Example;
    fn feature_dim(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Slack allowed when checking feature norms against the declared bound.
const BOUND_SLACK: f64 = 1e-12;

/// An immutable training sample `S = (z_1, ..., z_n)` with `n >= 2`.
#[derive(Debug, Clone)]
pub struct Dataset {
    examples: Arc<[Example]>,
    feature_bound: f64,
}

impl Dataset {
    pub fn new(examples: Vec<Example>, feature_bound: f64) -> Result<Self> {
        if examples.len() < 2 {
            return Err(Error::InvalidDataset(format!(
                "need at least 2 examples, got {}",
                examples.len()
            )));
        }
        if !(feature_bound > 0.0 && feature_bound.is_finite()) {
            return Err(Error::InvalidDataset(format!(
                "feature bound must be positive and finite, got {feature_bound}"
            )));
        }
        let p = examples[0].dim();
        for (i, z) in examples.iter().enumerate() {
            if z.dim() != p {
                return Err(Error::InvalidDataset(format!(
                    "example {i} has dimension {} but example 0 has {p}",
                    z.dim()
                )));
            }
            if z.feature_norm() > feature_bound * (1.0 + BOUND_SLACK) {
                return Err(Error::InvalidDataset(format!(
                    "example {i} has feature norm {} above the bound {feature_bound}",
                    z.feature_norm()
                )));
            }
        }
        Ok(Self {
            examples: examples.into(),
            feature_bound,
        })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn feature_bound(&self) -> f64 {
        self.feature_bound
    }

    /// Loads a dataset from CSV with header `f0,...,f{p-1},label`. When no
    /// bound is given the largest observed feature norm is used.
    pub fn from_csv_path(path: impl AsRef<Path>, feature_bound: Option<f64>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file, feature_bound)
    }

    pub fn from_csv_reader<R: std::io::Read>(reader: R, feature_bound: Option<f64>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let cols: Vec<&str> = headers.iter().map(str::trim).collect();
        let p = cols.len().checked_sub(1).ok_or_else(|| {
            Error::InvalidDataset("CSV header must contain at least the label column".into())
        })?;
        for (j, c) in cols[..p].iter().enumerate() {
            if *c != format!("f{j}") {
                return Err(Error::InvalidDataset(format!(
                    "expected column `f{j}`, found `{c}`"
                )));
            }
        }
        if cols[p] != "label" {
            return Err(Error::InvalidDataset(format!(
                "last column must be `label`, found `{}`",
                cols[p]
            )));
        }
        let mut examples = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let vals = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::InvalidDataset(format!("row {}: {e}", row + 1)))?;
            if vals.len() != p + 1 {
                return Err(Error::InvalidDataset(format!(
                    "row {} has {} fields, expected {}",
                    row + 1,
                    vals.len(),
                    p + 1
                )));
            }
            examples.push(Example::new(vals[..p].to_vec(), vals[p])?);
        }
        let bound = match feature_bound {
            Some(b) => b,
            None => examples
                .iter()
                .map(Example::feature_norm)
                .fold(0.0_f64, f64::max)
                .max(f64::MIN_POSITIVE),
        };
        Self::new(examples, bound)
    }

    pub fn to_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.to_csv_writer(file)
    }

    pub fn to_csv_writer<W: std::io::Write>(&self, writer: W) -> Result<()> {
        write_examples_csv(self.examples(), writer)
    }
}

pub(crate) fn write_examples_csv<W: std::io::Write>(examples: &[Example], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let p = examples.first().map_or(0, Example::dim);
    let mut header: Vec<String> = (0..p).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for z in examples {
        let mut row: Vec<String> = z.features.iter().map(|v| v.to_string()).collect();
        row.push(z.label.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

impl ExampleSet for Dataset {
    fn len(&self) -> usize {
        self.examples.len()
    }

    fn example(&self, i: usize) -> &Example {
        &self.examples[i]
    }

    fn feature_dim(&self) -> usize {
        self.examples[0].dim()
    }
}

/// `S` together with the substitution that produces `S'`: position `index`
/// replaced by `replacement`. `S'` is never copied.
#[derive(Debug, Clone)]
pub struct NeighborPair {
    base: Dataset,
    index: usize,
    replacement: Example,
}

impl NeighborPair {
    pub fn base(&self) -> &Dataset {
        &self.base
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn replacement(&self) -> &Example {
        &self.replacement
    }

    /// The example of `S` at the substituted position.
    pub fn original(&self) -> &Example {
        self.base.example(self.index)
    }

    pub fn neighbor(&self) -> NeighborView<'_> {
        NeighborView { pair: self }
    }

    /// Copies `S'` into a standalone dataset.
    pub fn materialize(&self) -> Dataset {
        let mut ex = self.base.examples().to_vec();
        ex[self.index] = self.replacement.clone();
        Dataset {
            examples: ex.into(),
            feature_bound: self.base.feature_bound.max(self.replacement.feature_norm()),
        }
    }
}

/// `S'` viewed through its [`NeighborPair`].
#[derive(Debug, Clone, Copy)]
pub struct NeighborView<'a> {
    pair: &'a NeighborPair,
}

impl ExampleSet for NeighborView<'_> {
    fn len(&self) -> usize {
        self.pair.base.len()
    }

    fn example(&self, i: usize) -> &Example {
        if i == self.pair.index {
            &self.pair.replacement
        } else {
            self.pair.base.example(i)
        }
    }

    fn feature_dim(&self) -> usize {
        self.pair.base.feature_dim()
    }
}

pub fn make_neighbor(base: &Dataset, index: usize, replacement: Example) -> Result<NeighborPair> {
    if index >= base.len() {
        return Err(Error::IndexOutOfRange {
            index,
            len: base.len(),
        });
    }
    if replacement.dim() != base.feature_dim() {
        return Err(Error::DimensionMismatch {
            expected: base.feature_dim(),
            got: replacement.dim(),
        });
    }
    Ok(NeighborPair {
        base: base.clone(),
        index,
        replacement,
    })
}

/// Source of fresh examples.
pub trait ExampleSampler: Send + Sync + fmt::Debug {
    fn sample(&self, rng: &mut dyn RngCore) -> Example;
    fn feature_dim(&self) -> usize;
    fn feature_bound(&self) -> f64;
}

/// A distribution with finitely many atoms, used wherever expectations must
/// be exact.
#[derive(Debug, Clone)]
pub struct FiniteSupport {
    atoms: Vec<Example>,
    probs: Vec<f64>,
    cumulative: Vec<f64>,
    feature_bound: f64,
}

impl FiniteSupport {
    pub fn new(atoms: Vec<Example>, probs: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != probs.len() {
            return Err(Error::InvalidDataset(format!(
                "finite support needs matching non-empty atoms and probabilities ({} vs {})",
                atoms.len(),
                probs.len()
            )));
        }
        if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidDataset("probabilities must be nonnegative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDataset(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        let p = atoms[0].dim();
        if atoms.iter().any(|a| a.dim() != p) {
            return Err(Error::InvalidDataset("atoms have mixed dimensions".into()));
        }
        let mut acc = 0.0;
        let cumulative = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        let feature_bound = atoms
            .iter()
            .map(Example::feature_norm)
            .fold(0.0_f64, f64::max)
            .max(f64::MIN_POSITIVE);
        Ok(Self {
            atoms,
            probs,
            cumulative,
            feature_bound,
        })
    }

    pub fn uniform(atoms: Vec<Example>) -> Result<Self> {
        let k = atoms.len();
        Self::new(atoms, vec![1.0 / k as f64; k])
    }

    pub fn atoms(&self) -> &[Example] {
        &self.atoms
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn expectation(&self, mut f: impl FnMut(&Example) -> f64) -> f64 {
        weighted_mean(self.atoms.iter().zip(&self.probs).map(|(a, p)| (*p, f(a))))
    }

    pub fn with_feature_bound(mut self, bound: f64) -> Self {
        self.feature_bound = self.feature_bound.max(bound);
        self
    }
}

impl ExampleSampler for FiniteSupport {
    fn sample(&self, rng: &mut dyn RngCore) -> Example {
        let u: f64 = rng.random();
        let total = *self.cumulative.last().unwrap();
        let i = self
            .cumulative
            .partition_point(|c| *c <= u * total)
            .min(self.atoms.len() - 1);
        self.atoms[i].clone()
    }

    fn feature_dim(&self) -> usize {
        self.atoms[0].dim()
    }

    fn feature_bound(&self) -> f64 {
        self.feature_bound
    }
}

/// The data distribution `D`. Sampling is a pure function of the supplied
/// generator state; a finite support, when present, enables exact risks.
#[derive(Debug, Clone)]
pub struct DataDistribution {
    sampler: Arc<dyn ExampleSampler>,
    support: Option<Arc<FiniteSupport>>,
}

impl DataDistribution {
    pub fn finite(support: FiniteSupport) -> Self {
        let support = Arc::new(support);
        Self {
            sampler: support.clone(),
            support: Some(support),
        }
    }

    pub fn from_sampler(sampler: impl ExampleSampler + 'static) -> Self {
        Self {
            sampler: Arc::new(sampler),
            support: None,
        }
    }

    pub fn support(&self) -> Option<&FiniteSupport> {
        self.support.as_deref()
    }

    pub fn feature_dim(&self) -> usize {
        self.sampler.feature_dim()
    }

    pub fn feature_bound(&self) -> f64 {
        self.sampler.feature_bound()
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> Example {
        self.sampler.sample(rng)
    }

    pub fn sample_n(&self, n: usize, rng: &mut dyn RngCore) -> Vec<Example> {
        (0..n).map(|_| self.sample(rng)).collect()
    }

    pub fn sample_dataset(&self, n: usize, rng: &mut dyn RngCore) -> Result<Dataset> {
        Dataset::new(self.sample_n(n, rng), self.feature_bound())
    }
}

/// Regularity constants of a loss over a domain. `domain_radius = None`
/// means the constants hold on all of parameter space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularityConstants {
    pub lipschitz: f64,
    pub smoothness: f64,
    pub strong_convexity: f64,
    pub range_bound: f64,
    pub domain_radius: Option<f64>,
    pub certified: bool,
}

impl RegularityConstants {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lipschitz >= 0.0
            && self.smoothness >= 0.0
            && self.strong_convexity >= 0.0
            && self.range_bound >= 0.0
            && self.strong_convexity <= self.smoothness * (1.0 + 1e-12)
            && self.domain_radius.is_none_or(|r| r > 0.0);
        if ok {
            Ok(())
        } else {
            Err(contract(format!("inconsistent regularity constants {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convexity {
    NonConvex,
    Convex,
    StronglyConvex,
}

/// The per-example loss `f(w; z)`.
pub trait Loss: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    fn value(&self, w: &ParamVector, z: &Example) -> f64;

    fn gradient(&self, w: &ParamVector, z: &Example) -> ParamVector;

    fn convexity(&self) -> Convexity;

    /// Constants the stability bounds consume: analytic when certifiable, estimated
    /// otherwise (then `certified == false`).
    fn constants(&self) -> RegularityConstants;

    /// Analytic constants valid on the ball of the given radius.
    fn certify(&self, _radius: Option<f64>) -> Result<RegularityConstants> {
        Err(Error::Uncertifiable(self.name().into()))
    }

    fn param_dim(&self, feature_dim: usize) -> usize {
        feature_dim
    }

    fn validate_example(&self, _z: &Example) -> Result<()> {
        Ok(())
    }

    /// Predicted label in {-1, +1} for classification losses.
    fn predict(&self, _w: &ParamVector, _features: &[f64]) -> Option<f64> {
        None
    }

    /// Coordinate blocks reported separately by paired runs (layers).
    fn blocks(&self, feature_dim: usize) -> Vec<Range<usize>> {
        vec![0..self.param_dim(feature_dim)]
    }

    /// Whether labels must lie in {-1, +1}.
    fn binary_labels(&self) -> bool {
        false
    }
}

pub(crate) fn check_param_dim(loss: &dyn Loss, w: &ParamVector, feature_dim: usize) -> Result<()> {
    let expected = loss.param_dim(feature_dim);
    if w.dim() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            got: w.dim(),
        });
    }
    Ok(())
}

/// `R_S[w] = (1/n) sum_i f(w; z_i)`.
pub fn empirical_risk(loss: &dyn Loss, w: &ParamVector, data: &dyn ExampleSet) -> Result<f64> {
    check_param_dim(loss, w, data.feature_dim())?;
    Ok(weighted_mean((0..data.len()).map(|i| (1.0, loss.value(w, data.example(i))))))
}

/// Running weighted mean, exact when every value is equal.
pub(crate) fn weighted_mean(items: impl Iterator<Item = (f64, f64)>) -> f64 {
    let mut total = 0.0;
    let mut mean = 0.0;
    for (p, v) in items {
        if p == 0.0 {
            continue;
        }
        total += p;
        mean += (p / total) * (v - mean);
    }
    mean
}

/// Estimate of the population risk with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub exact: bool,
}

/// Exact expectation on a finite support, otherwise a Monte Carlo mean over
/// `m` fresh samples.
pub fn population_risk_estimate(
    loss: &dyn Loss,
    w: &ParamVector,
    dist: &DataDistribution,
    m: usize,
    rng: &mut dyn RngCore,
) -> Result<RiskEstimate> {
    check_param_dim(loss, w, dist.feature_dim())?;
    if let Some(support) = dist.support() {
        return Ok(RiskEstimate {
            mean: support.expectation(|z| loss.value(w, z)),
            stderr: 0.0,
            exact: true,
        });
    }
    if m == 0 {
        return Err(contract("population risk estimate needs m >= 1"));
    }
    let vals: Vec<f64> = (0..m).map(|_| loss.value(w, &dist.sample(rng))).collect();
    let (mean, stderr) = mean_stderr(&vals);
    Ok(RiskEstimate {
        mean,
        stderr,
        exact: false,
    })
}

/// Mean and standard error of the mean, summed in input order.
pub fn mean_stderr(vals: &[f64]) -> (f64, f64) {
    let m = vals.len();
    if m == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = weighted_mean(vals.iter().map(|v| (1.0, *v)));
    if m == 1 {
        return (mean, 0.0);
    }
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1) as f64;
    (mean, (var / m as f64).sqrt())
}

/// Largest relative error between the analytic gradient and a central
/// difference with step `h`, measured as `|fd - g| / (|g| + h)`.
pub fn finite_diff_gradient_check(loss: &dyn Loss, w: &ParamVector, z: &Example, h: f64) -> f64 {
    let g = loss.gradient(w, z);
    let mut probe = w.clone();
    let mut worst = 0.0_f64;
    for j in 0..w.dim() {
        let orig = probe.as_slice()[j];
        probe.as_mut_slice()[j] = orig + h;
        let up = loss.value(&probe, z);
        probe.as_mut_slice()[j] = orig - h;
        let down = loss.value(&probe, z);
        probe.as_mut_slice()[j] = orig;
        let fd = (up - down) / (2.0 * h);
        let gj = g.as_slice()[j];
        worst = worst.max((fd - gj).abs() / (gj.abs() + h));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{ConstantLoss, LeastSquaresLoss};
    use crate::rng::{stream_rng, Stream};

    fn ex(x: &[f64], y: f64) -> Example {
        Example::new(x.to_vec(), y).unwrap()
    }

    #[test]
    fn param_vector_rejects_non_finite() {
        assert!(matches!(
            ParamVector::new(vec![1.0, f64::NAN]),
            Err(Error::NonFinite(1))
        ));
        assert!(ParamVector::new(vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn dataset_needs_two_examples() {
        assert!(Dataset::new(vec![ex(&[1.0], 0.0)], 1.0).is_err());
        assert!(Dataset::new(vec![ex(&[1.0], 0.0), ex(&[0.5], 1.0)], 1.0).is_ok());
    }

    #[test]
    fn dataset_rejects_norm_above_bound_and_mixed_dims() {
        assert!(Dataset::new(vec![ex(&[2.0], 0.0), ex(&[0.5], 1.0)], 1.0).is_err());
        assert!(Dataset::new(vec![ex(&[1.0], 0.0), ex(&[0.5, 0.1], 1.0)], 1.0).is_err());
    }

    #[test]
    fn zero_loss_has_zero_risk() {
        let s = Dataset::new(vec![ex(&[1.0], 0.0), ex(&[0.3], 2.0)], 1.0).unwrap();
        let w = ParamVector::new(vec![4.0]).unwrap();
        assert_eq!(empirical_risk(&ConstantLoss::new(0.0), &w, &s).unwrap(), 0.0);
    }

    #[test]
    fn least_squares_two_point_risk() {
        // ½(1·1−0)² = 0.5 and ½(1·1−2)² = 0.5, mean 0.5
        let loss = LeastSquaresLoss::new(1.0, 2.0, 0.0, 1.0);
        let s = Dataset::new(vec![ex(&[1.0], 0.0), ex(&[1.0], 2.0)], 1.0).unwrap();
        let w = ParamVector::new(vec![1.0]).unwrap();
        assert_eq!(empirical_risk(&loss, &w, &s).unwrap(), 0.5);
    }

    #[test]
    fn empirical_risk_checks_dimension() {
        let loss = LeastSquaresLoss::new(1.0, 2.0, 0.0, 1.0);
        let s = Dataset::new(vec![ex(&[1.0], 0.0), ex(&[1.0], 2.0)], 1.0).unwrap();
        let w = ParamVector::zeros(2);
        assert!(matches!(
            empirical_risk(&loss, &w, &s),
            Err(Error::DimensionMismatch { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn neighbor_differs_only_at_index() {
        let s = Dataset::new(vec![ex(&[1.0], 0.0), ex(&[0.5], 1.0)], 1.0).unwrap();
        let pair = make_neighbor(&s, 1, ex(&[-0.5], 3.0)).unwrap();
        let v = pair.neighbor();
        assert_eq!(v.example(0), s.example(0));
        assert_eq!(v.example(1).label, 3.0);
        assert_eq!(v.len(), s.len());
        assert_eq!(pair.materialize().example(1).label, 3.0);
    }

    #[test]
    fn degenerate_neighbor_equals_base() {
        let s = Dataset::new(vec![ex(&[1.0], 0.0), ex(&[0.5], 1.0)], 1.0).unwrap();
        let pair = make_neighbor(&s, 0, s.example(0).clone()).unwrap();
        for i in 0..s.len() {
            assert_eq!(pair.neighbor().example(i), s.example(i));
        }
    }

    #[test]
    fn neighbor_rejects_bad_index_and_dim() {
        let s = Dataset::new(vec![ex(&[1.0], 0.0), ex(&[0.5], 1.0)], 1.0).unwrap();
        assert!(matches!(
            make_neighbor(&s, 2, ex(&[0.0], 0.0)),
            Err(Error::IndexOutOfRange { index: 2, len: 2 })
        ));
        assert!(make_neighbor(&s, 0, ex(&[0.0, 1.0], 0.0)).is_err());
    }

    #[test]
    fn finite_support_validation() {
        assert!(FiniteSupport::new(vec![ex(&[1.0], 0.0)], vec![0.9]).is_err());
        assert!(FiniteSupport::new(vec![ex(&[1.0], 0.0), ex(&[1.0], 1.0)], vec![-0.5, 1.5]).is_err());
        assert!(FiniteSupport::new(vec![ex(&[1.0], 0.0)], vec![1.0]).is_ok());
    }

    #[test]
    fn exact_population_risk_single_atom_and_two_atoms() {
        let loss = LeastSquaresLoss::new(1.0, 3.0, 0.0, 2.0);
        let w = ParamVector::new(vec![0.7]).unwrap();
        let z1 = ex(&[1.0], 0.0);
        let z2 = ex(&[0.5], 2.0);
        let mut rng = stream_rng(0, Stream::Data);

        let one = DataDistribution::finite(FiniteSupport::new(vec![z1.clone()], vec![1.0]).unwrap());
        let r = population_risk_estimate(&loss, &w, &one, 10, &mut rng).unwrap();
        assert_eq!(r.mean, loss.value(&w, &z1));
        assert_eq!(r.stderr, 0.0);

        let two = DataDistribution::finite(
            FiniteSupport::new(vec![z1.clone(), z2.clone()], vec![0.25, 0.75]).unwrap(),
        );
        let r = population_risk_estimate(&loss, &w, &two, 10, &mut rng).unwrap();
        let oracle = 0.25 * loss.value(&w, &z1) + 0.75 * loss.value(&w, &z2);
        assert!((r.mean - oracle).abs() <= 1e-12);
    }

    #[test]
    fn monte_carlo_constant_loss_has_zero_variance() {
        #[derive(Debug)]
        struct Fixed;
        impl ExampleSampler for Fixed {
            fn sample(&self, rng: &mut dyn RngCore) -> Example {
                Example::new(vec![rng.random::<f64>()], 1.0).unwrap()
            }
            fn feature_dim(&self) -> usize {
                1
            }
            fn feature_bound(&self) -> f64 {
                1.0
            }
        }
        let dist = DataDistribution::from_sampler(Fixed);
        let mut rng = stream_rng(3, Stream::Data);
        let r = population_risk_estimate(&ConstantLoss::new(2.5), &ParamVector::zeros(1), &dist, 100, &mut rng)
            .unwrap();
        assert_eq!(r.mean, 2.5);
        assert_eq!(r.stderr, 0.0);
        assert!(!r.exact);
    }

    #[test]
    fn finite_sampling_is_seed_deterministic() {
        let d = DataDistribution::finite(
            FiniteSupport::uniform((0..5).map(|i| ex(&[i as f64 / 5.0], 1.0)).collect()).unwrap(),
        );
        let a = d.sample_n(20, &mut stream_rng(9, Stream::Data));
        let b = d.sample_n(20, &mut stream_rng(9, Stream::Data));
        assert_eq!(a, b);
    }

    #[test]
    fn csv_round_trip_and_header_check() {
        let s = Dataset::new(vec![ex(&[1.0, 0.0], -1.0), ex(&[0.25, -0.5], 1.0)], 1.0).unwrap();
        let mut buf = Vec::new();
        s.to_csv_writer(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("f0,f1,label\n"));
        let back = Dataset::from_csv_reader(buf.as_slice(), Some(1.0)).unwrap();
        assert_eq!(back.examples(), s.examples());

        let bad = "x0,label\n1,1\n0,1\n";
        assert!(Dataset::from_csv_reader(bad.as_bytes(), None).is_err());
    }
}
