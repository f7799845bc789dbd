//! Seeded synthetic data with a planted parameter vector.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{contract, Result};
use crate::model::{dot, norm, Dataset, Example, ExampleSampler, FiniteSupport};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LabelModel {
    /// `y = sign(w*·x)`, flipped with the given probability.
    Classification { flip_prob: f64 },
    /// `y = clamp(w*·x + N(0, noise²), ±label_bound)`.
    Regression { noise: f64, label_bound: f64 },
}

/// Gaussian features `N(0, B²/p · I)` clipped to norm `B`, labelled by a
/// planted vector drawn from the seed.
#[derive(Debug, Clone)]
pub struct Synthetic {
    feature_bound: f64,
    labels: LabelModel,
    planted: Vec<f64>,
}

impl Synthetic {
    pub fn new(feature_dim: usize, feature_bound: f64, labels: LabelModel, seed: u64) -> Result<Self> {
        if feature_dim == 0 || !(feature_bound > 0.0) {
            return Err(contract("synthetic data needs dim >= 1 and a positive feature bound"));
        }
        match labels {
            LabelModel::Classification { flip_prob } if !(0.0..=0.5).contains(&flip_prob) => {
                return Err(contract("label flip probability must be in [0, 0.5]"))
            }
            LabelModel::Regression { noise, label_bound } if noise < 0.0 || !(label_bound > 0.0) => {
                return Err(contract("regression noise must be >= 0 and label bound > 0"))
            }
            _ => {}
        }
        let mut rng = stream_rng(seed, Stream::Init);
        let mut planted: Vec<f64> = (0..feature_dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&planted).max(1e-300);
        let scale = match labels {
            LabelModel::Classification { .. } => 4.0 / feature_bound,
            LabelModel::Regression { label_bound, .. } => 0.8 * label_bound / feature_bound,
        };
        planted.iter_mut().for_each(|v| *v *= scale / n);
        Ok(Self {
            feature_bound,
            labels,
            planted,
        })
    }

    pub fn planted(&self) -> &[f64] {
        &self.planted
    }

    pub fn labels(&self) -> LabelModel {
        self.labels
    }

    fn draw(&self, rng: &mut dyn RngCore) -> Example {
        let p = self.planted.len();
        let sd = self.feature_bound / (p as f64).sqrt();
        let normal = Normal::new(0.0, sd).expect("positive scale");
        let mut x: Vec<f64> = (0..p).map(|_| normal.sample(rng)).collect();
        let n = norm(&x);
        if n > self.feature_bound {
            x.iter_mut().for_each(|v| *v *= self.feature_bound / n);
        }
        let m = dot(&self.planted, &x);
        let y = match self.labels {
            LabelModel::Classification { flip_prob } => {
                let y = if m >= 0.0 { 1.0 } else { -1.0 };
                if rng.random::<f64>() < flip_prob {
                    -y
                } else {
                    y
                }
            }
            LabelModel::Regression { noise, label_bound } => {
                let e: f64 = rng.sample(StandardNormal);
                (m + noise * e).clamp(-label_bound, label_bound)
            }
        };
        Example::new(x, y).expect("synthetic example is finite")
    }

    pub fn dataset(&self, n: usize, seed: u64) -> Result<Dataset> {
        let mut rng = stream_rng(seed, Stream::Data);
        let ex = (0..n).map(|_| self.draw(&mut rng)).collect();
        Dataset::new(ex, self.feature_bound)
    }

    /// `k` atoms drawn from this generator, each with probability `1/k`.
    pub fn finite_support(&self, k: usize, seed: u64) -> Result<FiniteSupport> {
        if k == 0 {
            return Err(contract("finite support needs at least one atom"));
        }
        let mut rng = stream_rng(seed, Stream::Data);
        let atoms = (0..k).map(|_| self.draw(&mut rng)).collect();
        Ok(FiniteSupport::uniform(atoms)?.with_feature_bound(self.feature_bound))
    }
}

impl ExampleSampler for Synthetic {
    fn sample(&self, rng: &mut dyn RngCore) -> Example {
        self.draw(rng)
    }

    fn feature_dim(&self) -> usize {
        self.planted.len()
    }

    fn feature_bound(&self) -> f64 {
        self.feature_bound
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn features_respect_bound_and_labels_match_model() {
        let g = Synthetic::new(5, 2.0, LabelModel::Classification { flip_prob: 0.0 }, 3).unwrap();
        let d = g.dataset(500, 4).unwrap();
        for z in d.examples() {
            assert!(z.feature_norm() <= 2.0 + 1e-12);
            let m = dot(g.planted(), &z.features);
            assert_eq!(z.label, if m >= 0.0 { 1.0 } else { -1.0 });
        }
        let r = Synthetic::new(3, 1.0, LabelModel::Regression { noise: 0.5, label_bound: 1.5 }, 3).unwrap();
        assert!(r.dataset(500, 1).unwrap().examples().iter().all(|z| z.label.abs() <= 1.5));
    }

    #[test]
    fn same_seed_same_data() {
        let g = Synthetic::new(3, 1.0, LabelModel::Classification { flip_prob: 0.1 }, 1).unwrap();
        assert_eq!(g.dataset(20, 7).unwrap().examples(), g.dataset(20, 7).unwrap().examples());
        assert_ne!(g.dataset(20, 7).unwrap().examples(), g.dataset(20, 8).unwrap().examples());
    }

    #[test]
    fn csv_round_trip() {
        let g = Synthetic::new(3, 1.0, LabelModel::Regression { noise: 0.1, label_bound: 1.0 }, 1).unwrap();
        let d = g.dataset(10, 2).unwrap();
        let mut buf = Vec::new();
        d.to_csv_writer(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("f0,f1,f2,label"));
        let back = Dataset::from_csv_reader(buf.as_slice(), Some(1.0)).unwrap();
        assert_eq!(back.examples(), d.examples());
    }
}
