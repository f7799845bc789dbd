//! Turns a configuration into a loss, a data distribution and constants.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::experiment::config::{ExperimentConfig, LossKind};
use crate::model::{Convexity, DataDistribution, Dataset, ExampleSet, FiniteSupport, Loss, ParamVector, RegularityConstants};
use crate::problems::{certify_constants, LabelModel, LeastSquaresLoss, LogisticLoss, SigmoidLoss, Synthetic, TinyMlpLoss};
use crate::rng::{derive_seed, stream_rng, uniform_in_ball, Stream};

/// Radius used by the network when neither a radius nor a projection is set.
pub const MLP_DEFAULT_RADIUS: f64 = 5.0;
/// Norm of the random network initialization.
pub const MLP_INIT_RADIUS: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct Problem {
    pub loss: Arc<dyn Loss>,
    pub dist: DataDistribution,
    pub constants: RegularityConstants,
    pub n: usize,
    pub w0: ParamVector,
}

impl Problem {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        let p = &cfg.problem;
        let domain = p.radius.or(cfg.run.projection);
        let loss: Arc<dyn Loss> = match p.loss {
            LossKind::Logistic => Arc::new(LogisticLoss::new(p.feature_bound, p.ridge, domain)),
            LossKind::LeastSquares => {
                let r = domain.ok_or_else(|| Error::Config(vec!["problem.radius: required for least_squares".into()]))?;
                Arc::new(LeastSquaresLoss::new(p.feature_bound, p.label_bound, p.ridge, r))
            }
            LossKind::Sigmoid => Arc::new(SigmoidLoss::new(p.feature_bound)),
            LossKind::Mlp => Arc::new(TinyMlpLoss::new(
                p.dim,
                p.hidden,
                p.feature_bound,
                domain.unwrap_or(MLP_DEFAULT_RADIUS),
                derive_seed(p.seed, 2),
            )?),
        };
        let constants = certify_constants(loss.as_ref(), domain, true)?;
        let dist = match &p.data {
            Some(path) => {
                let data = Dataset::from_csv_path(path, Some(p.feature_bound))?;
                if data.feature_dim() != p.dim {
                    return Err(Error::Config(vec![format!(
                        "problem.data: file has {} features but problem.dim = {}",
                        data.feature_dim(),
                        p.dim
                    )]));
                }
                DataDistribution::finite(FiniteSupport::uniform(data.examples().to_vec())?.with_feature_bound(p.feature_bound))
            }
            None => {
                let labels = if p.loss.is_classification() {
                    LabelModel::Classification { flip_prob: p.label_noise }
                } else {
                    LabelModel::Regression {
                        noise: p.label_noise,
                        label_bound: p.label_bound,
                    }
                };
                let gen = Synthetic::new(p.dim, p.feature_bound, labels, p.seed)?;
                if p.support > 0 {
                    DataDistribution::finite(gen.finite_support(p.support, derive_seed(p.seed, 1))?)
                } else {
                    DataDistribution::from_sampler(gen)
                }
            }
        };
        for z in dist.support().map(|s| s.atoms()).unwrap_or_default() {
            loss.validate_example(z)?;
        }
        let dim = loss.param_dim(p.dim);
        let w0 = if p.loss == LossKind::Mlp {
            let mut rng = stream_rng(p.seed, Stream::Init);
            ParamVector::new(uniform_in_ball(&mut rng, dim, MLP_INIT_RADIUS))?
        } else {
            ParamVector::zeros(dim)
        };
        Ok(Self {
            loss,
            dist,
            constants,
            n: p.n,
            w0,
        })
    }

    pub fn convexity(&self) -> Convexity {
        self.loss.convexity()
    }
}
