use std::ops::Range;

use crate::error::{contract, Error, Result};
use crate::model::{dot, Convexity, Example, Loss, ParamVector, RegularityConstants};

use super::falsify::{estimate_constants_empirical, SamplingDomain};

pub(crate) fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(t))` without overflow.
pub(crate) fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn ridge_value(mu: f64, w: &ParamVector) -> f64 {
    if mu == 0.0 {
        0.0
    } else {
        0.5 * mu * w.dot(w)
    }
}

fn need_radius(name: &str, radius: Option<f64>) -> Result<f64> {
    match radius {
        Some(r) if r > 0.0 && r.is_finite() => Ok(r),
        _ => Err(contract(format!("{name}: constants need a finite domain radius"))),
    }
}

fn check_binary(z: &Example) -> Result<()> {
    if z.label == 1.0 || z.label == -1.0 {
        Ok(())
    } else {
        Err(Error::InvalidExample(format!(
            "classification label must be -1 or +1, got {}",
            z.label
        )))
    }
}

/// `f(w; (x, y)) = ½(w·x − y)² + (μ/2)‖w‖²`
#[derive(Debug, Clone)]
pub struct LeastSquaresLoss {
    pub feature_bound: f64,
    pub label_bound: f64,
    pub ridge: f64,
    pub radius: f64,
}

impl LeastSquaresLoss {
    pub fn new(feature_bound: f64, label_bound: f64, ridge: f64, radius: f64) -> Self {
        Self {
            feature_bound,
            label_bound,
            ridge,
            radius,
        }
    }
}

impl Loss for LeastSquaresLoss {
    fn name(&self) -> &'static str {
        "least_squares"
    }

    fn value(&self, w: &ParamVector, z: &Example) -> f64 {
        let r = dot(w.as_slice(), &z.features) - z.label;
        0.5 * r * r + ridge_value(self.ridge, w)
    }

    fn gradient(&self, w: &ParamVector, z: &Example) -> ParamVector {
        let r = dot(w.as_slice(), &z.features) - z.label;
        let g = z
            .features
            .iter()
            .zip(w.as_slice())
            .map(|(x, wi)| r * x + self.ridge * wi)
            .collect();
        ParamVector::from_raw(g)
    }

    fn convexity(&self) -> Convexity {
        if self.ridge > 0.0 {
            Convexity::StronglyConvex
        } else {
            Convexity::Convex
        }
    }

    fn constants(&self) -> RegularityConstants {
        self.certify(Some(self.radius))
            .expect("least-squares constants are always certifiable on a finite radius")
    }

    fn certify(&self, radius: Option<f64>) -> Result<RegularityConstants> {
        let r = need_radius(self.name(), radius)?;
        let (b, y, mu) = (self.feature_bound, self.label_bound, self.ridge);
        let c = RegularityConstants {
            lipschitz: b * (b * r + y) + mu * r,
            smoothness: b * b + mu,
            strong_convexity: mu,
            range_bound: 0.5 * (b * r + y).powi(2) + 0.5 * mu * r * r,
            domain_radius: Some(r),
            certified: true,
        };
        c.validate()?;
        Ok(c)
    }

    fn validate_example(&self, z: &Example) -> Result<()> {
        if z.label.abs() > self.label_bound * (1.0 + 1e-12) {
            return Err(Error::InvalidExample(format!(
                "label {} exceeds the declared bound {}",
                z.label, self.label_bound
            )));
        }
        Ok(())
    }
}

/// `f(w; (x, y)) = log(1 + exp(−y w·x)) + (μ/2)‖w‖²`
#[derive(Debug, Clone)]
pub struct LogisticLoss {
    pub feature_bound: f64,
    pub ridge: f64,
    pub radius: Option<f64>,
}

impl LogisticLoss {
    pub fn new(feature_bound: f64, ridge: f64, radius: Option<f64>) -> Self {
        Self {
            feature_bound,
            ridge,
            radius,
        }
    }
}

impl Loss for LogisticLoss {
    fn name(&self) -> &'static str {
        "logistic"
    }

    fn value(&self, w: &ParamVector, z: &Example) -> f64 {
        softplus(-z.label * dot(w.as_slice(), &z.features)) + ridge_value(self.ridge, w)
    }

    fn gradient(&self, w: &ParamVector, z: &Example) -> ParamVector {
        let m = z.label * dot(w.as_slice(), &z.features);
        let s = -z.label * sigmoid(-m);
        let g = z
            .features
            .iter()
            .zip(w.as_slice())
            .map(|(x, wi)| s * x + self.ridge * wi)
            .collect();
        ParamVector::from_raw(g)
    }

    fn convexity(&self) -> Convexity {
        if self.ridge > 0.0 {
            Convexity::StronglyConvex
        } else {
            Convexity::Convex
        }
    }

    fn constants(&self) -> RegularityConstants {
        self.certify(self.radius)
            .expect("logistic constants need a radius when ridge > 0")
    }

    // |σ'| ≤ 1/4 bounds the per-example Hessian x xᵀ σ'(·) by B²/4.
    fn certify(&self, radius: Option<f64>) -> Result<RegularityConstants> {
        let b = self.feature_bound;
        let mu = self.ridge;
        let r = if mu > 0.0 {
            Some(need_radius(self.name(), radius)?)
        } else {
            radius
        };
        let rr = r.unwrap_or(0.0);
        let c = RegularityConstants {
            lipschitz: b + mu * rr,
            smoothness: b * b / 4.0 + mu,
            strong_convexity: mu,
            range_bound: match r {
                Some(r) => softplus(b * r) + 0.5 * mu * r * r,
                None => f64::INFINITY,
            },
            domain_radius: r,
            certified: true,
        };
        c.validate()?;
        Ok(c)
    }

    fn validate_example(&self, z: &Example) -> Result<()> {
        check_binary(z)
    }

    fn predict(&self, w: &ParamVector, features: &[f64]) -> Option<f64> {
        Some(if dot(w.as_slice(), features) >= 0.0 { 1.0 } else { -1.0 })
    }

    fn binary_labels(&self) -> bool {
        true
    }
}

/// Upper bound on `|σ''|` used for the sigmoid loss. The exact maximum is
/// `1/(6√3) ≈ 0.0962`, attained where `σ = (3 ± √3)/6`.
pub const SIGMOID_CURVATURE_BOUND: f64 = 0.1;

/// Non-convex bounded loss `f(w; (x, y)) = 1 / (1 + exp(y w·x)) ∈ [0, 1]`.
/// Constants hold on all of parameter space: `L = B/4`, `β = B²/10`, `ρ = 1`.
#[derive(Debug, Clone)]
pub struct SigmoidLoss {
    pub feature_bound: f64,
}

impl SigmoidLoss {
    pub fn new(feature_bound: f64) -> Self {
        Self { feature_bound }
    }
}

impl Loss for SigmoidLoss {
    fn name(&self) -> &'static str {
        "sigmoid"
    }

    fn value(&self, w: &ParamVector, z: &Example) -> f64 {
        sigmoid(-z.label * dot(w.as_slice(), &z.features))
    }

    fn gradient(&self, w: &ParamVector, z: &Example) -> ParamVector {
        let s = sigmoid(-z.label * dot(w.as_slice(), &z.features));
        let coef = -z.label * s * (1.0 - s);
        ParamVector::from_raw(z.features.iter().map(|x| coef * x).collect())
    }

    fn convexity(&self) -> Convexity {
        Convexity::NonConvex
    }

    fn constants(&self) -> RegularityConstants {
        self.certify(None).expect("sigmoid constants are global")
    }

    fn certify(&self, _radius: Option<f64>) -> Result<RegularityConstants> {
        let b = self.feature_bound;
        Ok(RegularityConstants {
            lipschitz: b / 4.0,
            smoothness: b * b * SIGMOID_CURVATURE_BOUND,
            strong_convexity: 0.0,
            range_bound: 1.0,
            domain_radius: None,
            certified: true,
        })
    }

    fn validate_example(&self, z: &Example) -> Result<()> {
        check_binary(z)
    }

    fn predict(&self, w: &ParamVector, features: &[f64]) -> Option<f64> {
        Some(if dot(w.as_slice(), features) >= 0.0 { 1.0 } else { -1.0 })
    }

    fn binary_labels(&self) -> bool {
        true
    }
}

/// One-hidden-layer sigmoid network scored by `(σ(out) − t)²` with target
/// `t = (1 + y)/2`, so values stay in `[0, 1]`.
///
/// Parameter layout: hidden weights (row-major, `hidden × input_dim`), hidden
/// biases, output weights, output bias. Constants are sampled estimates on
/// the radius-`R` ball, never certified.
#[derive(Debug, Clone)]
pub struct TinyMlpLoss {
    pub input_dim: usize,
    pub hidden: usize,
    pub feature_bound: f64,
    pub radius: f64,
    estimated: RegularityConstants,
}

pub const MLP_MAX_HIDDEN: usize = 8;

impl TinyMlpLoss {
    pub fn new(input_dim: usize, hidden: usize, feature_bound: f64, radius: f64, seed: u64) -> Result<Self> {
        if hidden == 0 || hidden > MLP_MAX_HIDDEN {
            return Err(contract(format!(
                "hidden width must be in 1..={MLP_MAX_HIDDEN}, got {hidden}"
            )));
        }
        if input_dim == 0 {
            return Err(contract("input dimension must be positive"));
        }
        let mut loss = Self {
            input_dim,
            hidden,
            feature_bound,
            radius,
            estimated: RegularityConstants {
                lipschitz: 0.0,
                smoothness: 0.0,
                strong_convexity: 0.0,
                range_bound: 1.0,
                domain_radius: Some(radius),
                certified: false,
            },
        };
        let domain = SamplingDomain::new(input_dim, feature_bound, radius);
        let est = estimate_constants_empirical(&loss, &domain, 2000, seed)?;
        loss.estimated = RegularityConstants {
            range_bound: 1.0,
            ..est
        };
        Ok(loss)
    }

    fn n_params(&self) -> usize {
        self.hidden * self.input_dim + 2 * self.hidden + 1
    }

    fn target(y: f64) -> f64 {
        ((1.0 + y) / 2.0).clamp(0.0, 1.0)
    }

    /// Hidden activations and the output probability.
    fn forward(&self, w: &[f64], x: &[f64]) -> (Vec<f64>, f64) {
        let (h, p) = (self.hidden, self.input_dim);
        let bias1 = &w[h * p..h * p + h];
        let out_w = &w[h * p + h..h * p + 2 * h];
        let out_b = w[h * p + 2 * h];
        let act: Vec<f64> = (0..h)
            .map(|k| sigmoid(dot(&w[k * p..(k + 1) * p], x) + bias1[k]))
            .collect();
        let out = sigmoid(dot(out_w, &act) + out_b);
        (act, out)
    }
}

impl Loss for TinyMlpLoss {
    fn name(&self) -> &'static str {
        "mlp"
    }

    fn value(&self, w: &ParamVector, z: &Example) -> f64 {
        let (_, out) = self.forward(w.as_slice(), &z.features);
        let e = out - Self::target(z.label);
        e * e
    }

    fn gradient(&self, w: &ParamVector, z: &Example) -> ParamVector {
        let (h, p) = (self.hidden, self.input_dim);
        let ws = w.as_slice();
        let (act, out) = self.forward(ws, &z.features);
        let d_out = 2.0 * (out - Self::target(z.label)) * out * (1.0 - out);
        let out_w = &ws[h * p + h..h * p + 2 * h];
        let mut g = vec![0.0; self.n_params()];
        for k in 0..h {
            let d_hidden = d_out * out_w[k] * act[k] * (1.0 - act[k]);
            for j in 0..p {
                g[k * p + j] = d_hidden * z.features[j];
            }
            g[h * p + k] = d_hidden;
            g[h * p + h + k] = d_out * act[k];
        }
        g[h * p + 2 * h] = d_out;
        ParamVector::from_raw(g)
    }

    fn convexity(&self) -> Convexity {
        Convexity::NonConvex
    }

    fn constants(&self) -> RegularityConstants {
        self.estimated
    }

    fn param_dim(&self, _feature_dim: usize) -> usize {
        self.n_params()
    }

    fn validate_example(&self, z: &Example) -> Result<()> {
        if z.dim() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: z.dim(),
            });
        }
        check_binary(z)
    }

    fn blocks(&self, _feature_dim: usize) -> Vec<Range<usize>> {
        let split = self.hidden * self.input_dim + self.hidden;
        vec![0..split, split..self.n_params()]
    }

    fn binary_labels(&self) -> bool {
        true
    }
}

/// `f ≡ c`.
#[derive(Debug, Clone)]
pub struct ConstantLoss {
    pub value: f64,
}

impl ConstantLoss {
    pub fn new(value: f64) -> Self {
        Self { value }
    }
}

impl Loss for ConstantLoss {
    fn name(&self) -> &'static str {
        "constant"
    }

    fn value(&self, _w: &ParamVector, _z: &Example) -> f64 {
        self.value
    }

    fn gradient(&self, w: &ParamVector, _z: &Example) -> ParamVector {
        ParamVector::zeros(w.dim())
    }

    fn convexity(&self) -> Convexity {
        Convexity::Convex
    }

    fn constants(&self) -> RegularityConstants {
        self.certify(None).unwrap()
    }

    fn certify(&self, radius: Option<f64>) -> Result<RegularityConstants> {
        Ok(RegularityConstants {
            lipschitz: 0.0,
            smoothness: 0.0,
            strong_convexity: 0.0,
            range_bound: self.value.abs(),
            domain_radius: radius,
            certified: true,
        })
    }
}

/// `f(w; (x, y)) = w·x`.
#[derive(Debug, Clone)]
pub struct LinearLoss {
    pub feature_bound: f64,
}

impl Loss for LinearLoss {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn value(&self, w: &ParamVector, z: &Example) -> f64 {
        dot(w.as_slice(), &z.features)
    }

    fn gradient(&self, _w: &ParamVector, z: &Example) -> ParamVector {
        ParamVector::from_raw(z.features.clone())
    }

    fn convexity(&self) -> Convexity {
        Convexity::Convex
    }

    fn constants(&self) -> RegularityConstants {
        self.certify(None).unwrap()
    }

    fn certify(&self, radius: Option<f64>) -> Result<RegularityConstants> {
        Ok(RegularityConstants {
            lipschitz: self.feature_bound,
            smoothness: 0.0,
            strong_convexity: 0.0,
            range_bound: radius.map_or(f64::INFINITY, |r| r * self.feature_bound),
            domain_radius: radius,
            certified: true,
        })
    }
}

/// `f(w; z) = (μ/2)‖w‖²`, ignoring the example.
#[derive(Debug, Clone)]
pub struct QuadraticLoss {
    pub curvature: f64,
    pub radius: Option<f64>,
}

impl QuadraticLoss {
    pub fn new(curvature: f64, radius: Option<f64>) -> Self {
        Self { curvature, radius }
    }
}

impl Loss for QuadraticLoss {
    fn name(&self) -> &'static str {
        "quadratic"
    }

    fn value(&self, w: &ParamVector, _z: &Example) -> f64 {
        0.5 * self.curvature * w.dot(w)
    }

    fn gradient(&self, w: &ParamVector, _z: &Example) -> ParamVector {
        let mut g = w.clone();
        g.scale(self.curvature);
        g
    }

    fn convexity(&self) -> Convexity {
        Convexity::StronglyConvex
    }

    fn constants(&self) -> RegularityConstants {
        self.certify(self.radius).unwrap()
    }

    fn certify(&self, radius: Option<f64>) -> Result<RegularityConstants> {
        let mu = self.curvature;
        Ok(RegularityConstants {
            lipschitz: radius.map_or(f64::INFINITY, |r| mu * r),
            smoothness: mu,
            strong_convexity: mu,
            range_bound: radius.map_or(f64::INFINITY, |r| 0.5 * mu * r * r),
            domain_radius: radius,
            certified: true,
        })
    }
}

/// Wraps a loss and perturbs its gradient while still reporting the inner
/// loss's constants. Exists to prove the property suite catches bad gradients.
#[derive(Debug)]
pub struct CorruptedGradient<L> {
    pub inner: L,
}

impl<L: Loss> Loss for CorruptedGradient<L> {
    fn name(&self) -> &'static str {
        self.inner.name()
    }

    fn value(&self, w: &ParamVector, z: &Example) -> f64 {
        self.inner.value(w, z)
    }

    fn gradient(&self, w: &ParamVector, z: &Example) -> ParamVector {
        let mut g = self.inner.gradient(w, z);
        g.scale(1.5);
        for v in g.as_mut_slice() {
            *v += 0.01;
        }
        g
    }

    fn convexity(&self) -> Convexity {
        self.inner.convexity()
    }

    fn constants(&self) -> RegularityConstants {
        self.inner.constants()
    }

    fn certify(&self, radius: Option<f64>) -> Result<RegularityConstants> {
        self.inner.certify(radius)
    }

    fn param_dim(&self, feature_dim: usize) -> usize {
        self.inner.param_dim(feature_dim)
    }

    fn validate_example(&self, z: &Example) -> Result<()> {
        self.inner.validate_example(z)
    }

    fn binary_labels(&self) -> bool {
        self.inner.binary_labels()
    }
}
