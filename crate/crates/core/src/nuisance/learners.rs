//! Built-in regression learners.
//!
//! A learner turns a feature matrix (no intercept column; learners add their
//! own) and a target vector into a [`Predictor`]. Anything implementing
//! [`Learner`] can be plugged into the nuisance fits.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::NuisanceError;

/// Ridge penalty used when the normal equations are rank-deficient.
pub const SINGULAR_FALLBACK_RIDGE: f64 = 1e-6;

/// Maximum Newton iterations for logistic regression.
pub const LOGISTIC_MAX_ITER: usize = 100;

/// Row-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    values: Vec<f64>,
    nrows: usize,
    ncols: usize,
}

impl Features {
    pub fn new(values: Vec<f64>, ncols: usize) -> Self {
        assert!(ncols > 0, "use Features::empty for zero columns");
        assert!(values.len().is_multiple_of(ncols), "ragged feature matrix");
        let nrows = values.len() / ncols;
        Self { values, nrows, ncols }
    }

    /// `nrows` rows with no columns (intercept-only fits).
    pub fn empty(nrows: usize) -> Self {
        Self {
            values: Vec::new(),
            nrows,
            ncols: 0,
        }
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.ncols..(i + 1) * self.ncols]
    }

    /// Design matrix with a leading intercept column.
    pub(crate) fn design(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.nrows, self.ncols + 1, |i, j| {
            if j == 0 {
                1.0
            } else {
                self.values[i * self.ncols + j - 1]
            }
        })
    }
}

pub trait Predictor: Send + Sync + fmt::Debug {
    fn predict(&self, features: &[f64]) -> f64;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FitFlags {
    /// Normal equations were rank-deficient; refit with a tiny ridge.
    pub singular_fallback: bool,
    /// Iterative fit hit its iteration cap or the data were separable.
    pub non_convergence: bool,
}

impl FitFlags {
    pub fn merge(self, other: Self) -> Self {
        Self {
            singular_fallback: self.singular_fallback || other.singular_fallback,
            non_convergence: self.non_convergence || other.non_convergence,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fitted {
    pub predictor: Arc<dyn Predictor>,
    pub flags: FitFlags,
}

pub trait Learner: Send + Sync {
    fn fit(&self, features: &Features, targets: &[f64]) -> Result<Fitted, NuisanceError>;
}

/// The built-in learners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerSpec {
    Ols,
    Ridge { lambda: f64 },
    Logistic,
    KernelSmoother { bandwidth: f64 },
}

impl LearnerSpec {
    pub fn validate(&self) -> Result<(), NuisanceError> {
        match *self {
            Self::Ridge { lambda } if !(lambda >= 0.0 && lambda.is_finite()) => Err(
                NuisanceError::InvalidHyperparameter(format!("ridge lambda must be >= 0, got {lambda}")),
            ),
            Self::KernelSmoother { bandwidth } if !(bandwidth > 0.0 && bandwidth.is_finite()) => Err(
                NuisanceError::InvalidHyperparameter(format!("smoother bandwidth must be > 0, got {bandwidth}")),
            ),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for LearnerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Ols => write!(f, "ols"),
            Self::Ridge { lambda } => write!(f, "ridge:{lambda}"),
            Self::Logistic => write!(f, "logistic"),
            Self::KernelSmoother { bandwidth } => write!(f, "kernel:{bandwidth}"),
        }
    }
}

impl Learner for LearnerSpec {
    fn fit(&self, features: &Features, targets: &[f64]) -> Result<Fitted, NuisanceError> {
        self.validate()?;
        let n = features.nrows();
        if n != targets.len() {
            return Err(NuisanceError::InvalidTargets(format!(
                "{} feature rows but {} targets",
                n,
                targets.len()
            )));
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(NuisanceError::InvalidTargets("non-finite target".into()));
        }
        match *self {
            Self::Ols => fit_linear(features, targets, 0.0),
            Self::Ridge { lambda } => fit_linear(features, targets, lambda),
            Self::Logistic => fit_logistic(features, targets),
            Self::KernelSmoother { bandwidth } => Ok(Fitted {
                predictor: Arc::new(KernelSmoother::new(features, targets, bandwidth)),
                flags: FitFlags::default(),
            }),
        }
    }
}

/// `intercept + Σ slope_j x_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub coefficients: Vec<f64>,
}

impl LinearModel {
    pub fn linear_predictor(&self, features: &[f64]) -> f64 {
        debug_assert_eq!(features.len() + 1, self.coefficients.len());
        self.coefficients[0]
            + self.coefficients[1..]
                .iter()
                .zip(features)
                .map(|(b, x)| b * x)
                .sum::<f64>()
    }
}

impl Predictor for LinearModel {
    fn predict(&self, features: &[f64]) -> f64 {
        self.linear_predictor(features)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub linear: LinearModel,
}

impl Predictor for LogisticModel {
    fn predict(&self, features: &[f64]) -> f64 {
        sigmoid(self.linear.linear_predictor(features))
    }
}

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Solve `(XᵀX + λ P) B = XᵀY` where `P` penalizes every column but the
/// intercept. With `λ = 0` a rank-deficient `XᵀX` triggers a refit with
/// [`SINGULAR_FALLBACK_RIDGE`]; the returned flag reports that.
pub(crate) fn solve_normal_equations(
    design: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    lambda: f64,
) -> (DMatrix<f64>, bool) {
    let gram = design.tr_mul(design);
    let rhs = design.tr_mul(targets);
    let penalized = |lam: f64| {
        let mut g = gram.clone();
        for j in 1..g.ncols() {
            g[(j, j)] += lam;
        }
        g
    };
    let scale = (0..gram.ncols()).map(|j| gram[(j, j)]).fold(0.0f64, f64::max).max(1.0);
    let attempt = |lam: f64| {
        let chol = penalized(lam).cholesky()?;
        let min_pivot = chol.l_dirty().diagonal().iter().map(|v| v * v).fold(f64::INFINITY, f64::min);
        if lam == 0.0 && min_pivot < 1e-12 * scale {
            return None;
        }
        Some(chol.solve(&rhs))
    };
    match attempt(lambda) {
        Some(coef) => (coef, false),
        None => {
            // the penalized gram is positive definite; growing the penalty
            // only guards against round-off in the factorization
            let mut lam = lambda.max(SINGULAR_FALLBACK_RIDGE);
            loop {
                if let Some(coef) = attempt(lam) {
                    return (coef, true);
                }
                lam *= 100.0;
            }
        }
    }
}

fn fit_linear(features: &Features, targets: &[f64], lambda: f64) -> Result<Fitted, NuisanceError> {
    let n = targets.len();
    let needed = features.ncols() + 1;
    if lambda == 0.0 && n < needed {
        return Err(NuisanceError::InsufficientRows { needed, got: n });
    }
    if n == 0 {
        return Err(NuisanceError::InsufficientRows { needed: 1, got: 0 });
    }
    let design = features.design();
    let y = DMatrix::from_column_slice(n, 1, targets);
    let (coef, singular) = solve_normal_equations(&design, &y, lambda);
    Ok(Fitted {
        predictor: Arc::new(LinearModel {
            coefficients: coef.column(0).iter().copied().collect(),
        }),
        flags: FitFlags {
            singular_fallback: singular,
            non_convergence: false,
        },
    })
}

fn log_likelihood(eta: &DVector<f64>, y: &[f64]) -> f64 {
    eta.iter()
        .zip(y)
        .map(|(&e, &t)| {
            // log(1 + e^eta) computed stably
            let softplus = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
            t * e - softplus
        })
        .sum()
}

/// Newton-Raphson logistic regression with step halving. Separable data or
/// hitting the iteration cap sets `non_convergence`; the last iterate is kept.
fn fit_logistic(features: &Features, targets: &[f64]) -> Result<Fitted, NuisanceError> {
    if targets.iter().any(|&t| t != 0.0 && t != 1.0) {
        return Err(NuisanceError::InvalidTargets("logistic targets must be 0 or 1".into()));
    }
    let n = targets.len();
    if n == 0 {
        return Err(NuisanceError::InsufficientRows { needed: 1, got: 0 });
    }
    let design = features.design();
    let k = design.ncols();
    let mut beta = DVector::<f64>::zeros(k);
    let mean = targets.iter().sum::<f64>() / n as f64;
    beta[0] = (mean.clamp(1e-6, 1.0 - 1e-6) / (1.0 - mean.clamp(1e-6, 1.0 - 1e-6))).ln();
    let y = DVector::from_column_slice(targets);

    let mut eta = &design * &beta;
    let mut ll = log_likelihood(&eta, targets);
    let mut converged = false;
    for _ in 0..LOGISTIC_MAX_ITER {
        let probs = eta.map(sigmoid);
        let weights = probs.map(|p| p * (1.0 - p));
        let grad = design.tr_mul(&(&y - &probs));
        let mut hessian = DMatrix::<f64>::zeros(k, k);
        for i in 0..n {
            let w = weights[i];
            if w == 0.0 {
                continue;
            }
            let row = design.row(i);
            for a in 0..k {
                let ra = row[a] * w;
                for b in a..k {
                    hessian[(a, b)] += ra * row[b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                hessian[(a, b)] = hessian[(b, a)];
            }
            hessian[(a, a)] += 1e-10;
        }
        let Some(chol) = hessian.cholesky() else { break };
        let step = chol.solve(&grad);
        if !step.iter().all(|s| s.is_finite()) {
            break;
        }

        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let candidate = &beta + &step * scale;
            let cand_eta = &design * &candidate;
            let cand_ll = log_likelihood(&cand_eta, targets);
            if cand_ll >= ll - 1e-12 * ll.abs().max(1.0) {
                beta = candidate;
                eta = cand_eta;
                ll = cand_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
        let size = step.amax() * scale;
        if size < 1e-10 * (1.0 + beta.amax()) {
            converged = true;
            break;
        }
    }
    let separated = eta.iter().any(|e| e.abs() > 30.0);
    Ok(Fitted {
        predictor: Arc::new(LogisticModel {
            linear: LinearModel {
                coefficients: beta.iter().copied().collect(),
            },
        }),
        flags: FitFlags {
            singular_fallback: false,
            non_convergence: !converged || separated,
        },
    })
}

/// Nadaraya-Watson smoother with a Gaussian product kernel on standardized
/// features.
#[derive(Debug, Clone)]
pub struct KernelSmoother {
    points: Vec<f64>,
    targets: Vec<f64>,
    scales: Vec<f64>,
    ncols: usize,
    bandwidth: f64,
}

impl KernelSmoother {
    fn new(features: &Features, targets: &[f64], bandwidth: f64) -> Self {
        let n = targets.len();
        let p = features.ncols();
        let scales = (0..p)
            .map(|j| {
                let col: Vec<f64> = (0..n).map(|i| features.row(i)[j]).collect();
                let sd = sample_sd(&col);
                if sd > 0.0 { sd } else { 1.0 }
            })
            .collect::<Vec<_>>();
        let mut points = Vec::with_capacity(n * p);
        for i in 0..n {
            points.extend(features.row(i).iter().zip(&scales).map(|(x, s)| x / s));
        }
        Self {
            points,
            targets: targets.to_vec(),
            scales,
            ncols: p,
            bandwidth,
        }
    }
}

impl Predictor for KernelSmoother {
    fn predict(&self, features: &[f64]) -> f64 {
        let p = self.ncols;
        let n = self.targets.len();
        if p == 0 {
            return self.targets.iter().sum::<f64>() / n as f64;
        }
        let h2 = self.bandwidth * self.bandwidth;
        let dist: Vec<f64> = (0..n)
            .map(|i| {
                self.points[i * p..(i + 1) * p]
                    .iter()
                    .zip(features)
                    .zip(&self.scales)
                    .map(|((u, x), s)| {
                        let z = u - x / s;
                        z * z
                    })
                    .sum::<f64>()
                    / (2.0 * h2)
            })
            .collect();
        let nearest = dist.iter().copied().fold(f64::INFINITY, f64::min);
        let (num, den) = dist.iter().zip(&self.targets).fold((0.0, 0.0), |(num, den), (d, y)| {
            let w = (nearest - d).exp();
            (num + w * y, den + w)
        });
        num / den
    }
}

pub(crate) fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}
