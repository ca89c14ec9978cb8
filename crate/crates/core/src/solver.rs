//! IRLS fitting of kernel expansions `f(x) = Σ_j a_j k(x, x_j) + b` under a
//! robust loss with ridge penalty `λ aᵀKa`.
//!
//! Each IRLS step solves the weighted kernel ridge problem
//!
//! ```text
//! min_{a,b}  Σ_i w_i (y_i - (Ka)_i - b)² + λ aᵀKa
//! ```
//!
//! whose first-order conditions, after dropping the common factor `K`, are
//! `W(y - Ka - b1) = λa` and `1ᵀW(y - Ka - b1) = 0`. Multiplying the first
//! block by `W⁻¹` gives the symmetric saddle system
//!
//! ```text
//! (K + λW⁻¹) a + b 1 = y,     1ᵀa = 0,
//! ```
//!
//! which is solved with one Cholesky factorisation of `K + λW⁻¹` and a Schur
//! complement for the intercept. Weights are then refreshed as
//! `w_i = loss(r_i) / r_i²`.

use faer::{Mat, MatRef, Side};
use faer::linalg::solvers::Solve;

use crate::data::Standardizer;
use crate::error::{Error, Result};
use crate::kernel::{cross_gram, gram, GaussianKernel, GramMatrix};
use crate::loss::{clip, ClipBound, ScaledLoss, DEFAULT_FLOOR_EPS};

/// Smallest and largest jitter tried when the factorisation fails.
const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub loss: ScaledLoss,
    pub lambda: f64,
    pub clip: Option<ClipBound>,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub floor_eps: f64,
    pub jitter: f64,
}

impl SolverConfig {
    /// Config with the default stopping rule (100 iterations, relative
    /// objective change 1e-8) and no clipping.
    pub fn new(loss: ScaledLoss, lambda: f64) -> Result<Self> {
        let cfg = Self {
            loss,
            lambda,
            clip: None,
            max_iters: 100,
            rel_tol: 1e-8,
            floor_eps: DEFAULT_FLOOR_EPS,
            jitter: 0.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_clip(mut self, clip: Option<ClipBound>) -> Self {
        self.clip = clip;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_rel_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }

    pub fn with_floor_eps(mut self, floor_eps: f64) -> Self {
        self.floor_eps = floor_eps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1".into());
        }
        if !(self.rel_tol > 0.0) {
            return bad(format!("rel_tol must be positive, got {}", self.rel_tol));
        }
        if !(self.floor_eps > 0.0) {
            return bad(format!("floor_eps must be positive, got {}", self.floor_eps));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return bad(format!("jitter must be nonnegative, got {}", self.jitter));
        }
        Ok(())
    }
}

/// Weights and objective history of an IRLS run.
///
/// `objective_trace[0]` is the objective after the unweighted first solve;
/// every reweighting step appends one entry.
#[derive(Debug, Clone, PartialEq)]
pub struct IrlsState {
    pub weights: Vec<f64>,
    pub objective_trace: Vec<f64>,
}

/// Result of IRLS on a fixed Gram matrix.
#[derive(Debug, Clone)]
pub struct IrlsFit {
    pub coef: Vec<f64>,
    pub intercept: f64,
    pub iterations_used: usize,
    pub final_objective: f64,
    /// Trace index of the returned iterate.
    pub best_iter: usize,
    pub converged: bool,
    pub state: IrlsState,
}

/// Solves the weighted kernel ridge subproblem for `(a, b)`.
///
/// If the factorisation of `K + λW⁻¹ + jitter·I` fails, the jitter is raised
/// tenfold from 1e-10 up to 1e-6 before giving up.
pub fn weighted_krr_solve(
    k: &GramMatrix,
    y: &[f64],
    w: &[f64],
    lambda: f64,
    jitter: f64,
) -> Result<(Vec<f64>, f64)> {
    let n = k.n();
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: y.len() });
    }
    if w.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: w.len() });
    }
    if n == 0 {
        return Err(Error::Empty("weighted solve needs at least one observation"));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    if w.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidParameter("weights must be finite and positive".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("responses"));
    }

    let ridge: Vec<f64> = w.iter().map(|&wi| lambda / wi).collect();
    let mut next = jitter;
    loop {
        let mut a = Mat::from_fn(n, n, |i, j| k.get(i, j));
        for (i, r) in ridge.iter().enumerate() {
            a[(i, i)] += r + next;
        }
        if let Ok(llt) = a.llt(Side::Lower) {
            return Ok(saddle_solve(&llt, &a, y));
        }
        if next >= JITTER_MAX {
            break;
        }
        next = if next < JITTER_START { JITTER_START } else { next * 10.0 };
    }
    let diag: Vec<f64> = (0..n).map(|i| k.get(i, i) + ridge[i]).collect();
    Err(Error::Singular {
        n,
        min_diag: diag.iter().cloned().fold(f64::INFINITY, f64::min),
        max_diag: diag.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        jitter: next,
    })
}

/// Solves `A a + b 1 = y`, `1ᵀa = 0` given the Cholesky factor of `A`, with
/// one step of iterative refinement.
fn saddle_solve(llt: &faer::linalg::solvers::Llt<f64>, a_mat: &Mat<f64>, y: &[f64]) -> (Vec<f64>, f64) {
    let n = y.len();
    let mut rhs = Mat::from_fn(n, 2, |i, j| if j == 0 { y[i] } else { 1.0 });
    llt.solve_in_place(rhs.as_mut());
    let u = rhs.col_as_slice(0);
    let v = rhs.col_as_slice(1);
    let sum_v: f64 = v.iter().sum();
    let mut b = u.iter().sum::<f64>() / sum_v;
    let mut coef: Vec<f64> = u.iter().zip(v).map(|(ui, vi)| ui - b * vi).collect();

    // Residuals of both block equations.
    let mut r1 = Mat::<f64>::zeros(n, 1);
    for i in 0..n {
        let row: f64 = (0..n).map(|j| a_mat[(j, i)] * coef[j]).sum();
        r1[(i, 0)] = y[i] - row - b;
    }
    let r2 = -coef.iter().sum::<f64>();
    llt.solve_in_place(r1.as_mut());
    let z = r1.col_as_slice(0);
    let db = (z.iter().sum::<f64>() - r2) / sum_v;
    for i in 0..n {
        coef[i] += z[i] - db * v[i];
    }
    b += db;
    (coef, b)
}

/// `Σ_i loss(y_i - (Ka)_i - b) + λ aᵀKa`.
pub fn robust_objective(
    k: &GramMatrix,
    y: &[f64],
    coef: &[f64],
    intercept: f64,
    loss: &ScaledLoss,
    lambda: f64,
) -> Result<f64> {
    let n = k.n();
    if y.len() != n || coef.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: if y.len() != n { y.len() } else { coef.len() },
        });
    }
    let ka = k.matvec(coef);
    objective_from_parts(y, &ka, coef, intercept, loss, lambda)
}

fn objective_from_parts(
    y: &[f64],
    ka: &[f64],
    coef: &[f64],
    intercept: f64,
    loss: &ScaledLoss,
    lambda: f64,
) -> Result<f64> {
    let data: f64 = y
        .iter()
        .zip(ka)
        .map(|(yi, fi)| loss.value_unchecked(yi - fi - intercept))
        .sum();
    let penalty: f64 = coef.iter().zip(ka).map(|(a, f)| a * f).sum();
    let obj = data + lambda * penalty;
    if obj.is_finite() {
        Ok(obj)
    } else {
        Err(Error::NonFinite("robust objective"))
    }
}

/// Runs IRLS on a precomputed Gram matrix and returns the iterate with the
/// smallest robust objective.
pub fn fit_gram(config: &SolverConfig, k: &GramMatrix, y: &[f64]) -> Result<IrlsFit> {
    config.validate()?;
    let n = k.n();
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: y.len() });
    }
    if n < 2 {
        return Err(Error::InvalidParameter("fit needs at least two observations".into()));
    }

    let mut weights = vec![1.0; n];
    let mut trace = Vec::with_capacity(config.max_iters + 1);
    let mut best: Option<(Vec<f64>, f64, f64, usize, Vec<f64>)> = None;
    let mut converged = false;

    for t in 0..=config.max_iters {
        let (coef, b) = weighted_krr_solve(k, y, &weights, config.lambda, config.jitter)?;
        let ka = k.matvec(&coef);
        let obj = objective_from_parts(y, &ka, &coef, b, &config.loss, config.lambda)?;
        let prev = trace.last().copied();
        trace.push(obj);
        if best.as_ref().is_none_or(|bst| obj < bst.2) {
            best = Some((coef.clone(), b, obj, t, weights.clone()));
        }
        if let Some(p) = prev {
            if (p - obj).abs() <= config.rel_tol * p.abs().max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
        }
        if t == config.max_iters {
            break;
        }
        for i in 0..n {
            weights[i] = config
                .loss
                .weight_unchecked(y[i] - ka[i] - b, config.floor_eps);
        }
    }

    let (coef, intercept, final_objective, best_iter, best_weights) =
        best.expect("at least one IRLS iterate");
    Ok(IrlsFit {
        coef,
        intercept,
        iterations_used: trace.len() - 1,
        final_objective,
        best_iter,
        converged,
        state: IrlsState {
            weights: best_weights,
            objective_trace: trace,
        },
    })
}

/// A fitted kernel expansion, ready for prediction.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub kern: GaussianKernel,
    pub x_train: Mat<f64>,
    pub coef: Vec<f64>,
    pub intercept: f64,
    pub clip: Option<ClipBound>,
    pub standardizer: Option<Standardizer>,
    pub iterations_used: usize,
    pub final_objective: f64,
    pub state: IrlsState,
}

/// Fits by IRLS on `(x, y)`; `x` is `n × d`.
pub fn fit(
    config: &SolverConfig,
    kern: &GaussianKernel,
    x: MatRef<'_, f64>,
    y: &[f64],
) -> Result<FittedModel> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.nrows(), got: y.len() });
    }
    let k = gram(kern, x)?;
    let res = fit_gram(config, &k, y)?;
    Ok(FittedModel {
        kern: *kern,
        x_train: x.to_owned(),
        coef: res.coef,
        intercept: res.intercept,
        clip: config.clip,
        standardizer: None,
        iterations_used: res.iterations_used,
        final_objective: res.final_objective,
        state: res.state,
    })
}

/// `clip(C a + b)` for a precomputed cross-kernel `C` (`m × n`).
pub fn predict_from_cross(
    cross: MatRef<'_, f64>,
    coef: &[f64],
    intercept: f64,
    bound: Option<ClipBound>,
) -> Vec<f64> {
    let (m, n) = (cross.nrows(), cross.ncols());
    debug_assert_eq!(n, coef.len());
    let mut out = vec![intercept; m];
    for (j, &a) in coef.iter().enumerate() {
        for (i, o) in out.iter_mut().enumerate() {
            *o += cross[(i, j)] * a;
        }
    }
    if let Some(bound) = bound {
        out.iter_mut().for_each(|v| *v = clip(*v, bound));
    }
    out
}

impl FittedModel {
    /// Attaches the preprocessing used at training time. Queries passed to
    /// [`FittedModel::predict`] are then in original units: features are
    /// standardized first and the response transform is inverted last.
    pub fn with_standardizer(mut self, standardizer: Standardizer) -> Self {
        self.standardizer = Some(standardizer);
        self
    }

    pub fn predict(&self, x_query: MatRef<'_, f64>) -> Result<Vec<f64>> {
        let d = self.x_train.ncols();
        if x_query.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, got: x_query.ncols() });
        }
        let cross = match &self.standardizer {
            Some(s) => cross_gram(&self.kern, self.x_train.as_ref(), s.transform_features(x_query)?.as_ref())?,
            None => cross_gram(&self.kern, self.x_train.as_ref(), x_query)?,
        };
        let mut out = predict_from_cross(cross.as_ref(), &self.coef, self.intercept, self.clip);
        if let Some(s) = &self.standardizer {
            out.iter_mut().for_each(|v| *v = s.inverse_response(*v));
        }
        Ok(out)
    }
}
