//! Hyperparameter grids, k-fold cross-validation with the MAE criterion,
//! test metrics and the benchmark driver.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    calibrate_noise_scale, make_synthetic, train_test_split, Dataset, FriedmanFunction, NoiseFamily,
    Registry, Standardizer,
};
use crate::error::{Error, Result};
use crate::kernel::{gram_with, GaussianKernel, GramMatrix};
use crate::loss::{ClipBound, LossKind, ScaledLoss, DEFAULT_FLOOR_EPS};
use crate::par::Exec;
use crate::seed::{derive_seed, stream_rng};
use crate::solver::{fit_gram, predict_from_cross, FittedModel, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Klad,
    Kbhr,
    Mccr,
    Kcrr,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [Estimator::Klad, Estimator::Kbhr, Estimator::Mccr, Estimator::Kcrr];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Klad => "KLAD",
            Estimator::Kbhr => "KBHR",
            Estimator::Mccr => "MCCR",
            Estimator::Kcrr => "KCRR",
        }
    }

    pub fn loss_kind(self) -> LossKind {
        match self {
            Estimator::Klad => LossKind::Absolute,
            Estimator::Kbhr => LossKind::Huber,
            Estimator::Mccr => LossKind::Correntropy,
            Estimator::Kcrr => LossKind::Cauchy,
        }
    }

    /// KBHR standardizes features only; the others also standardize the
    /// response.
    pub fn standardizes_response(self) -> bool {
        self != Estimator::Kbhr
    }

    pub fn clips(self) -> bool {
        self == Estimator::Kcrr
    }

    /// Loss scales σ searched for this estimator; `[None]` for the
    /// scale-free absolute loss.
    pub fn scales(self, grid: &GridSpec) -> Vec<Option<f64>> {
        match self {
            Estimator::Klad => vec![None],
            Estimator::Kbhr => grid.huber_sigmas.iter().map(|&s| Some(s)).collect(),
            Estimator::Mccr | Estimator::Kcrr => grid.sigma2s.iter().map(|&s2| Some(s2.sqrt())).collect(),
        }
    }

    pub fn loss(self, sigma: Option<f64>) -> Result<ScaledLoss> {
        match sigma {
            None if self == Estimator::Klad => Ok(ScaledLoss::absolute()),
            Some(s) if self != Estimator::Klad => ScaledLoss::new(self.loss_kind(), s),
            _ => Err(Error::InvalidParameter(format!("bad scale {sigma:?} for {}", self.name()))),
        }
    }
}

fn powers(base: f64, from: i32, to: i32) -> Vec<f64> {
    if from <= to {
        (from..=to).map(|e| base.powi(e)).collect()
    } else {
        (to..=from).rev().map(|e| base.powi(e)).collect()
    }
}

/// Hyperparameter grids. `sigma2s` holds squared scales for the Cauchy and
/// correntropy losses; `huber_sigmas` holds Huber thresholds.
///
/// `gammas` are kernel precisions: a grid value `g` gives
/// `k(x, x') = exp(-g ‖x - x'‖²)`, i.e. bandwidth `1/√g`. See [`grid_kernel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lambdas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub sigma2s: Vec<f64>,
    pub huber_sigmas: Vec<f64>,
}

impl GridSpec {
    pub const HUBER_SIGMAS: [f64; 10] = [1.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 300.0, 500.0, 1000.0];

    /// Full synthetic grids: λ ∈ {1e-1..1e-5}, γ ∈ {2⁻¹..2⁻⁵},
    /// σ² ∈ {1e-1..1e-8}.
    pub fn synthetic() -> Self {
        Self {
            lambdas: powers(10.0, -1, -5),
            gammas: powers(2.0, -1, -5),
            sigma2s: powers(10.0, -1, -8),
            huber_sigmas: Self::HUBER_SIGMAS.to_vec(),
        }
    }

    /// Real-data grids: γ extends to 2⁻⁶ and σ² ∈ {1e-3..10}.
    pub fn real() -> Self {
        Self {
            gammas: powers(2.0, -1, -6),
            sigma2s: powers(10.0, -3, 1),
            ..Self::synthetic()
        }
    }

    /// Three values per axis, used for quick runs.
    pub fn reduced() -> Self {
        Self {
            lambdas: vec![1e-2, 1e-3, 1e-4],
            gammas: vec![0.5, 0.125, 0.03125],
            sigma2s: vec![1e-1, 1e-3, 1e-5],
            huber_sigmas: Self::HUBER_SIGMAS.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambdas", &self.lambdas),
            ("gammas", &self.gammas),
            ("sigma2s", &self.sigma2s),
            ("huber_sigmas", &self.huber_sigmas),
        ] {
            if v.is_empty() {
                return Err(Error::Config(format!("grid `{name}` is empty")));
            }
            if v.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return Err(Error::Config(format!("grid `{name}` must hold positive finite values")));
            }
        }
        Ok(())
    }

    /// Grid points for `est`, with λ varying slowest and the loss scale
    /// fastest.
    pub fn points(&self, est: Estimator) -> Vec<GridPoint> {
        let scales = est.scales(self);
        let mut out = Vec::new();
        for &lambda in &self.lambdas {
            for &gamma in &self.gammas {
                for &sigma in &scales {
                    out.push(GridPoint { lambda, gamma, sigma });
                }
            }
        }
        out
    }
}

/// Kernel for a grid `gamma` value, read as the precision `g` in
/// `exp(-g ‖x - x'‖²)`.
pub fn grid_kernel(g: f64) -> Result<GaussianKernel> {
    if !(g > 0.0 && g.is_finite()) {
        return Err(Error::InvalidParameter(format!("grid gamma must be finite and positive, got {g}")));
    }
    GaussianKernel::new(g.sqrt().recip())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lambda: f64,
    pub gamma: f64,
    /// Loss scale σ (not squared); absent for the absolute loss.
    pub sigma: Option<f64>,
}

/// IRLS stopping rule shared by every fit in a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub floor_eps: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { max_iters: 100, rel_tol: 1e-8, floor_eps: DEFAULT_FLOOR_EPS }
    }
}

impl SolverSettings {
    pub fn config(&self, est: Estimator, point: &GridPoint, clip: Option<ClipBound>) -> Result<SolverConfig> {
        Ok(SolverConfig::new(est.loss(point.sigma)?, point.lambda)?
            .with_clip(clip)
            .with_max_iters(self.max_iters)
            .with_rel_tol(self.rel_tol)
            .with_floor_eps(self.floor_eps))
    }
}

/// Shuffles `0..n` and cuts it into `k` folds whose sizes differ by at most
/// one (larger folds first).
pub fn kfold_split<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 folds, got {k}")));
    }
    if n < k {
        return Err(Error::InvalidParameter(format!("cannot split {n} rows into {k} folds")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(idx[start..start + len].to_vec());
        start += len;
    }
    Ok(folds)
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), got: pred.len() });
    }
    if truth.is_empty() {
        return Err(Error::Empty("test set"));
    }
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / truth.len() as f64)
}

/// `Σ(t - p)² / Σ(t - mean t)²`.
pub fn rsse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), got: pred.len() });
    }
    if truth.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let den: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    if den == 0.0 {
        return Err(Error::DegenerateSignal("test truths have zero variance".into()));
    }
    Ok(pred.iter().zip(truth).map(|(p, t)| (t - p).powi(2)).sum::<f64>() / den)
}

/// Test MAE against noise-free targets when present, else responses.
pub fn test_mae(model: &FittedModel, test: &Dataset) -> Result<f64> {
    mae(&model.predict(test.x.as_ref())?, test.truth())
}

pub fn test_rsse(model: &FittedModel, test: &Dataset) -> Result<f64> {
    rsse(&model.predict(test.x.as_ref())?, test.truth())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridScore {
    pub point: GridPoint,
    pub fold_maes: Vec<f64>,
    /// `None` when a fold fit failed numerically.
    pub mean_mae: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CVReport {
    pub estimator: Estimator,
    pub seed: u64,
    pub scores: Vec<GridScore>,
    pub best_index: usize,
    pub best: GridPoint,
    pub best_mae: f64,
    pub invalid_count: usize,
}

fn clip_for(est: Estimator, y: impl Iterator<Item = f64>) -> Result<Option<ClipBound>> {
    if !est.clips() {
        return Ok(None);
    }
    let m = y.fold(0.0f64, |m, v| m.max(v.abs()));
    ClipBound::new(m.max(f64::MIN_POSITIVE)).map(Some)
}

/// Cross-validation options.
#[derive(Debug, Clone, Copy, Default)]
pub struct CvOptions {
    pub exec: Exec,
    pub solver: SolverSettings,
}

/// Scores every grid point by k-fold CV-MAE and returns the argmin, ties
/// going to the earliest point in grid order.
///
/// The training set is standardized once; fold models are fitted in the
/// standardized space, and held-out MAE is measured against the observed
/// responses in original units. Folds come from `seed`.
pub fn cv_select(
    est: Estimator,
    grid: &GridSpec,
    train: &Dataset,
    k: usize,
    seed: u64,
    opts: &CvOptions,
) -> Result<CVReport> {
    grid.validate()?;
    let folds = kfold_split(train.n(), k, &mut stream_rng(seed, &[]))?;
    let st = Standardizer::fit(train, est.standardizes_response())?;
    let z = st.apply(train)?;

    let mut in_fold = vec![0usize; train.n()];
    for (f, fold) in folds.iter().enumerate() {
        fold.iter().for_each(|&i| in_fold[i] = f);
    }
    let train_idx: Vec<Vec<usize>> = (0..k)
        .map(|f| (0..train.n()).filter(|&i| in_fold[i] != f).collect())
        .collect();

    let points = grid.points(est);
    let n_scales = est.scales(grid).len();
    let grams: Vec<GramMatrix> = grid
        .gammas
        .iter()
        .map(|&g| gram_with(&grid_kernel(g)?, z.x.as_ref(), opts.exec))
        .collect::<Result<_>>()?;

    let tasks = points.len() * k;
    let results: Vec<Result<Option<f64>>> = opts.exec.map_range(tasks, |t| {
        let (p, f) = (t / k, t % k);
        let gi = (p / n_scales) % grid.gammas.len();
        let (tr, te) = (&train_idx[f], &folds[f]);
        let y_tr: Vec<f64> = tr.iter().map(|&i| z.y[i]).collect();
        let clip = clip_for(est, y_tr.iter().copied())?;
        let cfg = opts.solver.config(est, &points[p], clip)?;
        let fit = match fit_gram(&cfg, &grams[gi].principal(tr), &y_tr) {
            Ok(fit) => fit,
            Err(e) if e.is_numerical() => return Ok(None),
            Err(e) => return Err(e),
        };
        let cross = grams[gi].block(te, tr);
        let pred = predict_from_cross(cross.as_ref(), &fit.coef, fit.intercept, clip);
        let err = te
            .iter()
            .zip(&pred)
            .map(|(&i, &p)| (train.y[i] - st.inverse_response(p)).abs())
            .sum::<f64>()
            / te.len() as f64;
        Ok(err.is_finite().then_some(err))
    });

    let mut scores = Vec::with_capacity(points.len());
    let mut it = results.into_iter();
    for point in &points {
        let fold: Vec<Option<f64>> = it.by_ref().take(k).collect::<Result<_>>()?;
        let valid = fold.iter().all(Option::is_some);
        let fold_maes: Vec<f64> = fold.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
        let mean_mae = valid.then(|| fold_maes.iter().sum::<f64>() / k as f64);
        scores.push(GridScore { point: *point, fold_maes, mean_mae });
    }
    let invalid_count = scores.iter().filter(|s| s.mean_mae.is_none()).count();
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        if let Some(m) = s.mean_mae {
            if best.is_none_or(|(_, b)| m < b) {
                best = Some((i, m));
            }
        }
    }
    let (best_index, best_mae) = best.ok_or_else(|| Error::NoValidGridPoint(est.name().into()))?;
    Ok(CVReport {
        estimator: est,
        seed,
        best: scores[best_index].point,
        scores,
        best_index,
        best_mae,
        invalid_count,
    })
}

/// Fits `est` at `point` on the full training set, with the same
/// preprocessing as in [`cv_select`]. The returned model predicts in
/// original units.
pub fn fit_estimator(
    est: Estimator,
    point: &GridPoint,
    train: &Dataset,
    settings: &SolverSettings,
    exec: Exec,
) -> Result<FittedModel> {
    let st = Standardizer::fit(train, est.standardizes_response())?;
    let z = st.apply(train)?;
    let clip = clip_for(est, z.y.iter().copied())?;
    let cfg = settings.config(est, point, clip)?;
    let kern = grid_kernel(point.gamma)?;
    let k = gram_with(&kern, z.x.as_ref(), exec)?;
    let res = fit_gram(&cfg, &k, &z.y)?;
    Ok(FittedModel {
        kern,
        x_train: z.x,
        coef: res.coef,
        intercept: res.intercept,
        clip,
        standardizer: None,
        iterations_used: res.iterations_used,
        final_objective: res.final_objective,
        state: res.state,
    }
    .with_standardizer(st))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticPlan {
    pub functions: Vec<FriedmanFunction>,
    pub noises: Vec<NoiseFamily>,
    #[serde(default = "default_n")]
    pub n_train: usize,
    #[serde(default = "default_n")]
    pub n_test: usize,
    #[serde(default = "default_mc")]
    pub mc_samples: usize,
}

fn default_n() -> usize {
    1000
}

fn default_mc() -> usize {
    1_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RealPlan {
    /// Dataset registry file; relative to the plan file when relative.
    pub registry: PathBuf,
    pub datasets: Vec<String>,
    #[serde(default = "default_frac")]
    pub train_fraction: f64,
}

fn default_frac() -> f64 {
    0.7
}

fn default_reps() -> usize {
    10
}

fn default_folds() -> usize {
    10
}

fn default_seed() -> u64 {
    42
}

/// Declarative benchmark description, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Plan {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "all_estimators")]
    pub estimators: Vec<Estimator>,
    /// Defaults to the synthetic or real grids depending on the suite.
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub solver: SolverSettings,
    pub synthetic: Option<SyntheticPlan>,
    pub real: Option<RealPlan>,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn all_estimators() -> Vec<Estimator> {
    Estimator::ALL.to_vec()
}

impl Plan {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let plan: Plan = toml::from_str(text).map_err(|e| Error::Config(format!("plan: {e}")))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io { path: path.to_path_buf(), message: e.to_string() })?;
        let mut plan = Self::from_toml_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        plan.base_dir = path.parent().map(Path::to_path_buf);
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Config("reps must be at least 1".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config("folds must be at least 2".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("no estimators selected".into()));
        }
        if let Some(g) = &self.grid {
            g.validate()?;
        }
        if let Some(s) = &self.synthetic {
            if s.functions.is_empty() || s.noises.is_empty() {
                return Err(Error::Config("synthetic plan needs functions and noises".into()));
            }
            if s.n_train < self.folds || s.n_test == 0 {
                return Err(Error::Config("synthetic sample sizes too small".into()));
            }
        }
        if let Some(r) = &self.real {
            if !(r.train_fraction > 0.0 && r.train_fraction < 1.0) {
                return Err(Error::Config("train_fraction must be in (0, 1)".into()));
            }
        }
        Ok(())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(b) if p.is_relative() => b.join(p),
            _ => p.to_path_buf(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation over `√reps`; zero for a single rep.
    pub stderr: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let stderr = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
        };
        Some(Self { mean, stderr })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepResult {
    pub rep: usize,
    pub selected: Option<GridPoint>,
    pub cv_mae: Option<f64>,
    pub invalid_points: usize,
    pub test_mae: Option<f64>,
    pub test_rsse: Option<f64>,
    pub error: Option<String>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorResult {
    pub estimator: Estimator,
    pub mae: Option<Summary>,
    pub rsse: Option<Summary>,
    pub reps: Vec<RepResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellReport {
    pub dataset: String,
    pub noise: String,
    /// Calibrated noise scale for synthetic cells.
    pub noise_scale: Option<f64>,
    pub results: Vec<EstimatorResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkReport {
    pub seed: u64,
    pub reps: usize,
    pub folds: usize,
    pub cells: Vec<CellReport>,
    /// Preprocessing and clipping conventions of the run.
    pub notes: Vec<String>,
}

impl BenchmarkReport {
    pub fn result(&self, dataset: &str, noise: &str, est: Estimator) -> Option<&EstimatorResult> {
        self.cells
            .iter()
            .find(|c| c.dataset == dataset && c.noise == noise)?
            .results
            .iter()
            .find(|r| r.estimator == est)
    }
}

/// Stable 64-bit tag of a name, used to key random streams.
fn tag(name: &str) -> u64 {
    name.bytes()
        .fold(0xCBF2_9CE4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01B3))
}

const STREAM_CALIBRATION: u64 = 1;
const STREAM_DATA: u64 = 2;
const STREAM_FOLDS: u64 = 3;

fn run_cell(
    plan: &Plan,
    grid: &GridSpec,
    cell_key: [u64; 2],
    mut data: impl FnMut(usize) -> Result<(Dataset, Dataset)>,
    exec: Exec,
) -> Result<Vec<EstimatorResult>> {
    let mut per_est: Vec<Vec<RepResult>> = vec![Vec::new(); plan.estimators.len()];
    for rep in 0..plan.reps {
        let (train, test) = data(rep)?;
        let fold_seed = derive_seed(plan.seed, &[cell_key[0], cell_key[1], rep as u64, STREAM_FOLDS]);
        for (e, &est) in plan.estimators.iter().enumerate() {
            let start = Instant::now();
            let opts = CvOptions { exec, solver: plan.solver };
            let outcome = cv_select(est, grid, &train, plan.folds, fold_seed, &opts).and_then(|cv| {
                let model = fit_estimator(est, &cv.best, &train, &plan.solver, exec)?;
                let pred = model.predict(test.x.as_ref())?;
                Ok((cv, mae(&pred, test.truth())?, rsse(&pred, test.truth()).ok()))
            });
            let seconds = start.elapsed().as_secs_f64();
            per_est[e].push(match outcome {
                Ok((cv, m, r)) => RepResult {
                    rep,
                    selected: Some(cv.best),
                    cv_mae: Some(cv.best_mae),
                    invalid_points: cv.invalid_count,
                    test_mae: Some(m),
                    test_rsse: r,
                    error: None,
                    seconds,
                },
                Err(err) if err.is_numerical() => RepResult {
                    rep,
                    selected: None,
                    cv_mae: None,
                    invalid_points: 0,
                    test_mae: None,
                    test_rsse: None,
                    error: Some(err.to_string()),
                    seconds,
                },
                Err(err) => return Err(err),
            });
        }
    }
    Ok(plan
        .estimators
        .iter()
        .zip(per_est)
        .map(|(&estimator, reps)| {
            let maes: Vec<f64> = reps.iter().filter_map(|r| r.test_mae).collect();
            let rsses: Vec<f64> = reps.iter().filter_map(|r| r.test_rsse).collect();
            EstimatorResult { estimator, mae: Summary::of(&maes), rsse: Summary::of(&rsses), reps }
        })
        .collect())
}

fn base_notes(plan: &Plan) -> Vec<String> {
    vec![
        "standardization statistics are computed once per training split".into(),
        "CV-MAE is measured against observed responses in original units".into(),
        "KCRR clipping bound M = max |standardized training response|".into(),
        format!(
            "IRLS: max_iters {}, rel_tol {:e}, floor_eps {:e}",
            plan.solver.max_iters, plan.solver.rel_tol, plan.solver.floor_eps
        ),
    ]
}

/// Runs the synthetic suite of `plan`: for every function and noise family,
/// calibrates the noise scale, then per repetition draws fresh data, selects
/// hyperparameters by CV and scores the refit on the noise-free test set.
pub fn run_synthetic(plan: &Plan, exec: Exec) -> Result<BenchmarkReport> {
    plan.validate()?;
    let syn = plan
        .synthetic
        .as_ref()
        .ok_or_else(|| Error::Config("plan has no [synthetic] section".into()))?;
    let grid = plan.grid.clone().unwrap_or_else(GridSpec::synthetic);
    let mut cells = Vec::new();
    for &f in &syn.functions {
        for &fam in &syn.noises {
            let key = [tag(f.name()), tag(fam.name())];
            let mut cal_rng = stream_rng(plan.seed, &[key[0], key[1], STREAM_CALIBRATION]);
            let noise = calibrate_noise_scale(fam, f, &mut cal_rng, syn.mc_samples)?;
            let results = run_cell(
                plan,
                &grid,
                key,
                |rep| {
                    let mut rng = stream_rng(plan.seed, &[key[0], key[1], rep as u64, STREAM_DATA]);
                    make_synthetic(f, &noise, syn.n_train, syn.n_test, &mut rng)
                },
                exec,
            )?;
            cells.push(CellReport {
                dataset: f.name().into(),
                noise: fam.name().into(),
                noise_scale: Some(noise.scale),
                results,
            });
        }
    }
    Ok(BenchmarkReport { seed: plan.seed, reps: plan.reps, folds: plan.folds, cells, notes: base_notes(plan) })
}

/// Runs the real-data suite: repeated random train/test splits of each
/// registered dataset.
pub fn run_real(plan: &Plan, exec: Exec) -> Result<BenchmarkReport> {
    plan.validate()?;
    let real = plan.real.as_ref().ok_or_else(|| Error::Config("plan has no [real] section".into()))?;
    let registry = Registry::load(&plan.resolve(&real.registry))?;
    let grid = plan.grid.clone().unwrap_or_else(GridSpec::real);
    let mut cells = Vec::new();
    for name in &real.datasets {
        let ds = registry.load_dataset(name)?;
        let key = [tag(name), tag("real")];
        let results = run_cell(
            plan,
            &grid,
            key,
            |rep| {
                let mut rng = stream_rng(plan.seed, &[key[0], key[1], rep as u64, STREAM_DATA]);
                train_test_split(&ds, real.train_fraction, &mut rng)
            },
            exec,
        )?;
        cells.push(CellReport { dataset: name.clone(), noise: "real".into(), noise_scale: None, results });
    }
    let mut notes = base_notes(plan);
    notes.push(format!("train fraction {}", real.train_fraction));
    Ok(BenchmarkReport { seed: plan.seed, reps: plan.reps, folds: plan.folds, cells, notes })
}

/// Runs every suite present in the plan and concatenates the cells.
pub fn run_benchmark(plan: &Plan, exec: Exec) -> Result<BenchmarkReport> {
    let mut report: Option<BenchmarkReport> = None;
    for part in [
        plan.synthetic.as_ref().map(|_| run_synthetic(plan, exec)),
        plan.real.as_ref().map(|_| run_real(plan, exec)),
    ]
    .into_iter()
    .flatten()
    {
        let part = part?;
        match &mut report {
            None => report = Some(part),
            Some(r) => {
                r.cells.extend(part.cells);
                for n in part.notes {
                    if !r.notes.contains(&n) {
                        r.notes.push(n);
                    }
                }
            }
        }
    }
    report.ok_or_else(|| Error::Config("plan has neither [synthetic] nor [real] section".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Mae,
    Rsse,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Mae => "mae",
            Metric::Rsse => "rsse",
        }
    }
}

/// CSV with columns `dataset,noise,estimator,metric,mean,stderr`. Missing
/// summaries (every repetition failed) are written as `NaN`.
pub fn metric_csv(report: &BenchmarkReport, metric: Metric) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Config(format!("csv encoding: {e}"));
    w.write_record(["dataset", "noise", "estimator", "metric", "mean", "stderr"]).map_err(io)?;
    for cell in &report.cells {
        for r in &cell.results {
            let s = match metric {
                Metric::Mae => r.mae,
                Metric::Rsse => r.rsse,
            };
            let (m, e) = s.map_or((f64::NAN, f64::NAN), |s| (s.mean, s.stderr));
            w.write_record([
                cell.dataset.as_str(),
                cell.noise.as_str(),
                r.estimator.name(),
                metric.name(),
                &m.to_string(),
                &e.to_string(),
            ])
            .map_err(io)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv encoding: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
