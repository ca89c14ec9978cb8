//! Synthetic Friedman data with calibrated noise, CSV ingestion, the real
//! dataset registry, standardization and train/test splitting.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use faer::{Mat, MatRef};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta;
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};

/// Shape of the symmetric Pareto noise.
pub const PARETO_SHAPE: f64 = 2.01;

/// Smallest Monte-Carlo size accepted by [`calibrate_noise_scale`].
pub const MIN_MC_SAMPLES: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FriedmanFunction {
    I,
    II,
    III,
}

impl FriedmanFunction {
    pub fn input_dim(self) -> usize {
        match self {
            FriedmanFunction::I => 5,
            _ => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FriedmanFunction::I => "friedman1",
            FriedmanFunction::II => "friedman2",
            FriedmanFunction::III => "friedman3",
        }
    }

    /// Per-coordinate sampling intervals.
    pub fn domain(self) -> Vec<(f64, f64)> {
        match self {
            FriedmanFunction::I => vec![(0.0, 1.0); 5],
            _ => vec![(0.0, 100.0), (40.0 * PI, 500.0 * PI), (0.0, 1.0), (1.0, 11.0)],
        }
    }

    /// Draws `n` inputs uniformly from the domain, row by row.
    pub fn sample_inputs<R: Rng + ?Sized>(self, rng: &mut R, n: usize) -> Mat<f64> {
        let dom = self.domain();
        let d = dom.len();
        let mut raw = Vec::with_capacity(n * d);
        for _ in 0..n {
            for &(lo, hi) in &dom {
                raw.push(lo + (hi - lo) * rng.random::<f64>());
            }
        }
        Mat::from_fn(n, d, |i, j| raw[i * d + j])
    }
}

/// Evaluates a Friedman function. Variant I has no `π` inside the sine.
pub fn friedman_eval(f: FriedmanFunction, x: &[f64]) -> Result<f64> {
    let d = f.input_dim();
    if x.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: x.len() });
    }
    match f {
        FriedmanFunction::I => Ok(10.0 * (x[0] * x[1]).sin()
            + 20.0 * (x[2] - 0.5).powi(2)
            + 10.0 * x[3]
            + 5.0 * x[4]),
        FriedmanFunction::II | FriedmanFunction::III => {
            let den = x[1] * x[3];
            if den == 0.0 {
                return Err(Error::Domain("x2 * x4 must be nonzero".into()));
            }
            let inner = x[1] * x[2] - 1.0 / den;
            if f == FriedmanFunction::II {
                Ok(x[0].hypot(inner))
            } else {
                if x[0] == 0.0 {
                    return Err(Error::Domain("x1 must be nonzero".into()));
                }
                Ok((inner / x[0]).atan())
            }
        }
    }
}

fn eval_rows(f: FriedmanFunction, x: MatRef<'_, f64>) -> Result<Vec<f64>> {
    let mut row = vec![0.0; x.ncols()];
    (0..x.nrows())
        .map(|i| {
            row.iter_mut().enumerate().for_each(|(j, v)| *v = x[(i, j)]);
            friedman_eval(f, &row)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseFamily {
    Gaussian,
    Cauchy,
    Pareto,
}

impl NoiseFamily {
    pub fn name(self) -> &'static str {
        match self {
            NoiseFamily::Gaussian => "gaussian",
            NoiseFamily::Cauchy => "cauchy",
            NoiseFamily::Pareto => "pareto",
        }
    }

    /// Moment order used to define the signal-to-noise ratio.
    pub fn snr_order(self) -> f64 {
        match self {
            NoiseFamily::Gaussian => 2.0,
            NoiseFamily::Cauchy => 0.5,
            NoiseFamily::Pareto => 1.0 / 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub family: NoiseFamily,
    pub scale: f64,
    /// Only meaningful for Pareto noise.
    pub shape: f64,
}

impl NoiseSpec {
    pub fn new(family: NoiseFamily, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParameter(format!("noise scale must be positive, got {scale}")));
        }
        Ok(Self { family, scale, shape: PARETO_SHAPE })
    }

    /// `E|ε|^p` in closed form, or `None` when the moment is infinite.
    ///
    /// Gaussian: `s^p 2^{p/2} Γ((p+1)/2)/√π`. Cauchy: `s^p / cos(πp/2)` for
    /// `p < 1`. Pareto: `(s/ζ)^p (1/ζ) B(p+1, 1/ζ - p)` for `p < 1/ζ`.
    pub fn abs_moment(&self, p: f64) -> Option<f64> {
        let s = self.scale;
        match self.family {
            NoiseFamily::Gaussian => {
                Some(s.powf(p) * 2f64.powf(p / 2.0) * gamma((p + 1.0) / 2.0) / PI.sqrt())
            }
            NoiseFamily::Cauchy => (p < 1.0).then(|| s.powf(p) / (PI * p / 2.0).cos()),
            NoiseFamily::Pareto => {
                let z = self.shape;
                (p < 1.0 / z).then(|| (s / z).powf(p) / z * beta(p + 1.0, 1.0 / z - p))
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let s = self.scale;
        match self.family {
            NoiseFamily::Gaussian => s * rng.sample::<f64, _>(StandardNormal),
            NoiseFamily::Cauchy => s * (PI * (rng.random::<f64>() - 0.5)).tan(),
            NoiseFamily::Pareto => {
                let z = self.shape;
                let u: f64 = rng.random();
                let mag = (s / z) * ((-z * (-u).ln_1p()).exp_m1());
                if rng.random::<bool>() { mag } else { -mag }
            }
        }
    }
}

pub fn sample_noise<R: Rng + ?Sized>(spec: &NoiseSpec, rng: &mut R, count: usize) -> Vec<f64> {
    (0..count).map(|_| spec.sample(rng)).collect()
}

/// Solves for the noise scale giving a signal-to-noise ratio of 3 against
/// the given sample of signal values.
///
/// Gaussian: `sd(f)/sd(ε) = 3`. Cauchy: `(E|f|^{1/2} / E|ε|^{1/2})² = 3`.
/// Pareto: `(E|f|^{1/3} / E|ε|^{1/3})³ = 3`.
pub fn scale_from_signal(family: NoiseFamily, signal: &[f64]) -> Result<NoiseSpec> {
    if signal.len() < 2 {
        return Err(Error::Empty("signal sample"));
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("signal sample"));
    }
    let n = signal.len() as f64;
    let s = match family {
        NoiseFamily::Gaussian => {
            let mean = signal.iter().sum::<f64>() / n;
            let var = signal.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            var.sqrt() / 3.0
        }
        NoiseFamily::Cauchy | NoiseFamily::Pareto => {
            let p = family.snr_order();
            let m = signal.iter().map(|v| v.abs().powf(p)).sum::<f64>() / n;
            // The noise moment is homogeneous: E|ε|^p = s^p · E|ε₁|^p.
            let unit = NoiseSpec::new(family, 1.0)?.abs_moment(p).expect("finite moment");
            (m / unit).powf(1.0 / p) / 3.0
        }
    };
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::DegenerateSignal(format!(
            "signal gives noise scale {s}; {} calibration needs a nonconstant, nonzero signal",
            family.name()
        )));
    }
    NoiseSpec::new(family, s)
}

/// Calibrates the noise scale for `f` by Monte Carlo over its input
/// distribution.
pub fn calibrate_noise_scale<R: Rng + ?Sized>(
    family: NoiseFamily,
    f: FriedmanFunction,
    rng: &mut R,
    mc_samples: usize,
) -> Result<NoiseSpec> {
    if mc_samples < MIN_MC_SAMPLES {
        return Err(Error::InvalidParameter(format!(
            "mc_samples must be at least {MIN_MC_SAMPLES}, got {mc_samples}"
        )));
    }
    let dom = f.domain();
    let mut x = vec![0.0; dom.len()];
    let mut signal = Vec::with_capacity(mc_samples);
    for _ in 0..mc_samples {
        for (v, &(lo, hi)) in x.iter_mut().zip(&dom) {
            *v = lo + (hi - lo) * rng.random::<f64>();
        }
        signal.push(friedman_eval(f, &x)?);
    }
    scale_from_signal(family, &signal)
}

#[derive(Debug, Clone)]
pub struct Dataset {
    /// `n × d` features.
    pub x: Mat<f64>,
    pub y: Vec<f64>,
    /// Noise-free targets, when known.
    pub f_true: Option<Vec<f64>>,
    pub feature_names: Vec<String>,
    pub target_name: String,
}

impl Dataset {
    pub fn new(x: Mat<f64>, y: Vec<f64>, f_true: Option<Vec<f64>>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch { expected: x.nrows(), got: y.len() });
        }
        if let Some(f) = &f_true {
            if f.len() != y.len() {
                return Err(Error::DimensionMismatch { expected: y.len(), got: f.len() });
            }
        }
        let feature_names = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
        Ok(Self { x, y, f_true, feature_names, target_name: "y".into() })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: Mat::from_fn(idx.len(), self.d(), |i, j| self.x[(idx[i], j)]),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            f_true: self.f_true.as_ref().map(|f| idx.iter().map(|&i| f[i]).collect()),
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
        }
    }

    /// Noise-free targets if present, else the observed responses.
    pub fn truth(&self) -> &[f64] {
        self.f_true.as_deref().unwrap_or(&self.y)
    }
}

/// Noisy training set and noise-free test set drawn from `f`.
pub fn make_synthetic<R: Rng + ?Sized>(
    f: FriedmanFunction,
    noise: &NoiseSpec,
    n_train: usize,
    n_test: usize,
    rng: &mut R,
) -> Result<(Dataset, Dataset)> {
    if n_train == 0 || n_test == 0 {
        return Err(Error::Empty("synthetic sample sizes must be positive"));
    }
    let x_tr = f.sample_inputs(rng, n_train);
    let f_tr = eval_rows(f, x_tr.as_ref())?;
    let eps = sample_noise(noise, rng, n_train);
    let y_tr = f_tr.iter().zip(&eps).map(|(a, b)| a + b).collect();
    let x_te = f.sample_inputs(rng, n_test);
    let f_te = eval_rows(f, x_te.as_ref())?;
    Ok((
        Dataset::new(x_tr, y_tr, Some(f_tr))?,
        Dataset::new(x_te, f_te.clone(), Some(f_te))?,
    ))
}

/// Reads a delimited file with a header row. Every column other than
/// `target` becomes a feature.
pub fn load_csv(path: &Path, target: &str, delimiter: u8) -> Result<Dataset> {
    let io = |e: &dyn std::fmt::Display| Error::Io { path: path.to_path_buf(), message: e.to_string() };
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .from_path(path)
        .map_err(|e| io(&e))?;
    let header: Vec<String> = rdr.headers().map_err(|e| io(&e))?.iter().map(|h| h.trim().to_string()).collect();
    let tcol = header.iter().position(|h| h == target).ok_or_else(|| Error::MissingColumn {
        path: path.to_path_buf(),
        column: target.to_string(),
    })?;
    let d = header.len() - 1;
    let mut feats = Vec::new();
    let mut y = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Parse { path: path.to_path_buf(), line, message: e.to_string() }
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("column `{}`: `{cell}` is not a number", header[j]),
            })?;
            if j == tcol { y.push(v) } else { feats.push(v) }
        }
    }
    if y.is_empty() {
        return Err(Error::Empty("csv file has no data rows"));
    }
    let n = y.len();
    let mut ds = Dataset::new(Mat::from_fn(n, d, |i, j| feats[i * d + j]), y, None)?;
    ds.feature_names = header.iter().enumerate().filter(|&(j, _)| j != tcol).map(|(_, h)| h.clone()).collect();
    ds.target_name = target.to_string();
    Ok(ds)
}

/// Writes features followed by the target column.
pub fn write_csv(path: &Path, ds: &Dataset, delimiter: u8) -> Result<()> {
    let io = |e: &dyn std::fmt::Display| Error::Io { path: path.to_path_buf(), message: e.to_string() };
    let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_path(path).map_err(|e| io(&e))?;
    let mut header = ds.feature_names.clone();
    header.push(ds.target_name.clone());
    w.write_record(&header).map_err(|e| io(&e))?;
    for i in 0..ds.n() {
        let mut row: Vec<String> = (0..ds.d()).map(|j| ds.x[(i, j)].to_string()).collect();
        row.push(ds.y[i].to_string());
        w.write_record(&row).map_err(|e| io(&e))?;
    }
    w.flush().map_err(|e| io(&e))
}

/// Published `(n, d)` of the known real datasets.
pub fn expected_shape(name: &str) -> Option<(usize, usize)> {
    match name.to_ascii_lowercase().as_str() {
        "computer" => Some((209, 10)),
        "facebook" => Some((500, 17)),
        "housing" => Some((506, 13)),
        "yacht" => Some((308, 7)),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub path: PathBuf,
    pub target: String,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
}

fn default_delimiter() -> char {
    ','
}

/// Named real datasets, read from TOML:
///
/// ```toml
/// [datasets.housing]
/// path = "housing.csv"
/// target = "medv"
/// ```
///
/// Relative paths are resolved against the registry file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    pub datasets: BTreeMap<String, RegistryEntry>,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Registry {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("dataset registry: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io { path: path.to_path_buf(), message: e.to_string() })?;
        let mut reg = Self::from_toml_str(&text)?;
        reg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(reg)
    }

    /// Loads a registered dataset and checks its shape against the
    /// published one when the name is known.
    pub fn load_dataset(&self, name: &str) -> Result<Dataset> {
        let entry = self
            .datasets
            .get(name)
            .ok_or_else(|| Error::Config(format!("dataset `{name}` is not in the registry")))?;
        let path = match &self.base_dir {
            Some(base) if entry.path.is_relative() => base.join(&entry.path),
            _ => entry.path.clone(),
        };
        if !entry.delimiter.is_ascii() {
            return Err(Error::Config(format!("dataset `{name}`: delimiter must be ASCII")));
        }
        let ds = load_csv(&path, &entry.target, entry.delimiter as u8)?;
        if let Some((n, d)) = expected_shape(name) {
            if (ds.n(), ds.d()) != (n, d) {
                return Err(Error::Config(format!(
                    "dataset `{name}` at {}: expected {n} rows and {d} features, found {} and {}",
                    path.display(),
                    ds.n(),
                    ds.d()
                )));
            }
        }
        Ok(ds)
    }
}

/// Shuffled split with `round(frac · n)` training rows.
pub fn train_test_split<R: Rng + ?Sized>(ds: &Dataset, frac: f64, rng: &mut R) -> Result<(Dataset, Dataset)> {
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::InvalidParameter(format!("train fraction must be in (0, 1), got {frac}")));
    }
    let n = ds.n();
    let n_tr = ((frac * n as f64).round() as usize).clamp(1, n.saturating_sub(1));
    if n < 2 {
        return Err(Error::Empty("need at least two rows to split"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    Ok((ds.subset(&idx[..n_tr]), ds.subset(&idx[n_tr..])))
}

/// Affine standardization of features and, optionally, the response.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub feature_means: Vec<f64>,
    pub feature_scales: Vec<f64>,
    pub response_mean: Option<f64>,
    pub response_scale: Option<f64>,
    /// Columns (and the response, as index `d`) that were constant and kept
    /// scale 1.
    pub constant_columns: Vec<usize>,
}

fn mean_sd(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    let var = v.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl Standardizer {
    /// Column means and sample standard deviations of `ds`.
    pub fn fit(ds: &Dataset, include_response: bool) -> Result<Self> {
        if ds.n() < 2 {
            return Err(Error::InvalidParameter("standardizing needs at least two rows".into()));
        }
        let d = ds.d();
        let mut constant_columns = Vec::new();
        let mut feature_means = Vec::with_capacity(d);
        let mut feature_scales = Vec::with_capacity(d);
        for j in 0..d {
            let (m, s) = mean_sd((0..ds.n()).map(|i| ds.x[(i, j)]));
            feature_means.push(m);
            if s > 0.0 && s.is_finite() {
                feature_scales.push(s);
            } else {
                feature_scales.push(1.0);
                constant_columns.push(j);
            }
        }
        let (response_mean, response_scale) = if include_response {
            let (m, s) = mean_sd(ds.y.iter().copied());
            let s = if s > 0.0 && s.is_finite() {
                s
            } else {
                constant_columns.push(d);
                1.0
            };
            (Some(m), Some(s))
        } else {
            (None, None)
        };
        Ok(Self { feature_means, feature_scales, response_mean, response_scale, constant_columns })
    }

    pub fn has_constant_columns(&self) -> bool {
        !self.constant_columns.is_empty()
    }

    pub fn transform_features(&self, x: MatRef<'_, f64>) -> Result<Mat<f64>> {
        let d = self.feature_means.len();
        if x.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, got: x.ncols() });
        }
        Ok(Mat::from_fn(x.nrows(), d, |i, j| {
            (x[(i, j)] - self.feature_means[j]) / self.feature_scales[j]
        }))
    }

    pub fn inverse_features(&self, z: MatRef<'_, f64>) -> Result<Mat<f64>> {
        let d = self.feature_means.len();
        if z.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, got: z.ncols() });
        }
        Ok(Mat::from_fn(z.nrows(), d, |i, j| {
            z[(i, j)] * self.feature_scales[j] + self.feature_means[j]
        }))
    }

    pub fn transform_response(&self, y: f64) -> f64 {
        match (self.response_mean, self.response_scale) {
            (Some(m), Some(s)) => (y - m) / s,
            _ => y,
        }
    }

    pub fn inverse_response(&self, z: f64) -> f64 {
        match (self.response_mean, self.response_scale) {
            (Some(m), Some(s)) => s * z + m,
            _ => z,
        }
    }

    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        Ok(Dataset {
            x: self.transform_features(ds.x.as_ref())?,
            y: ds.y.iter().map(|&v| self.transform_response(v)).collect(),
            f_true: ds.f_true.as_ref().map(|f| f.iter().map(|&v| self.transform_response(v)).collect()),
            feature_names: ds.feature_names.clone(),
            target_name: ds.target_name.clone(),
        })
    }
}

/// Standardizes features (and the response when asked) to mean 0 and
/// sample standard deviation 1.
pub fn standardize(ds: &Dataset, include_response: bool) -> Result<(Dataset, Standardizer)> {
    let st = Standardizer::fit(ds, include_response)?;
    Ok((st.apply(ds)?, st))
}
