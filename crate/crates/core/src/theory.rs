//! Numerical checks of analytical properties of the Cauchy loss under
//! symmetric noise, by adaptive quadrature and Monte Carlo, plus an
//! empirical learning-rate probe.
//!
//! Every expectation over the noise is folded onto `[0, ∞)` using the
//! symmetry of the density, so integrands are passed as `g(t) + g(-t)`.

use std::f64::consts::PI;

use faer::Mat;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{NoiseFamily, NoiseSpec};
use crate::error::{Error, Result};
use crate::kernel::GaussianKernel;
use crate::loss::{ClipBound, ScaledLoss};
use crate::par::Exec;
use crate::seed::stream_rng;
use crate::solver::{fit, SolverConfig};

// 21-point Kronrod abscissae on [-1, 1] (positive half, descending) and
// weights; odd entries are the 10-point Gauss nodes.
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689,
    0.973_906_528_517_171_720_077_964_012_084,
    0.930_157_491_355_708_226_001_207_180_060,
    0.865_063_366_688_984_510_732_096_688_423,
    0.780_817_726_586_416_897_063_717_578_345,
    0.679_409_568_299_024_406_234_327_365_115,
    0.562_757_134_668_604_683_339_000_099_273,
    0.433_395_394_129_247_190_799_265_943_166,
    0.294_392_862_701_460_198_131_126_603_104,
    0.148_874_338_981_631_210_884_826_001_130,
    0.0,
];
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062,
    0.032_558_162_307_964_727_478_818_972_459,
    0.054_755_896_574_351_996_031_381_300_245,
    0.075_039_674_810_919_952_767_043_140_916,
    0.093_125_454_583_697_605_535_065_465_083,
    0.109_387_158_802_297_641_899_210_590_326,
    0.123_491_976_262_065_851_077_600_525_452,
    0.134_709_217_311_473_325_928_054_001_772,
    0.142_775_938_577_060_080_797_094_273_139,
    0.147_739_104_901_338_491_374_841_515_972,
    0.149_445_554_002_916_905_664_936_468_390,
];
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893,
    0.149_451_349_150_580_593_145_776_339_658,
    0.219_086_362_515_982_043_995_534_934_228,
    0.269_266_719_309_996_355_091_226_921_569,
    0.295_524_224_714_752_870_173_892_994_651,
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadSettings {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
    /// Allowed relative change when every final interval is bisected once
    /// more.
    pub self_check_tol: f64,
    /// Upper end of the half-line, reached through `t = b·eˣ`.
    pub t_max: f64,
}

impl Default for QuadSettings {
    fn default() -> Self {
        Self { abs_tol: 1e-15, rel_tol: 1e-12, max_intervals: 4000, self_check_tol: 1e-9, t_max: 1e60 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadResult {
    pub value: f64,
    pub error_estimate: f64,
    pub intervals: usize,
    /// `|I_refined - I|` from the refinement-doubling check.
    pub self_check_diff: f64,
    /// `|f(T)|·T` at the truncation point of a half-line integral.
    pub tail_estimate: f64,
}

/// Maps an interval variable to `t`, returning `(t, dt/dx)`.
#[derive(Debug, Clone, Copy)]
enum Segment {
    Linear,
    Exp(f64),
}

impl Segment {
    #[inline]
    fn map(self, x: f64) -> (f64, f64) {
        match self {
            Segment::Linear => (x, 1.0),
            Segment::Exp(b) => {
                let t = b * x.exp();
                (t, t)
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Piece {
    seg: Segment,
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

fn gk21(f: &impl Fn(f64) -> f64, seg: Segment, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let eval = |x: f64| {
        let (t, j) = seg.map(x);
        let v = f(t) * j;
        if v.is_finite() { v } else { f64::NAN }
    };
    let fc = eval(c);
    let mut resk = WGK[10] * fc;
    let mut resg = 0.0;
    let mut resabs = resk.abs();
    let mut fv = [(0.0, 0.0); 10];
    for (j, (&x, &w)) in XGK[..10].iter().zip(&WGK[..10]).enumerate() {
        let (f1, f2) = (eval(c - h * x), eval(c + h * x));
        fv[j] = (f1, f2);
        resk += w * (f1 + f2);
        resabs += w * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            resg += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * resk;
    let mut resasc = WGK[10] * (fc - mean).abs();
    for (j, &(f1, f2)) in fv.iter().enumerate() {
        resasc += WGK[j] * ((f1 - mean).abs() + (f2 - mean).abs());
    }
    let (resk, resabs, resasc) = (resk * h, resabs * h.abs(), resasc * h.abs());
    let mut err = ((resk - resg * h) * 1.0).abs();
    if resasc != 0.0 && err != 0.0 {
        err = resasc * (200.0 * err / resasc).powf(1.5).min(1.0);
    }
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * resabs);
    }
    (resk, err)
}

fn adaptive(f: &impl Fn(f64) -> f64, init: Vec<(Segment, f64, f64)>, s: &QuadSettings) -> Result<QuadResult> {
    let mut pieces: Vec<Piece> = init
        .into_iter()
        .filter(|&(_, a, b)| b > a)
        .map(|(seg, a, b)| {
            let (value, err) = gk21(f, seg, a, b);
            Piece { seg, a, b, value, err }
        })
        .collect();
    loop {
        let total: f64 = pieces.iter().map(|p| p.value).sum();
        let err: f64 = pieces.iter().map(|p| p.err).sum();
        if !total.is_finite() || !err.is_finite() {
            return Err(Error::Quadrature("integrand produced a non-finite value".into()));
        }
        if err <= s.abs_tol.max(s.rel_tol * total.abs()) {
            let refined: f64 = pieces
                .iter()
                .map(|p| {
                    let m = 0.5 * (p.a + p.b);
                    gk21(f, p.seg, p.a, m).0 + gk21(f, p.seg, m, p.b).0
                })
                .sum();
            let diff = (refined - total).abs();
            if diff > s.self_check_tol * total.abs() + s.abs_tol.max(1e-300) * 10.0 {
                return Err(Error::Quadrature(format!(
                    "refinement check moved the value by {diff:e} (value {total:e})"
                )));
            }
            return Ok(QuadResult {
                value: total,
                error_estimate: err,
                intervals: pieces.len(),
                self_check_diff: diff,
                tail_estimate: 0.0,
            });
        }
        if pieces.len() >= s.max_intervals {
            return Err(Error::Quadrature(format!(
                "{} intervals exhausted with error estimate {err:e} (value {total:e})",
                pieces.len()
            )));
        }
        let (worst, _) = pieces
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, p)| if p.err > acc.1 { (i, p.err) } else { acc });
        let p = pieces.swap_remove(worst);
        let m = 0.5 * (p.a + p.b);
        if !(m > p.a && m < p.b) {
            return Err(Error::Quadrature("interval cannot be bisected further".into()));
        }
        for (a, b) in [(p.a, m), (m, p.b)] {
            let (value, err) = gk21(f, p.seg, a, b);
            pieces.push(Piece { seg: p.seg, a, b, value, err });
        }
    }
}

/// Adaptive Gauss–Kronrod quadrature on a finite interval.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, s: &QuadSettings) -> Result<QuadResult> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::InvalidParameter("integration limits must be finite".into()));
    }
    let (lo, hi, sign) = if a <= b { (a, b, 1.0) } else { (b, a, -1.0) };
    let mut r = adaptive(&f, vec![(Segment::Linear, lo, hi)], s)?;
    r.value *= sign;
    Ok(r)
}

/// `∫₀^∞ f(t) dt`, split at the positive `breaks` and then continued on a
/// logarithmic scale up to `settings.t_max`, beyond which the integrand
/// must be negligible.
pub fn integrate_half_line(f: impl Fn(f64) -> f64, breaks: &[f64], s: &QuadSettings) -> Result<QuadResult> {
    let mut pts: Vec<f64> = breaks.iter().copied().filter(|b| *b > 0.0 && b.is_finite()).collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    if pts.is_empty() {
        pts.push(1.0);
    }
    let mut init = Vec::new();
    let mut lo = 0.0;
    for &b in &pts {
        init.push((Segment::Linear, lo, b));
        lo = b;
    }
    let last = *pts.last().expect("nonempty");
    // Split the logarithmic range into unit-length pieces near the start,
    // where most of the tail mass sits.
    let x_max = (s.t_max / last).ln().max(1.0);
    let mut x = 0.0;
    while x < x_max {
        let step = if x < 8.0 { 1.0 } else { (x_max - x).min(16.0) };
        init.push((Segment::Exp(last), x, (x + step).min(x_max)));
        x += step;
    }
    let tail = (f(s.t_max) * s.t_max).abs();
    let mut r = adaptive(&f, init, s)?;
    if !(tail <= s.self_check_tol * r.value.abs() + s.abs_tol) {
        return Err(Error::Quadrature(format!("tail beyond {:e} is not negligible ({tail:e})", s.t_max)));
    }
    r.tail_estimate = tail;
    Ok(r)
}

/// A symmetric noise density together with its scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseModel {
    pub spec: NoiseSpec,
}

impl NoiseModel {
    pub fn new(spec: NoiseSpec) -> Self {
        Self { spec }
    }

    pub fn of(family: NoiseFamily, scale: f64) -> Result<Self> {
        Ok(Self::new(NoiseSpec::new(family, scale)?))
    }

    pub fn name(&self) -> &'static str {
        self.spec.family.name()
    }

    pub fn density(&self, t: f64) -> f64 {
        let s = self.spec.scale;
        match self.spec.family {
            NoiseFamily::Gaussian => (-0.5 * (t / s).powi(2)).exp() / (s * (2.0 * PI).sqrt()),
            NoiseFamily::Cauchy => 1.0 / (PI * s * (1.0 + (t / s).powi(2))),
            NoiseFamily::Pareto => {
                let z = self.spec.shape;
                (1.0 + z * t.abs() / s).powf(-(1.0 + 1.0 / z)) / (2.0 * s)
            }
        }
    }

    /// Checks evenness and strict decrease of the density in `|t|` on a
    /// grid out to `span` scales.
    pub fn check_shape(&self, points: usize, span: f64) -> bool {
        let s = self.spec.scale;
        let mut prev = f64::INFINITY;
        (0..points).all(|i| {
            let t = span * s * i as f64 / (points - 1).max(1) as f64;
            let p = self.density(t);
            let ok = p == self.density(-t) && (p < prev || p == 0.0) && p >= 0.0;
            prev = p;
            ok
        })
    }

    /// `E[g(ε)]` where `sym(t) = g(t) + g(-t)`; `breaks` mark where the
    /// integrand changes character.
    pub fn expect_folded(&self, sym: impl Fn(f64) -> f64, breaks: &[f64], s: &QuadSettings) -> Result<QuadResult> {
        let mut b = breaks.to_vec();
        b.push(self.spec.scale);
        integrate_half_line(|t| sym(t) * self.density(t), &b, s)
    }

    /// `E log(1 + ε²)`.
    pub fn log_moment(&self, s: &QuadSettings) -> Result<QuadResult> {
        self.expect_folded(|t| 2.0 * (t * t).ln_1p(), &[1.0], s)
    }
}

/// `σ² log((σ² + (ε-ξ)²)(σ² + (ε+ξ)²) / (σ² + ε²)²)`, i.e. the folded
/// excess Cauchy loss `L(ε-ξ) - L(ε) + L(-ε-ξ) - L(-ε)`, written without
/// cancellation.
#[inline]
fn folded_excess(sigma: f64, eps: f64, xi: f64) -> f64 {
    let s2 = sigma * sigma;
    let d = s2 + eps * eps;
    s2 * (xi * xi * (2.0 * s2 - 2.0 * eps * eps + xi * xi) / (d * d)).ln_1p()
}

/// Excess Cauchy loss `L(ε - ξ) - L(ε)`.
#[inline]
fn excess(sigma: f64, eps: f64, xi: f64) -> f64 {
    let s2 = sigma * sigma;
    s2 * ((xi * xi - 2.0 * eps * xi) / (eps * eps + s2)).ln_1p()
}

/// Pointwise excess Cauchy risk `E_ε[L(ε - ξ) - L(ε)]` at a constant error
/// `ξ`.
pub fn excess_risk(noise: &NoiseModel, sigma: f64, xi: f64, s: &QuadSettings) -> Result<QuadResult> {
    if xi == 0.0 {
        return Ok(QuadResult { value: 0.0, error_estimate: 0.0, intervals: 0, self_check_diff: 0.0, tail_estimate: 0.0 });
    }
    noise.expect_folded(|t| folded_excess(sigma, t, xi), &[sigma, xi.abs()], s)
}

/// `E_ε[(L(ε - ξ) - L(ε))²]`.
pub fn excess_second_moment(noise: &NoiseModel, sigma: f64, xi: f64, s: &QuadSettings) -> Result<QuadResult> {
    if xi == 0.0 {
        return Ok(QuadResult { value: 0.0, error_estimate: 0.0, intervals: 0, self_check_diff: 0.0, tail_estimate: 0.0 });
    }
    noise.expect_folded(
        |t| excess(sigma, t, xi).powi(2) + excess(sigma, -t, xi).powi(2),
        &[sigma, xi.abs()],
        s,
    )
}

/// `g(u) - g(0)` with `g(u) = E σ² log(1 + (ε + u)²/σ²)`.
pub fn inner_risk_increment(noise: &NoiseModel, sigma: f64, u: f64, s: &QuadSettings) -> Result<QuadResult> {
    excess_risk(noise, sigma, u, s)
}

/// `g(0) = σ² E log(1 + ε²/σ²)`.
pub fn inner_risk_at_zero(noise: &NoiseModel, sigma: f64, s: &QuadSettings) -> Result<QuadResult> {
    let s2 = sigma * sigma;
    noise.expect_folded(|t| 2.0 * s2 * (t * t / s2).ln_1p(), &[sigma], s)
}

/// `g(u)` on a grid, from the folded integrand `L(t + u) + L(u - t)`.
pub fn inner_risk_curve(noise: &NoiseModel, sigma: f64, u_grid: &[f64], s: &QuadSettings) -> Result<Vec<f64>> {
    let loss = ScaledLoss::cauchy(sigma)?;
    u_grid
        .iter()
        .map(|&u| {
            if !u.is_finite() {
                return Err(Error::NonFinite("u grid"));
            }
            let r = noise.expect_folded(
                |t| loss.value_unchecked(t + u) + loss.value_unchecked(u - t),
                &[sigma, u.abs()],
                s,
            )?;
            Ok(r.value)
        })
        .collect()
}

/// `E_ε[(7ε²σ² + ε⁴)/(ε² + σ²)²]`.
pub fn noise_term(noise: &NoiseModel, sigma: f64, s: &QuadSettings) -> Result<f64> {
    let s2 = sigma * sigma;
    Ok(noise
        .expect_folded(
            |t| {
                let e2 = t * t;
                2.0 * (7.0 * e2 * s2 + e2 * e2) / (e2 + s2).powi(2)
            },
            &[sigma],
            s,
        )?
        .value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct C1Search {
    pub sigma: f64,
    pub noise_term: f64,
    pub steps: usize,
}

/// Smallest `σ = start·factor^k` with [`noise_term`] `≤ 1/2`.
pub fn search_c1(noise: &NoiseModel, start: f64, factor: f64, s: &QuadSettings) -> Result<C1Search> {
    if !(start > 0.0 && factor > 1.0) {
        return Err(Error::InvalidParameter("c1 search needs start > 0 and factor > 1".into()));
    }
    let mut sigma = start;
    for steps in 0..2000 {
        let v = noise_term(noise, sigma, s)?;
        if v <= 0.5 {
            return Ok(C1Search { sigma, noise_term: v, steps });
        }
        sigma *= factor;
    }
    Err(Error::Quadrature("c1 search did not terminate".into()))
}

/// Default ladder: from `10⁻³ · scale` in steps of `2^{1/8}`.
pub fn default_c1(noise: &NoiseModel, s: &QuadSettings) -> Result<C1Search> {
    search_c1(noise, 1e-3 * noise.spec.scale, 2f64.powf(0.125), s)
}

/// Outcome of one numerical check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryReport {
    pub check: String,
    pub noise: String,
    pub passed: bool,
    pub quantities: Vec<(String, f64)>,
    pub tolerances: Vec<(String, f64)>,
    pub quad: Option<QuadSettings>,
}

impl TheoryReport {
    fn new(check: &str, noise: &str) -> Self {
        Self {
            check: check.into(),
            noise: noise.into(),
            passed: true,
            quantities: Vec::new(),
            tolerances: Vec::new(),
            quad: None,
        }
    }

    fn q(&mut self, name: &str, v: f64) {
        self.quantities.push((name.into(), v));
    }

    fn tol(&mut self, name: &str, v: f64) {
        self.tolerances.push((name.into(), v));
    }

    pub fn quantity(&self, name: &str) -> Option<f64> {
        self.quantities.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

/// CSV with one row per measured quantity:
/// `check,noise,quantity,value,passed`.
pub fn theory_csv(reports: &[TheoryReport]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["check", "noise", "quantity", "value", "passed"]).expect("in-memory write");
    for r in reports {
        for (name, v) in r.quantities.iter().chain(&r.tolerances) {
            w.write_record([&r.check, &r.noise, name, &v.to_string(), &r.passed.to_string()])
                .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8")
}

/// Piecewise-constant error profile on equiprobable cells.
pub fn random_profile<R: Rng + ?Sized>(rng: &mut R, cells: usize, half_width: f64) -> Vec<f64> {
    (0..cells).map(|_| half_width * (2.0 * rng.random::<f64>() - 1.0)).collect()
}

/// Number of cells in random error profiles.
pub const PROFILE_CELLS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProfileRisk {
    pub excess: f64,
    pub l2: f64,
    pub second_moment: f64,
}

/// Excess risk, squared L2 norm and second moment of the excess loss for a
/// piecewise-constant error profile under uniform cell probabilities.
pub fn profile_risk(noise: &NoiseModel, sigma: f64, profile: &[f64], s: &QuadSettings) -> Result<ProfileRisk> {
    let n = profile.len() as f64;
    let mut out = ProfileRisk { excess: 0.0, l2: 0.0, second_moment: 0.0 };
    for &xi in profile {
        out.excess += excess_risk(noise, sigma, xi, s)?.value / n;
        out.second_moment += excess_second_moment(noise, sigma, xi, s)?.value / n;
        out.l2 += xi * xi / n;
    }
    Ok(out)
}

/// Checks `E ≤ ‖ξ‖² ≤ 8E` for random profiles with `‖ξ‖∞ ≤ 2M`.
pub fn check_calibration(
    noise: &NoiseModel,
    m: f64,
    sigma: f64,
    profiles: usize,
    seed: u64,
    tol: f64,
    s: &QuadSettings,
    exec: Exec,
) -> Result<TheoryReport> {
    let risks: Vec<Result<ProfileRisk>> = exec.map_range(profiles, |i| {
        let mut rng = stream_rng(seed, &[i as u64]);
        profile_risk(noise, sigma, &random_profile(&mut rng, PROFILE_CELLS, 2.0 * m), s)
    });
    let mut rep = TheoryReport::new("calibration", noise.name());
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for r in risks {
        let r = r?;
        let ratio = r.l2 / r.excess;
        lo = lo.min(ratio);
        hi = hi.max(ratio);
    }
    rep.passed = lo >= 1.0 - tol && hi <= 8.0 + tol;
    rep.q("profiles", profiles as f64);
    rep.q("sigma", sigma);
    rep.q("M", m);
    rep.q("min_ratio", lo);
    rep.q("max_ratio", hi);
    rep.tol("ratio_tol", tol);
    rep.quad = Some(*s);
    Ok(rep)
}

/// Checks `E[(L∘f̂ - L∘f*)²] ≤ 8σ²·(R(f̂) - R*)` at each σ.
pub fn check_variance_bound(
    noise: &NoiseModel,
    m: f64,
    sigmas: &[f64],
    profiles: usize,
    seed: u64,
    s: &QuadSettings,
    exec: Exec,
) -> Result<TheoryReport> {
    let mut rep = TheoryReport::new("variance", noise.name());
    let mut worst = f64::NEG_INFINITY;
    for &sigma in sigmas {
        let risks: Vec<Result<ProfileRisk>> = exec.map_range(profiles, |i| {
            let mut rng = stream_rng(seed, &[i as u64]);
            profile_risk(noise, sigma, &random_profile(&mut rng, PROFILE_CELLS, 2.0 * m), s)
        });
        let mut w = f64::NEG_INFINITY;
        for r in risks {
            let r = r?;
            w = w.max(r.second_moment / (8.0 * sigma * sigma * r.excess));
        }
        rep.q(&format!("max_ratio_sigma_{sigma}"), w);
        worst = worst.max(w);
    }
    rep.passed = worst <= 1.0 + 1e-9;
    rep.q("max_ratio", worst);
    rep.tol("ratio_bound", 1.0);
    rep.quad = Some(*s);
    Ok(rep)
}

/// With `f* ≡ 0`, compares the risk of random profiles in `[-4M, 4M]` with
/// that of their clipped versions.
pub fn check_clipping_monotone(
    noise: &NoiseModel,
    m: f64,
    sigma: f64,
    profiles: usize,
    seed: u64,
    s: &QuadSettings,
) -> Result<TheoryReport> {
    let bound = ClipBound::new(m)?;
    let base = inner_risk_at_zero(noise, sigma, s)?.value;
    let mut worst = f64::INFINITY;
    for i in 0..profiles {
        let mut rng = stream_rng(seed, &[i as u64]);
        let f = random_profile(&mut rng, PROFILE_CELLS, 4.0 * m);
        let (mut raw, mut clipped) = (base, base);
        for &v in &f {
            raw += excess_risk(noise, sigma, v, s)?.value / f.len() as f64;
            clipped += excess_risk(noise, sigma, crate::loss::clip(v, bound), s)?.value / f.len() as f64;
        }
        worst = worst.min((raw - clipped) / raw.abs().max(f64::MIN_POSITIVE));
    }
    let mut rep = TheoryReport::new("clipping", noise.name());
    rep.passed = worst >= -1e-9;
    rep.q("min_relative_gain", worst);
    rep.tol("relative_tol", 1e-9);
    rep.quad = Some(*s);
    Ok(rep)
}

/// Checks `|L(y - t₁) - L(y - t₂)| ≤ σ|t₁ - t₂|` on random triples, and
/// that a central-difference derivative of the loss stays within `σ`.
pub fn check_lipschitz(sigma: f64, triples: usize, seed: u64) -> Result<TheoryReport> {
    let loss = ScaledLoss::cauchy(sigma)?;
    let mut rng = stream_rng(seed, &[]);
    let mut worst: f64 = 0.0;
    let span = 20.0 * sigma;
    for _ in 0..triples {
        let y = span * (2.0 * rng.random::<f64>() - 1.0);
        let t1 = span * (2.0 * rng.random::<f64>() - 1.0);
        let t2 = t1 + sigma * (2.0 * rng.random::<f64>() - 1.0) * 10f64.powf(-6.0 * rng.random::<f64>());
        if t1 == t2 {
            continue;
        }
        let d = (loss.value_unchecked(y - t1) - loss.value_unchecked(y - t2)).abs();
        worst = worst.max(d / (sigma * (t1 - t2).abs()));
    }
    let h = 1e-5 * sigma;
    let mut deriv: f64 = 0.0;
    for i in 0..=4000 {
        let t = -span + 2.0 * span * i as f64 / 4000.0;
        let g = (loss.value_unchecked(t + h) - loss.value_unchecked(t - h)) / (2.0 * h);
        deriv = deriv.max(g.abs());
    }
    let mut rep = TheoryReport::new("lipschitz", "none");
    rep.passed = worst <= 1.0 + 1e-12 && deriv <= sigma * (1.0 + 1e-6);
    rep.q("sigma", sigma);
    rep.q("max_ratio", worst);
    rep.q("max_fd_derivative", deriv);
    rep.tol("ratio_tol", 1e-12);
    rep.tol("derivative_tol", 1e-6);
    Ok(rep)
}

/// Checks `g(u) - g(0) > 0` at every `u`, by quadrature that passes its
/// refinement self-check.
pub fn check_optimality(noise: &NoiseModel, sigma: f64, us: &[f64], s: &QuadSettings) -> Result<TheoryReport> {
    let mut rep = TheoryReport::new("optimality", noise.name());
    let mut min_gap = f64::INFINITY;
    let mut max_check: f64 = 0.0;
    for &u in us {
        let r = inner_risk_increment(noise, sigma, u, s)?;
        min_gap = min_gap.min(r.value);
        max_check = max_check.max(r.self_check_diff / r.value.abs().max(f64::MIN_POSITIVE));
    }
    rep.passed = min_gap > 0.0 && max_check <= s.self_check_tol;
    rep.q("points", us.len() as f64);
    rep.q("min_increment", min_gap);
    rep.q("max_relative_self_check", max_check);
    rep.tol("self_check_tol", s.self_check_tol);
    rep.quad = Some(*s);
    Ok(rep)
}

/// Theory checks runnable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Check {
    C1,
    Calibration,
    Variance,
    Clipping,
    Optimality,
    Lipschitz,
}

impl Check {
    pub const ALL: [Check; 6] =
        [Check::C1, Check::Calibration, Check::Variance, Check::Clipping, Check::Optimality, Check::Lipschitz];

    pub fn name(self) -> &'static str {
        match self {
            Check::C1 => "c1",
            Check::Calibration => "calibration",
            Check::Variance => "variance",
            Check::Clipping => "clipping",
            Check::Optimality => "optimality",
            Check::Lipschitz => "lipschitz",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown check {s:?}; expected one of c1, calibration, variance, clipping, optimality, lipschitz")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckOptions {
    /// Bound on the regression function.
    pub m: f64,
    /// Scale of every noise model.
    pub noise_scale: f64,
    pub profiles: usize,
    pub ratio_tol: f64,
    pub lipschitz_triples: usize,
    /// Cauchy scale for the optimality and Lipschitz checks.
    pub sigma: f64,
    pub seed: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            m: 1.0,
            noise_scale: 1.0,
            profiles: 100,
            ratio_tol: 1e-6,
            lipschitz_triples: 100_000,
            sigma: 1.0,
            seed: 42,
        }
    }
}

/// `±{0.05, 0.1, …, 5}`.
pub fn optimality_grid() -> Vec<f64> {
    (1..=100).flat_map(|i| [0.05 * i as f64, -0.05 * i as f64]).collect()
}

/// Runs `checks` for every noise family; the Lipschitz check does not
/// depend on the noise and runs once.
pub fn run_checks(
    checks: &[Check],
    families: &[NoiseFamily],
    opts: &CheckOptions,
    quad: &QuadSettings,
    exec: Exec,
) -> Result<Vec<TheoryReport>> {
    let mut out = Vec::new();
    for &fam in families {
        let noise = NoiseModel::of(fam, opts.noise_scale)?;
        let c1 = default_c1(&noise, quad)?;
        let sigma = (4.0 * opts.m).max(c1.sigma);
        let seed = crate::seed::derive_seed(opts.seed, &[fam as u64]);
        for &check in checks {
            let rep = match check {
                Check::C1 => {
                    let mut r = TheoryReport::new("c1", noise.name());
                    r.passed = c1.noise_term <= 0.5;
                    r.q("c1", c1.sigma);
                    r.q("noise_term", c1.noise_term);
                    r.q("operative_sigma", sigma);
                    r.tol("noise_term_max", 0.5);
                    r.quad = Some(*quad);
                    r
                }
                Check::Calibration => {
                    check_calibration(&noise, opts.m, sigma, opts.profiles, seed, opts.ratio_tol, quad, exec)?
                }
                Check::Variance => {
                    let sigmas: Vec<f64> = [4.0, 8.0, 16.0].iter().map(|k| (k * opts.m).max(c1.sigma)).collect();
                    check_variance_bound(&noise, opts.m, &sigmas, opts.profiles, seed, quad, exec)?
                }
                Check::Clipping => check_clipping_monotone(&noise, opts.m, sigma, opts.profiles, seed, quad)?,
                Check::Optimality => check_optimality(&noise, opts.sigma, &optimality_grid(), quad)?,
                Check::Lipschitz => continue,
            };
            out.push(rep);
        }
    }
    if checks.contains(&Check::Lipschitz) {
        out.push(check_lipschitz(opts.sigma, opts.lipschitz_triples, opts.seed)?);
    }
    Ok(out)
}

/// `1 - 2|x - 1/2|` on `[0, 1]`: Lipschitz, bounded by 1.
pub fn triangle(x: f64) -> f64 {
    1.0 - 2.0 * (x - 0.5).abs()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateConfig {
    pub n_list: Vec<usize>,
    pub reps: usize,
    /// `None` for noise-free responses.
    pub noise: Option<NoiseSpec>,
    /// λ of the summed objective; constant in `n` so the averaged-risk
    /// regularization decays like `1/n`.
    pub lambda_sum: f64,
    /// Bandwidth at `n = 1`; the probe uses `γ₀ n^{-1/3}`.
    pub gamma0: f64,
    /// Cauchy scale; `4M₀` when absent.
    pub sigma: Option<f64>,
    pub eval_points: usize,
    pub seed: u64,
    pub max_iters: usize,
}

impl Default for RateConfig {
    fn default() -> Self {
        Self {
            n_list: vec![100, 200, 400, 800, 1600, 3200],
            reps: 5,
            noise: Some(NoiseSpec { family: NoiseFamily::Gaussian, scale: 0.5, shape: crate::data::PARETO_SHAPE }),
            lambda_sum: 1e-2,
            gamma0: 1.0,
            sigma: None,
            eval_points: 2001,
            seed: 42,
            max_iters: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub n_list: Vec<usize>,
    /// Squared L2 errors, `[n][rep]`.
    pub errors: Vec<Vec<f64>>,
    pub mean_errors: Vec<f64>,
    pub slope: f64,
    pub slope_stderr: f64,
    pub sigma: f64,
    pub noise: String,
}

/// Fits clipped KCRR to the triangle target at each `n` and regresses log
/// mean squared L2 error on log n.
pub fn rate_probe(cfg: &RateConfig, exec: Exec) -> Result<RateReport> {
    if cfg.n_list.len() < 3 || cfg.n_list.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("n_list must be nondecreasing with at least 3 values".into()));
    }
    if cfg.reps == 0 || cfg.eval_points < 2 {
        return Err(Error::InvalidParameter("reps and eval_points must be positive".into()));
    }
    let m0 = 1.0;
    let sigma = cfg.sigma.unwrap_or(4.0 * m0);
    let grid = Mat::from_fn(cfg.eval_points, 1, |i, _| i as f64 / (cfg.eval_points - 1) as f64);
    let truth: Vec<f64> = (0..cfg.eval_points).map(|i| triangle(grid[(i, 0)])).collect();
    let tasks: Vec<(usize, usize)> =
        cfg.n_list.iter().flat_map(|&n| (0..cfg.reps).map(move |r| (n, r))).collect();
    let errs: Vec<Result<f64>> = exec.map(&tasks, |&(n, rep)| {
        let mut rng = stream_rng(cfg.seed, &[n as u64, rep as u64]);
        let x = Mat::from_fn(n, 1, |_, _| rng.random::<f64>());
        let y: Vec<f64> = (0..n)
            .map(|i| triangle(x[(i, 0)]) + cfg.noise.map_or(0.0, |ns| ns.sample(&mut rng)))
            .collect();
        let kern = GaussianKernel::new(cfg.gamma0 * (n as f64).powf(-1.0 / 3.0))?;
        let sc = SolverConfig::new(ScaledLoss::cauchy(sigma)?, cfg.lambda_sum)?
            .with_clip(Some(ClipBound::new(m0)?))
            .with_max_iters(cfg.max_iters);
        let model = fit(&sc, &kern, x.as_ref(), &y)?;
        let pred = model.predict(grid.as_ref())?;
        Ok(pred.iter().zip(&truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / truth.len() as f64)
    });
    let mut errors = Vec::new();
    let mut it = errs.into_iter();
    for _ in &cfg.n_list {
        errors.push(it.by_ref().take(cfg.reps).collect::<Result<Vec<f64>>>()?);
    }
    let mean_errors: Vec<f64> = errors.iter().map(|e| e.iter().sum::<f64>() / e.len() as f64).collect();
    let xs: Vec<f64> = cfg.n_list.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = mean_errors.iter().map(|e| e.max(f64::MIN_POSITIVE).ln()).collect();
    let (slope, slope_stderr) = ols_slope(&xs, &ys);
    Ok(RateReport {
        n_list: cfg.n_list.clone(),
        errors,
        mean_errors,
        slope,
        slope_stderr,
        sigma,
        noise: cfg.noise.map_or("none", |n| n.family.name()).to_string(),
    })
}

fn ols_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - my - slope * (a - mx)).powi(2)).sum();
    let se = if x.len() > 2 { (rss / (n - 2.0) / sxx).sqrt() } else { f64::NAN };
    (slope, se)
}

pub fn rate_report(r: &RateReport) -> TheoryReport {
    let mut rep = TheoryReport::new("rate", &r.noise);
    rep.passed = (-1.0..=-0.35).contains(&r.slope);
    rep.q("slope", r.slope);
    rep.q("slope_stderr", r.slope_stderr);
    rep.q("sigma", r.sigma);
    for (n, e) in r.n_list.iter().zip(&r.mean_errors) {
        rep.q(&format!("mean_sq_l2_n{n}"), *e);
    }
    rep.tol("slope_min", -1.0);
    rep.tol("slope_max", -0.35);
    rep
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn qs() -> QuadSettings {
        QuadSettings::default()
    }

    #[test]
    fn quadrature_on_known_integrals() {
        let r = integrate(|x| x.sin(), 0.0, PI, &qs()).unwrap();
        assert_relative_eq!(r.value, 2.0, epsilon = 1e-13);
        let r = integrate(|x| x.sqrt(), 0.0, 1.0, &qs()).unwrap();
        assert_relative_eq!(r.value, 2.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(integrate(|x| x, 1.0, 0.0, &qs()).unwrap().value, -0.5, epsilon = 1e-15);
        let r = integrate_half_line(|t| 1.0 / (1.0 + t * t), &[], &qs()).unwrap();
        assert_relative_eq!(r.value, PI / 2.0, epsilon = 1e-12);
        let r = integrate_half_line(|t| (-t).exp(), &[], &qs()).unwrap();
        assert_relative_eq!(r.value, 1.0, epsilon = 1e-13);
        let r = integrate_half_line(|t| (1.0 + t).powf(-1.5), &[], &qs()).unwrap();
        assert_relative_eq!(r.value, 2.0, max_relative = 1e-9);
        assert!(r.tail_estimate < 1e-25);
        assert!(integrate_half_line(|t| (1.0 + t).powf(-1.1), &[], &qs()).is_err());
        assert!(integrate(|x| 1.0 / x, 0.0, 1.0, &qs()).is_err());
    }

    #[test]
    fn densities_are_normalized_and_shaped() {
        for fam in [NoiseFamily::Gaussian, NoiseFamily::Cauchy, NoiseFamily::Pareto] {
            let nm = NoiseModel::of(fam, 1.3).unwrap();
            let mass = nm.expect_folded(|_| 2.0, &[], &qs()).unwrap().value;
            assert_relative_eq!(mass, 1.0, epsilon = 1e-10);
            assert!(nm.check_shape(200, 20.0));
        }
    }

    #[test]
    fn log_moment_cases() {
        let tiny = NoiseModel::of(NoiseFamily::Gaussian, 1e-8).unwrap();
        assert!(tiny.log_moment(&qs()).unwrap().value < 1e-15);
        let g = NoiseModel::of(NoiseFamily::Gaussian, 1.0).unwrap();
        let v = g.log_moment(&qs()).unwrap().value;
        assert!(v > 0.0 && v.is_finite());
        let left = integrate(|t| (t * t).ln_1p() * g.density(t), -40.0, 0.0, &qs()).unwrap().value;
        let right = integrate(|t| (t * t).ln_1p() * g.density(t), 0.0, 40.0, &qs()).unwrap().value;
        assert_relative_eq!(left, right, max_relative = 1e-12);
        assert_relative_eq!(left + right, v, max_relative = 1e-10);

        // Cauchy: closed form E log(1 + ε²) = 2 log 2 at s = 1.
        let c = NoiseModel::of(NoiseFamily::Cauchy, 1.0).unwrap();
        let v = c.log_moment(&qs()).unwrap().value;
        assert_relative_eq!(v, 2.0 * 2f64.ln(), max_relative = 1e-10);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 10_000_000;
        let mc = (0..n).map(|_| c.spec.sample(&mut rng).powi(2).ln_1p()).sum::<f64>() / n as f64;
        assert!((mc / v - 1.0).abs() < 5e-3, "{mc} vs {v}");
    }

    #[test]
    fn inner_risk_shape() {
        let c = NoiseModel::of(NoiseFamily::Cauchy, 1.0).unwrap();
        let sigma = 1.0;
        let g0 = inner_risk_at_zero(&c, sigma, &qs()).unwrap().value;
        let us: Vec<f64> = (1..=50).map(|i| i as f64 * 0.1).collect();
        let curve = inner_risk_curve(&c, sigma, &us, &qs()).unwrap();
        let neg: Vec<f64> = us.iter().map(|u| -u).collect();
        let curve_neg = inner_risk_curve(&c, sigma, &neg, &qs()).unwrap();
        assert_relative_eq!(inner_risk_curve(&c, sigma, &[0.0], &qs()).unwrap()[0], g0, max_relative = 1e-10);
        let mut prev = g0;
        for ((g, gn), u) in curve.iter().zip(&curve_neg).zip(&us) {
            assert!(*g > prev, "not increasing at u = {u}");
            assert_relative_eq!(g, gn, max_relative = 1e-10);
            let inc = inner_risk_increment(&c, sigma, *u, &qs()).unwrap().value;
            assert_relative_eq!(g - g0, inc, max_relative = 1e-7);
            prev = *g;
        }
    }

    #[test]
    fn folded_excess_matches_direct_sum() {
        let l = ScaledLoss::cauchy(1.7).unwrap();
        for &(e, xi) in &[(0.3, 0.2), (5.0, -1.0), (0.0, 3.0), (100.0, 0.5)] {
            let direct = l.value_unchecked(e - xi) - l.value_unchecked(e) + l.value_unchecked(-e - xi)
                - l.value_unchecked(-e);
            assert_relative_eq!(folded_excess(1.7, e, xi), direct, max_relative = 1e-10, epsilon = 1e-13);
            assert_relative_eq!(excess(1.7, e, xi), l.value_unchecked(e - xi) - l.value_unchecked(e), epsilon = 1e-12);
        }
    }

    #[test]
    fn calibration_constant_profiles() {
        let g = NoiseModel::of(NoiseFamily::Gaussian, 1.0).unwrap();
        let m = 1.0;
        let zero = profile_risk(&g, 4.0 * m, &[0.0; 4], &qs()).unwrap();
        assert_eq!((zero.excess, zero.l2, zero.second_moment), (0.0, 0.0, 0.0));
        let r = profile_risk(&g, 4.0 * m, &[m], &qs()).unwrap();
        let ratio = r.l2 / r.excess;
        assert!((1.0..=8.0).contains(&ratio), "{ratio}");
        assert!(r.second_moment <= 8.0 * 16.0 * r.excess);
    }

    #[test]
    fn c1_search_terminates_and_is_tight() {
        for fam in [NoiseFamily::Gaussian, NoiseFamily::Cauchy] {
            let nm = NoiseModel::of(fam, 1.0).unwrap();
            let c = default_c1(&nm, &qs()).unwrap();
            assert!(c.noise_term <= 0.5);
            let before = noise_term(&nm, c.sigma / 2f64.powf(0.125), &qs()).unwrap();
            assert!(c.steps == 0 || before > 0.5);
        }
    }

    #[test]
    fn clipping_never_hurts() {
        let c = NoiseModel::of(NoiseFamily::Cauchy, 1.0).unwrap();
        let inside = excess_risk(&c, 4.0, 0.5, &qs()).unwrap().value;
        assert_eq!(inside, excess_risk(&c, 4.0, crate::loss::clip(0.5, ClipBound::new(1.0).unwrap()), &qs()).unwrap().value);
        let two_m = excess_risk(&c, 4.0, 2.0, &qs()).unwrap().value;
        let clipped = excess_risk(&c, 4.0, 1.0, &qs()).unwrap().value;
        assert!(clipped < two_m);
        let rep = check_clipping_monotone(&c, 1.0, 4.0, 5, 3, &qs()).unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn lipschitz_check_small() {
        let rep = check_lipschitz(0.7, 10_000, 1).unwrap();
        assert!(rep.passed, "{rep:?}");
        assert!(rep.quantity("max_fd_derivative").unwrap() > 0.69);
    }

    #[test]
    fn rate_probe_noise_free_and_duplicates() {
        let cfg = RateConfig {
            n_list: vec![40, 40, 80, 160],
            reps: 2,
            noise: None,
            ..RateConfig::default()
        };
        let r = rate_probe(&cfg, Exec::default()).unwrap();
        assert_eq!(r.mean_errors[0], r.mean_errors[1]);
        assert!(r.slope <= 0.0, "{}", r.slope);
        let bad = RateConfig { n_list: vec![10, 20], ..cfg };
        assert!(rate_probe(&bad, Exec::default()).is_err());
    }

    #[test]
    fn csv_layout() {
        let rep = check_lipschitz(1.0, 100, 1).unwrap();
        let text = theory_csv(&[rep]);
        assert!(text.starts_with("check,noise,quantity,value,passed\nlipschitz,none,sigma,1,true\n"));
    }

    #[test]
    fn variance_bound_constant_profile_has_slack() {
        let g = NoiseModel::of(NoiseFamily::Gaussian, 1.0).unwrap();
        for sigma in [4.0, 8.0, 16.0] {
            let r = profile_risk(&g, sigma, &[1.0], &qs()).unwrap();
            let slack = 8.0 * sigma * sigma * r.excess - r.second_moment;
            assert!(slack > 0.0, "sigma {sigma}: slack {slack}");
        }
    }

    #[test]
    fn check_runner_small() {
        let opts = CheckOptions { profiles: 3, lipschitz_triples: 1000, ..CheckOptions::default() };
        let reps = run_checks(&Check::ALL, &[NoiseFamily::Cauchy], &opts, &qs(), Exec::Sequential).unwrap();
        assert_eq!(reps.len(), 6);
        assert!(reps.iter().all(|r| r.passed), "{reps:#?}");
        assert!(reps[0].quantity("operative_sigma").unwrap() >= 4.0);
        assert_eq!(Check::parse("variance").unwrap(), Check::Variance);
        assert!(Check::parse("bogus").is_err());
    }
}
