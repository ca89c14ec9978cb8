use faer::Mat;
use kcrr::data::{friedman_eval, load_csv, write_csv, Dataset, FriedmanFunction, NoiseFamily, NoiseSpec};
use kcrr::evalsel::{cv_select, mae, rsse, CvOptions, Estimator, GridSpec};
use kcrr::kernel::{cross_gram, gram, GaussianKernel};
use kcrr::loss::{eval_loss, ClipBound, ScaledLoss};
use kcrr::par::Exec;
use kcrr::seed::stream_rng;
use kcrr::solver::{fit, fit_gram, weighted_krr_solve, SolverConfig};
use kcrr::theory::{self, NoiseModel, QuadSettings};
use proptest::prelude::*;
use rand::Rng;

fn inputs(seed: u64, n: usize, d: usize) -> Mat<f64> {
    let mut rng = stream_rng(seed, &[]);
    Mat::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0))
}

fn loss_strategy() -> impl Strategy<Value = ScaledLoss> {
    prop_oneof![
        (0.1f64..3.0).prop_map(|s| ScaledLoss::cauchy(s).unwrap()),
        (0.1f64..3.0).prop_map(|s| ScaledLoss::correntropy(s).unwrap()),
        (0.1f64..3.0).prop_map(|s| ScaledLoss::huber(s).unwrap()),
        Just(ScaledLoss::absolute()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn gram_is_symmetric_psd_and_matches_cross_gram(seed in any::<u64>(), n in 1usize..200, d in 1usize..5, gamma in 0.05f64..5.0) {
        let x = inputs(seed, n, d);
        let kern = GaussianKernel::new(gamma).unwrap();
        let k = gram(&kern, x.as_ref()).unwrap();
        let c = cross_gram(&kern, x.as_ref(), x.as_ref()).unwrap();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(k.get(i, j), k.get(j, i));
                prop_assert_eq!(k.get(i, j), c[(i, j)]);
            }
        }
        let eig = k.as_mat().self_adjoint_eigenvalues(faer::Side::Lower).unwrap();
        let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert!(min >= -1e-8 * n as f64, "min eigenvalue {}", min);
    }

    #[test]
    fn irls_descends_and_solve_is_stationary(seed in any::<u64>(), n in 2usize..=20, loss in loss_strategy(), lambda in 1e-4f64..1.0) {
        let x = inputs(seed, n, 2);
        let k = gram(&GaussianKernel::new(0.7).unwrap(), x.as_ref()).unwrap();
        let mut rng = stream_rng(seed, &[1]);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..2.0)).collect();
        let (a, b) = weighted_krr_solve(&k, &y, &w, lambda, 0.0).unwrap();
        // Stationarity: W r = λ a and Σ a = 0.
        let ka = k.matvec(&a);
        let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs())) * w.iter().fold(0.0f64, |m, v| m.max(*v));
        for i in 0..n {
            prop_assert!((w[i] * (y[i] - ka[i] - b) - lambda * a[i]).abs() <= 1e-9 * scale.max(1.0));
        }
        prop_assert!(a.iter().sum::<f64>().abs() <= 1e-9 * scale.max(1.0) / lambda);
        let f = fit_gram(&SolverConfig::new(loss, lambda).unwrap(), &k, &y).unwrap();
        prop_assert!(f.final_objective <= f.state.objective_trace[0]);
        prop_assert_eq!(f.state.objective_trace.len(), f.iterations_used + 1);
    }

    #[test]
    fn permuting_rows_permutes_coefficients(seed in any::<u64>(), n in 3usize..15) {
        let x = inputs(seed, n, 2);
        let mut rng = stream_rng(seed, &[2]);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
        let xp = Mat::from_fn(n, 2, |i, j| x[(perm[i], j)]);
        let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let kern = GaussianKernel::new(0.9).unwrap();
        let cfg = SolverConfig::new(ScaledLoss::cauchy(0.5).unwrap(), 1e-2).unwrap();
        let m = fit(&cfg, &kern, x.as_ref(), &y).unwrap();
        let mp = fit(&cfg, &kern, xp.as_ref(), &yp).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            prop_assert!((mp.coef[i] - m.coef[p]).abs() <= 1e-8 * (1.0 + m.coef[p].abs()));
        }
        let q = inputs(seed ^ 1, 5, 2);
        let (p1, p2) = (m.predict(q.as_ref()).unwrap(), mp.predict(q.as_ref()).unwrap());
        for (u, v) in p1.iter().zip(&p2) {
            prop_assert!((u - v).abs() <= 1e-8);
        }
    }

    #[test]
    fn clipping_never_raises_empirical_cauchy_risk(seed in any::<u64>(), lambda in 1e-4f64..1e-1, slack in 1.0f64..1.5) {
        let n = 40;
        let x = inputs(seed, n, 1);
        let y: Vec<f64> = (0..n).map(|i| (2.0 * x[(i, 0)]).sin()).collect();
        let m = slack * y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let kern = GaussianKernel::new(0.4).unwrap();
        let loss = ScaledLoss::cauchy(0.3).unwrap();
        let base = SolverConfig::new(loss, lambda).unwrap();
        let raw = fit(&base, &kern, x.as_ref(), &y).unwrap();
        let clipped = fit(&base.clone().with_clip(Some(ClipBound::new(m).unwrap())), &kern, x.as_ref(), &y).unwrap();
        let q = inputs(seed ^ 7, 60, 1);
        let truth: Vec<f64> = (0..60).map(|i| (2.0 * q[(i, 0)]).sin()).collect();
        let risk = |p: &[f64]| p.iter().zip(&truth).map(|(a, t)| eval_loss(&loss, t - a).unwrap()).sum::<f64>();
        prop_assert!(risk(&clipped.predict(q.as_ref()).unwrap()) <= risk(&raw.predict(q.as_ref()).unwrap()));
    }

    #[test]
    fn metric_sanity(seed in any::<u64>(), n in 2usize..50) {
        let mut rng = stream_rng(seed, &[]);
        let truth: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let pred: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        prop_assert!(mae(&pred, &truth).unwrap() >= 0.0);
        let mean = truth.iter().sum::<f64>() / n as f64;
        if truth.iter().any(|t| (t - mean).abs() > 1e-9) {
            prop_assert!((rsse(&vec![mean; n], &truth).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_round_trip(seed in any::<u64>(), n in 1usize..30, d in 1usize..4) {
        let x = inputs(seed, n, d);
        let mut rng = stream_rng(seed, &[3]);
        let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 1e3 - 500.0).collect();
        let ds = Dataset::new(x, y, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_csv(&path, &ds, b',').unwrap();
        let back = load_csv(&path, &ds.target_name, b',').unwrap();
        prop_assert_eq!(&back.y, &ds.y);
        prop_assert_eq!(&back.feature_names, &ds.feature_names);
        for i in 0..n {
            for j in 0..d {
                prop_assert_eq!(back.x[(i, j)], ds.x[(i, j)]);
            }
        }
        write_csv(&dir.path().join("e.csv"), &back, b',').unwrap();
        prop_assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(dir.path().join("e.csv")).unwrap());
    }

    #[test]
    fn selected_point_has_minimal_cv_mae(seed in any::<u64>()) {
        let mut rng = stream_rng(seed, &[]);
        let x = FriedmanFunction::III.sample_inputs(&mut rng, 40);
        let noise = NoiseSpec::new(NoiseFamily::Cauchy, 0.1).unwrap();
        let y: Vec<f64> = (0..40)
            .map(|i| {
                let row: Vec<f64> = (0..4).map(|j| x[(i, j)]).collect();
                friedman_eval(FriedmanFunction::III, &row).unwrap() + noise.sample(&mut rng)
            })
            .collect();
        let ds = Dataset::new(x, y, None).unwrap();
        let grid = GridSpec { lambdas: vec![1e-1, 1e-3], gammas: vec![1.0, 0.25], sigma2s: vec![1e-1, 1e-2], huber_sigmas: vec![1.0] };
        let rep = cv_select(Estimator::Kcrr, &grid, &ds, 4, seed, &CvOptions { exec: Exec::Sequential, ..CvOptions::default() }).unwrap();
        for s in &rep.scores {
            if let Some(m) = s.mean_mae {
                prop_assert!(rep.best_mae <= m);
            }
        }
    }

    #[test]
    fn inner_risk_is_minimal_at_zero(u in -6.0f64..6.0, sigma in 0.2f64..5.0, fam in 0usize..3) {
        prop_assume!(u.abs() > 1e-3);
        let family = [NoiseFamily::Gaussian, NoiseFamily::Cauchy, NoiseFamily::Pareto][fam];
        let noise = NoiseModel::of(family, 1.0).unwrap();
        let r = theory::inner_risk_increment(&noise, sigma, u, &QuadSettings::default()).unwrap();
        prop_assert!(r.value > 0.0);
        prop_assert!(r.self_check_diff <= 1e-9 * r.value);
    }

    #[test]
    fn calibration_ratio_holds_above_threshold(seed in any::<u64>(), factor in 1.0f64..4.0, fam in 0usize..3) {
        let family = [NoiseFamily::Gaussian, NoiseFamily::Cauchy, NoiseFamily::Pareto][fam];
        let noise = NoiseModel::of(family, 1.0).unwrap();
        let q = QuadSettings::default();
        let c1 = theory::default_c1(&noise, &q).unwrap().sigma;
        let sigma = factor * c1.max(4.0);
        let rep = theory::check_calibration(&noise, 1.0, sigma, 3, seed, 1e-6, &q, Exec::Sequential).unwrap();
        prop_assert!(rep.passed, "{:?}", rep);
    }
}

#[test]
fn noise_is_symmetric() {
    const N: usize = 1_000_000;
    for fam in [NoiseFamily::Gaussian, NoiseFamily::Cauchy, NoiseFamily::Pareto] {
        let spec = NoiseSpec::new(fam, 1.0).unwrap();
        let mut rng = stream_rng(11, &[fam as u64]);
        let mut a: Vec<f64> = (0..N).map(|_| spec.sample(&mut rng)).collect();
        let mut b: Vec<f64> = a.iter().map(|v| -v).collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        // Two-sample KS statistic by merging the sorted samples.
        let (mut i, mut j, mut ks) = (0, 0, 0.0f64);
        while i < N && j < N {
            let t = a[i].min(b[j]);
            while i < N && a[i] <= t {
                i += 1;
            }
            while j < N && b[j] <= t {
                j += 1;
            }
            ks = ks.max((i as f64 - j as f64).abs() / N as f64);
        }
        assert!(ks < 0.01, "{}: KS {ks}", fam.name());
    }
}

#[test]
fn friedman_is_pure() {
    let x = [0.3, 0.7, 0.1, 0.9, 0.5];
    assert_eq!(friedman_eval(FriedmanFunction::I, &x).unwrap(), friedman_eval(FriedmanFunction::I, &x).unwrap());
}
