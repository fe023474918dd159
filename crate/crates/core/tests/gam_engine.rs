use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use regdeaths::gam::{
    estimate_ar1, fit, fit_with_lambda, model_summary, predict, refit_with_ar1, select_lambda,
    ArGroups, Family, FitSettings, GamProblem, LambdaGrid, Penalty,
};
use regdeaths::spline::{apply_constraints, build_basis, BasisSpec};

/// Intercept plus one centered cubic smooth of `x`.
fn smooth_design(x: &[f64], k: usize) -> (DMatrix<f64>, Penalty) {
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let knots = (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect();
    let spec = BasisSpec::cubic(knots).unwrap();
    let basis = apply_constraints(&build_basis(&spec, x).unwrap());
    let n = x.len();
    let m = basis.design.ncols();
    let mut design = DMatrix::from_element(n, m + 1, 1.0);
    design.view_mut((0, 1), (n, m)).copy_from(&basis.design);
    (
        design,
        Penalty {
            label: "s(x)".into(),
            offset: 1,
            matrix: basis.penalty,
        },
    )
}

fn ls_oracle(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let xt = x.transpose();
    (&xt * x).lu().solve(&(&xt * y)).expect("full rank")
}

#[test]
fn unpenalized_gaussian_equals_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let n = rng.random_range(8..40);
        let p = rng.random_range(1..6);
        let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-2.0..2.0));
        let y = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
        let f = fit(
            &GamProblem::new(x.clone(), Vec::new(), y.clone(), Family::GaussianIdentity),
            &FitSettings::default(),
        )
        .unwrap();
        let oracle = ls_oracle(&x, &y);
        for (a, b) in f.beta.iter().zip(oracle.iter()) {
            assert!((a - b).abs() <= 1e-8 * (1.0 + b.abs()), "{a} vs {b}");
        }
        assert!(f.converged);
    }
}

#[test]
fn huge_lambda_collapses_to_a_line() {
    let x: Vec<f64> = (0..60).map(|i| i as f64 / 59.0).collect();
    let y: Vec<f64> = x.iter().map(|v| (6.0 * v).sin() + 2.0 * v).collect();
    let (design, pen) = smooth_design(&x, 8);
    let problem = GamProblem::new(design, vec![pen], DVector::from_vec(y), Family::GaussianIdentity);
    let f = fit_with_lambda(&problem, &FitSettings::default(), &[1e8], None).unwrap();
    let mu = &f.fitted_values;
    // second differences of an evenly spaced line vanish
    for i in 1..59 {
        assert!((mu[i + 1] - 2.0 * mu[i] + mu[i - 1]).abs() < 1e-6);
    }
    assert!(f.smooths[0].edf < 1.01, "edf {}", f.smooths[0].edf);
}

#[test]
fn pure_noise_selects_heavy_smoothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let x: Vec<f64> = (0..400).map(|i| i as f64 / 399.0).collect();
    let y: Vec<f64> = x.iter().map(|_| noise.sample(&mut rng)).collect();
    let (design, pen) = smooth_design(&x, 10);
    let problem = GamProblem::new(design, vec![pen], DVector::from_vec(y), Family::GaussianIdentity);
    let settings = FitSettings::default();
    let sel = select_lambda(&problem, &settings).unwrap();
    let top = settings.lambda_grid.values.last().unwrap();
    assert!(sel.rho[0] >= top / 10.0, "rho = {}", sel.rho[0]);
    // the criterion does not increase towards the heavy end of the grid
    let last_sweep: Vec<f64> = sel
        .trace
        .iter()
        .filter(|t| t.outer == 0 && t.sweep == 0)
        .map(|t| t.score)
        .collect();
    let best = last_sweep.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(last_sweep.last().unwrap() - best < 1e-3 * best);
}

#[test]
fn linear_truth_is_fit_exactly_at_every_grid_point() {
    let x: Vec<f64> = (0..50).map(|i| i as f64 * 0.2).collect();
    let y: Vec<f64> = x.iter().map(|v| 1.5 - 0.7 * v).collect();
    let (design, pen) = smooth_design(&x, 6);
    let problem = GamProblem::new(design, vec![pen], DVector::from_vec(y.clone()), Family::GaussianIdentity);
    for &rho in &LambdaGrid::default().values {
        let settings = FitSettings {
            lambda_grid: LambdaGrid { values: vec![rho] },
            ..FitSettings::default()
        };
        let f = fit(&problem, &settings).unwrap();
        assert_eq!(f.rho, vec![rho]);
        for (m, t) in f.fitted_values.iter().zip(&y) {
            assert!((m - t).abs() < 1e-6);
        }
    }
}

fn ar_series(rng: &mut ChaCha8Rng, groups: usize, len: usize, phi: f64) -> (Vec<f64>, ArGroups) {
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut out = Vec::new();
    let mut rows = Vec::new();
    for _ in 0..groups {
        let mut prev: f64 = noise.sample(rng);
        let mut idx = Vec::new();
        for t in 0..len {
            if t > 0 {
                prev = phi * prev + (1.0 - phi * phi).sqrt() * noise.sample(rng);
            }
            idx.push(out.len());
            out.push(prev);
        }
        rows.push(idx);
    }
    (out, ArGroups { groups: rows })
}

#[test]
fn ar1_estimates() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (white, g) = ar_series(&mut rng, 10, 50, 0.0);
    assert_eq!(white.len(), 500);
    assert!(estimate_ar1(&white, &g).unwrap().abs() < 0.1);
    let (red, g) = ar_series(&mut rng, 40, 100, 0.3);
    let phi = estimate_ar1(&red, &g).unwrap();
    assert!((phi - 0.3).abs() < 0.05, "phi = {phi}");
    assert!(estimate_ar1(&[0.0; 6], &ArGroups { groups: vec![vec![0, 1, 2], vec![3, 4, 5]] }).is_err());
}

fn trend_problem(seed: u64, phi: f64, groups: usize, len: usize) -> GamProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (e, g) = ar_series(&mut rng, groups, len, phi);
    let n = groups * len;
    let t: Vec<f64> = (0..n).map(|i| (i % len) as f64 / len as f64).collect();
    let (design, pen) = smooth_design(&t, 6);
    let y: Vec<f64> = (0..n).map(|i| 2.0 + (3.0 * t[i]).sin() + 0.5 * e[i]).collect();
    GamProblem::new(design, vec![pen], DVector::from_vec(y), Family::GaussianIdentity).with_groups(g)
}

#[test]
fn phi_zero_refit_matches_plain_fit() {
    let problem = trend_problem(8, 0.3, 6, 30);
    let s = FitSettings::default();
    let plain = fit(&problem, &s).unwrap();
    let zero = refit_with_ar1(&problem, &s, 0.0).unwrap();
    assert!((&plain.beta - &zero.beta).amax() < 1e-10);
    assert_eq!(zero.phi_ar1, Some(0.0));
}

#[test]
fn correlated_refit_inflates_standard_errors() {
    let problem = trend_problem(9, 0.3, 8, 60);
    let s = FitSettings::default();
    let lambda = fit(&problem, &s).unwrap().lambda;
    let plain = fit_with_lambda(&problem, &s, &lambda, Some(0.0)).unwrap();
    let ar = fit_with_lambda(&problem, &s, &lambda, Some(0.3)).unwrap();
    let se0 = plain.coefficient_se();
    let se1 = ar.coefficient_se();
    assert!(se1[0] > se0[0], "{} vs {}", se1[0], se0[0]);
    let two_stage = fit(&problem, &FitSettings { ar1_enabled: true, ..s }).unwrap();
    let phi = two_stage.phi_ar1.unwrap();
    assert!((phi - 0.3).abs() < 0.1, "phi = {phi}");
}

#[test]
fn extreme_phi_on_short_groups() {
    let problem = trend_problem(10, 0.5, 20, 4);
    let s = FitSettings::default();
    let plain = fit(&problem, &s).unwrap();
    let ar = refit_with_ar1(&problem, &s, 0.99).unwrap();
    assert!(ar.converged);
    assert!(ar.beta.iter().all(|b| b.is_finite()));
    assert!(ar.coefficient_se()[0] > plain.coefficient_se()[0]);
}

fn poisson_problem(seed: u64) -> GamProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..300).map(|i| i as f64 / 299.0).collect();
    let y: Vec<f64> = x
        .iter()
        .map(|v| Poisson::new((2.0 + (5.0 * v).cos()).exp()).unwrap().sample(&mut rng))
        .collect();
    let (design, pen) = smooth_design(&x, 10);
    GamProblem::new(design, vec![pen], DVector::from_vec(y), Family::PoissonLog)
}

#[test]
fn poisson_score_equations_hold() {
    let problem = poisson_problem(21);
    let f = fit(&problem, &FitSettings::default()).unwrap();
    assert!(f.converged);
    let resid = &problem.y - &f.fitted_values;
    let mut score = problem.design.transpose() * resid;
    let pen = &problem.penalties[0];
    let d = pen.matrix.nrows();
    let sb = &pen.matrix * f.beta.rows(pen.offset, d) * f.lambda[0];
    let mut block = score.rows_mut(pen.offset, d);
    block -= sb;
    assert!(score.amax() < 1e-6, "max score {}", score.amax());
    for s in &f.smooths {
        assert!(s.edf <= s.dim as f64 + 1e-9);
    }
}

#[test]
fn reml_option_runs_and_smooths() {
    let problem = poisson_problem(22);
    let s = FitSettings {
        lambda_method: regdeaths::gam::LambdaMethod::Reml,
        ..FitSettings::default()
    };
    let f = fit(&problem, &s).unwrap();
    assert!(f.converged);
    assert!(f.criterion.unwrap().is_finite());
    let edf = f.smooths[0].edf;
    assert!(edf > 2.0 && edf < 9.0, "edf {edf}");
}

#[test]
fn prediction_oracles() {
    let problem = poisson_problem(23);
    let f = fit(&problem, &FitSettings::default()).unwrap();
    let train = predict(&f, &problem.design).unwrap();
    assert_eq!(train.mu, f.fitted_values);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let new = DMatrix::from_fn(7, problem.design.ncols(), |_, _| rng.random_range(-1.0..1.0));
    let p = predict(&f, &new).unwrap();
    for i in 0..7 {
        let mut eta = 0.0;
        let mut var = 0.0;
        for a in 0..new.ncols() {
            eta += new[(i, a)] * f.beta[a];
            for b in 0..new.ncols() {
                var += new[(i, a)] * f.v_beta[(a, b)] * new[(i, b)];
            }
        }
        assert!((p.eta[i] - eta).abs() < 1e-10);
        assert!((p.mu[i] - eta.exp()).abs() < 1e-9 * eta.exp());
        assert!((p.se_eta[i] - var.sqrt()).abs() < 1e-10);
    }
    let eig = f.v_beta.clone().symmetric_eigen().eigenvalues;
    assert!(eig.min() > -1e-12);
}

#[test]
fn summary_formulae() {
    // saturated: one column per observation
    let y = DVector::from_vec(vec![3.0, 1.0, 4.0]);
    let f = fit(
        &GamProblem::new(DMatrix::identity(3, 3), Vec::new(), y.clone(), Family::GaussianIdentity),
        &FitSettings::default(),
    )
    .unwrap();
    assert_eq!(model_summary(&f, y.as_slice()).r_squared_adj, 1.0);

    let x = DMatrix::from_row_slice(5, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0, 1.0, 4.0]);
    let y = [1.0, 3.0, 2.0, 5.0, 4.0];
    let f = fit(
        &GamProblem::new(x, Vec::new(), DVector::from_column_slice(&y), Family::GaussianIdentity),
        &FitSettings::default(),
    )
    .unwrap();
    let s = model_summary(&f, &y);
    // hand computation: slope 0.8, intercept 1.4, RSS 3.6, TSS 10
    let expected = 1.0 - (3.6 / 3.0) / (10.0 / 4.0);
    assert!((s.r_squared_adj - expected).abs() < 1e-12);
    assert!((s.deviance_explained - 0.64).abs() < 1e-12);
}

#[test]
fn fitting_is_deterministic() {
    let problem = poisson_problem(24);
    let a = fit(&problem, &FitSettings::default()).unwrap();
    let b = fit(&problem, &FitSettings::default()).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn least_squares_property(seed in any::<u64>(), n in 6usize..30, p in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-3.0..3.0));
        let y = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        let f = fit(
            &GamProblem::new(x.clone(), Vec::new(), y.clone(), Family::GaussianIdentity),
            &FitSettings::default(),
        ).unwrap();
        let oracle = ls_oracle(&x, &y);
        for (a, b) in f.beta.iter().zip(oracle.iter()) {
            prop_assert!((a - b).abs() <= 1e-8 * (1.0 + b.abs()));
        }
    }
}
