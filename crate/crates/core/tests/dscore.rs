mod common;

use common::random_dataset;
use nalgebra::{DMatrix, DVector};
use peg_core::dscore::weights::{gradient_sup, lasso_kkt, partition};
use peg_core::dscore::*;
use peg_core::peg::*;
use peg_core::*;

fn setup(seed: u64) -> (Dataset, PropensityModel, PenalizedFit) {
    let d = random_dataset(200, 5, 3, seed);
    let pm = fit_propensity(&d, &ModelIndexSet::new(vec![0, 1], 5).unwrap()).unwrap();
    let fit = penalized_g_fit(&d, &pm, CorrKind::Exchangeable, &ScadPenalty::new(0.02, 3.7).unwrap(), &FitControls::default()).unwrap();
    (d, pm, fit)
}

fn manual_fit(delta: Vec<f64>, psi: Vec<f64>, sigma2: f64) -> PenalizedFit {
    let k = delta.len();
    PenalizedFit {
        selected: ModelIndexSet::full(k),
        delta,
        psi,
        sigma2,
        corr: WorkingCorrelation::Independent,
        corr_clamped: false,
        penalty: ScadPenalty::new(0.0, 3.7).unwrap(),
        iterations: 1,
        converged: true,
    }
}

fn toy_sd(mean: Vec<f64>, info: DMatrix<f64>) -> ScoreDecomposition {
    let k = mean.len();
    ScoreDecomposition {
        scores: DMatrix::zeros(4, k),
        mean: DVector::from_vec(mean),
        jacobian: info.clone(),
        info,
    }
}

#[test]
fn single_session_score_by_hand() {
    let s = Subject::new("a", &[SessionRow { y: 2.5, a: 1.0, h: vec![1.0] }]).unwrap();
    let d = Dataset::from_subjects(vec![s]).unwrap();
    let pm = PropensityModel::from_fitted(vec![vec![0.3]]);
    let fit = manual_fit(vec![0.5], vec![1.2], 2.0);
    let sd = efficient_scores(&d, &pm, &fit).unwrap();
    let expect = (1.0 - 0.3) / 2.0 * (2.5 - 0.5 - 1.2);
    assert!((sd.mean[0] - expect).abs() < 1e-15);
    assert!((sd.info[(0, 0)] - expect * expect).abs() < 1e-15);
}

#[test]
fn perfect_fit_has_zero_scores() {
    let base = random_dataset(20, 3, 3, 2);
    let (delta, psi) = (vec![0.5, -1.0, 0.2], vec![1.0, 0.3, 0.0]);
    let theta = DVector::from_iterator(6, delta.iter().chain(&psi).cloned());
    let subjects = base
        .subjects()
        .iter()
        .map(|s| {
            let mut rows = s.rows();
            for r in &mut rows {
                let x: Vec<f64> = r.h.iter().cloned().chain(r.h.iter().map(|v| r.a * v)).collect();
                r.y = x.iter().zip(theta.iter()).map(|(a, b)| a * b).sum();
            }
            Subject::new(s.id.clone(), &rows).unwrap()
        })
        .collect();
    let d = Dataset::from_subjects(subjects).unwrap();
    let pm = fit_propensity(&d, &ModelIndexSet::new(vec![0, 1], 3).unwrap()).unwrap();
    let sd = efficient_scores(&d, &pm, &manual_fit(delta, psi, 1.0)).unwrap();
    assert!(sd.mean.amax() < 1e-12);
    assert!(sd.info.amax() < 1e-24);
}

#[test]
fn doubling_subjects_keeps_mean_and_information() {
    let (d, pm, fit) = setup(4);
    let doubled = Dataset::from_subjects(d.subjects().iter().chain(d.subjects()).cloned().collect()).unwrap();
    let pm2 = PropensityModel::from_fitted(pm.fitted.iter().chain(&pm.fitted).cloned().collect());
    let a = efficient_scores(&d, &pm, &fit).unwrap();
    let b = efficient_scores(&doubled, &pm2, &fit).unwrap();
    assert!((&a.mean - &b.mean).amax() < 1e-12);
    assert!((&a.info - &b.info).amax() < 1e-12);
}

#[test]
fn decorrelated_score_arithmetic() {
    let sd = toy_sd(vec![0.2, 0.1], DMatrix::identity(2, 2));
    assert!((decorrelated_score(&sd, 0, &DVector::from_vec(vec![0.5])) - 0.15).abs() < 1e-15);
    assert_eq!(decorrelated_score(&sd, 0, &DVector::zeros(1)), 0.2);
    let zero = toy_sd(vec![0.0, 0.0], DMatrix::identity(2, 2));
    assert_eq!(decorrelated_score(&zero, 1, &DVector::from_vec(vec![3.0])), 0.0);
}

#[test]
fn one_step_scalar_update() {
    let sd = toy_sd(vec![0.05], DMatrix::from_element(1, 1, 0.5));
    let fit = manual_fit(vec![0.0], vec![1.0], 1.0);
    let w = weights_from_info(&sd.info, 0, WeightMethod::Full, 0.0).unwrap();
    let r = one_step(&sd, &fit, 0, &w, 0.05).unwrap();
    assert!((r.psi_tilde - 1.1).abs() < 1e-15);
    assert!((r.interval.upper - r.psi_tilde - (r.psi_tilde - r.interval.lower)).abs() < 1e-15);
    assert!(r.sigma_s >= 0.0);

    let still = toy_sd(vec![0.0], DMatrix::from_element(1, 1, 0.5));
    let r = one_step(&still, &fit, 0, &w, 0.05).unwrap();
    assert_eq!(r.psi_tilde, 1.0);

    let flat = toy_sd(vec![0.1], DMatrix::from_element(1, 1, 1e-12));
    assert!(matches!(one_step(&flat, &fit, 0, &w, 0.05), Err(PegError::DegenerateInformation { .. })));
}

#[test]
fn score_at_zero_matches_recomputed_scores() {
    let (d, pm, fit) = setup(6);
    let sd = efficient_scores(&d, &pm, &fit).unwrap();
    for k in [0usize, 1] {
        let mut zeroed = fit.clone();
        zeroed.psi[k] = 0.0;
        let direct = efficient_scores(&d, &pm, &zeroed).unwrap().mean;
        let shifted = &sd.mean + sd.jacobian.column(k) * fit.psi[k];
        assert!((direct - shifted).amax() < 1e-12);
    }
}

#[test]
fn weights_on_real_information() {
    let (d, pm, fit) = setup(8);
    let sd = efficient_scores(&d, &pm, &fit).unwrap();
    for k in 0..5 {
        let full = weights_from_info(&sd.info, k, WeightMethod::Full, 0.0).unwrap();
        let lasso = weights_from_info(&sd.info, k, WeightMethod::Lasso, 0.0).unwrap();
        for (a, b) in full.w.iter().zip(&lasso.w) {
            assert!((a - b).abs() < 1e-6);
        }
        let (q, b) = partition(&sd.info, k);
        assert!(gradient_sup(&q, &b, &full.vector()) < 1e-8);
        for frac in [0.01, 0.1, 0.5] {
            let lambda = frac * b.amax();
            let dz = weights_from_info(&sd.info, k, WeightMethod::Dantzig, lambda).unwrap();
            assert!(gradient_sup(&q, &b, &dz.vector()) <= lambda + 1e-9);
            let la = weights_from_info(&sd.info, k, WeightMethod::Lasso, lambda).unwrap();
            assert!(lasso_kkt(&q, &b, &la.vector(), lambda, 1e-6));
        }
        let big = weights_from_info(&sd.info, k, WeightMethod::Dantzig, b.amax()).unwrap();
        assert!(big.w.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn cross_validation_contracts() {
    let (d, pm, fit) = setup(10);
    let sd = efficient_scores(&d, &pm, &fit).unwrap();
    let folds = CvFolds::new(&sd, 5, 1).unwrap();
    let single = cv_select_lambda_w(1, WeightMethod::Lasso, &[0.01], &folds).unwrap();
    assert_eq!(single.lambda_w, 0.01);
    assert!(cv_select_lambda_w(1, WeightMethod::Lasso, &[], &folds).is_err());

    // two identical halves as folds see the same loss
    let twice = ScoreDecomposition {
        scores: DMatrix::from_fn(2 * sd.n(), sd.dim(), |r, c| sd.scores[(r % sd.n(), c)]),
        ..sd.clone()
    };
    let assignment: Vec<usize> = (0..2 * sd.n()).map(|i| i / sd.n()).collect();
    let halves = CvFolds::from_assignment(&twice, &assignment).unwrap();
    for lambda in default_cv_grid(&sd, 2) {
        let losses: Vec<f64> = (0..2)
            .map(|f| {
                let w = weights_from_info(&halves.train[f], 2, WeightMethod::Lasso, lambda).unwrap();
                cv::validation_loss(&halves.val[f], 2, &w.vector())
            })
            .collect();
        assert_eq!(losses[0], losses[1]);
    }
}

#[test]
fn report_covers_exactly_the_selected_set() {
    let (d, pm, fit) = setup(12);
    for method in [WeightMethod::Full, WeightMethod::Lasso, WeightMethod::Dantzig] {
        let r = dscore(&d, &pm, &fit, method, 0.05, &CvSettings::default()).unwrap();
        let coords: Vec<usize> = r.results.iter().map(|o| o.coordinate).collect();
        assert_eq!(coords, fit.selected.indices());
        for o in &r.results {
            assert!(o.sigma_s >= 0.0 && o.partial_info > 0.0);
            assert!((o.interval.estimate - o.psi_tilde).abs() < 1e-15);
        }
    }
    let mut intercept_only = fit.clone();
    intercept_only.selected = ModelIndexSet::intercept_only();
    let r = dscore(&d, &pm, &intercept_only, WeightMethod::Lasso, 0.05, &CvSettings::default()).unwrap();
    assert_eq!(r.results.len(), 1);
    assert_eq!(r.results[0].coordinate, 0);
}
