use forcelfd_core::demo::{extract_features, synthesize_demonstrations, FeatureSelector, Scenario, ScenarioSpec};
use forcelfd_core::gmm::{build_reference_database, fit_gmm, uniform_grid, GmmConfig, ReferenceDatabase, ReferenceEntry};
use forcelfd_core::kmp::{gaussian_kl, insert_via_point, rbf_kernel, train_kmp, KernelParams, KmpModel, ViaPoint, DEFAULT_VIA_THRESHOLD};
use forcelfd_core::linalg::min_eigenvalue;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn compression_reference(grid: usize) -> ReferenceDatabase {
    let db = synthesize_demonstrations(&ScenarioSpec::new(Scenario::Compression), 3, 0.2, 12).unwrap().subsample(4);
    let data = extract_features(&db, &FeatureSelector::default()).unwrap().joint_points();
    let fit = fit_gmm(&data, 1, &GmmConfig { components: 8, seed: 3, ..Default::default() }).unwrap();
    build_reference_database(&fit.model, &uniform_grid(grid)).unwrap()
}

/// Direct evaluation of the kernelized mean and covariance with dense
/// inverses, independent of the factorized implementation.
fn dense_prediction(reference: &ReferenceDatabase, p: KernelParams, s: f64) -> (f64, f64) {
    let n = reference.len();
    let k = DMatrix::from_fn(n, n, |i, j| rbf_kernel(&reference.entries[i].input, &reference.entries[j].input, p.sigma_f));
    let sigma = DMatrix::from_diagonal(&DVector::from_iterator(n, reference.entries.iter().map(|e| e.covariance[0])));
    let mu = DVector::from_iterator(n, reference.entries.iter().map(|e| e.mean[0]));
    let ks = DVector::from_iterator(n, reference.entries.iter().map(|e| rbf_kernel(&e.input, &[s], p.sigma_f)));
    let mean = (ks.transpose() * (&k + &sigma * p.lambda).try_inverse().unwrap() * &mu)[(0, 0)];
    let var = n as f64 / p.lambda_c * (1.0 - (ks.transpose() * (&k + &sigma * p.lambda_c).try_inverse().unwrap() * &ks)[(0, 0)]);
    (mean, var)
}

#[test]
fn factorized_prediction_matches_dense_formula() {
    let reference = compression_reference(60);
    let p = KernelParams::default();
    let model = train_kmp(&reference, p).unwrap();
    for s in [0.0, 0.13, 0.4, 0.5, 0.77, 1.0, 1.3] {
        let (mean, var) = dense_prediction(&reference, p, s);
        let got_mean = model.predict_mean(&[s]).unwrap()[0];
        let got_var = model.predict_covariance_raw(&[s]).unwrap()[(0, 0)];
        assert!((got_mean - mean).abs() < 1e-6 * mean.abs().max(1.0), "s={s}: {got_mean} vs {mean}");
        assert!((got_var - var).abs() < 1e-6 * var.abs().max(1.0), "s={s}: {got_var} vs {var}");
    }
}

#[test]
fn via_point_branches_and_contract() {
    let reference = compression_reference(500);
    let r = DEFAULT_VIA_THRESHOLD;
    let on_grid = reference.entries[250].input[0];

    let replaced = insert_via_point(&reference, &ViaPoint::scalar(on_grid + 0.4 * r, 20.0, 1e-8), r).unwrap();
    assert_eq!(replaced.len(), reference.len());
    assert_eq!(replaced.entries[250].mean, vec![20.0]);
    assert_eq!(replaced.entries[250].input, vec![on_grid + 0.4 * r]);

    let s_d = 0.5;
    let gap = reference.entries.iter().map(|e| (e.input[0] - s_d).abs()).fold(f64::INFINITY, f64::min);
    assert!(gap > r, "0.5 must fall between grid points for the append branch");
    let appended = insert_via_point(&reference, &ViaPoint::scalar(s_d, 20.0, 1e-8), r).unwrap();
    assert_eq!(appended.len(), reference.len() + 1);
    assert!(appended.entries.windows(2).all(|w| w[1].input[0] > w[0].input[0]));

    for db in [&replaced, &appended] {
        let s = if std::ptr::eq(db, &replaced) { on_grid + 0.4 * r } else { s_d };
        let model = train_kmp(db, KernelParams::default()).unwrap();
        let pred = model.predict_mean(&[s]).unwrap()[0];
        assert!((pred - 20.0).abs() < 1e-3, "{pred}");
    }
}

#[test]
fn small_regularization_reproduces_reference_means() {
    // A kernel narrow enough for the 100-point grid keeps the Gram matrix
    // well conditioned; the residual is then O(λ Σ).
    let db = synthesize_demonstrations(&ScenarioSpec::new(Scenario::Constant), 3, 0.3, 5).unwrap().subsample(4);
    let data = extract_features(&db, &FeatureSelector::default()).unwrap().joint_points();
    let fit = fit_gmm(&data, 1, &GmmConfig { components: 8, seed: 5, ..Default::default() }).unwrap();
    let reference = build_reference_database(&fit.model, &uniform_grid(100)).unwrap();
    let model = train_kmp(&reference, KernelParams { sigma_f: 1e4, lambda: 1e-6, lambda_c: 1e-6 }).unwrap();
    for e in &reference.entries {
        let pred = model.predict_mean(&e.input).unwrap()[0];
        assert!((pred - e.mean[0]).abs() <= 1e-6 * e.mean[0].abs(), "{pred} vs {}", e.mean[0]);
    }
}

#[test]
fn kl_diagnostic_vanishes_for_exact_fit() {
    // A single entry is reproduced exactly, mean and covariance, as both
    // regularizers shrink.
    let reference = ReferenceDatabase {
        input_dim: 1,
        output_dim: 1,
        entries: vec![ReferenceEntry { input: vec![0.5], mean: vec![3.0], covariance: vec![0.5] }],
    };
    let model = train_kmp(&reference, KernelParams { sigma_f: 50.0, lambda: 1e-12, lambda_c: 1e-6 }).unwrap();
    let kl = model.kl_diagnostic().unwrap();
    assert!((0.0..1e-9).contains(&kl), "{kl}");
    let a = DVector::from_row_slice(&[1.0]);
    let c = DMatrix::from_row_slice(1, 1, &[2.0]);
    assert!(gaussian_kl(&a, &c, &a, &c).unwrap().abs() < 1e-15);
}

fn small_reference(points: &[(f64, f64, f64)]) -> ReferenceDatabase {
    ReferenceDatabase {
        input_dim: 1,
        output_dim: 1,
        entries: points
            .iter()
            .map(|&(s, m, v)| ReferenceEntry { input: vec![s], mean: vec![m], covariance: vec![v] })
            .collect(),
    }
}

fn predictions(model: &KmpModel) -> Vec<(f64, f64)> {
    (0..=20)
        .map(|i| {
            let s = i as f64 / 20.0;
            (model.predict_mean(&[s]).unwrap()[0], model.predict_covariance(&[s]).unwrap()[(0, 0)])
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn predictions_ignore_database_order(
        points in prop::collection::vec((0.0f64..1.0, -10.0f64..30.0, 0.01f64..4.0), 1..25),
        rotation in 0usize..25,
    ) {
        let base = small_reference(&points);
        let mut shuffled = base.clone();
        let len = shuffled.entries.len();
        shuffled.entries.rotate_left(rotation % len);
        shuffled.entries.reverse();
        let p = KernelParams::default();
        let a = train_kmp(&base, p).unwrap();
        let b = train_kmp(&shuffled, p).unwrap();
        prop_assert_eq!(predictions(&a), predictions(&b));
    }

    #[test]
    fn predicted_covariance_is_psd(
        points in prop::collection::vec((0.0f64..1.0, -10.0f64..30.0, 0.01f64..4.0), 1..25),
        s in -0.5f64..1.5,
    ) {
        let model = train_kmp(&small_reference(&points), KernelParams::default()).unwrap();
        let cov = model.predict_covariance(&[s]).unwrap();
        prop_assert!(min_eigenvalue(&cov) >= -1e-9);
        prop_assert!(model.predict_mean(&[s]).unwrap()[0].is_finite());
    }
}
