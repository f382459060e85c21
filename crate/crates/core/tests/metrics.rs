use forcelfd_core::control::{render_synthetic_image, run_reproduction, ControllerParams, Phantom, ScanLog, ScanPlan};
use forcelfd_core::demo::{extract_features, synthesize_demonstrations, FeatureSelector, Scenario, ScenarioSpec};
use forcelfd_core::gmm::{build_reference_database, fit_gmm, uniform_grid, GmmConfig};
use forcelfd_core::image::GrayImage;
use forcelfd_core::kmp::{train_kmp, KernelParams};
use forcelfd_core::metrics::{evaluate_scan, force_rmse, psnr, zncc, ForceProfile, ValidationRecord, DEFAULT_PSNR_CAP};
use forcelfd_core::ErrorKind;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn image_strategy() -> impl Strategy<Value = GrayImage> {
    prop::collection::vec(0.0f64..1.0, 64).prop_map(|px| GrayImage::new(8, 8, px).unwrap())
}

fn map(img: &GrayImage, f: impl Fn(f64) -> f64) -> GrayImage {
    GrayImage::new(img.width, img.height, img.pixels.iter().map(|&v| f(v)).collect()).unwrap()
}

fn profile_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (2usize..30).prop_flat_map(|n| {
        (
            prop::collection::vec(0.0f64..1.0, n).prop_map(|mut p| {
                p.sort_by(f64::total_cmp);
                p
            }),
            prop::collection::vec(-20.0f64..40.0, n),
            prop::collection::vec(-20.0f64..40.0, n),
        )
    })
}

proptest! {
    #[test]
    fn zncc_is_bounded_and_affine_invariant(a in image_strategy(), b in image_strategy(), c in 0.01f64..10.0, d in -5.0f64..5.0) {
        let z = zncc(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&z));
        let scaled = map(&b, |v| c * v + d);
        prop_assert!((zncc(&a, &scaled).unwrap() - z).abs() < 1e-12);
        prop_assert!((zncc(&map(&a, |v| c * v + d), &b).unwrap() - z).abs() < 1e-12);
        prop_assert!((zncc(&a, &map(&a, |v| c * v + d)).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rmse_is_a_metric_on_a_shared_grid((grid, a, b) in profile_strategy()) {
        let pa = ForceProfile::new(grid.clone(), a.clone()).unwrap();
        let pb = ForceProfile::new(grid.clone(), b.clone()).unwrap();
        let ab = force_rmse(&pa, &pb).unwrap();
        let ba = force_rmse(&pb, &pa).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
        prop_assert_eq!(force_rmse(&pa, &pa).unwrap(), 0.0);
        // zero only when equal at every grid point
        if a != b && grid.windows(2).all(|w| w[1] > w[0]) {
            prop_assert!(ab > 0.0);
        }
    }

    #[test]
    fn psnr_is_symmetric(a in image_strategy(), b in image_strategy()) {
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }
}

#[test]
fn psnr_decreases_with_noise_amplitude() {
    let reference = render_synthetic_image(
        &Phantom::preset("phantom-b-deep").unwrap(),
        [0.0, 0.0, 0.074],
        3.0,
        &mut ChaCha8Rng::seed_from_u64(1),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pattern: Vec<f64> = (0..reference.pixels.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let values: Vec<f64> = [0.01, 0.05, 0.2]
        .iter()
        .map(|amp| {
            let noisy = GrayImage::new(
                reference.width,
                reference.height,
                reference.pixels.iter().zip(&pattern).map(|(v, n)| v + amp * n).collect(),
            )
            .unwrap();
            psnr(&noisy, &reference).unwrap()
        })
        .collect();
    assert!(values.windows(2).all(|w| w[1] < w[0]), "{values:?}");
}

struct Fixture {
    log: ScanLog,
    validation: Vec<ValidationRecord>,
    training: Vec<String>,
}

fn fixture() -> Fixture {
    let db = synthesize_demonstrations(&ScenarioSpec::new(Scenario::Constant), 4, 0.1, 21).unwrap();
    let (train, val) = db.demonstrations.split_at(2);
    let sub = forcelfd_core::demo::DemonstrationDatabase::new(train.to_vec(), &FeatureSelector::default()).subsample(4);
    let data = extract_features(&sub, &FeatureSelector::default()).unwrap().joint_points();
    let fit = fit_gmm(&data, 1, &GmmConfig { components: 3, ..Default::default() }).unwrap();
    let model = train_kmp(&build_reference_database(&fit.model, &uniform_grid(100)).unwrap(), KernelParams::default()).unwrap();
    let phantom = Phantom::preset("phantom-c").unwrap();
    let plan = ScanPlan::along_x(&phantom, 0.04, 0.002);
    let log = run_reproduction(&model, &plan, &phantom, &ControllerParams::default(), &[], &Default::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let validation = val
        .iter()
        .map(|d| ValidationRecord::from_demonstration(d, &phantom, 20.0, &mut rng).unwrap())
        .collect();
    Fixture { log, validation, training: train.iter().map(|d| d.id.clone()).collect() }
}

#[test]
fn evaluation_against_itself_is_perfect() {
    let f = fixture();
    let own = ValidationRecord::from_scan_log("self", &f.log).unwrap();
    let report = evaluate_scan(&f.log, &[own], &f.training).unwrap();
    assert_eq!(report.force_rmse.mean, 0.0);
    assert_eq!(report.psnr.mean, DEFAULT_PSNR_CAP);
    assert!((report.zncc.mean - 1.0).abs() < 1e-12);
    assert_eq!(report.per_demo[0].frames_compared, f.log.scan_frames().len());
}

#[test]
fn evaluation_rejects_empty_and_overlapping_sets() {
    let f = fixture();
    assert_eq!(evaluate_scan(&f.log, &[], &f.training).unwrap_err().kind(), ErrorKind::Data);
    let mut leaked = f.validation.clone();
    leaked[0].id = f.training[0].clone();
    let err = evaluate_scan(&f.log, &leaked, &f.training).unwrap_err();
    assert!(err.to_string().contains(&f.training[0]), "{err}");
}

#[test]
fn report_layout_and_persisted_log_agree() {
    let f = fixture();
    let report = evaluate_scan(&f.log, &f.validation, &f.training).unwrap();
    assert_eq!(report.per_demo.len(), 2);
    assert_eq!(report.validation_ids, f.validation.iter().map(|v| v.id.clone()).collect::<Vec<_>>());
    assert_eq!(report.excluded_training_ids, f.training);
    assert!(report.force_rmse.mean > 0.0 && report.force_rmse.mean < 1.0, "{:?}", report.force_rmse);
    assert!(report.per_demo.iter().all(|d| (-1.0..=1.0).contains(&d.zncc) && d.psnr.is_finite()));

    let csv = report.summary_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "metric,mean,std");
    assert_eq!(lines.len(), 4);
    assert!(report.per_demo_csv().lines().count() == 3);

    let dir = tempfile::tempdir().unwrap();
    f.log.save(dir.path()).unwrap();
    let reloaded = ScanLog::load(dir.path()).unwrap();
    assert_eq!(evaluate_scan(&reloaded, &f.validation, &f.training).unwrap(), report);
}
