mod common;

use common::fd_jacobian;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use helitrack::analysis::*;
use helitrack::eigen::{eig9, eigenpair_residual, Mat9};
use helitrack::model::{derive_matrices, VehicleParams};
use helitrack::so3::{self, expm, SpdWeight, Vec3};

const GAINS: [f64; 5] = [0.1, 1.0, 2.8, 10.0, 50.0];

fn weight() -> SpdWeight {
    SpdWeight::diagonal(1.0, 1.1, 1.2).unwrap()
}

#[test]
fn linearization_matches_finite_difference_jacobian() {
    let m = derive_matrices(&VehicleParams::default()).unwrap();
    let p = weight();
    for k_r in GAINS {
        for r_eq in so3::critical_points(&p).iter() {
            let s = linearize(r_eq, k_r, &p, &m).unwrap();
            let fd = fd_jacobian(r_eq, k_r, &p, &m);
            let rel = (s - fd).norm() / s.norm();
            assert!(rel < 1e-5, "k_r = {k_r}: relative error {rel:e}");
        }
    }
}

#[test]
fn linearization_matches_for_rotated_weight() {
    let m = derive_matrices(&VehicleParams::default()).unwrap();
    let q = expm(&Vec3::new(0.3, -0.7, 1.1));
    let p = SpdWeight::new(q.matrix().transpose() * nalgebra::Matrix3::from_diagonal(&Vec3::new(1.0, 1.5, 2.2)) * q.matrix())
        .unwrap();
    for r_eq in so3::critical_points(&p).iter() {
        let s = linearize(r_eq, 3.0, &p, &m).unwrap();
        let fd = fd_jacobian(r_eq, 3.0, &p, &m);
        assert!((s - fd).norm() / s.norm() < 1e-5);
    }
}

#[test]
fn one_stable_three_unstable_over_gain_range() {
    let m = derive_matrices(&VehicleParams::default()).unwrap();
    let p = weight();
    let sweep = (0..=40).map(|i| 0.1 * 500f64.powf(i as f64 / 40.0));
    for k_r in GAINS.into_iter().chain(sweep) {
        let report = classify_equilibria(k_r, &p, &m).unwrap();
        assert_eq!(report.equilibria.len(), 4);
        assert_eq!(report.desired().classification, Classification::AsymptoticallyStable, "k_r = {k_r}");
        assert!(report.desired().eigenvalues.iter().all(|l| l.re < 0.0));
        for eq in &report.equilibria[1..] {
            assert_eq!(eq.classification, Classification::Unstable, "k_r = {k_r}");
            assert!(eq.eigenvalues.iter().any(|l| l.re > 1e-9));
        }
    }
}

fn sorted(mut v: Vec<Complex64>) -> Vec<Complex64> {
    v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    v
}

#[test]
fn eig9_agrees_with_library_schur() {
    let m = derive_matrices(&VehicleParams::default()).unwrap();
    let p = weight();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut cases: Vec<Mat9> = Vec::new();
    for k_r in GAINS {
        for r in so3::critical_points(&p).iter() {
            cases.push(linearize(r, k_r, &p, &m).unwrap());
        }
    }
    for _ in 0..50 {
        cases.push(Mat9::from_fn(|_, _| rng.gen_range(-5.0..5.0)));
    }
    for s in cases {
        let ours = eig9(&s).unwrap();
        let dense = to_dmatrix(&s);
        let oracle = sorted(dense.clone().complex_eigenvalues().iter().copied().collect());
        assert_eq!(ours.len(), 9);
        let scale = s.norm();
        for l in &ours {
            let nearest = oracle.iter().map(|o| (o - l).norm()).fold(f64::INFINITY, f64::min);
            assert!(nearest < 1e-7 * scale, "eigenvalue {l} not in oracle set ({nearest:e})");
        }
        let trace: Complex64 = ours.iter().sum();
        assert!((trace.re - s.trace()).abs() < 1e-9 * scale && trace.im.abs() < 1e-9 * scale);
        for l in &ours {
            assert!(eigenpair_residual(&dense, *l) < 1e-7, "residual at {l}");
        }
    }
}

#[test]
fn field_vanishes_only_at_critical_points() {
    let m = derive_matrices(&VehicleParams::default()).unwrap();
    let p = weight();
    for r in so3::critical_points(&p).iter() {
        assert!(spr_error_field(&ErrorState::at_rest(*r), 2.8, &p, &m).norm() < 1e-12);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10_000 {
        let v = Vec3::new(rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0));
        let r = expm(&v);
        if so3::e_rm(&p, &r).norm() >= 1e-6 {
            assert!(spr_error_field(&ErrorState::at_rest(r), 2.8, &p, &m).norm() > 0.0);
        }
    }
}

#[test]
fn stability_report_json_layout() {
    let report = analyze(&LinearizeRequest::default()).unwrap();
    let json: serde_json::Value = serde_json::to_value(&report).unwrap();
    let s = json["equilibria"][1]["s"].as_array().unwrap();
    assert_eq!(s.len(), 9);
    let row3 = s[3].as_array().unwrap();
    let expected = report.equilibria[1].s.row(3);
    for j in 0..9 {
        assert_eq!(row3[j].as_f64().unwrap(), expected[j]);
    }
    let pair = json["equilibria"][0]["eigenvalues"][0].as_array().unwrap();
    assert_eq!(pair.len(), 2);
    let back: StabilityReport = serde_json::from_value(json).unwrap();
    assert_eq!(back, report);
}
