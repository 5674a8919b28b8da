use nalgebra::SymmetricEigen;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use helitrack::so3::*;

fn vec3() -> impl Strategy<Value = Vec3> {
    prop::array::uniform3(-10.0f64..10.0).prop_map(Vec3::from)
}

fn random_vec(rng: &mut ChaCha8Rng, scale: f64) -> Vec3 {
    Vec3::new(rng.gen_range(-scale..scale), rng.gen_range(-scale..scale), rng.gen_range(-scale..scale))
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Rotation {
    expm(&random_vec(rng, 4.0))
}

fn random_weight(rng: &mut ChaCha8Rng) -> SpdWeight {
    let q = random_rotation(rng);
    let d = Mat3::from_diagonal(&Vec3::new(rng.gen_range(0.5..1.0), rng.gen_range(1.2..1.7), rng.gen_range(2.0..3.0)));
    SpdWeight::new(q.matrix().transpose() * d * q.matrix()).unwrap()
}

proptest! {
    #[test]
    fn hat_vee_round_trip_is_exact(v in vec3()) {
        prop_assert_eq!(vee(&hat(&v)).unwrap(), v);
    }

    #[test]
    fn hat_is_cross_product(v in vec3(), w in vec3()) {
        prop_assert!((hat(&v) * w - v.cross(&w)).norm() <= 1e-12 * (1.0 + v.norm() * w.norm()));
    }

    #[test]
    fn expm_is_orthonormal(v in vec3()) {
        let r = expm(&v);
        prop_assert!(r.orthonormality_error() < 1e-12);
        prop_assert!((r.matrix().determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rotation_error_reconstructs(a in vec3(), b in vec3()) {
        let (r_d, r) = (expm(&a), expm(&b));
        let r_e = rotation_error(&r_d, &r);
        prop_assert!((r_d.matrix() * r_e.matrix() - r.matrix()).norm() < 1e-12);
    }

    #[test]
    fn error_function_ranges(v in vec3()) {
        let r = expm(&v);
        let p = psi(&r);
        prop_assert!((-1e-15..=2.0 + 1e-15).contains(&p));
        prop_assert!(e_r(&r).norm() <= 1.0 + 1e-15);
    }
}

#[test]
fn trace_identity_over_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100_000 {
        let (a, b) = (random_vec(&mut rng, 10.0), random_vec(&mut rng, 10.0));
        let lhs = -0.5 * (hat(&a) * hat(&b)).trace();
        worst = worst.max((lhs - a.dot(&b)).abs());
    }
    assert!(worst < 1e-12, "worst {worst:e}");
}

#[test]
fn expm_matches_series_oracle() {
    let v = Vec3::new(0.1, 0.2, 0.3);
    let a = hat(&v);
    let mut term = Mat3::identity();
    let mut sum = Mat3::identity();
    for k in 1..20 {
        term = term * a / k as f64;
        sum += term;
    }
    let r = expm(&v);
    assert!((r.matrix() - sum).norm() < 1e-10);
    assert!(r.orthonormality_error() < 1e-12);
}

#[test]
fn psi_is_quadratic_in_e_r_on_sublevel_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for xi_2 in [0.5, 1.0, 1.9] {
        let b2 = 1.0 / (2.0 - xi_2);
        let mut kept = 0;
        while kept < 100_000 {
            let r = random_rotation(&mut rng);
            let p = psi(&r);
            if p > xi_2 {
                continue;
            }
            kept += 1;
            let e2 = e_r(&r).norm_squared();
            assert!(0.5 * e2 <= p + 1e-12, "lower bound fails at psi = {p}");
            assert!(p <= b2 * e2 + 1e-12, "upper bound fails at psi = {p}, xi_2 = {xi_2}");
        }
    }
}

#[test]
fn error_function_rates_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-6;
    for _ in 0..200 {
        let r = random_rotation(&mut rng);
        let w = random_vec(&mut rng, 2.0);
        let p = random_weight(&mut rng);
        let fwd = r * expm(&(w * h));
        let bwd = r * expm(&(-w * h));
        let dpsi = (psi(&fwd) - psi(&bwd)) / (2.0 * h);
        assert!((dpsi - e_r(&r).dot(&w)).abs() < 1e-6);
        let de_r = (e_r(&fwd) - e_r(&bwd)) / (2.0 * h);
        assert!((de_r - transport_b(&r) * w).norm() < 1e-5);
        let dpsi_m = (psi_m(&p, &fwd) - psi_m(&p, &bwd)) / (2.0 * h);
        assert!((dpsi_m - e_rm(&p, &r).dot(&w)).abs() < 1e-5);
        let de_rm = (e_rm(&p, &fwd) - e_rm(&p, &bwd)) / (2.0 * h);
        assert!((de_rm - e_rm_rate(&p, &r, &w)).norm() < 1e-5);
    }
}

#[test]
fn critical_points_of_random_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        let p = random_weight(&mut rng);
        let set = critical_points(&p);
        assert_eq!(set.iter().count(), 4);
        assert_eq!(set.0[0], Rotation::identity());
        for r in set.iter() {
            assert!(e_rm(&p, r).norm() < 1e-9);
        }
        let v = p.eigenvectors();
        for i in 0..3 {
            let expected = expm(&(v.column(i).into_owned() * std::f64::consts::PI));
            assert!((set.0[i + 1].matrix() - expected.matrix()).norm() < 1e-9);
        }
    }
}

#[test]
fn sym_eigen3_matches_library_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let a = Mat3::from_fn(|_, _| rng.gen_range(-3.0..3.0));
        let s = a + a.transpose();
        let (lambda, v) = sym_eigen3(&s).unwrap();
        let mut oracle: Vec<f64> = SymmetricEigen::new(s).eigenvalues.iter().copied().collect();
        oracle.sort_by(f64::total_cmp);
        for i in 0..3 {
            assert!((lambda[i] - oracle[i]).abs() < 1e-9);
        }
        assert!((v * Mat3::from_diagonal(&lambda) * v.transpose() - s).norm() < 1e-9);
        assert!((v.transpose() * v - Mat3::identity()).norm() < 1e-9);
    }
}
