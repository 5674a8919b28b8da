use std::f64::consts::PI;

use helitrack::model::{derive_matrices, VehicleParams};
use helitrack::so3::{expm, hat, Vec3};
use helitrack::trajectory::*;
use helitrack::Error;

fn solve(spec: &FlipSpec) -> CollocationSolution {
    flip_solve(&flip_transcribe(spec, &VehicleParams::default()).unwrap()).unwrap()
}

fn roll(angle: f64, duration: f64) -> FlipSpec {
    FlipSpec::new(Vec3::x(), angle, duration)
}

#[test]
fn half_roll_meets_constraints() {
    let spec = roll(PI, 1.2);
    let sol = solve(&spec);
    assert!(sol.max_violation <= 1e-6);
    assert!(sol.theta_inf_norm() <= 9.8f64.to_radians());
    assert!((sol.phi.last().unwrap() - PI).abs() < 1e-6);
    assert_eq!(sol.phi_dot[0], 0.0);
    assert_eq!(*sol.phi_dot.last().unwrap(), 0.0);
    for u in &sol.u {
        assert!(u.amax() <= spec.u_max);
    }
}

#[test]
fn full_roll_costs_more_than_half_roll() {
    let half = solve(&roll(PI, 1.2));
    let full = solve(&roll(2.0 * PI, 2.3));
    assert!(full.max_violation <= 1e-6);
    assert!(full.theta_inf_norm() <= 9.8f64.to_radians());
    assert!((full.phi.last().unwrap() - 2.0 * PI).abs() < 1e-6);
    assert!(full.objective > half.objective);
}

#[test]
fn halving_knot_spacing_changes_objective_by_under_two_percent() {
    let coarse = roll(PI, 1.2);
    let fine = FlipSpec { knots: 2 * coarse.knots - 1, ..coarse };
    let (a, b) = (solve(&coarse).objective, solve(&fine).objective);
    let change = (a - b).abs() / b;
    assert!(change < 0.02, "objective {a} vs {b} ({:.2} %)", 100.0 * change);
}

#[test]
fn merit_is_monotone_within_each_outer_iteration() {
    let sol = solve(&roll(PI, 1.2));
    assert!(!sol.stats.merit_history.is_empty());
    for (i, history) in sol.stats.merit_history.iter().enumerate() {
        for w in history.windows(2) {
            assert!(w[1] <= w[0], "outer iteration {i}: merit rose from {} to {}", w[0], w[1]);
        }
    }
}

#[test]
fn peak_rate_consistent_with_steady_state_gain() {
    // 9.8 deg of cyclic corresponds to a steady 170 deg/s
    let sol = solve(&roll(PI, 1.2));
    let peak = sol.phi_dot.iter().fold(0.0f64, |a, w| a.max(w.abs())).to_degrees();
    assert!(peak <= 1.3 * 170.0, "peak rate {peak:.2} deg/s exceeds {:.1}", 1.3 * 170.0);
}

#[test]
fn pitch_flip_in_roll_time_is_infeasible() {
    let spec = FlipSpec::new(Vec3::y(), PI, 1.2);
    match flip_solve(&flip_transcribe(&spec, &VehicleParams::default()).unwrap()) {
        Err(Error::Infeasible { violation, constraint }) => {
            assert!(violation > 1e-6);
            assert!(constraint.contains("defect"));
        }
        other => panic!("expected infeasible, got {:?}", other.map(|s| s.max_violation)),
    }
}

/// Knot vector of an exact trajectory `phi = c (1 - cos(w t))` about x.
fn exact_knots(nlp: &FlipNlp, c: f64, w: f64) -> Vec<f64> {
    let m = &nlp.m;
    let v = Vec3::x();
    let kat_inv = (m.k * m.a_tau).try_inverse().unwrap();
    let mut x = Vec::with_capacity(nlp.n_vars());
    for k in 0..nlp.knots() {
        let t = k as f64 * nlp.h;
        let (s, co) = (w * t).sin_cos();
        let d = [c * (1.0 - co), c * w * s, c * w * w * co, -c * w.powi(3) * s, -c * w.powi(4) * co];
        let mom = m.j * v * d[2];
        let mom_dot = m.j * v * d[3];
        let mom_ddot = m.j * v * d[4];
        let theta = kat_inv * (mom_dot - m.a * mom + m.k * v * d[1]);
        let u = kat_inv * (mom_ddot - m.a * mom_dot + m.k * v * d[2]);
        x.push(d[0]);
        x.push(d[1]);
        x.extend(mom.iter().chain(theta.iter()).chain(u.iter()));
    }
    x
}

#[test]
fn defects_vanish_on_exact_trajectories_at_second_order() {
    let p = VehicleParams::default();
    let largest = |knots: usize| {
        let spec = FlipSpec { knots, ..roll(PI, 1.0) };
        let nlp = flip_transcribe(&spec, &p).unwrap();
        let x = exact_knots(&nlp, 1.0, 2.0 * PI);
        nlp.raw_defects(&x).iter().fold(0.0f64, |a, d| a.max(d.abs()))
    };
    let (coarse, fine) = (largest(51), largest(101));
    assert!(coarse < 1e-1 && fine < coarse / 4.0, "max defects {coarse:e}, {fine:e}");
}

#[test]
fn trivial_flip_has_zero_effort() {
    let sol = solve(&roll(0.0, 1.0));
    assert!(sol.objective.abs() < 1e-12);
    assert!(sol.max_violation < 1e-12);
    assert!(sol.u.iter().all(|u| u.norm() < 1e-9));
}

#[test]
fn reference_samples_are_consistent() {
    let spec = roll(PI, 1.2);
    let sol = solve(&spec);
    let reference = FlipReference::new(&sol, &spec).unwrap();
    let start = sample_flip(&sol, &spec, 0.0).unwrap();
    assert!((start.r_d.matrix() - nalgebra::Matrix3::identity()).norm() < 1e-12);
    assert!(start.omega_d.norm() < 1e-12);
    let end = reference.angle(spec.duration).unwrap();
    assert!((end[0] - PI).abs() < 1e-6);
    for (t, phi) in sol.t.iter().zip(&sol.phi) {
        assert!((reference.angle(*t).unwrap()[0] - phi).abs() < 1e-9);
    }
    assert!(matches!(reference.sample(1.3), Err(Error::OutOfRange { .. })));

    // the rate checks use a wider fourth-order stencil; the spline's high
    // coefficients carry rounding that a 1e-6 step would amplify
    let (h, k) = (1e-6, 1e-4);
    for i in 1..240 {
        let t = i as f64 * 0.005;
        let s = reference.sample(t).unwrap();
        let (fwd, bwd) = (reference.sample(t + h).unwrap(), reference.sample(t - h).unwrap());
        let r_dot = (fwd.r_d.matrix() - bwd.r_d.matrix()) / (2.0 * h);
        assert!((r_dot - s.r_d.matrix() * hat(&s.omega_d)).norm() < 1e-5, "t = {t}");
        let stencil = |f: &dyn Fn(f64) -> Vec3| (8.0 * (f(t + k) - f(t - k)) - f(t + 2.0 * k) + f(t - 2.0 * k)) / (12.0 * k);
        let w_dot = stencil(&|x| reference.sample(x).unwrap().omega_d);
        assert!((w_dot - s.omega_d_dot).norm() < 1e-5, "t = {t}");
        let w_ddot = stencil(&|x| reference.sample(x).unwrap().omega_d_dot);
        assert!((w_ddot - s.omega_d_ddot).norm() < 1e-5 * (1.0 + s.omega_d_ddot.norm()), "t = {t}");
    }
}

#[test]
fn sinusoid_reference_is_consistent() {
    let spec = SinusoidSpec::roll(20f64.to_radians(), 1.0);
    let h = 1e-6;
    for i in 0..200 {
        let t = i as f64 * 0.005 + 0.001;
        let s = sinusoid_reference(&spec, t);
        let (fwd, bwd) = (sinusoid_reference(&spec, t + h), sinusoid_reference(&spec, t - h));
        let r_dot = (fwd.r_d.matrix() - bwd.r_d.matrix()) / (2.0 * h);
        assert!((r_dot - s.r_d.matrix() * hat(&s.omega_d)).norm() < 1e-6);
        assert!(((fwd.omega_d - bwd.omega_d) / (2.0 * h) - s.omega_d_dot).norm() < 1e-5);
    }
    let quarter = sinusoid_reference(&spec, 0.25);
    assert!((quarter.r_d.matrix() - expm(&(Vec3::x() * 20f64.to_radians())).matrix()).norm() < 1e-12);
    assert!(quarter.omega_d.norm() < 1e-12);
}

#[test]
fn half_roll_compresses_to_three_septic_pieces() {
    let spec = roll(PI, 1.2);
    let sol = solve(&spec);
    let pp = compress_poly(&sol, &spec, &CompressOptions::default()).unwrap();
    let septic = pp.segments.iter().filter(|s| s.degree() == 7).count();
    assert!((1..=3).contains(&septic), "{septic} degree-7 segments");
    assert!(pp.segments.iter().all(|s| s.degree() == 7 || s.degree() <= 1));
    assert!(pp.max_error <= 0.1f64.to_radians());
    let (dv, _) = pp.continuity_gaps();
    assert!(dv < 1e-9);
    let reference = FlipReference::new(&sol, &spec).unwrap();
    for i in 0..=600 {
        let t = i as f64 * 0.002;
        assert!((pp.eval(t) - reference.angle(t).unwrap()[0]).abs() <= 0.1f64.to_radians());
    }
    assert_eq!(pp.eval(-0.5), 0.0);
    assert!((pp.eval(1.7) - PI).abs() < 1e-6);
}

#[test]
fn transcription_matches_vehicle_model() {
    let nlp = flip_transcribe(&roll(PI, 1.2), &VehicleParams::default()).unwrap();
    assert_eq!(nlp.m, derive_matrices(&VehicleParams::default()).unwrap());
    assert_eq!(nlp.n_vars(), nlp.knots() * 11);
}
