mod common;

use common::{distance, free_plant_order, short_scenario};
use helitrack::control::{BrcGains, ControlLaw, SprGains};
use helitrack::harness::{run, ClosedLoop, InitialCondition};
use helitrack::model::{DisturbanceSpec, PlantState, UncertaintySpec};
use helitrack::so3::{Rotation, Vec3};

fn laws() -> [ControlLaw; 4] {
    [
        ControlLaw::OpenLoop,
        ControlLaw::Nominal(BrcGains::default()),
        ControlLaw::Brc(BrcGains::default()),
        ControlLaw::Spr(SprGains::default()),
    ]
}

#[test]
fn free_plant_is_fourth_order() {
    let order = free_plant_order();
    assert!((3.7..=4.3).contains(&order), "observed order {order}");
}

#[test]
fn orthonormality_drift_over_a_million_steps() {
    // constant torque against the rotor damping keeps the body spinning
    let mut s = short_scenario(ControlLaw::OpenLoop);
    s.disturbance = DisturbanceSpec::Constant { torque: [3.0, -2.0, 1.0], bound: 10.0 };
    let x0 = PlantState { r: Rotation::identity(), omega: Vec3::new(2.0, 1.0, -3.0), moment: Vec3::zeros() };
    let lp = ClosedLoop::new(&s).unwrap();
    let c = lp.controller().unwrap();
    let mut x = x0;
    let h = 1e-3;
    let mut min_rate = f64::INFINITY;
    for i in 0..1_000_000 {
        x = lp.step(&c, i as f64 * h, h, &x).unwrap().0;
        if i > 1000 {
            min_rate = min_rate.min(x.omega.norm());
        }
    }
    assert!(min_rate > 0.1, "body stopped spinning");
    let drift = x.r.orthonormality_error();
    assert!(drift < 1e-8, "drift {drift:e}");
}

#[test]
fn equilibrium_is_fixed_by_every_law() {
    for law in laws() {
        let s = short_scenario(law);
        let lp = ClosedLoop::new(&s).unwrap();
        let c = lp.controller().unwrap();
        let rest = PlantState::rest();
        let (next, out) = lp.step(&c, 0.0, s.dt, &rest).unwrap();
        assert!(distance(&next, &rest) < 1e-12, "{}", law.tag());
        assert!(out.theta.norm() < 1e-12);
    }
}

#[test]
fn hover_with_zero_error_stays_exact() {
    for law in laws() {
        for uncertainty in [UncertaintySpec::exact(), UncertaintySpec { alpha_m: 0.3, ..UncertaintySpec::exact() }] {
            let mut s = short_scenario(law);
            s.uncertainty = uncertainty;
            s.duration = 3.0;
            s.initial = InitialCondition::default();
            let log = run(&s).unwrap().into_result().unwrap();
            for row in &log.rows {
                assert!(row.e_r_norm < 1e-10 && row.e_omega_norm < 1e-10 && row.e_m_norm < 1e-10, "{}", law.tag());
            }
        }
    }
}

#[test]
fn log_time_is_uniform() {
    let mut s = short_scenario(ControlLaw::Spr(SprGains::default()));
    s.initial = InitialCondition::Random { max_angle: 2.0, max_rate: 3.0 };
    s.seed = 11;
    s.substeps = 3;
    let log = run(&s).unwrap().into_result().unwrap();
    assert_eq!(log.rows.len(), 1001);
    for (k, row) in log.rows.iter().enumerate() {
        assert_eq!(row.t, k as f64 * s.dt);
        assert!(row.r.orthonormality_error() < 1e-9);
        assert!(row.omega.iter().chain(row.moment.iter()).all(|v| v.is_finite()));
    }
}
