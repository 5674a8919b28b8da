//! Oracles shared by several test targets.
#![allow(dead_code)]

use helitrack::analysis::{spr_error_field, ErrorState};
use helitrack::control::ControlLaw;
use helitrack::eigen::Mat9;
use helitrack::harness::{parse_scenario, ClosedLoop, Scenario};
use helitrack::model::{DerivedMatrices, PlantState};
use helitrack::so3::{expm, Rotation, SpdWeight, Vec3};

/// Error field in the chart `R_e = R_eq expm(eta)`, state `(eta, e_w, e_M)`.
pub fn chart_field(r_eq: &Rotation, x: &[f64; 9], k_r: f64, p: &SpdWeight, m: &DerivedMatrices) -> [f64; 9] {
    let eta = Vec3::new(x[0], x[1], x[2]);
    let e_w = Vec3::new(x[3], x[4], x[5]);
    let e_m = Vec3::new(x[6], x[7], x[8]);
    let e = ErrorState { r_e: *r_eq * expm(&eta), e_omega: e_w, e_m };
    let rates = spr_error_field(&e, k_r, p, m);
    // d eta/dt = dexp^-1(e_w); only the identity term survives at eta = 0
    let eta_dot = e_w + eta.cross(&e_w) * 0.5 + eta.cross(&eta.cross(&e_w)) / 12.0;
    let mut out = [0.0; 9];
    out[..3].copy_from_slice(eta_dot.as_slice());
    out[3..6].copy_from_slice(rates.e_omega_dot.as_slice());
    out[6..].copy_from_slice(rates.e_m_dot.as_slice());
    out
}

/// Central-difference Jacobian of [`chart_field`] at the equilibrium.
pub fn fd_jacobian(r_eq: &Rotation, k_r: f64, p: &SpdWeight, m: &DerivedMatrices) -> Mat9 {
    let h = 1e-6;
    let mut jac = Mat9::zeros();
    for j in 0..9 {
        let mut xp = [0.0; 9];
        let mut xm = [0.0; 9];
        xp[j] = h;
        xm[j] = -h;
        let (fp, fm) = (chart_field(r_eq, &xp, k_r, p, m), chart_field(r_eq, &xm, k_r, p, m));
        for i in 0..9 {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

/// One-second scenario on the default vehicle under `controller`.
pub fn short_scenario(controller: ControlLaw) -> Scenario {
    let mut s = parse_scenario(r#"{"controller": {"type": "open_loop"}, "duration": 1.0}"#).unwrap();
    s.controller = controller;
    s
}

pub fn integrate(s: &Scenario, x0: PlantState, h: f64, steps: usize) -> PlantState {
    let lp = ClosedLoop::new(s).unwrap();
    let mut c = lp.controller().unwrap();
    let mut x = x0;
    for i in 0..steps {
        let t = i as f64 * h;
        let (next, out) = lp.step(&c, t, h, &x).unwrap();
        c.commit(t, &out);
        x = next;
    }
    x
}

pub fn distance(a: &PlantState, b: &PlantState) -> f64 {
    ((a.r.matrix() - b.r.matrix()).norm_squared()
        + (a.omega - b.omega).norm_squared()
        + (a.moment - b.moment).norm_squared())
    .sqrt()
}

/// Observed convergence order of the free plant from a Richardson triple
/// of step sizes.
pub fn free_plant_order() -> f64 {
    let s = short_scenario(ControlLaw::OpenLoop);
    let x0 = PlantState {
        r: expm(&Vec3::new(0.4, -0.2, 0.9)),
        omega: Vec3::new(3.0, -2.0, 1.5),
        moment: Vec3::new(1.0, -1.5, 0.5),
    };
    let t_end = 0.64;
    let ends: Vec<PlantState> =
        [0.01, 0.005, 0.0025].iter().map(|&h| integrate(&s, x0, h, (t_end / h).round() as usize)).collect();
    (distance(&ends[0], &ends[1]) / distance(&ends[1], &ends[2])).log2()
}
