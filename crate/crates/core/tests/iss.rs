use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use helitrack::analysis::iss_disturbance;
use helitrack::control::{spr_control, spr_desired_moment, ControlLaw, MdDotMode, ReferenceSample, SprGains};
use helitrack::harness::{preset, ClosedLoop};
use helitrack::model::{derive_assumed, derive_matrices, moment_rate, PlantState, UncertaintySpec, VehicleParams};
use helitrack::so3::{expm, Vec3};

fn random_vec(rng: &mut ChaCha8Rng, scale: f64) -> Vec3 {
    Vec3::from_fn(|_, _| rng.gen_range(-scale..scale))
}

fn assumed_specs() -> [UncertaintySpec; 3] {
    [
        UncertaintySpec { alpha_m: 0.3, ..UncertaintySpec::exact() },
        UncertaintySpec { alpha_m: -0.2, alpha_t: 0.25, ..UncertaintySpec::exact() },
        UncertaintySpec::exact(),
    ]
}

/// `de_M/dt - (A e_M - K e_w)` from the plant's moment equation with the
/// wrongly tuned SPR input.
#[test]
fn perturbation_matches_plant_residual() {
    let params = VehicleParams::default();
    let m = derive_matrices(&params).unwrap();
    let gains = SprGains::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for assumed in assumed_specs() {
        let bar = derive_assumed(&params, &assumed).unwrap();
        for _ in 0..2000 {
            let state = PlantState {
                r: expm(&random_vec(&mut rng, 2.0)),
                omega: random_vec(&mut rng, 3.0),
                moment: random_vec(&mut rng, 10.0),
            };
            let reference = ReferenceSample {
                r_d: expm(&random_vec(&mut rng, 2.0)),
                omega_d: random_vec(&mut rng, 3.0),
                omega_d_dot: random_vec(&mut rng, 5.0),
                omega_d_ddot: random_vec(&mut rng, 10.0),
            };
            let desired = spr_desired_moment(&state, &reference, &gains, &bar);
            let theta = spr_control(&desired, &reference, &bar);
            let e_m_dot = moment_rate(&state.omega, &state.moment, &theta, &m) - desired.m_d_dot;
            let residual = e_m_dot - (m.a * desired.errors.e_m - m.k * desired.errors.e_omega);
            let delta = iss_disturbance(&state, &reference, &gains, &assumed, &params, &m).unwrap();
            assert!((residual - delta).norm() < 1e-9 * (1.0 + delta.norm()), "{residual} vs {delta}");
            if assumed == UncertaintySpec::exact() {
                assert!(delta.norm() < 1e-9 * (1.0 + residual.norm()));
            }
        }
    }
}

/// Same quantity, with `de_M/dt` differenced along the simulated closed loop.
#[test]
fn perturbation_matches_closed_loop_difference() {
    let mut sc = preset("fig4").unwrap();
    sc.controller = ControlLaw::Spr(SprGains::default());
    sc.md_dot = MdDotMode::Analytic;
    sc.substeps = 1;
    let lp = ClosedLoop::new(&sc).unwrap();
    let gains = SprGains::default();
    let controller = lp.controller().unwrap();
    let mut state = lp.initial_state();
    let h = 1e-5;
    let e_m = |t: f64, s: &PlantState| controller.evaluate(t, s, &lp.reference.sample(t)).unwrap().desired.errors.e_m;
    for k in 0..3000 {
        let t = k as f64 * sc.dt;
        if k % 100 == 7 {
            let (fwd, _) = lp.step(&controller, t, h, &state).unwrap();
            let (bwd, _) = lp.step(&controller, t, -h, &state).unwrap();
            let e_m_dot = (e_m(t + h, &fwd) - e_m(t - h, &bwd)) / (2.0 * h);
            let errors = controller.evaluate(t, &state, &lp.reference.sample(t)).unwrap().desired.errors;
            let residual = e_m_dot - (lp.plant.a * errors.e_m - lp.plant.k * errors.e_omega);
            let reference = lp.reference.sample(t);
            let delta = iss_disturbance(&state, &reference, &gains, &sc.uncertainty, &sc.vehicle, &lp.plant).unwrap();
            assert!((residual - delta).norm() < 1e-4 * (1.0 + delta.norm()), "t = {t}: {residual} vs {delta}");
        }
        state = lp.step(&controller, t, sc.dt, &state).unwrap().0;
    }
}
