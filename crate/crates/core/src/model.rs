//! Coupled rotor–fuselage plant.
//!
//! The fuselage is a rigid body driven by the rotor moment `M`; the main and
//! tail rotors are first-order systems in `M`:
//!
//! ```text
//! dR/dt = R hat(w)
//! J dw/dt + w x J w = M + d(t)
//! dM/dt = A M - K w + K A_tau theta
//! ```
//!
//! where `theta` is the pseudo-control (cyclic inputs pre-mixed with the
//! gyroscopic rate terms, see [`pseudo_to_physical`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::so3::{hat, Mat3, Rotation, Vec3};

pub const GRAVITY: f64 = 9.81;

/// Physical vehicle parameters. Main-rotor values default to the identified
/// 700-class airframe; tail-rotor values and thrust are nominal placeholders.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    /// Principal moments of inertia `[Jxx, Jyy, Jzz]` (kg m^2).
    pub inertia: [f64; 3],
    /// Main-rotor flap time constant (s).
    pub tau_m: f64,
    /// Tail-rotor time constant (s).
    pub tau_t: f64,
    /// Blade root stiffness (N m).
    pub k_beta: f64,
    /// Blade flap inertia (kg m^2).
    pub i_beta: f64,
    /// Main-rotor speed (rad/s).
    pub rotor_speed: f64,
    /// Hub offset above the centre of mass (m).
    pub hub_offset: f64,
    /// Nominal thrust (N).
    pub thrust: f64,
    /// Tail-rotor stiffness gain (N m).
    pub k_t: f64,
    /// Steady-state yaw rate per tail input.
    pub k_t0: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams {
            inertia: [0.095, 0.397, 0.303],
            tau_m: 0.06,
            tau_t: 0.02,
            k_beta: 129.09,
            i_beta: 0.0327,
            rotor_speed: 157.07,
            hub_offset: 0.174,
            thrust: 10.0 * GRAVITY,
            k_t: 20.0,
            k_t0: 1.0,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("inertia[0]", self.inertia[0]),
            ("inertia[1]", self.inertia[1]),
            ("inertia[2]", self.inertia[2]),
            ("tau_m", self.tau_m),
            ("tau_t", self.tau_t),
            ("k_beta", self.k_beta),
            ("i_beta", self.i_beta),
            ("rotor_speed", self.rotor_speed),
            ("hub_offset", self.hub_offset),
            ("thrust", self.thrust),
            ("k_t", self.k_t),
            ("k_t0", self.k_t0),
        ];
        for (name, value) in named {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::BadParams(format!("{name} must be positive, got {value}")));
            }
        }
        Ok(())
    }

    /// Flap cross-coupling `k = k_beta / (2 Omega I_beta)`.
    pub fn flap_coupling(&self) -> f64 {
        self.k_beta / (2.0 * self.rotor_speed * self.i_beta)
    }

    /// Equivalent hub stiffness `K_beta = h T + k_beta`.
    pub fn hub_stiffness(&self) -> f64 {
        self.hub_offset * self.thrust + self.k_beta
    }

    pub fn inertia_matrix(&self) -> Mat3 {
        Mat3::from_diagonal(&Vec3::from(self.inertia))
    }
}

/// Matrices of the rotor moment dynamics, either true or as assumed by a
/// controller with erroneous time constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedMatrices {
    /// `A = -A_tau + A_k`.
    pub a: Mat3,
    pub a_tau: Mat3,
    /// Skew part of `A`.
    pub a_k: Mat3,
    /// `diag(K_beta, K_beta, K_t)`.
    pub k: Mat3,
    pub j: Mat3,
    pub j_inv: Mat3,
}

impl DerivedMatrices {
    pub fn k_inv(&self) -> Mat3 {
        Mat3::from_diagonal(&self.k.diagonal().map(|x| 1.0 / x))
    }

    pub fn a_tau_inv(&self) -> Mat3 {
        Mat3::from_diagonal(&self.a_tau.diagonal().map(|x| 1.0 / x))
    }
}

pub fn derive_matrices(p: &VehicleParams) -> Result<DerivedMatrices> {
    build_matrices(p, p.tau_m, p.tau_t, 1.0)
}

/// Matrices a controller would build from the time-constant estimates
/// `(1 + alpha_m) tau_m`, `(1 + alpha_t) tau_t` and stiffness `k_scale * K`.
pub fn derive_assumed(p: &VehicleParams, u: &UncertaintySpec) -> Result<DerivedMatrices> {
    u.validate()?;
    build_matrices(p, (1.0 + u.alpha_m) * p.tau_m, (1.0 + u.alpha_t) * p.tau_t, u.k_scale)
}

fn build_matrices(p: &VehicleParams, tau_m: f64, tau_t: f64, k_scale: f64) -> Result<DerivedMatrices> {
    p.validate()?;
    if !(tau_m > 0.0 && tau_t > 0.0 && k_scale > 0.0) {
        return Err(Error::BadParams("assumed time constants and stiffness must be positive".into()));
    }
    let k = p.flap_coupling();
    let a_tau = Mat3::from_diagonal(&Vec3::new(1.0 / tau_m, 1.0 / tau_m, 1.0 / tau_t));
    let a_k = Mat3::new(0.0, -k, 0.0, k, 0.0, 0.0, 0.0, 0.0, 0.0);
    let kb = p.hub_stiffness() * k_scale;
    let j = p.inertia_matrix();
    Ok(DerivedMatrices {
        a: -a_tau + a_k,
        a_tau,
        a_k,
        k: Mat3::from_diagonal(&Vec3::new(kb, kb, p.k_t * k_scale)),
        j,
        j_inv: Mat3::from_diagonal(&Vec3::from(p.inertia).map(|x| 1.0 / x)),
    })
}

/// Fractional time-constant errors of the controller's model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertaintySpec {
    #[serde(default)]
    pub alpha_m: f64,
    #[serde(default)]
    pub alpha_t: f64,
    /// Multiplier on the rotor stiffness assumed by the controller.
    #[serde(default = "one")]
    pub k_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for UncertaintySpec {
    fn default() -> Self {
        UncertaintySpec { alpha_m: 0.0, alpha_t: 0.0, k_scale: 1.0 }
    }
}

impl UncertaintySpec {
    pub fn exact() -> Self {
        Self::default()
    }

    /// `max(|alpha_m|, |alpha_t|)`.
    pub fn alpha(&self) -> f64 {
        self.alpha_m.abs().max(self.alpha_t.abs())
    }

    pub fn validate(&self) -> Result<()> {
        let alpha = self.alpha();
        if !(alpha < 1.0) {
            return Err(Error::AlphaTooLarge(alpha));
        }
        Ok(())
    }
}

/// Exogenous torque on the fuselage. Every variant is clamped to `bound`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DisturbanceSpec {
    #[default]
    None,
    /// `amplitude * cos(frequency * t)`.
    Cosine { amplitude: [f64; 3], frequency: f64, bound: f64 },
    Constant { torque: [f64; 3], bound: f64 },
}

impl DisturbanceSpec {
    /// Single-axis roll torque `A_d cos(Omega_d t)` bounded by `|A_d|`.
    pub fn roll_cosine(amplitude: f64, frequency: f64) -> Self {
        DisturbanceSpec::Cosine { amplitude: [amplitude, 0.0, 0.0], frequency, bound: amplitude.abs() }
    }

    pub fn bound(&self) -> f64 {
        match self {
            DisturbanceSpec::None => 0.0,
            DisturbanceSpec::Cosine { bound, .. } | DisturbanceSpec::Constant { bound, .. } => *bound,
        }
    }
}

pub fn disturbance_torque(t: f64, d: &DisturbanceSpec) -> Vec3 {
    let (raw, bound) = match d {
        DisturbanceSpec::None => return Vec3::zeros(),
        DisturbanceSpec::Cosine { amplitude, frequency, bound } => {
            (Vec3::from(*amplitude) * (frequency * t).cos(), *bound)
        }
        DisturbanceSpec::Constant { torque, bound } => (Vec3::from(*torque), *bound),
    };
    let n = raw.norm();
    if n > bound {
        raw * (bound.max(0.0) / n)
    } else {
        raw
    }
}

/// Plant state: attitude, body rate (rad/s) and rotor moment (N m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub r: Rotation,
    pub omega: Vec3,
    pub moment: Vec3,
}

impl PlantState {
    pub fn rest() -> Self {
        PlantState { r: Rotation::identity(), omega: Vec3::zeros(), moment: Vec3::zeros() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantRates {
    pub r_dot: Mat3,
    pub omega_dot: Vec3,
    pub moment_dot: Vec3,
}

/// Fuselage angular acceleration for a given rate, moment and external torque.
pub fn fuselage_acceleration(omega: &Vec3, moment: &Vec3, torque: &Vec3, m: &DerivedMatrices) -> Vec3 {
    m.j_inv * (moment + torque - omega.cross(&(m.j * omega)))
}

/// Rotor moment rate `A M - K w + K A_tau theta`.
pub fn moment_rate(omega: &Vec3, moment: &Vec3, theta: &Vec3, m: &DerivedMatrices) -> Vec3 {
    m.a * moment - m.k * omega + m.k * (m.a_tau * theta)
}

pub fn plant_derivative(
    s: &PlantState,
    theta: &Vec3,
    t: f64,
    d: &DisturbanceSpec,
    m: &DerivedMatrices,
) -> PlantRates {
    let torque = disturbance_torque(t, d);
    PlantRates {
        r_dot: s.r.matrix() * hat(&s.omega),
        omega_dot: fuselage_acceleration(&s.omega, &s.moment, &torque, m),
        moment_dot: moment_rate(&s.omega, &s.moment, theta, m),
    }
}

/// `(M_x, M_y) = K_beta (b, a)`.
pub fn flap_to_moment(a: f64, b: f64, p: &VehicleParams) -> (f64, f64) {
    let kb = p.hub_stiffness();
    (kb * b, kb * a)
}

/// Inverse of [`flap_to_moment`]: returns `(a, b)`.
pub fn moment_to_flap(moment: &Vec3, p: &VehicleParams) -> (f64, f64) {
    let kb = p.hub_stiffness();
    (moment.y / kb, moment.x / kb)
}

/// Physical inputs: lateral cyclic `theta_a`, longitudinal cyclic `theta_b`
/// and tail pitch `theta_t` (rad).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhysicalInputs {
    pub theta_a: f64,
    pub theta_b: f64,
    pub theta_t: f64,
}

impl PhysicalInputs {
    /// Larger of the two cyclic magnitudes.
    pub fn max_cyclic(&self) -> f64 {
        self.theta_a.abs().max(self.theta_b.abs())
    }
}

/// Inverts `theta = [theta_b + w_y/Omega, theta_a - w_x/Omega, K_t0 theta_t]`.
pub fn pseudo_to_physical(theta: &Vec3, omega: &Vec3, p: &VehicleParams) -> PhysicalInputs {
    PhysicalInputs {
        theta_b: theta.x - omega.y / p.rotor_speed,
        theta_a: theta.y + omega.x / p.rotor_speed,
        theta_t: theta.z / p.k_t0,
    }
}

pub fn physical_to_pseudo(u: &PhysicalInputs, omega: &Vec3, p: &VehicleParams) -> Vec3 {
    Vec3::new(
        u.theta_b + omega.y / p.rotor_speed,
        u.theta_a - omega.x / p.rotor_speed,
        p.k_t0 * u.theta_t,
    )
}

/// Tip-path-plane flap equations written directly in `(a, b)`. Returns
/// `(da/dt, db/dt)`.
pub fn flap_dynamics_check(a: f64, b: f64, omega: &Vec3, theta_a: f64, theta_b: f64, p: &VehicleParams) -> (f64, f64) {
    let k = p.flap_coupling();
    let inv_tau = 1.0 / p.tau_m;
    let a_dot = -inv_tau * a + k * b - omega.y + inv_tau * (theta_a - omega.x / p.rotor_speed);
    let b_dot = -inv_tau * b - k * a - omega.x + inv_tau * (theta_b + omega.y / p.rotor_speed);
    (a_dot, b_dot)
}
