//! Attitude tracking laws: nominal backstepping, backstepping with robust
//! compensators (BRC) and the structure-preserving law (SPR).
//!
//! All laws produce the pseudo-control `theta` of the rotor moment dynamics.
//! They differ in the desired moment `M_d` they steer the rotor towards:
//!
//! * backstepping cancels the rotor's own rate damping `-K w` and injects
//!   artificial damping `-k_w e~_w`; the robust variant adds the bounded
//!   compensators `mu_f` (fuselage torque) and `mu_r` (rotor time constant);
//! * SPR keeps the rotor damping and feeds back attitude only through the
//!   gradient of the modified trace function.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DerivedMatrices, PlantState};
use crate::so3::{self, hat, Mat3, Rotation, SpdWeight, Vec3};

/// Desired attitude and its first three body-rate derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSample {
    pub r_d: Rotation,
    pub omega_d: Vec3,
    pub omega_d_dot: Vec3,
    pub omega_d_ddot: Vec3,
}

impl ReferenceSample {
    pub fn hover() -> Self {
        Self::constant(Rotation::identity())
    }

    pub fn constant(r_d: Rotation) -> Self {
        ReferenceSample { r_d, omega_d: Vec3::zeros(), omega_d_dot: Vec3::zeros(), omega_d_ddot: Vec3::zeros() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingError {
    pub r_e: Rotation,
    pub e_omega: Vec3,
    pub e_m: Vec3,
    pub e_r: Vec3,
    /// `e_omega + k_R e_R`.
    pub e_tilde: Vec3,
}

pub fn tracking_error(state: &PlantState, reference: &ReferenceSample, m_d: &Vec3, k_r: f64) -> TrackingError {
    let r_e = so3::rotation_error(&reference.r_d, &state.r);
    let e_omega = state.omega - r_e.transpose() * reference.omega_d;
    let e_r = so3::e_r(&r_e);
    TrackingError { r_e, e_omega, e_m: state.moment - m_d, e_r, e_tilde: e_omega + e_r * k_r }
}

/// Backstepping gains. `alpha` is the design bound on the fractional
/// time-constant error the rotor compensator must absorb.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BrcGains {
    pub k_r: f64,
    pub k_omega: f64,
    pub eps_f: f64,
    pub eps_r: f64,
    pub delta_f: f64,
    pub xi_2: f64,
    pub alpha: f64,
}

impl Default for BrcGains {
    fn default() -> Self {
        BrcGains { k_r: 2.8, k_omega: 2.5, eps_f: 0.1, eps_r: 0.1, delta_f: 5.0, xi_2: 1.9, alpha: 0.3 }
    }
}

impl BrcGains {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_r > 0.0 && self.k_omega > 0.0 && self.eps_f > 0.0 && self.eps_r > 0.0) {
            return Err(Error::BadSpec("BRC gains k_r, k_omega, eps_f, eps_r must be positive".into()));
        }
        if !(self.delta_f >= 0.0) {
            return Err(Error::BadSpec("delta_f must be non-negative".into()));
        }
        if !(self.xi_2 > 0.0 && self.xi_2 < 2.0) {
            return Err(Error::BadSpec(format!("xi_2 = {} must lie in (0, 2)", self.xi_2)));
        }
        if !(self.alpha >= 0.0 && self.alpha < 1.0) {
            return Err(Error::AlphaTooLarge(self.alpha));
        }
        Ok(())
    }

    pub fn epsilon(&self) -> f64 {
        self.eps_f + self.eps_r
    }
}

/// Structure-preserving gains: diagonal proportional gain and the weight `P`
/// of the modified trace function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SprGains {
    #[serde(with = "diag_gain")]
    pub k_r: Vec3,
    pub p: SpdWeight,
}

impl Default for SprGains {
    fn default() -> Self {
        SprGains {
            k_r: Vec3::repeat(5.0),
            p: SpdWeight::diagonal(1.0, 1.1, 1.2).expect("distinct positive diagonal"),
        }
    }
}

impl SprGains {
    pub fn scalar(k_r: f64, p: SpdWeight) -> Self {
        SprGains { k_r: Vec3::repeat(k_r), p }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.k_r.iter().all(|&k| k > 0.0 && k.is_finite()) {
            return Err(Error::BadSpec("SPR gain k_r must be positive on every axis".into()));
        }
        Ok(())
    }

    pub fn k_r_matrix(&self) -> Mat3 {
        Mat3::from_diagonal(&self.k_r)
    }
}

/// Accepts either a scalar or a three-element diagonal.
mod diag_gain {
    use super::Vec3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Gain {
        Scalar(f64),
        Diagonal([f64; 3]),
    }

    pub fn serialize<S: Serializer>(v: &Vec3, s: S) -> Result<S::Ok, S::Error> {
        [v.x, v.y, v.z].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec3, D::Error> {
        Ok(match Gain::deserialize(d)? {
            Gain::Scalar(k) => Vec3::repeat(k),
            Gain::Diagonal(k) => Vec3::from(k),
        })
    }
}

/// Quantities shared by every law: attitude error and its transport of the
/// reference rates into the body frame, plus their first time derivatives.
#[derive(Debug, Clone, Copy)]
struct Kinematics {
    r_e: Rotation,
    e_omega: Vec3,
    gyro: Vec3,
    /// `J (e_w x R_e^T w_d - R_e^T dw_d/dt)`.
    feed_forward: Vec3,
    e_omega_dot: Vec3,
    gyro_dot: Vec3,
    feed_forward_dot: Vec3,
}

impl Kinematics {
    /// The body acceleration uses the nominal fuselage model with the measured
    /// rotor moment; the exogenous torque is unknown to the controller.
    fn new(state: &PlantState, reference: &ReferenceSample, j: &Mat3, j_inv: &Mat3) -> Self {
        let r_e = so3::rotation_error(&reference.r_d, &state.r);
        let r_e_t = r_e.transpose();
        let a = r_e_t * reference.omega_d;
        let b = r_e_t * reference.omega_d_dot;
        let c = r_e_t * reference.omega_d_ddot;
        let omega = state.omega;
        let e_omega = omega - a;
        let jw = j * omega;
        let gyro = omega.cross(&jw);
        let feed_forward = j * (e_omega.cross(&a) - b);

        let omega_dot = j_inv * (state.moment - gyro);
        let a_dot = b - e_omega.cross(&a);
        let b_dot = c - e_omega.cross(&b);
        let e_omega_dot = omega_dot - a_dot;
        let gyro_dot = omega_dot.cross(&jw) + omega.cross(&(j * omega_dot));
        let feed_forward_dot = j * (e_omega_dot.cross(&a) + e_omega.cross(&a_dot) - b_dot);
        Kinematics {
            r_e,
            e_omega,
            gyro,
            feed_forward,
            e_omega_dot,
            gyro_dot,
            feed_forward_dot,
        }
    }
}

/// Desired moment of a law together with its analytic time derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesiredMoment {
    pub m_d: Vec3,
    pub m_d_dot: Vec3,
    /// Fuselage compensator (zero for the nominal and SPR laws).
    pub mu_f: Vec3,
    pub errors: TrackingError,
}

/// `-d^2 e / (d |e| + eps)`: bounded by `d`, smooth at `e = 0`.
fn saturating_compensator(e: &Vec3, bound: f64, eps: f64) -> Vec3 {
    -e * (bound * bound / (bound * e.norm() + eps))
}

fn saturating_compensator_rate(e: &Vec3, e_dot: &Vec3, bound: f64, eps: f64) -> Vec3 {
    let n = e.norm();
    let s = bound * n + eps;
    let mut rate = e_dot / s;
    if n > 0.0 {
        rate -= e * (bound * e.dot(e_dot) / (n * s * s));
    }
    -rate * (bound * bound)
}

/// Backstepping desired moment
/// `M_d = -k_w e~_w - e_R - k_R J B e_w + w x J w - J(e_w x R_e^T w_d - R_e^T dw_d/dt) + mu_f`
/// and its analytic derivative. With `robust == false`, `mu_f = 0`.
pub fn brc_desired_moment(
    state: &PlantState,
    reference: &ReferenceSample,
    gains: &BrcGains,
    m: &DerivedMatrices,
    robust: bool,
) -> DesiredMoment {
    let kin = Kinematics::new(state, reference, &m.j, &m.j_inv);
    let k_r = gains.k_r;
    let e_omega = kin.e_omega;
    let e_r = so3::e_r(&kin.r_e);
    let b = so3::transport_b(&kin.r_e);
    let e_tilde = e_omega + e_r * k_r;

    let (mu_f, mu_f_dot_fn): (Vec3, Option<f64>) = if robust && gains.delta_f > 0.0 {
        (saturating_compensator(&e_tilde, gains.delta_f, gains.eps_f), Some(gains.delta_f))
    } else {
        (Vec3::zeros(), None)
    };
    let m_d = -e_tilde * gains.k_omega - e_r - m.j * (b * e_omega) * k_r + kin.gyro - kin.feed_forward + mu_f;

    // d/dt R_e^T = -hat(e_w) R_e^T
    let r_e_t_dot = -hat(&e_omega) * kin.r_e.transpose().matrix();
    let b_dot = (Mat3::identity() * r_e_t_dot.trace() - r_e_t_dot) * 0.5;
    let e_r_dot = b * e_omega;
    let e_tilde_dot = kin.e_omega_dot + e_r_dot * k_r;
    let mu_f_dot = match mu_f_dot_fn {
        Some(bound) => saturating_compensator_rate(&e_tilde, &e_tilde_dot, bound, gains.eps_f),
        None => Vec3::zeros(),
    };
    let m_d_dot = -e_tilde_dot * gains.k_omega - e_r_dot - m.j * (b_dot * e_omega + b * kin.e_omega_dot) * k_r
        + kin.gyro_dot
        - kin.feed_forward_dot
        + mu_f_dot;

    let errors = TrackingError { r_e: kin.r_e, e_omega, e_m: state.moment - m_d, e_r, e_tilde };
    DesiredMoment { m_d, m_d_dot, mu_f, errors }
}

/// Rotor compensator
/// `mu_r = -(alpha/(1-alpha)) |d_r|^2 e_M / (|d_r| |e_M| + eps_r)` with
/// `d_r = e~_w + A_k M_d - dM_d/dt - K w`.
pub fn rotor_compensator(
    e_tilde: &Vec3,
    e_m: &Vec3,
    m_d: &Vec3,
    m_d_dot: &Vec3,
    omega: &Vec3,
    gains: &BrcGains,
    assumed: &DerivedMatrices,
) -> Result<(Vec3, Vec3)> {
    if !(gains.alpha < 1.0) {
        return Err(Error::AlphaTooLarge(gains.alpha));
    }
    let delta_r = e_tilde + assumed.a_k * m_d - m_d_dot - assumed.k * omega;
    if gains.alpha == 0.0 {
        return Ok((Vec3::zeros(), delta_r));
    }
    let nd = delta_r.norm();
    let mu_r = -e_m * (gains.alpha / (1.0 - gains.alpha) * nd * nd / (nd * e_m.norm() + gains.eps_r));
    Ok((mu_r, delta_r))
}

/// Backstepping control input
/// `theta = (K A_tau)^-1 (-A M_d + dM_d/dt - e~_w + K w + mu_r)` evaluated with
/// the controller's (possibly wrong) matrices `assumed`. Returns `(theta, mu_r)`.
pub fn brc_control(
    state: &PlantState,
    desired: &DesiredMoment,
    gains: &BrcGains,
    assumed: &DerivedMatrices,
    robust: bool,
) -> Result<(Vec3, Vec3)> {
    let mu_r = if robust {
        rotor_compensator(
            &desired.errors.e_tilde,
            &desired.errors.e_m,
            &desired.m_d,
            &desired.m_d_dot,
            &state.omega,
            gains,
            assumed,
        )?
        .0
    } else {
        Vec3::zeros()
    };
    let rhs = -assumed.a * desired.m_d + desired.m_d_dot - desired.errors.e_tilde + assumed.k * state.omega + mu_r;
    Ok((solve_k_a_tau(assumed, &rhs), mu_r))
}

/// Structure-preserving desired moment
/// `M_d = -k_R e_Rm + w x J w - J(e_w x R_e^T w_d - R_e^T dw_d/dt)`
/// and its analytic derivative.
pub fn spr_desired_moment(
    state: &PlantState,
    reference: &ReferenceSample,
    gains: &SprGains,
    m: &DerivedMatrices,
) -> DesiredMoment {
    let kin = Kinematics::new(state, reference, &m.j, &m.j_inv);
    let k_r = gains.k_r_matrix();
    let e_rm = so3::e_rm(&gains.p, &kin.r_e);
    let e_rm_dot = so3::e_rm_rate(&gains.p, &kin.r_e, &kin.e_omega);
    let m_d = -k_r * e_rm + kin.gyro - kin.feed_forward;
    let m_d_dot = -k_r * e_rm_dot + kin.gyro_dot - kin.feed_forward_dot;
    let e_r = so3::e_r(&kin.r_e);
    let errors = TrackingError { r_e: kin.r_e, e_omega: kin.e_omega, e_m: state.moment - m_d, e_r, e_tilde: kin.e_omega };
    DesiredMoment { m_d, m_d_dot, mu_f: Vec3::zeros(), errors }
}

/// `theta = (K A_tau)^-1 (-A M_d + dM_d/dt + K R_e^T w_d)`.
pub fn spr_control(desired: &DesiredMoment, reference: &ReferenceSample, assumed: &DerivedMatrices) -> Vec3 {
    let w_d_body = desired.errors.r_e.transpose() * reference.omega_d;
    let rhs = -assumed.a * desired.m_d + desired.m_d_dot + assumed.k * w_d_body;
    solve_k_a_tau(assumed, &rhs)
}

fn solve_k_a_tau(m: &DerivedMatrices, rhs: &Vec3) -> Vec3 {
    let d = (m.k * m.a_tau).diagonal();
    Vec3::new(rhs.x / d.x, rhs.y / d.y, rhs.z / d.z)
}

/// How a controller obtains `dM_d/dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum MdDotMode {
    #[default]
    Analytic,
    /// First-order filtered backward difference.
    FilteredNumeric {
        #[serde(default = "default_tau_filt")]
        tau_filt: f64,
    },
}

fn default_tau_filt() -> f64 {
    0.01
}

/// Filtered backward difference of a vector signal. Holds one sample of
/// history plus the filter state.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredDerivative {
    tau: f64,
    last: Option<(f64, Vec3)>,
    filtered: Vec3,
}

impl FilteredDerivative {
    pub fn new(tau: f64) -> Self {
        FilteredDerivative { tau, last: None, filtered: Vec3::zeros() }
    }

    /// Derivative estimate at `(t, value)` without updating the history.
    pub fn peek(&self, t: f64, value: &Vec3) -> Result<Vec3> {
        let (t_last, v_last) = self.last.ok_or(Error::NeedsHistory)?;
        let dt = t - t_last;
        if dt <= 0.0 {
            return Ok(self.filtered);
        }
        let raw = (value - v_last) / dt;
        Ok(self.filtered + (raw - self.filtered) * (dt / (self.tau + dt)))
    }

    /// Accepts `(t, value)` into the history.
    pub fn commit(&mut self, t: f64, value: &Vec3) {
        if let Ok(d) = self.peek(t, value) {
            self.filtered = d;
        }
        if self.last.is_none_or(|(t_last, _)| t > t_last) {
            self.last = Some((t, *value));
        }
    }

    pub fn has_history(&self) -> bool {
        self.last.is_some()
    }
}

/// `dM_d/dt` under the requested mode. The analytic mode needs no history;
/// the numeric mode fails with [`Error::NeedsHistory`] until `filter` has a sample.
pub fn md_dot(desired: &DesiredMoment, t: f64, filter: Option<&FilteredDerivative>) -> Result<Vec3> {
    match filter {
        None => Ok(desired.m_d_dot),
        Some(f) => f.peek(t, &desired.m_d),
    }
}

/// Which law to run, with its gains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ControlLaw {
    /// `theta = 0`: the rotor's own damping only.
    OpenLoop,
    /// Backstepping without compensators (`mu_f = mu_r = 0`).
    Nominal(BrcGains),
    Brc(BrcGains),
    Spr(SprGains),
}

impl ControlLaw {
    pub fn tag(&self) -> &'static str {
        match self {
            ControlLaw::OpenLoop => "open_loop",
            ControlLaw::Nominal(_) => "nominal",
            ControlLaw::Brc(_) => "brc",
            ControlLaw::Spr(_) => "spr",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ControlLaw::OpenLoop => Ok(()),
            ControlLaw::Nominal(g) | ControlLaw::Brc(g) => g.validate(),
            ControlLaw::Spr(g) => g.validate(),
        }
    }
}

/// Everything a law computed for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub theta: Vec3,
    pub desired: DesiredMoment,
    pub mu_r: Vec3,
}

/// A control law bound to the model the controller believes in.
#[derive(Debug, Clone)]
pub struct Controller {
    pub law: ControlLaw,
    /// Matrices built from the assumed (possibly wrong) rotor parameters.
    pub assumed: DerivedMatrices,
    filter: Option<FilteredDerivative>,
}

impl Controller {
    pub fn new(law: ControlLaw, assumed: DerivedMatrices, mode: MdDotMode) -> Result<Self> {
        law.validate()?;
        let filter = match mode {
            MdDotMode::Analytic => None,
            MdDotMode::FilteredNumeric { tau_filt } => {
                if !(tau_filt > 0.0) {
                    return Err(Error::BadSpec("tau_filt must be positive".into()));
                }
                Some(FilteredDerivative::new(tau_filt))
            }
        };
        Ok(Controller { law, assumed, filter })
    }

    pub fn desired_moment(&self, state: &PlantState, reference: &ReferenceSample) -> DesiredMoment {
        match &self.law {
            ControlLaw::OpenLoop => {
                let errors = tracking_error(state, reference, &Vec3::zeros(), 0.0);
                DesiredMoment { m_d: Vec3::zeros(), m_d_dot: Vec3::zeros(), mu_f: Vec3::zeros(), errors }
            }
            ControlLaw::Nominal(g) => brc_desired_moment(state, reference, g, &self.assumed, false),
            ControlLaw::Brc(g) => brc_desired_moment(state, reference, g, &self.assumed, true),
            ControlLaw::Spr(g) => spr_desired_moment(state, reference, g, &self.assumed),
        }
    }

    /// Evaluates the law at `t` without touching the derivative filter. With
    /// a numeric `dM_d/dt` and no history yet, the derivative is taken as zero.
    pub fn evaluate(&self, t: f64, state: &PlantState, reference: &ReferenceSample) -> Result<ControlOutput> {
        let mut desired = self.desired_moment(state, reference);
        if let Some(f) = &self.filter {
            desired.m_d_dot = match f.peek(t, &desired.m_d) {
                Ok(d) => d,
                Err(Error::NeedsHistory) => Vec3::zeros(),
                Err(e) => return Err(e),
            };
        }
        let (theta, mu_r) = match &self.law {
            ControlLaw::OpenLoop => (Vec3::zeros(), Vec3::zeros()),
            ControlLaw::Nominal(g) => brc_control(state, &desired, g, &self.assumed, false)?,
            ControlLaw::Brc(g) => brc_control(state, &desired, g, &self.assumed, true)?,
            ControlLaw::Spr(_) => (spr_control(&desired, reference, &self.assumed), Vec3::zeros()),
        };
        Ok(ControlOutput { theta, desired, mu_r })
    }

    /// Records an accepted sample in the derivative filter, if any.
    pub fn commit(&mut self, t: f64, output: &ControlOutput) {
        if let Some(f) = &mut self.filter {
            f.commit(t, &output.desired.m_d);
        }
    }
}

/// Ultimate bound of the BRC error `z = (|e_R|, |e~_w|, |e_M|)` and the
/// quadratic-form matrices it is built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UltimateBound {
    pub b: f64,
    pub u1: Mat3,
    pub u2: Mat3,
    pub w: Mat3,
    pub eps: f64,
    /// Largest admissible `eps_f + eps_r`.
    pub max_eps: f64,
}

pub fn ultimate_bound(gains: &BrcGains, j: &Mat3, a_tau: &Mat3) -> Result<UltimateBound> {
    gains.validate()?;
    let jd = j.diagonal();
    let (j_min, j_max) = (jd.min(), jd.max());
    let u1 = Mat3::from_diagonal(&Vec3::new(1.0, j_min, 1.0)) * 0.5;
    let u2 = Mat3::from_diagonal(&Vec3::new(2.0 / (2.0 - gains.xi_2), j_max, 1.0)) * 0.5;
    let w = Mat3::from_diagonal(&Vec3::new(gains.k_r, gains.k_omega, a_tau.diagonal().min()));
    let (l_u1, l_u2, l_w) = (u1.diagonal().min(), u2.diagonal().max(), w.diagonal().min());
    let eps = gains.epsilon();
    let max_eps = gains.xi_2 * l_w / l_u2;
    if !(eps < max_eps) {
        return Err(Error::EpsilonTooLarge { eps, max_eps });
    }
    Ok(UltimateBound { b: (l_u2 * eps / (l_u1 * l_w)).sqrt(), u1, u2, w, eps, max_eps })
}
