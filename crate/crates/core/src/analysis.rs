//! Stability analysis of the structure-preserving closed loop.
//!
//! With exact parameters and no disturbance the SPR error dynamics are
//! autonomous:
//!
//! ```text
//! dR_e/dt = R_e hat(e_w)
//! J de_w/dt = -k_R e_Rm + e_M
//! de_M/dt = A e_M - K e_w
//! ```
//!
//! Equilibria are the critical points of the modified trace function with
//! zero velocities. Linearizing in the chart `R_e = R_eq exp(hat(eta))` gives
//! the 9x9 matrix `S(R_eq)` whose spectrum classifies each equilibrium.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::control::{spr_desired_moment, BrcGains, ReferenceSample, SprGains};
use crate::eigen::{eig9, Mat9};
use crate::error::{Error, Result};
use crate::model::{derive_assumed, DerivedMatrices, PlantState, UncertaintySpec, VehicleParams};
use crate::so3::{self, Mat3, Rotation, SpdWeight, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorState {
    pub r_e: Rotation,
    pub e_omega: Vec3,
    pub e_m: Vec3,
}

impl ErrorState {
    pub fn at_rest(r_e: Rotation) -> Self {
        ErrorState { r_e, e_omega: Vec3::zeros(), e_m: Vec3::zeros() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRates {
    pub r_e_dot: Mat3,
    pub e_omega_dot: Vec3,
    pub e_m_dot: Vec3,
}

impl ErrorRates {
    /// Frobenius norm of the stacked rates.
    pub fn norm(&self) -> f64 {
        (self.r_e_dot.norm_squared() + self.e_omega_dot.norm_squared() + self.e_m_dot.norm_squared()).sqrt()
    }
}

pub fn spr_error_field(e: &ErrorState, k_r: f64, p: &SpdWeight, m: &DerivedMatrices) -> ErrorRates {
    ErrorRates {
        r_e_dot: e.r_e.matrix() * so3::hat(&e.e_omega),
        e_omega_dot: m.j_inv * (-so3::e_rm(p, &e.r_e) * k_r + e.e_m),
        e_m_dot: m.a * e.e_m - m.k * e.e_omega,
    }
}

/// Tolerance on the error field for a rotation to count as an equilibrium.
pub const EQUILIBRIUM_TOL: f64 = 1e-9;

/// `S = [0, I, 0; -J^-1 k_R B(R_eq), 0, J^-1; 0, -K, A]` with
/// `B(R_eq) = -1/2 sum_i hat(e_i) P R_eq hat(e_i)`, in the state order
/// `(eta, e_w, e_M)`.
pub fn linearize(r_eq: &Rotation, k_r: f64, p: &SpdWeight, m: &DerivedMatrices) -> Result<Mat9> {
    let residual = spr_error_field(&ErrorState::at_rest(*r_eq), k_r, p, m).norm();
    if residual > EQUILIBRIUM_TOL {
        return Err(Error::NotEquilibrium(residual));
    }
    let b = so3::e_rm_jacobian(p, r_eq);
    let mut s = Mat9::zeros();
    s.fixed_view_mut::<3, 3>(0, 3).copy_from(&Mat3::identity());
    s.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-m.j_inv * b * k_r));
    s.fixed_view_mut::<3, 3>(3, 6).copy_from(&m.j_inv);
    s.fixed_view_mut::<3, 3>(6, 3).copy_from(&(-m.k));
    s.fixed_view_mut::<3, 3>(6, 6).copy_from(&m.a);
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    AsymptoticallyStable,
    Unstable,
    NonHyperbolic,
}

/// Relative size of `|Re(lambda)|` below which an eigenvalue counts as
/// lying on the imaginary axis.
pub const HYPERBOLICITY_TOL: f64 = 1e-9;

pub fn classify(eigenvalues: &[Complex64], s_norm: f64) -> Classification {
    let tol = HYPERBOLICITY_TOL * s_norm.max(f64::MIN_POSITIVE);
    if eigenvalues.iter().any(|l| l.re.abs() < tol) {
        Classification::NonHyperbolic
    } else if eigenvalues.iter().all(|l| l.re < 0.0) {
        Classification::AsymptoticallyStable
    } else {
        Classification::Unstable
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub rotation: Rotation,
    #[serde(with = "mat9_rows")]
    pub s: Mat9,
    #[serde(with = "complex_pairs")]
    pub eigenvalues: Vec<Complex64>,
    pub classification: Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub k_r: f64,
    #[serde(with = "mat3_rows_serde")]
    pub p: Mat3,
    pub equilibria: Vec<EquilibriumReport>,
}

impl StabilityReport {
    pub fn desired(&self) -> &EquilibriumReport {
        &self.equilibria[0]
    }
}

/// Linearizes and classifies the desired equilibrium and the three
/// half-turn flips about the eigenvectors of `P`.
pub fn classify_equilibria(k_r: f64, p: &SpdWeight, m: &DerivedMatrices) -> Result<StabilityReport> {
    let equilibria = so3::critical_points(p)
        .iter()
        .map(|r| {
            let s = linearize(r, k_r, p, m)?;
            let eigenvalues = eig9(&s)?;
            let classification = classify(&eigenvalues, s.norm());
            Ok(EquilibriumReport { rotation: *r, s, eigenvalues, classification })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StabilityReport { k_r, p: *p.matrix(), equilibria })
}

/// Input to [`analyze`]: vehicle, scalar SPR gain and trace weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearizeRequest {
    #[serde(default)]
    pub vehicle: VehicleParams,
    #[serde(default = "default_k_r")]
    pub k_r: f64,
    #[serde(default = "default_p")]
    pub p: SpdWeight,
}

fn default_k_r() -> f64 {
    2.8
}

fn default_p() -> SpdWeight {
    SprGains::default().p
}

impl Default for LinearizeRequest {
    fn default() -> Self {
        LinearizeRequest { vehicle: VehicleParams::default(), k_r: default_k_r(), p: default_p() }
    }
}

pub fn analyze(req: &LinearizeRequest) -> Result<StabilityReport> {
    if !(req.k_r > 0.0 && req.k_r.is_finite()) {
        return Err(Error::BadSpec(format!("k_r must be positive, got {}", req.k_r)));
    }
    let m = crate::model::derive_matrices(&req.vehicle)?;
    classify_equilibria(req.k_r, &req.p, &m)
}

/// `V = k_R psi_m + 1/2 e_w.J e_w + 1/2 e_M.K^-1 e_M` and its rate along the
/// closed loop, `e_M.K^-1 A e_M`.
pub fn lyapunov_spr(e: &ErrorState, k_r: f64, p: &SpdWeight, m: &DerivedMatrices) -> (f64, f64) {
    let k_inv = m.k_inv();
    let v = k_r * so3::psi_m(p, &e.r_e)
        + 0.5 * e.e_omega.dot(&(m.j * e.e_omega))
        + 0.5 * e.e_m.dot(&(k_inv * e.e_m));
    let v_dot = e.e_m.dot(&(k_inv * m.a * e.e_m));
    (v, v_dot)
}

/// Backstepping error in the `(R_e, e~_w, e_M)` coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TildeErrorState {
    pub r_e: Rotation,
    pub e_tilde: Vec3,
    pub e_m: Vec3,
}

/// `V3 = psi + 1/2 e~_w.J e~_w + 1/2 e_M.e_M` and the decrease bound
/// `-z.W z + eps` with `z = (|e_R|, |e~_w|, |e_M|)`.
pub fn lyapunov_brc(e: &TildeErrorState, gains: &BrcGains, m: &DerivedMatrices) -> Result<(f64, f64)> {
    let psi = so3::psi(&e.r_e);
    if psi > gains.xi_2 {
        return Err(Error::OutsideSublevel { psi, xi_2: gains.xi_2 });
    }
    let v3 = psi + 0.5 * e.e_tilde.dot(&(m.j * e.e_tilde)) + 0.5 * e.e_m.norm_squared();
    let z = brc_z(e);
    let w = Vec3::new(gains.k_r, gains.k_omega, m.a_tau.diagonal().min());
    let bound = -(z.component_mul(&z)).dot(&w) + gains.epsilon();
    Ok((v3, bound))
}

/// `z = (|e_R|, |e~_w|, |e_M|)`.
pub fn brc_z(e: &TildeErrorState) -> Vec3 {
    Vec3::new(so3::e_r(&e.r_e).norm(), e.e_tilde.norm(), e.e_m.norm())
}

/// Perturbation `Delta_r` in `de_M/dt = A e_M - K e_w + Delta_r` caused by an
/// SPR controller built from the time constants of `assumed`. The controller
/// only knows `A_bar = -A_tau_bar + A_k`, which leaves
/// `Delta_r = (A_tau A_tau_bar^-1 - I)(-A_k M_d + dM_d/dt + K R_e^T w_d)`.
pub fn iss_disturbance(
    state: &PlantState,
    reference: &ReferenceSample,
    gains: &SprGains,
    assumed: &UncertaintySpec,
    params: &VehicleParams,
    m: &DerivedMatrices,
) -> Result<Vec3> {
    let bar = derive_assumed(params, assumed)?;
    let desired = spr_desired_moment(state, reference, gains, m);
    let g = m.a_tau * bar.a_tau_inv() - Mat3::identity();
    let inner = -m.a_k * desired.m_d + desired.m_d_dot + m.k * (desired.errors.r_e.transpose() * reference.omega_d);
    Ok(g * inner)
}

/// Dense copy for generic linear algebra.
pub fn to_dmatrix(s: &Mat9) -> DMatrix<f64> {
    DMatrix::from_iterator(9, 9, s.iter().copied())
}

mod mat9_rows {
    use super::Mat9;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Mat9, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<[f64; 9]> = (0..9).map(|i| std::array::from_fn(|j| m[(i, j)])).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mat9, D::Error> {
        let rows = <[[f64; 9]; 9]>::deserialize(d)?;
        Ok(Mat9::from_fn(|i, j| rows[i][j]))
    }
}

mod mat3_rows_serde {
    use crate::so3::{mat3_from_rows, mat3_rows, Mat3};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Mat3, s: S) -> Result<S::Ok, S::Error> {
        mat3_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mat3, D::Error> {
        Ok(mat3_from_rows(&<[[f64; 3]; 3]>::deserialize(d)?))
    }
}

mod complex_pairs {
    use num_complex::Complex64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Complex64], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|c| [c.re, c.im]).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Complex64>, D::Error> {
        Ok(Vec::<[f64; 2]>::deserialize(d)?.into_iter().map(|[re, im]| Complex64::new(re, im)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::derive_matrices;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn setup() -> (SpdWeight, DerivedMatrices) {
        (SpdWeight::diagonal(1.0, 1.1, 1.2).unwrap(), derive_matrices(&VehicleParams::default()).unwrap())
    }

    #[test]
    fn field_vanishes_on_critical_points() {
        let (p, m) = setup();
        for r in so3::critical_points(&p).iter() {
            assert!(spr_error_field(&ErrorState::at_rest(*r), 2.8, &p, &m).norm() < 1e-12);
        }
    }

    #[test]
    fn linearize_rejects_non_equilibrium() {
        let (p, m) = setup();
        let r = so3::expm(&Vec3::new(0.3, 0.0, 0.0));
        assert!(matches!(linearize(&r, 2.8, &p, &m), Err(Error::NotEquilibrium(_))));
    }

    #[test]
    fn stiffness_at_identity() {
        let p = SpdWeight::diagonal(1.0, 2.0, 4.0).unwrap();
        let b = so3::e_rm_jacobian(&p, &Rotation::identity());
        assert_relative_eq!(b, Mat3::from_diagonal(&Vec3::new(3.0, 2.5, 1.5)), epsilon = 1e-15);
    }

    #[test]
    fn default_classification() {
        let (p, m) = setup();
        let report = classify_equilibria(2.8, &p, &m).unwrap();
        assert_eq!(report.equilibria.len(), 4);
        assert_eq!(report.desired().classification, Classification::AsymptoticallyStable);
        for e in &report.equilibria[1..] {
            assert_eq!(e.classification, Classification::Unstable);
            assert_eq!(e.eigenvalues.len(), 9);
        }
    }

    #[test]
    fn zero_gain_is_non_hyperbolic() {
        let (p, m) = setup();
        let report = classify_equilibria(0.0, &p, &m).unwrap();
        assert!(report.equilibria.iter().all(|e| e.classification == Classification::NonHyperbolic));
    }

    #[test]
    fn report_json_shape() {
        let (p, m) = setup();
        let report = classify_equilibria(2.8, &p, &m).unwrap();
        let v: serde_json::Value = serde_json::to_value(&report).unwrap();
        let eq = &v["equilibria"][0];
        assert_eq!(eq["s"].as_array().unwrap().len(), 9);
        assert_eq!(eq["eigenvalues"][0].as_array().unwrap().len(), 2);
        assert_eq!(eq["classification"], "asymptotically-stable");
        let back: StabilityReport = serde_json::from_value(v).unwrap();
        assert_eq!(back.equilibria[2].s, report.equilibria[2].s);
    }

    #[test]
    fn lyapunov_spr_at_rest_and_damping() {
        let (p, m) = setup();
        assert_eq!(lyapunov_spr(&ErrorState::at_rest(Rotation::identity()), 2.8, &p, &m), (0.0, 0.0));
        let e = ErrorState { e_m: Vec3::new(1.0, -2.0, 0.5), ..ErrorState::at_rest(Rotation::identity()) };
        let (v, v_dot) = lyapunov_spr(&e, 2.8, &p, &m);
        assert!(v > 0.0 && v_dot < 0.0);
    }

    #[test]
    fn lyapunov_brc_zero_and_sublevel() {
        let (_, m) = setup();
        let g = BrcGains::default();
        let zero = TildeErrorState { r_e: Rotation::identity(), e_tilde: Vec3::zeros(), e_m: Vec3::zeros() };
        assert_eq!(lyapunov_brc(&zero, &g, &m).unwrap(), (0.0, g.epsilon()));
        let far = TildeErrorState { r_e: so3::expm(&Vec3::new(PI * 0.99, 0.0, 0.0)), ..zero };
        assert!(matches!(lyapunov_brc(&far, &g, &m), Err(Error::OutsideSublevel { .. })));
    }

    #[test]
    fn iss_term_vanishes_without_mismatch() {
        let (p, m) = setup();
        let gains = SprGains::scalar(5.0, p);
        let state = PlantState { omega: Vec3::new(0.2, -0.1, 0.4), ..PlantState::rest() };
        let d = iss_disturbance(
            &state,
            &ReferenceSample::hover(),
            &gains,
            &UncertaintySpec::exact(),
            &VehicleParams::default(),
            &m,
        )
        .unwrap();
        assert_eq!(d, Vec3::zeros());
    }
}
