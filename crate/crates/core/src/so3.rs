//! Small-matrix kernel for the rotation group SO(3).
//!
//! Everything here works on fixed-size `nalgebra` values and is free of
//! allocation. Rotations are stored as plain 3x3 matrices wrapped in
//! [`Rotation`], which only guarantees orthonormality when built through the
//! checked constructors or through [`expm`].

use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Tolerance used when validating a matrix as a rotation.
pub const ROTATION_TOL: f64 = 1e-9;

const SKEW_TOL: f64 = 1e-6;
const SYMMETRY_TOL: f64 = 1e-9;
const EIGEN_GAP_TOL: f64 = 1e-9;
const SERIES_THRESHOLD: f64 = 1e-6;

/// Element of SO(3): attitude of the body frame in the inertial frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Mat3);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    /// Wraps `m` after checking `m^T m = I` and `det m = 1` to [`ROTATION_TOL`].
    pub fn from_matrix(m: Mat3) -> Result<Self> {
        let ortho = (m.transpose() * m - Mat3::identity()).norm();
        let det = m.determinant();
        if !m.iter().all(|x| x.is_finite()) || ortho > ROTATION_TOL || (det - 1.0).abs() > ROTATION_TOL {
            return Err(Error::BadSpec(format!(
                "not a rotation: |R^T R - I| = {ortho:.3e}, det = {det}"
            )));
        }
        Ok(Rotation(m))
    }

    /// Wraps `m` without validation. Callers guarantee `m` is in SO(3).
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Rotation(m)
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        ((self.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }

    /// Frobenius norm of `R^T R - I`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Mat3::identity()).norm()
    }

    /// Third column, i.e. the body z-axis expressed in the inertial frame.
    pub fn body_z(&self) -> Vec3 {
        self.0.column(2).into_owned()
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        let m = &self.0;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Rotation::identity()
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<Vec3> for Rotation {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

impl Serialize for Rotation {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Rotation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = <[[f64; 3]; 3]>::deserialize(d)?;
        Rotation::from_matrix(mat3_from_rows(&rows)).map_err(serde::de::Error::custom)
    }
}

pub fn mat3_from_rows(rows: &[[f64; 3]; 3]) -> Mat3 {
    Mat3::new(
        rows[0][0], rows[0][1], rows[0][2], rows[1][0], rows[1][1], rows[1][2], rows[2][0], rows[2][1],
        rows[2][2],
    )
}

pub fn mat3_rows(m: &Mat3) -> [[f64; 3]; 3] {
    Rotation::from_matrix_unchecked(*m).rows()
}

/// Skew-symmetric matrix with `hat(v) * w == v x w`.
pub fn hat(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`]. The skew part of `m` is extracted first, so tiny
/// symmetric noise is discarded.
pub fn vee(m: &Mat3) -> Result<Vec3> {
    let asym = (m + m.transpose()).norm();
    if !(asym < SKEW_TOL) {
        return Err(Error::NotSkew(asym));
    }
    Ok(vee_skew_part(m))
}

/// `vee(½(m - m^T))` without the skewness check.
pub(crate) fn vee_skew_part(m: &Mat3) -> Vec3 {
    Vec3::new(
        (m[(2, 1)] - m[(1, 2)]) / 2.0,
        (m[(0, 2)] - m[(2, 0)]) / 2.0,
        (m[(1, 0)] - m[(0, 1)]) / 2.0,
    )
}

/// Exponential map `so(3) -> SO(3)` in Rodrigues form.
pub fn expm(v: &Vec3) -> Rotation {
    let phi2 = v.norm_squared();
    let phi = phi2.sqrt();
    let (a, b) = if phi < SERIES_THRESHOLD {
        (1.0 - phi2 / 6.0 + phi2 * phi2 / 120.0, 0.5 - phi2 / 24.0 + phi2 * phi2 / 720.0)
    } else {
        (phi.sin() / phi, (1.0 - phi.cos()) / phi2)
    };
    let vh = hat(v);
    Rotation(Mat3::identity() + vh * a + vh * vh * b)
}

/// `R_e = R_d^T R`.
pub fn rotation_error(r_d: &Rotation, r: &Rotation) -> Rotation {
    Rotation(r_d.0.transpose() * r.0)
}

/// Trace error function `½ tr(I - R_e)`, in `[0, 2]`.
pub fn psi(r_e: &Rotation) -> f64 {
    (3.0 - r_e.trace()) / 2.0
}

/// Attitude error vector `½ (R_e - R_e^T)^vee`, the gradient of [`psi`].
pub fn e_r(r_e: &Rotation) -> Vec3 {
    vee_skew_part(&r_e.0)
}

/// `B(R_e) = ½ (tr(R_e^T) I - R_e^T)`; along `dR_e/dt = R_e hat(e_w)`,
/// `d e_R/dt = B(R_e) e_w`.
pub fn transport_b(r_e: &Rotation) -> Mat3 {
    (Mat3::identity() * r_e.trace() - r_e.0.transpose()) * 0.5
}

/// Symmetric positive-definite weight with distinct eigenvalues, as required
/// for the modified trace function to have exactly four critical points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpdWeight {
    matrix: Mat3,
    eigenvalues: Vec3,
    eigenvectors: Mat3,
}

impl SpdWeight {
    pub fn new(p: Mat3) -> Result<Self> {
        let (eigenvalues, eigenvectors) = sym_eigen3(&p).map_err(|e| Error::BadP(e.to_string()))?;
        let scale = p.norm().max(f64::MIN_POSITIVE);
        if eigenvalues[0] <= 0.0 {
            return Err(Error::BadP(format!("not positive definite (min eigenvalue {})", eigenvalues[0])));
        }
        let gap = (eigenvalues[1] - eigenvalues[0]).min(eigenvalues[2] - eigenvalues[1]);
        if gap < EIGEN_GAP_TOL * scale {
            return Err(Error::BadP(format!("eigenvalues not distinct (gap {gap:.3e})")));
        }
        Ok(SpdWeight { matrix: p, eigenvalues, eigenvectors })
    }

    pub fn diagonal(p1: f64, p2: f64, p3: f64) -> Result<Self> {
        Self::new(Mat3::from_diagonal(&Vec3::new(p1, p2, p3)))
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.matrix
    }

    /// Ascending eigenvalues.
    pub fn eigenvalues(&self) -> &Vec3 {
        &self.eigenvalues
    }

    /// Unit eigenvectors as columns, matching [`Self::eigenvalues`].
    pub fn eigenvectors(&self) -> &Mat3 {
        &self.eigenvectors
    }
}

impl Serialize for SpdWeight {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        mat3_rows(&self.matrix).serialize(s)
    }
}

impl<'de> Deserialize<'de> for SpdWeight {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = <[[f64; 3]; 3]>::deserialize(d)?;
        SpdWeight::new(mat3_from_rows(&rows)).map_err(serde::de::Error::custom)
    }
}

/// Modified trace function `½ tr(P (I - R_e))`.
pub fn psi_m(p: &SpdWeight, r_e: &Rotation) -> f64 {
    0.5 * (p.matrix * (Mat3::identity() - r_e.0)).trace()
}

/// Gradient of [`psi_m`]: `½ (P R_e - R_e^T P)^vee`.
pub fn e_rm(p: &SpdWeight, r_e: &Rotation) -> Vec3 {
    let pr = p.matrix * r_e.0;
    vee_skew_part(&pr)
}

/// Time derivative of [`e_rm`] along `dR_e/dt = R_e hat(e_w)`.
pub fn e_rm_rate(p: &SpdWeight, r_e: &Rotation, e_w: &Vec3) -> Vec3 {
    let m = p.matrix * r_e.0 * hat(e_w);
    vee_skew_part(&m)
}

/// Linearisation of [`e_rm`] at `R_e` in the right-trivialised chart
/// `R_e exp(hat(eta))`: `-½ sum_i hat(e_i) P R_e hat(e_i)`.
pub fn e_rm_jacobian(p: &SpdWeight, r_e: &Rotation) -> Mat3 {
    let pr = p.matrix * r_e.0;
    let mut b = Mat3::zeros();
    for i in 0..3 {
        let ei = hat(&Vec3::ith(i, 1.0));
        b -= ei * pr * ei;
    }
    b * 0.5
}

/// The four critical points of [`psi_m`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalSet(pub [Rotation; 4]);

impl CriticalSet {
    pub fn iter(&self) -> impl Iterator<Item = &Rotation> {
        self.0.iter()
    }
}

/// `{I, exp(pi v1), exp(pi v2), exp(pi v3)}` for the unit eigenvectors `vi`
/// of `P`, in ascending eigenvalue order.
pub fn critical_points(p: &SpdWeight) -> CriticalSet {
    let v = p.eigenvectors;
    let flip = |i: usize| expm(&(v.column(i).into_owned() * std::f64::consts::PI));
    CriticalSet([Rotation::identity(), flip(0), flip(1), flip(2)])
}

/// Eigen-decomposition of a symmetric 3x3 matrix by cyclic Jacobi rotations.
///
/// Returns ascending eigenvalues and orthonormal eigenvector columns.
pub fn sym_eigen3(p: &Mat3) -> Result<(Vec3, Mat3)> {
    let scale = p.norm();
    let asym = (p - p.transpose()).norm();
    if !p.iter().all(|x| x.is_finite()) || asym > SYMMETRY_TOL * scale.max(1.0) {
        return Err(Error::NotSymmetric(asym));
    }
    let mut a = (p + p.transpose()) * 0.5;
    let mut v = Mat3::identity();
    for _ in 0..64 {
        let off = (a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2)).sqrt();
        if off <= f64::EPSILON * 1e-2 * scale || off == 0.0 {
            break;
        }
        for (ip, iq) in [(0, 1), (0, 2), (1, 2)] {
            let apq = a[(ip, iq)];
            if apq == 0.0 {
                continue;
            }
            let theta = (a[(iq, iq)] - a[(ip, ip)]) / (2.0 * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let mut g = Mat3::identity();
            g[(ip, ip)] = c;
            g[(iq, iq)] = c;
            g[(ip, iq)] = s;
            g[(iq, ip)] = -s;
            a = g.transpose() * a * g;
            a[(ip, iq)] = 0.0;
            a[(iq, ip)] = 0.0;
            v *= g;
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = Vec3::new(a[(order[0], order[0])], a[(order[1], order[1])], a[(order[2], order[2])]);
    let vectors = Mat3::from_columns(&[v.column(order[0]), v.column(order[1]), v.column(order[2])]);
    Ok((values, vectors))
}
