//! Reference trajectories: single-axis sinusoids, minimum-effort flips by
//! trapezoidal direct collocation, and their piecewise-polynomial compression.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::control::ReferenceSample;
use crate::csvfmt;
use crate::error::{Error, Result};
use crate::model::{derive_matrices, DerivedMatrices, VehicleParams};
use crate::so3::{self, Rotation, Vec3};

const AXIS_TOL: f64 = 1e-12;

fn check_axis(axis: &Vec3) -> Result<()> {
    if (axis.norm() - 1.0).abs() > AXIS_TOL {
        return Err(Error::BadSpec(format!("axis must be a unit vector, |axis| = {}", axis.norm())));
    }
    Ok(())
}

/// `phi(t) = amplitude sin(frequency t + phase)` about a fixed axis.
/// `frequency` is in rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinusoidSpec {
    pub axis: Vec3,
    pub amplitude: f64,
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
}

impl SinusoidSpec {
    /// Roll oscillation of `amplitude` rad at `hz` cycles per second.
    pub fn roll(amplitude: f64, hz: f64) -> Self {
        SinusoidSpec { axis: Vec3::x(), amplitude, frequency: 2.0 * std::f64::consts::PI * hz, phase: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        check_axis(&self.axis)?;
        if !(self.amplitude.is_finite() && self.frequency.is_finite() && self.phase.is_finite()) {
            return Err(Error::BadSpec("sinusoid parameters must be finite".into()));
        }
        Ok(())
    }
}

/// Reference for a rotation `phi(t)` about a fixed axis, given `phi` and its
/// first three derivatives.
pub fn single_axis_sample(axis: &Vec3, phi: [f64; 4]) -> ReferenceSample {
    ReferenceSample {
        r_d: so3::expm(&(axis * phi[0])),
        omega_d: axis * phi[1],
        omega_d_dot: axis * phi[2],
        omega_d_ddot: axis * phi[3],
    }
}

pub fn sinusoid_reference(spec: &SinusoidSpec, t: f64) -> ReferenceSample {
    let (a, w) = (spec.amplitude, spec.frequency);
    let (s, c) = (w * t + spec.phase).sin_cos();
    single_axis_sample(&spec.axis, [a * s, a * w * c, -a * w * w * s, -a * w * w * w * c])
}

/// `theta_0 = theta_0_hover (R e_3) . e_3`.
pub fn collective_schedule(r: &Rotation, theta0_hover: f64) -> f64 {
    theta0_hover * r.matrix()[(2, 2)]
}

fn default_u_max() -> f64 {
    200f64.to_radians()
}

fn default_theta_max() -> f64 {
    9.8f64.to_radians()
}

fn default_knots() -> usize {
    201
}

/// Minimum-effort rotation by `angle` about `axis` in `duration` seconds.
/// Angles in rad, `u_max` in rad/s of pseudo-control rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlipSpec {
    pub axis: Vec3,
    pub angle: f64,
    pub duration: f64,
    #[serde(default = "default_u_max")]
    pub u_max: f64,
    #[serde(default = "default_theta_max")]
    pub theta_max: f64,
    #[serde(default = "default_knots")]
    pub knots: usize,
    #[serde(default)]
    pub m_start: Vec3,
    #[serde(default)]
    pub m_end: Vec3,
    #[serde(default)]
    pub theta_start: Vec3,
    #[serde(default)]
    pub theta_end: Vec3,
}

impl FlipSpec {
    pub fn new(axis: Vec3, angle: f64, duration: f64) -> Self {
        FlipSpec {
            axis,
            angle,
            duration,
            u_max: default_u_max(),
            theta_max: default_theta_max(),
            knots: default_knots(),
            m_start: Vec3::zeros(),
            m_end: Vec3::zeros(),
            theta_start: Vec3::zeros(),
            theta_end: Vec3::zeros(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_axis(&self.axis)?;
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::BadSpec("duration must be positive".into()));
        }
        if self.knots < 10 {
            return Err(Error::BadSpec(format!("at least 10 knots required, got {}", self.knots)));
        }
        if !(self.theta_max > 0.0 && self.u_max > 0.0) {
            return Err(Error::BadSpec("theta_max and u_max must be positive".into()));
        }
        if !self.angle.is_finite() {
            return Err(Error::BadSpec("angle must be finite".into()));
        }
        for (name, th) in [("theta_start", self.theta_start), ("theta_end", self.theta_end)] {
            if th.amax() > self.theta_max {
                return Err(Error::BadSpec(format!("{name} exceeds theta_max")));
            }
        }
        Ok(())
    }
}

/// Number of decision variables per knot: `phi, dphi, M (3), theta (3), u (3)`.
pub const KNOT_VARS: usize = 11;
/// Defects per interval: angle, body rate (3), moment (3), input (3).
pub const INTERVAL_DEFECTS: usize = 10;

const PHI: usize = 0;
const PHID: usize = 1;
const MOM: usize = 2;
const TH: usize = 5;
const U: usize = 8;

/// Trapezoidal transcription of the flip problem.
#[derive(Debug, Clone)]
pub struct FlipNlp {
    pub spec: FlipSpec,
    pub m: DerivedMatrices,
    pub h: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// `v x J v`, the gyroscopic torque per unit squared rate.
    gyro: Vec3,
    /// Per-row defect scaling: weakly coupled rows are scaled up so their
    /// largest coefficient is one. Rows are never scaled down.
    row_scale: [f64; INTERVAL_DEFECTS],
}

pub fn flip_transcribe(spec: &FlipSpec, p: &VehicleParams) -> Result<FlipNlp> {
    spec.validate()?;
    let m = derive_matrices(p)?;
    let n = spec.knots;
    let h = spec.duration / (n - 1) as f64;
    let mut lower = vec![f64::NEG_INFINITY; n * KNOT_VARS];
    let mut upper = vec![f64::INFINITY; n * KNOT_VARS];
    for k in 0..n {
        for i in 0..3 {
            lower[k * KNOT_VARS + TH + i] = -spec.theta_max;
            upper[k * KNOT_VARS + TH + i] = spec.theta_max;
            lower[k * KNOT_VARS + U + i] = -spec.u_max;
            upper[k * KNOT_VARS + U + i] = spec.u_max;
        }
    }
    let mut fix = |k: usize, field: usize, value: f64| {
        lower[k * KNOT_VARS + field] = value;
        upper[k * KNOT_VARS + field] = value;
    };
    let last = n - 1;
    fix(0, PHI, 0.0);
    fix(last, PHI, spec.angle);
    fix(0, PHID, 0.0);
    fix(last, PHID, 0.0);
    for i in 0..3 {
        fix(0, MOM + i, spec.m_start[i]);
        fix(last, MOM + i, spec.m_end[i]);
        fix(0, TH + i, spec.theta_start[i]);
        fix(last, TH + i, spec.theta_end[i]);
    }
    let gyro = spec.axis.cross(&(m.j * spec.axis));
    let mut nlp = FlipNlp { spec: *spec, m, h, lower, upper, gyro, row_scale: [1.0; INTERVAL_DEFECTS] };
    let zero = vec![0.0; 2 * KNOT_VARS];
    let jac = nlp.raw_interval_jacobian(&zero, 0);
    for (scale, row) in nlp.row_scale.iter_mut().zip(&jac) {
        let largest = row.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if largest > 0.0 {
            *scale = 1.0 / largest.min(1.0);
        }
    }
    Ok(nlp)
}

impl FlipNlp {
    pub fn knots(&self) -> usize {
        self.spec.knots
    }

    pub fn n_vars(&self) -> usize {
        self.knots() * KNOT_VARS
    }

    pub fn n_defects(&self) -> usize {
        (self.knots() - 1) * INTERVAL_DEFECTS
    }

    fn weight(&self, k: usize) -> f64 {
        if k == 0 || k + 1 == self.knots() {
            0.5 * self.h
        } else {
            self.h
        }
    }

    /// Trapezoidal quadrature of `|u|^2`.
    pub fn objective(&self, x: &[f64]) -> f64 {
        (0..self.knots())
            .map(|k| {
                let u = &x[k * KNOT_VARS + U..k * KNOT_VARS + U + 3];
                self.weight(k) * u.iter().map(|v| v * v).sum::<f64>()
            })
            .sum()
    }

    fn objective_gradient(&self, x: &[f64], g: &mut [f64]) {
        g.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..self.knots() {
            for i in 0..3 {
                let j = k * KNOT_VARS + U + i;
                g[j] = 2.0 * self.weight(k) * x[j];
            }
        }
    }

    fn knot(&self, x: &[f64], k: usize) -> (f64, f64, Vec3, Vec3, Vec3) {
        let b = k * KNOT_VARS;
        (
            x[b + PHI],
            x[b + PHID],
            Vec3::new(x[b + MOM], x[b + MOM + 1], x[b + MOM + 2]),
            Vec3::new(x[b + TH], x[b + TH + 1], x[b + TH + 2]),
            Vec3::new(x[b + U], x[b + U + 1], x[b + U + 2]),
        )
    }

    fn moment_field(&self, phid: f64, mom: &Vec3, th: &Vec3) -> Vec3 {
        let m = &self.m;
        m.a * mom - m.k * (self.spec.axis * phid) + m.k * (m.a_tau * th)
    }

    fn interval_defects(&self, x: &[f64], k: usize) -> [f64; INTERVAL_DEFECTS] {
        let mut d = self.raw_interval_defects(x, k);
        d.iter_mut().zip(&self.row_scale).for_each(|(v, s)| *v *= s);
        d
    }

    fn interval_jacobian(&self, x: &[f64], k: usize) -> [[f64; 2 * KNOT_VARS]; INTERVAL_DEFECTS] {
        let mut jac = self.raw_interval_jacobian(x, k);
        for (row, s) in jac.iter_mut().zip(&self.row_scale) {
            row.iter_mut().for_each(|v| *v *= s);
        }
        jac
    }

    fn raw_interval_defects(&self, x: &[f64], k: usize) -> [f64; INTERVAL_DEFECTS] {
        let (h, v) = (self.h, self.spec.axis);
        let (p0, w0, m0, t0, u0) = self.knot(x, k);
        let (p1, w1, m1, t1, u1) = self.knot(x, k + 1);
        let d_phi = p1 - p0 - 0.5 * h * (w0 + w1);
        let d_w = v * (w1 - w0) - self.m.j_inv * (m0 + m1 - self.gyro * (w0 * w0 + w1 * w1)) * (0.5 * h);
        let d_m = m1 - m0 - (self.moment_field(w0, &m0, &t0) + self.moment_field(w1, &m1, &t1)) * (0.5 * h);
        let d_t = t1 - t0 - (u0 + u1) * (0.5 * h);
        [d_phi, d_w.x, d_w.y, d_w.z, d_m.x, d_m.y, d_m.z, d_t.x, d_t.y, d_t.z]
    }

    /// Dense Jacobian of one interval's unscaled defects with respect to the
    /// 22 variables of its two knots.
    fn raw_interval_jacobian(&self, x: &[f64], k: usize) -> [[f64; 2 * KNOT_VARS]; INTERVAL_DEFECTS] {
        let (h, v, m) = (self.h, self.spec.axis, &self.m);
        let hh = 0.5 * h;
        let w = [x[k * KNOT_VARS + PHID], x[(k + 1) * KNOT_VARS + PHID]];
        let kv = m.k * v;
        let kat = m.k * m.a_tau;
        let mut jac = [[0.0; 2 * KNOT_VARS]; INTERVAL_DEFECTS];
        let (o0, o1) = (0, KNOT_VARS);
        jac[0][o0 + PHI] = -1.0;
        jac[0][o1 + PHI] = 1.0;
        jac[0][o0 + PHID] = -hh;
        jac[0][o1 + PHID] = -hh;
        for i in 0..3 {
            let r = 1 + i;
            let jg = (m.j_inv * self.gyro)[i];
            jac[r][o0 + PHID] = -v[i] + h * jg * w[0];
            jac[r][o1 + PHID] = v[i] + h * jg * w[1];
            for j in 0..3 {
                jac[r][o0 + MOM + j] = -hh * m.j_inv[(i, j)];
                jac[r][o1 + MOM + j] = -hh * m.j_inv[(i, j)];
            }
            let r = 4 + i;
            for j in 0..3 {
                let delta = if i == j { 1.0 } else { 0.0 };
                jac[r][o0 + MOM + j] = -delta - hh * m.a[(i, j)];
                jac[r][o1 + MOM + j] = delta - hh * m.a[(i, j)];
                jac[r][o0 + TH + j] = -hh * kat[(i, j)];
                jac[r][o1 + TH + j] = -hh * kat[(i, j)];
            }
            jac[r][o0 + PHID] = hh * kv[i];
            jac[r][o1 + PHID] = hh * kv[i];
            let r = 7 + i;
            jac[r][o0 + TH + i] = -1.0;
            jac[r][o1 + TH + i] = 1.0;
            jac[r][o0 + U + i] = -hh;
            jac[r][o1 + U + i] = -hh;
        }
        jac
    }

    /// All scaled dynamics defects, interval-major.
    pub fn defects(&self, x: &[f64]) -> Vec<f64> {
        (0..self.knots() - 1).flat_map(|k| self.interval_defects(x, k)).collect()
    }

    /// Defects in physical units (rad, rad/s, N m, rad).
    pub fn raw_defects(&self, x: &[f64]) -> Vec<f64> {
        (0..self.knots() - 1).flat_map(|k| self.raw_interval_defects(x, k)).collect()
    }

    /// Name of defect row `i`.
    pub fn defect_name(&self, i: usize) -> String {
        const NAMES: [&str; INTERVAL_DEFECTS] = [
            "angle", "rate[0]", "rate[1]", "rate[2]", "moment[0]", "moment[1]", "moment[2]", "input[0]", "input[1]",
            "input[2]",
        ];
        format!("{} defect on interval {}", NAMES[i % INTERVAL_DEFECTS], i / INTERVAL_DEFECTS)
    }

    /// Smooth-step angle profile with consistent rates, clipped to bounds.
    pub fn initial_guess(&self) -> Vec<f64> {
        let n = self.knots();
        let (tf, angle, v) = (self.spec.duration, self.spec.angle, self.spec.axis);
        let mut x = vec![0.0; self.n_vars()];
        for k in 0..n {
            let s = k as f64 / (n - 1) as f64;
            let b = k * KNOT_VARS;
            x[b + PHI] = angle * s * s * (3.0 - 2.0 * s);
            x[b + PHID] = angle * 6.0 * s * (1.0 - s) / tf;
            let phidd = angle * (6.0 - 12.0 * s) / (tf * tf);
            let mom = self.m.j * v * phidd;
            for i in 0..3 {
                x[b + MOM + i] = mom[i];
            }
            let th = self.m.a_tau_inv() * (v * x[b + PHID]);
            for i in 0..3 {
                x[b + TH + i] = th[i];
            }
        }
        for k in 0..n {
            let prev = k.saturating_sub(1);
            let next = (k + 1).min(n - 1);
            for i in 0..3 {
                let dt = (next - prev) as f64 * self.h;
                x[k * KNOT_VARS + U + i] = (x[next * KNOT_VARS + TH + i] - x[prev * KNOT_VARS + TH + i]) / dt;
            }
        }
        self.project(&mut x);
        x
    }

    fn project(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }

    /// Largest bound violation and the index it occurs at.
    pub fn bound_violation(&self, x: &[f64]) -> f64 {
        x.iter()
            .enumerate()
            .map(|(i, v)| (self.lower[i] - v).max(v - self.upper[i]).max(0.0))
            .fold(0.0, f64::max)
    }
}

/// Symmetric banded matrix, lower band stored row-wise.
struct BandMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    fn zeros(n: usize, bw: usize) -> Self {
        BandMatrix { n, bw, data: vec![0.0; n * (bw + 1)] }
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i >= j && i - j <= self.bw);
        i * (self.bw + 1) + (i - j)
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    /// In-place Cholesky factorization. Returns false if not positive definite.
    fn cholesky(&mut self) -> bool {
        let (n, bw) = (self.n, self.bw);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut sum = self.get(i, j);
                for k in lo.max(j.saturating_sub(bw))..j {
                    sum -= self.data[self.idx(i, k)] * self.data[self.idx(j, k)];
                }
                if i == j {
                    if !(sum > 0.0) {
                        return false;
                    }
                    let k = self.idx(i, i);
                    self.data[k] = sum.sqrt();
                } else {
                    let k = self.idx(i, j);
                    self.data[k] = sum / self.data[self.idx(j, j)];
                }
            }
        }
        true
    }

    fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let (n, bw) = (self.n, self.bw);
        let mut y = vec![0.0; n];
        for i in 0..n {
            for j in i.saturating_sub(bw)..=i {
                let a = self.data[self.idx(i, j)];
                y[i] += a * x[j];
                if i != j {
                    y[j] += a * x[i];
                }
            }
        }
        y
    }

    fn solve_factored(&self, b: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        for i in 0..n {
            let mut s = b[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.data[self.idx(i, k)] * b[k];
            }
            b[i] = s / self.data[self.idx(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..(i + bw + 1).min(n) {
                s -= self.data[self.idx(k, i)] * b[k];
            }
            b[i] = s / self.data[self.idx(i, i)];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Largest admissible defect.
    pub feas_tol: f64,
    /// Projected-gradient tolerance on the Lagrangian.
    pub opt_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub rho_initial: f64,
    pub rho_max: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { feas_tol: 1e-6, opt_tol: 1e-6, max_outer: 40, max_inner: 200, rho_initial: 1e2, rho_max: 1e9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SolveStats {
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub final_rho: f64,
    pub stationarity: f64,
    /// Augmented-Lagrangian merit after each accepted inner step, one list
    /// per outer iteration.
    pub merit_history: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollocationSolution {
    pub t: Vec<f64>,
    pub phi: Vec<f64>,
    pub phi_dot: Vec<f64>,
    /// On-axis acceleration `v.J^-1 M` at the knots.
    pub phi_ddot: Vec<f64>,
    pub moment: Vec<Vec3>,
    pub theta: Vec<Vec3>,
    pub u: Vec<Vec3>,
    pub objective: f64,
    pub max_violation: f64,
    pub stats: SolveStats,
}

impl CollocationSolution {
    fn from_vector(nlp: &FlipNlp, x: &[f64], max_violation: f64, stats: SolveStats) -> Self {
        let n = nlp.knots();
        let mut sol = CollocationSolution {
            t: (0..n).map(|k| k as f64 * nlp.h).collect(),
            phi: Vec::with_capacity(n),
            phi_dot: Vec::with_capacity(n),
            phi_ddot: Vec::with_capacity(n),
            moment: Vec::with_capacity(n),
            theta: Vec::with_capacity(n),
            u: Vec::with_capacity(n),
            objective: nlp.objective(x),
            max_violation,
            stats,
        };
        let axis = nlp.spec.axis;
        let d = &nlp.m;
        for k in 0..n {
            let (p, w, m, th, u) = nlp.knot(x, k);
            sol.phi.push(p);
            sol.phi_dot.push(w);
            sol.phi_ddot.push(axis.dot(&(d.j_inv * m)));
            sol.moment.push(m);
            sol.theta.push(th);
            sol.u.push(u);
        }
        sol
    }

    /// Largest pseudo-control magnitude over all knots and channels.
    pub fn theta_inf_norm(&self) -> f64 {
        self.theta.iter().map(|t| t.amax()).fold(0.0, f64::max)
    }

    pub fn duration(&self) -> f64 {
        *self.t.last().expect("solution has knots")
    }

    pub const CSV_HEADER: &'static str = "t,phi,phidot,M0,M1,M2,theta0,theta1,theta2,u0,u1,u2";

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for k in 0..self.t.len() {
            let row = [self.t[k], self.phi[k], self.phi_dot[k]]
                .into_iter()
                .chain(self.moment[k].iter().copied())
                .chain(self.theta[k].iter().copied())
                .chain(self.u[k].iter().copied());
            writeln!(w, "{}", csvfmt::join(row))?;
        }
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(f)
    }
}

struct AugmentedLagrangian<'a> {
    nlp: &'a FlipNlp,
    lambda: Vec<f64>,
    rho: f64,
    fixed: Vec<bool>,
}

impl AugmentedLagrangian<'_> {
    fn merit(&self, x: &[f64]) -> f64 {
        let c = self.nlp.defects(x);
        self.nlp.objective(x)
            + c.iter().zip(&self.lambda).map(|(ci, li)| li * ci + 0.5 * self.rho * ci * ci).sum::<f64>()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let nlp = self.nlp;
        let mut g = vec![0.0; nlp.n_vars()];
        nlp.objective_gradient(x, &mut g);
        for k in 0..nlp.knots() - 1 {
            let c = nlp.interval_defects(x, k);
            let jac = nlp.interval_jacobian(x, k);
            for (r, row) in jac.iter().enumerate() {
                let y = self.lambda[k * INTERVAL_DEFECTS + r] + self.rho * c[r];
                for (j, a) in row.iter().enumerate() {
                    g[k * KNOT_VARS + j] += a * y;
                }
            }
        }
        g
    }

    /// Gauss-Newton Hessian `grad^2 f + rho J^T J`.
    fn hessian(&self, x: &[f64]) -> BandMatrix {
        let nlp = self.nlp;
        let mut h = BandMatrix::zeros(nlp.n_vars(), 2 * KNOT_VARS - 1);
        for k in 0..nlp.knots() {
            for i in 0..3 {
                let j = k * KNOT_VARS + U + i;
                h.add(j, j, 2.0 * nlp.weight(k));
            }
        }
        for k in 0..nlp.knots() - 1 {
            let jac = nlp.interval_jacobian(x, k);
            let base = k * KNOT_VARS;
            for a in 0..2 * KNOT_VARS {
                for b in 0..=a {
                    let s: f64 = jac.iter().map(|row| row[a] * row[b]).sum();
                    if s != 0.0 {
                        h.add(base + a, base + b, self.rho * s);
                    }
                }
            }
        }
        h
    }

    fn projected_gradient_norm(&self, x: &[f64], g: &[f64]) -> f64 {
        x.iter()
            .zip(g)
            .enumerate()
            .map(|(i, (xi, gi))| (xi - (xi - gi).clamp(self.nlp.lower[i], self.nlp.upper[i])).abs())
            .fold(0.0, f64::max)
    }

    /// Binding variables: fixed, or on a bound with the gradient pointing out.
    fn binding(&self, x: &[f64], g: &[f64]) -> Vec<bool> {
        let nlp = self.nlp;
        (0..x.len())
            .map(|i| {
                self.fixed[i] || (x[i] <= nlp.lower[i] && g[i] > 0.0) || (x[i] >= nlp.upper[i] && g[i] < 0.0)
            })
            .collect()
    }

    /// Projected search along `P(x + alpha d)`. Accepts only points that do
    /// not increase the merit and satisfy the Armijo condition.
    fn projected_search(&self, x: &mut Vec<f64>, value: &mut f64, g: &[f64], d: &[f64], alpha0: f64) -> bool {
        let mut alpha = alpha0;
        for _ in 0..60 {
            let mut trial: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect();
            self.nlp.project(&mut trial);
            let slope: f64 = g.iter().zip(trial.iter().zip(x.iter())).map(|(gi, (ti, xi))| gi * (ti - xi)).sum();
            let trial_value = self.merit(&trial);
            if trial_value <= *value && trial_value <= *value + 1e-4 * slope {
                *x = trial;
                *value = trial_value;
                return true;
            }
            alpha *= 0.5;
        }
        false
    }

    /// Bound-constrained minimization of the merit: gradient-projection
    /// sweeps settle the active face, then a Newton step on the Gauss-Newton
    /// Hessian restricted to that face. Returns the accepted merit values
    /// and the final projected-gradient norm.
    fn minimize(&self, x: &mut Vec<f64>, tol: f64, max_iter: usize) -> (Vec<f64>, f64) {
        const GP_SWEEPS: usize = 25;
        let nlp = self.nlp;
        let n = nlp.n_vars();
        let mut history = Vec::new();
        let mut value = self.merit(x);
        let mut pg = f64::INFINITY;
        for _ in 0..max_iter {
            let g = self.gradient(x);
            pg = self.projected_gradient_norm(x, &g);
            if pg <= tol {
                break;
            }
            let h = self.hessian(x);

            let mut best_drop = 0.0f64;
            let mut at_bound = self.at_bounds(x);
            let mut g = g;
            for _ in 0..GP_SWEEPS {
                let binding = self.binding(x, &g);
                let d: Vec<f64> = (0..n).map(|i| if binding[i] { 0.0 } else { -g[i] }).collect();
                let curvature = dot(&d, &h.mul_vec(&d));
                let dd = dot(&d, &d);
                if dd == 0.0 {
                    break;
                }
                let t = if curvature > 0.0 { dd / curvature } else { 1.0 };
                let before = value;
                if !self.projected_search(x, &mut value, &g, &d, t) {
                    break;
                }
                history.push(value);
                let drop = before - value;
                let now_at_bound = self.at_bounds(x);
                let settled = now_at_bound == at_bound;
                at_bound = now_at_bound;
                g = self.gradient(x);
                if settled || drop <= 0.1 * best_drop {
                    break;
                }
                best_drop = best_drop.max(drop);
            }

            let binding = self.binding(x, &g);
            let mut reduced = BandMatrix { n, bw: h.bw, data: h.data.clone() };
            for i in 0..n {
                if binding[i] {
                    for j in i.saturating_sub(h.bw)..(i + h.bw + 1).min(n) {
                        reduced.set(i, j, 0.0);
                    }
                    reduced.set(i, i, 1.0);
                }
            }
            let max_diag = (0..n).map(|i| reduced.get(i, i)).fold(1.0, f64::max);
            let mut reg = 1e-13 * max_diag;
            let mut step = vec![0.0; n];
            loop {
                let mut f = BandMatrix { n, bw: reduced.bw, data: reduced.data.clone() };
                for i in 0..n {
                    f.add(i, i, reg);
                }
                if f.cholesky() {
                    for i in 0..n {
                        step[i] = if binding[i] { 0.0 } else { -g[i] };
                    }
                    f.solve_factored(&mut step);
                    break;
                }
                reg *= 100.0;
            }
            let newton_ok = self.projected_search(x, &mut value, &g, &step, 1.0);
            if newton_ok {
                history.push(value);
            }
            log::trace!(
                "inner: pg {pg:.3e} binding {} newton {newton_ok} merit {value:.9e}",
                binding.iter().filter(|b| **b).count()
            );
        }
        (history, pg)
    }

    fn at_bounds(&self, x: &[f64]) -> Vec<bool> {
        let nlp = self.nlp;
        (0..x.len()).map(|i| x[i] <= nlp.lower[i] || x[i] >= nlp.upper[i]).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves the transcribed flip with default options.
pub fn flip_solve(nlp: &FlipNlp) -> Result<CollocationSolution> {
    flip_solve_with(nlp, &SolverOptions::default())
}

/// Augmented-Lagrangian outer loop with a projected Newton inner solver on
/// the banded Gauss-Newton Hessian. Bounds hold exactly at every iterate.
pub fn flip_solve_with(nlp: &FlipNlp, opts: &SolverOptions) -> Result<CollocationSolution> {
    let n = nlp.n_vars();
    let fixed: Vec<bool> = (0..n).map(|i| nlp.lower[i] == nlp.upper[i]).collect();
    let mut al = AugmentedLagrangian { nlp, lambda: vec![0.0; nlp.n_defects()], rho: opts.rho_initial, fixed };
    let mut x = nlp.initial_guess();
    let mut stats = SolveStats::default();
    let mut prev_violation = f64::INFINITY;
    let mut prev_objective = f64::INFINITY;
    let mut violation = f64::INFINITY;
    for outer in 0..opts.max_outer {
        let inner_tol = (0.1 * opts.opt_tol).max(1e-3 * 0.1f64.powi(outer as i32));
        let (history, pg) = al.minimize(&mut x, inner_tol, opts.max_inner);
        stats.inner_iterations += history.len();
        stats.merit_history.push(history);
        stats.outer_iterations = outer + 1;
        stats.stationarity = pg;
        stats.final_rho = al.rho;
        let c = nlp.defects(&x);
        violation = c.iter().fold(0.0, |a, v| a.max(v.abs()));
        for (l, ci) in al.lambda.iter_mut().zip(&c) {
            *l += al.rho * ci;
        }
        let objective = nlp.objective(&x);
        log::debug!(
            "outer {outer}: objective {objective:.9e} violation {violation:.3e} ({}) stationarity {pg:.3e} rho {:.1e} inner {}",
            nlp.defect_name((0..c.len()).max_by(|a, b| c[*a].abs().total_cmp(&c[*b].abs())).unwrap_or(0)),
            al.rho,
            stats.merit_history.last().map_or(0, Vec::len)
        );
        let stalled = (prev_objective - objective).abs() < 1e-10 * (1.0 + objective.abs());
        if violation <= opts.feas_tol && (pg <= opts.opt_tol || stalled) {
            return Ok(CollocationSolution::from_vector(nlp, &x, violation, stats));
        }
        prev_objective = objective;
        if violation > 0.25 * prev_violation {
            if al.rho >= opts.rho_max {
                break;
            }
            al.rho = (al.rho * 10.0).min(opts.rho_max);
        }
        prev_violation = prev_violation.min(violation);
    }
    if violation > opts.feas_tol {
        let c = nlp.defects(&x);
        let worst = (0..c.len()).max_by(|a, b| c[*a].abs().total_cmp(&c[*b].abs())).unwrap_or(0);
        return Err(Error::Infeasible { violation, constraint: nlp.defect_name(worst) });
    }
    Err(Error::MaxIterations(stats.outer_iterations))
}

/// Interpolating septic spline, `C^6`, with the first three derivatives
/// prescribed at both ends.
#[derive(Debug, Clone, PartialEq)]
pub struct SepticSpline {
    t: Vec<f64>,
    /// Coefficients per interval in ascending powers of the normalized time.
    coeffs: Vec<[f64; 8]>,
}

/// `j (j-1) ... (j-d+1)`.
fn falling(j: usize, d: usize) -> f64 {
    (j + 1 - d..=j).map(|x| x as f64).product()
}

/// Maps the end data `[y0, h y0', h^2 y0'', h^3 y0''', y1, ...]` of one
/// interval to its normalized coefficients.
fn septic_hermite() -> SMatrix<f64, 8, 8> {
    let mut m = SMatrix::<f64, 8, 8>::zeros();
    for d in 0..4 {
        m[(d, d)] = falling(d, d);
        for j in d..8 {
            m[(4 + d, j)] = falling(j, d);
        }
    }
    m.try_inverse().expect("septic Hermite system is regular")
}

impl SepticSpline {
    /// `start` and `end` are `[y', y'', y''']` at the first and last knot.
    pub fn interpolate(t: &[f64], y: &[f64], start: [f64; 3], end: [f64; 3]) -> Result<Self> {
        let n = t.len();
        if n < 2 || y.len() != n || t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::BadSpec("spline needs at least two strictly increasing knots".into()));
        }
        let basis = septic_hermite();
        let h: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
        let scale = |hi: f64| [1.0, hi, hi * hi, hi * hi * hi];
        // Unknowns: (y', y'', y''') at every knot.
        let mut a = DMatrix::zeros(3 * n, 3 * n);
        let mut rhs = DVector::zeros(3 * n);
        for d in 0..3 {
            a[(d, d)] = 1.0;
            rhs[d] = start[d];
            a[(3 * n - 3 + d, 3 * n - 3 + d)] = 1.0;
            rhs[3 * n - 3 + d] = end[d];
        }
        // Derivative `d` at either end of interval `i` as a linear function
        // of the interval's end data.
        let end_derivative = |i: usize, at_end: bool, d: usize| -> [f64; 8] {
            let hi = h[i];
            let s: f64 = if at_end { 1.0 } else { 0.0 };
            let mut w = [0.0; 8];
            for j in d..8 {
                let f = falling(j, d) * s.powi((j - d) as i32) / hi.powi(d as i32);
                for (k, wk) in w.iter_mut().enumerate() {
                    *wk += f * basis[(j, k)];
                }
            }
            let sc = scale(hi);
            for k in 0..4 {
                w[k] *= sc[k];
                w[4 + k] *= sc[k];
            }
            w
        };
        for k in 1..n - 1 {
            for (e, d) in [(0, 4), (1, 5), (2, 6)] {
                let r = 3 * k + e;
                let left = end_derivative(k - 1, true, d);
                let right = end_derivative(k, false, d);
                for (knot, w, sign) in [(k - 1, left, 1.0), (k, right, -1.0)] {
                    for side in 0..2 {
                        let kk = knot + side;
                        let o = 4 * side;
                        rhs[r] -= sign * w[o] * y[kk];
                        for q in 0..3 {
                            a[(r, 3 * kk + q)] += sign * w[o + 1 + q];
                        }
                    }
                }
            }
        }
        // Equilibrate: unknowns become H^(q+1) y^(q+1) and derivative rows are
        // multiplied by H^d, so every entry is of order one.
        let mean_h = (t[n - 1] - t[0]) / (n - 1) as f64;
        let col_scale = |c: usize| mean_h.powi((c % 3 + 1) as i32);
        for c in 0..3 * n {
            a.column_mut(c).scale_mut(col_scale(c));
        }
        for r in 0..3 * n {
            let f = if r < 3 || r >= 3 * n - 3 { 1.0 / col_scale(r) } else { mean_h.powi((r % 3 + 4) as i32) };
            a.row_mut(r).scale_mut(f);
            rhs[r] *= f;
        }
        let mut sol = a.lu().solve(&rhs).ok_or_else(|| Error::BadSpec("singular spline system".into()))?;
        for (c, v) in sol.iter_mut().enumerate() {
            *v *= col_scale(c);
        }
        let coeffs = (0..n - 1)
            .map(|i| {
                let sc = scale(h[i]);
                let mut data = SVector::<f64, 8>::zeros();
                for (side, kk) in [i, i + 1].into_iter().enumerate() {
                    // relative to the left knot so the basis does not cancel large values
                    data[4 * side] = y[kk] - y[i];
                    for q in 0..3 {
                        data[4 * side + 1 + q] = sc[q + 1] * sol[3 * kk + q];
                    }
                }
                let c = basis * data;
                std::array::from_fn(|j| if j == 0 { c[0] + y[i] } else { c[j] })
            })
            .collect();
        Ok(SepticSpline { t: t.to_vec(), coeffs })
    }

    pub fn start(&self) -> f64 {
        self.t[0]
    }

    pub fn end(&self) -> f64 {
        *self.t.last().expect("knots")
    }

    /// Value and first three derivatives at `t`; outside the knots the end
    /// polynomials are extended.
    pub fn eval(&self, t: f64) -> [f64; 4] {
        let n = self.t.len();
        let i = self.t.partition_point(|&k| k <= t).clamp(1, n - 1) - 1;
        let h = self.t[i + 1] - self.t[i];
        let s = (t - self.t[i]) / h;
        let c = &self.coeffs[i];
        let mut out = [0.0; 4];
        for (d, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in (d..8).rev() {
                acc = acc * s + c[j] * falling(j, d);
            }
            *o = acc / h.powi(d as i32);
        }
        out
    }
}

/// Flip reference built once from a solution: the septic spline through the
/// knot angles, at rest (zero rate, acceleration and jerk) at both ends so
/// that holding the end attitudes outside the maneuver stays smooth.
#[derive(Debug, Clone, PartialEq)]
pub struct FlipReference {
    pub axis: Vec3,
    spline: SepticSpline,
}

impl FlipReference {
    pub fn new(sol: &CollocationSolution, spec: &FlipSpec) -> Result<Self> {
        check_axis(&spec.axis)?;
        let spline = SepticSpline::interpolate(&sol.t, &sol.phi, [0.0; 3], [0.0; 3])?;
        Ok(FlipReference { axis: spec.axis, spline })
    }

    pub fn duration(&self) -> f64 {
        self.spline.end()
    }

    pub fn angle(&self, t: f64) -> Result<[f64; 4]> {
        let (lo, hi) = (self.spline.start(), self.spline.end());
        if !(t >= lo && t <= hi) {
            return Err(Error::OutOfRange { t, lo, hi });
        }
        Ok(self.spline.eval(t))
    }

    pub fn sample(&self, t: f64) -> Result<ReferenceSample> {
        Ok(single_axis_sample(&self.axis, self.angle(t)?))
    }

    /// Like [`sample`](Self::sample) but holds the end attitudes at rest
    /// outside the maneuver.
    pub fn sample_held(&self, t: f64) -> ReferenceSample {
        let (lo, hi) = (self.spline.start(), self.spline.end());
        if t < lo || t > hi {
            let phi = self.spline.eval(t.clamp(lo, hi))[0];
            return single_axis_sample(&self.axis, [phi, 0.0, 0.0, 0.0]);
        }
        single_axis_sample(&self.axis, self.spline.eval(t))
    }
}

pub fn sample_flip(sol: &CollocationSolution, spec: &FlipSpec, t: f64) -> Result<ReferenceSample> {
    FlipReference::new(sol, spec)?.sample(t)
}

/// One polynomial piece in the normalized time `s = (t - t0)/(t1 - t0)`,
/// coefficients in ascending powers of `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolySegment {
    pub t0: f64,
    pub t1: f64,
    pub coeffs: Vec<f64>,
}

impl PolySegment {
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn eval(&self, t: f64) -> f64 {
        let s = (t - self.t0) / (self.t1 - self.t0);
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * s + c)
    }

    /// First derivative with respect to `t`.
    pub fn eval_rate(&self, t: f64) -> f64 {
        let s = (t - self.t0) / (self.t1 - self.t0);
        let d = self.coeffs.iter().enumerate().skip(1).rev().fold(0.0, |acc, (i, c)| acc * s + i as f64 * c);
        d / (self.t1 - self.t0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewisePoly {
    pub segments: Vec<PolySegment>,
    /// Largest deviation from the source profile on the check grid (rad).
    pub max_error: f64,
}

impl PiecewisePoly {
    pub fn start(&self) -> f64 {
        self.segments.first().map_or(0.0, |s| s.t0)
    }

    pub fn end(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.t1)
    }

    pub fn segment_at(&self, t: f64) -> &PolySegment {
        let i = self.segments.partition_point(|s| s.t1 < t).min(self.segments.len() - 1);
        &self.segments[i]
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.segment_at(t).eval(t)
    }

    /// Largest jump in value and in rate across interior breakpoints.
    pub fn continuity_gaps(&self) -> (f64, f64) {
        self.segments.windows(2).fold((0.0, 0.0), |(dv, dr), w| {
            let t = w[0].t1;
            (dv.max((w[0].eval(t) - w[1].eval(t)).abs()), dr.max((w[0].eval_rate(t) - w[1].eval_rate(t)).abs()))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompressOptions {
    /// Pointwise angle tolerance (rad).
    #[serde(default = "default_max_err")]
    pub max_err: f64,
    /// Length of the constant holds before and after the maneuver (s).
    #[serde(default = "default_hold")]
    pub hold: f64,
    #[serde(default = "default_max_segments")]
    pub max_segments: usize,
}

fn default_max_err() -> f64 {
    0.1f64.to_radians()
}

fn default_hold() -> f64 {
    0.5
}

fn default_max_segments() -> usize {
    24
}

impl Default for CompressOptions {
    fn default() -> Self {
        CompressOptions { max_err: default_max_err(), hold: default_hold(), max_segments: default_max_segments() }
    }
}

const CHECK_POINTS: usize = 200;
const LAWSON_ITERS: usize = 12;

/// Degree-7 piece on `[t0, t1]` that matches the profile's value at both ends
/// and fits the interior in weighted least squares. Lawson reweighting pulls
/// the fit towards the minimax error.
fn fit_septic(f: &dyn Fn(f64) -> [f64; 4], t0: f64, t1: f64) -> PolySegment {
    let l = t1 - t0;
    let (y0, y1) = (f(t0)[0], f(t1)[0]);
    let samples = CHECK_POINTS;
    let mut design = DMatrix::zeros(samples, 6);
    let mut rhs = DVector::zeros(samples);
    for r in 0..samples {
        let s = (r as f64 + 0.5) / samples as f64;
        let bubble = s * (1.0 - s);
        for j in 0..6 {
            design[(r, j)] = bubble * s.powi(j as i32);
        }
        rhs[r] = f(t0 + s * l)[0] - (y0 + (y1 - y0) * s);
    }
    let mut weights = vec![1.0 / samples as f64; samples];
    let mut q = DVector::zeros(6);
    for _ in 0..LAWSON_ITERS {
        let mut wd = design.clone();
        let mut wr = rhs.clone();
        for (r, w) in weights.iter().enumerate() {
            let sw = w.sqrt();
            wd.row_mut(r).scale_mut(sw);
            wr[r] *= sw;
        }
        q = wd.svd(true, true).solve(&wr, 1e-14).expect("svd solve");
        let resid = &design * &q - &rhs;
        let total: f64 = weights.iter().zip(resid.iter()).map(|(w, e)| w * e.abs()).sum();
        if total <= 0.0 {
            break;
        }
        for (w, e) in weights.iter_mut().zip(resid.iter()) {
            *w *= e.abs() / total;
        }
    }
    let mut coeffs = vec![0.0; 8];
    coeffs[0] = y0;
    coeffs[1] = y1 - y0;
    // s (1 - s) = s - s^2
    for (j, qj) in q.iter().enumerate() {
        coeffs[j + 1] += qj;
        coeffs[j + 2] -= qj;
    }
    PolySegment { t0, t1, coeffs }
}

fn linear_segment(t0: f64, t1: f64, y0: f64, y1: f64) -> PolySegment {
    PolySegment { t0, t1, coeffs: vec![y0, y1 - y0] }
}

fn max_deviation(f: &dyn Fn(f64) -> [f64; 4], segs: &[PolySegment]) -> f64 {
    segs.iter()
        .flat_map(|s| {
            (0..=CHECK_POINTS).map(move |i| {
                let t = s.t0 + (s.t1 - s.t0) * i as f64 / CHECK_POINTS as f64;
                (s, t)
            })
        })
        .map(|(s, t)| (s.eval(t) - f(t)[0]).abs())
        .fold(0.0, f64::max)
}

fn fit_pieces(f: &dyn Fn(f64) -> [f64; 4], breaks: &[f64]) -> (Vec<PolySegment>, f64) {
    let segs: Vec<PolySegment> = breaks.windows(2).map(|w| fit_septic(f, w[0], w[1])).collect();
    let err = max_deviation(f, &segs);
    (segs, err)
}

/// `count` degree-7 pieces on `[t0, t1]`. Starts from equal spacing and moves
/// one interior breakpoint at a time to the best of a grid between its
/// neighbours until the maximum deviation stops improving.
fn place_breakpoints(f: &dyn Fn(f64) -> [f64; 4], t0: f64, t1: f64, count: usize) -> (Vec<PolySegment>, f64) {
    const GRID: usize = 24;
    const SWEEPS: usize = 8;
    let mut breaks: Vec<f64> = (0..=count).map(|i| t0 + (t1 - t0) * i as f64 / count as f64).collect();
    breaks[count] = t1;
    let mut best = fit_pieces(f, &breaks);
    for _ in 0..SWEEPS {
        let before = best.1;
        for i in 1..count {
            let (lo, hi) = (breaks[i - 1], breaks[i + 1]);
            for g in 1..GRID {
                let mut trial = breaks.clone();
                trial[i] = lo + (hi - lo) * g as f64 / GRID as f64;
                let fit = fit_pieces(f, &trial);
                if fit.1 < best.1 {
                    best = fit;
                    breaks = trial;
                }
            }
        }
        if best.1 >= before * (1.0 - 1e-3) {
            break;
        }
    }
    best
}

/// Compresses a profile on `[t0, t1]`: a single degree-1 segment if it is
/// linear within tolerance, otherwise the fewest degree-7 segments that meet
/// `max_err`.
pub fn compress_profile(
    f: &dyn Fn(f64) -> [f64; 4],
    t0: f64,
    t1: f64,
    max_err: f64,
    max_segments: usize,
) -> Result<PiecewisePoly> {
    let line = [linear_segment(t0, t1, f(t0)[0], f(t1)[0])];
    let err = max_deviation(f, &line);
    if err <= max_err {
        return Ok(PiecewisePoly { segments: line.to_vec(), max_error: err });
    }
    let mut last_err = err;
    for count in 1..=max_segments {
        let (segs, e) = place_breakpoints(f, t0, t1, count);
        last_err = e;
        if e <= max_err {
            return Ok(PiecewisePoly { segments: segs, max_error: e });
        }
    }
    Err(Error::TolNotMet { tol: max_err, err: last_err, segments: max_segments })
}

/// Flip angle schedule for playback: degree-1 holds of `opts.hold` seconds
/// around the maneuver (starting at `-hold`) and degree-7 pieces over it.
/// Collinear neighbouring degree-1 pieces are merged.
pub fn compress_poly(sol: &CollocationSolution, spec: &FlipSpec, opts: &CompressOptions) -> Result<PiecewisePoly> {
    let reference = FlipReference::new(sol, spec)?;
    let f = |t: f64| reference.spline.eval(t.clamp(reference.spline.start(), reference.spline.end()));
    let tf = reference.duration();
    let body = compress_profile(&f, 0.0, tf, opts.max_err, opts.max_segments)?;
    let (phi0, phi1) = (f(0.0)[0], f(tf)[0]);
    let mut segments = Vec::new();
    if opts.hold > 0.0 {
        segments.push(linear_segment(-opts.hold, 0.0, phi0, phi0));
    }
    segments.extend(body.segments);
    if opts.hold > 0.0 {
        segments.push(linear_segment(tf, tf + opts.hold, phi1, phi1));
    }
    Ok(PiecewisePoly { segments: merge_linear(segments), max_error: body.max_error })
}

fn merge_linear(segments: Vec<PolySegment>) -> Vec<PolySegment> {
    let mut out: Vec<PolySegment> = Vec::with_capacity(segments.len());
    for s in segments {
        if let Some(prev) = out.last_mut() {
            if prev.degree() <= 1 && s.degree() <= 1 {
                let merged = linear_segment(prev.t0, s.t1, prev.eval(prev.t0), s.eval(s.t1));
                let t = prev.t1;
                if (merged.eval(t) - prev.eval(t)).abs() < 1e-12 && (merged.eval_rate(t) - s.eval_rate(t)).abs() < 1e-12 {
                    *prev = merged;
                    continue;
                }
            }
        }
        out.push(s);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn sinusoid_peak_at_quarter_period() {
        let spec = SinusoidSpec::roll(20f64.to_radians(), 1.0);
        let r = sinusoid_reference(&spec, 0.25);
        assert_relative_eq!(r.r_d.angle(), 20f64.to_radians(), epsilon = 1e-12);
        assert!(r.omega_d.norm() < 1e-12);
    }

    #[test]
    fn zero_amplitude_is_hover() {
        let spec = SinusoidSpec::roll(0.0, 1.0);
        assert_eq!(sinusoid_reference(&spec, 0.3), ReferenceSample::hover());
    }

    #[test]
    fn collective_examples() {
        assert_eq!(collective_schedule(&Rotation::identity(), 0.1), 0.1);
        assert_relative_eq!(collective_schedule(&so3::expm(&Vec3::new(PI, 0.0, 0.0)), 0.1), -0.1, epsilon = 1e-15);
        assert!(collective_schedule(&so3::expm(&Vec3::new(PI / 2.0, 0.0, 0.0)), 0.1).abs() < 1e-15);
    }

    #[test]
    fn transcription_size() {
        let spec = FlipSpec { knots: 60, ..FlipSpec::new(Vec3::x(), PI, 1.2) };
        let nlp = flip_transcribe(&spec, &VehicleParams::default()).unwrap();
        assert_eq!(nlp.n_vars(), 60 * 11);
        assert_eq!(nlp.n_defects(), 59 * 10);
    }

    #[test]
    fn rejects_bad_specs() {
        let p = VehicleParams::default();
        let bad = [
            FlipSpec { knots: 5, ..FlipSpec::new(Vec3::x(), PI, 1.2) },
            FlipSpec::new(Vec3::new(1.0, 1.0, 0.0), PI, 1.2),
            FlipSpec::new(Vec3::x(), PI, 0.0),
            FlipSpec { theta_max: -1.0, ..FlipSpec::new(Vec3::x(), PI, 1.2) },
        ];
        for spec in bad {
            assert!(matches!(flip_transcribe(&spec, &p), Err(Error::BadSpec(_))));
        }
    }

    #[test]
    fn zero_angle_flip_is_trivial() {
        let spec = FlipSpec { knots: 20, ..FlipSpec::new(Vec3::x(), 0.0, 1.0) };
        let nlp = flip_transcribe(&spec, &VehicleParams::default()).unwrap();
        let sol = flip_solve(&nlp).unwrap();
        assert!(sol.objective < 1e-12);
        assert!(sol.max_violation < 1e-9);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let spec = FlipSpec { knots: 12, ..FlipSpec::new(Vec3::new(0.6, 0.8, 0.0), 2.0, 1.0) };
        let nlp = flip_transcribe(&spec, &VehicleParams::default()).unwrap();
        let x: Vec<f64> = (0..nlp.n_vars()).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.1).collect();
        let k = 4;
        let jac = nlp.interval_jacobian(&x, k);
        let step = 1e-6;
        for j in 0..2 * KNOT_VARS {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k * KNOT_VARS + j] += step;
            xm[k * KNOT_VARS + j] -= step;
            let (dp, dm) = (nlp.interval_defects(&xp, k), nlp.interval_defects(&xm, k));
            for r in 0..INTERVAL_DEFECTS {
                assert_relative_eq!(jac[r][j], (dp[r] - dm[r]) / (2.0 * step), epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn band_cholesky_solves() {
        let n = 30;
        let mut a = BandMatrix::zeros(n, 3);
        let mut dense = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(3)..=i {
                let v = if i == j { 10.0 + i as f64 } else { 1.0 / (1.0 + (i + j) as f64) };
                a.add(i, j, v);
                dense[(i, j)] = v;
                dense[(j, i)] = v;
            }
        }
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut x = b.clone();
        assert!(a.cholesky());
        a.solve_factored(&mut x);
        let r = &dense * DVector::from_vec(x) - DVector::from_vec(b);
        assert!(r.amax() < 1e-12);
    }

    #[test]
    fn septic_spline_reproduces_septic_and_is_smooth() {
        let poly = [0.3, -1.0, 0.5, 0.25, -0.4, 0.1, 0.05, -0.02];
        let f = |x: f64, d: usize| -> f64 { (d..8).map(|j| poly[j] * falling(j, d) * x.powi((j - d) as i32)).sum() };
        let t = [0.0, 0.4, 0.9, 1.7, 2.0];
        let y: Vec<f64> = t.iter().map(|x| f(*x, 0)).collect();
        let ends = |x: f64| [f(x, 1), f(x, 2), f(x, 3)];
        let s = SepticSpline::interpolate(&t, &y, ends(0.0), ends(2.0)).unwrap();
        for x in [0.1, 0.4, 1.234, 1.99] {
            let v = s.eval(x);
            for (d, vd) in v.iter().enumerate() {
                assert_relative_eq!(*vd, f(x, d), epsilon = 1e-9, max_relative = 1e-9);
            }
        }
        let t: Vec<f64> = (0..8).map(|i| i as f64 * 0.3).collect();
        let y: Vec<f64> = t.iter().map(|x| (2.0 * x).sin()).collect();
        let s = SepticSpline::interpolate(&t, &y, [0.0; 3], [0.0; 3]).unwrap();
        for d in 1..4 {
            assert!(s.eval(t[7])[d].abs() < 1e-9 && s.eval(0.0)[d].abs() < 1e-9);
        }
        for (i, knot) in t.iter().enumerate().skip(1).take(6) {
            let (l, r) = (s.eval(knot - 1e-9), s.eval(*knot));
            assert_relative_eq!(r[0], y[i], epsilon = 1e-12);
            for d in 0..4 {
                assert!((l[d] - r[d]).abs() < 1e-5, "derivative {d} jumps at {knot}: {} vs {}", l[d], r[d]);
            }
        }
        assert!(matches!(SepticSpline::interpolate(&[0.0, 0.0], &[0.0, 1.0], [0.0; 3], [0.0; 3]), Err(Error::BadSpec(_))));
    }

    #[test]
    fn constant_and_ramp_compress_to_one_line() {
        let constant = |_: f64| [0.7, 0.0, 0.0, 0.0];
        let p = compress_profile(&constant, 0.0, 2.0, 1e-9, 4).unwrap();
        assert_eq!(p.segments.len(), 1);
        assert_eq!(p.segments[0].degree(), 1);
        assert_eq!(p.max_error, 0.0);
        let ramp = |t: f64| [0.5 * t - 1.0, 0.5, 0.0, 0.0];
        let p = compress_profile(&ramp, 0.0, 2.0, 1e-9, 4).unwrap();
        assert_eq!(p.segments.len(), 1);
        assert!(p.max_error < 1e-15);
    }

    #[test]
    fn septic_segments_are_continuous() {
        let f = |t: f64| [(3.0 * t).sin() + t * t, 3.0 * (3.0 * t).cos() + 2.0 * t, 0.0, 0.0];
        let p = compress_profile(&f, 0.0, 3.0, 1e-6, 40).unwrap();
        assert!(p.segments.len() > 1);
        assert!(p.max_error <= 1e-6);
        let (dv, dr) = p.continuity_gaps();
        assert!(dv < 1e-9 && dr < 1e-3, "{dv} {dr}");
    }

    #[test]
    fn tolerance_not_met() {
        let f = |t: f64| [(40.0 * t).sin(), 40.0 * (40.0 * t).cos(), 0.0, 0.0];
        assert!(matches!(compress_profile(&f, 0.0, 3.0, 1e-9, 2), Err(Error::TolNotMet { segments: 2, .. })));
    }
}
