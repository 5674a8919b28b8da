//! Closed-loop simulation: scenarios, the group integrator, run logs and the
//! built-in figure presets.

use std::f64::consts::PI;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{brc_z, lyapunov_spr, ErrorState, TildeErrorState};
use crate::control::{BrcGains, ControlLaw, ControlOutput, Controller, MdDotMode, ReferenceSample, SprGains};
use crate::csvfmt;
use crate::error::{Error, Result};
use crate::model::{
    derive_assumed, derive_matrices, disturbance_torque, fuselage_acceleration, moment_rate, moment_to_flap,
    physical_to_pseudo, pseudo_to_physical, DerivedMatrices, DisturbanceSpec, PhysicalInputs, PlantState,
    UncertaintySpec, VehicleParams,
};
use crate::so3::{self, Rotation, Vec3};
use crate::trajectory::{flip_solve, flip_transcribe, sinusoid_reference, FlipReference, FlipSpec, SinusoidSpec};

/// Body rate above which a run is declared divergent (rad/s).
pub const BLOWUP_RATE: f64 = 1e3;

fn default_dt() -> f64 {
    1e-3
}

fn one() -> usize {
    1
}

fn default_cyclic_limit() -> f64 {
    10f64.to_radians()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceSpec {
    #[default]
    Hover,
    Sinusoid(SinusoidSpec),
    /// Solved once at the start of the run; the end attitude is held afterwards.
    Flip(FlipSpec),
}

/// Initial plant state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    /// `R0 = expm(attitude_error) R_d(0)`, `w0 = w_d(0) + omega_offset`.
    Relative {
        #[serde(default)]
        attitude_error: Vec3,
        #[serde(default)]
        omega_offset: Vec3,
        #[serde(default)]
        moment: Vec3,
    },
    Absolute {
        rotation: Rotation,
        #[serde(default)]
        omega: Vec3,
        #[serde(default)]
        moment: Vec3,
    },
    /// Attitude error about a random axis by up to `max_angle` rad and a rate
    /// offset of up to `max_rate` rad/s, drawn from the scenario seed.
    Random { max_angle: f64, max_rate: f64 },
}

impl Default for InitialCondition {
    fn default() -> Self {
        InitialCondition::Relative { attitude_error: Vec3::zeros(), omega_offset: Vec3::zeros(), moment: Vec3::zeros() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub vehicle: VehicleParams,
    pub controller: ControlLaw,
    #[serde(default)]
    pub md_dot: MdDotMode,
    /// Error of the controller's rotor model; the plant always uses `vehicle`.
    #[serde(default)]
    pub uncertainty: UncertaintySpec,
    #[serde(default)]
    pub disturbance: DisturbanceSpec,
    #[serde(default)]
    pub reference: ReferenceSpec,
    #[serde(default)]
    pub initial: InitialCondition,
    /// Logging interval (s).
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Integrator and controller steps per logging interval.
    #[serde(default = "one")]
    pub substeps: usize,
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    /// Clip the cyclic inputs reaching the plant at `cyclic_limit`. The log
    /// always records the demanded values.
    #[serde(default)]
    pub enforce_saturation: bool,
    #[serde(default = "default_cyclic_limit")]
    pub cyclic_limit: f64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.vehicle.validate()?;
        self.controller.validate()?;
        self.uncertainty.validate()?;
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::BadSpec(format!("duration must be positive, got {}", self.duration)));
        }
        let dt_max = self.vehicle.tau_m / 6.0;
        if !(self.dt > 0.0 && self.dt <= dt_max) {
            return Err(Error::BadSpec(format!("dt = {} must lie in (0, tau_m/6 = {dt_max}]", self.dt)));
        }
        if self.substeps == 0 {
            return Err(Error::BadSpec("substeps must be at least 1".into()));
        }
        if !(self.cyclic_limit > 0.0) {
            return Err(Error::BadSpec("cyclic_limit must be positive".into()));
        }
        match &self.reference {
            ReferenceSpec::Hover => {}
            ReferenceSpec::Sinusoid(s) => s.validate()?,
            ReferenceSpec::Flip(f) => f.validate()?,
        }
        if let InitialCondition::Random { max_angle, max_rate } = self.initial {
            if !((0.0..PI).contains(&max_angle) && max_rate >= 0.0) {
                return Err(Error::BadSpec("random initial condition needs 0 <= max_angle < pi, max_rate >= 0".into()));
            }
        }
        Ok(())
    }

    /// Number of logging intervals.
    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    /// Integration step (s).
    pub fn step_size(&self) -> f64 {
        self.dt / self.substeps as f64
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

/// Reference generator instantiated for one run.
#[derive(Debug, Clone)]
pub enum ActiveReference {
    Hover,
    Sinusoid(SinusoidSpec),
    Flip(FlipReference),
}

impl ActiveReference {
    pub fn build(spec: &ReferenceSpec, vehicle: &VehicleParams) -> Result<Self> {
        Ok(match spec {
            ReferenceSpec::Hover => ActiveReference::Hover,
            ReferenceSpec::Sinusoid(s) => ActiveReference::Sinusoid(*s),
            ReferenceSpec::Flip(f) => {
                let sol = flip_solve(&flip_transcribe(f, vehicle)?)?;
                ActiveReference::Flip(FlipReference::new(&sol, f)?)
            }
        })
    }

    pub fn sample(&self, t: f64) -> ReferenceSample {
        match self {
            ActiveReference::Hover => ReferenceSample::hover(),
            ActiveReference::Sinusoid(s) => sinusoid_reference(s, t),
            ActiveReference::Flip(f) => f.sample_held(t),
        }
    }
}

/// Right-trivialized inverse differential of `expm`, truncated after the
/// second-order term: `w + 1/2 x cross w + 1/12 x cross (x cross w)`.
fn dexpinv(x: &Vec3, w: &Vec3) -> Vec3 {
    let xw = x.cross(w);
    w + xw * 0.5 + x.cross(&xw) / 12.0
}

/// Everything the closed loop needs besides the state.
pub struct ClosedLoop<'a> {
    pub scenario: &'a Scenario,
    /// Matrices of the true plant.
    pub plant: DerivedMatrices,
    pub reference: ActiveReference,
}

impl<'a> ClosedLoop<'a> {
    pub fn new(scenario: &'a Scenario) -> Result<Self> {
        scenario.validate()?;
        Ok(ClosedLoop {
            scenario,
            plant: derive_matrices(&scenario.vehicle)?,
            reference: ActiveReference::build(&scenario.reference, &scenario.vehicle)?,
        })
    }

    pub fn controller(&self) -> Result<Controller> {
        let assumed = derive_assumed(&self.scenario.vehicle, &self.scenario.uncertainty)?;
        Controller::new(self.scenario.controller, assumed, self.scenario.md_dot)
    }

    pub fn initial_state(&self) -> PlantState {
        let r0 = self.reference.sample(0.0);
        match self.scenario.initial {
            InitialCondition::Relative { attitude_error, omega_offset, moment } => PlantState {
                r: so3::expm(&attitude_error) * r0.r_d,
                omega: r0.omega_d + omega_offset,
                moment,
            },
            InitialCondition::Absolute { rotation, omega, moment } => PlantState { r: rotation, omega, moment },
            InitialCondition::Random { max_angle, max_rate } => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.scenario.seed);
                let axis = random_unit(&mut rng);
                let angle = rng.gen_range(0.0..=max_angle);
                let rate = random_unit(&mut rng) * rng.gen_range(0.0..=max_rate);
                PlantState { r: so3::expm(&(axis * angle)) * r0.r_d, omega: r0.omega_d + rate, moment: Vec3::zeros() }
            }
        }
    }

    /// Pseudo-control reaching the plant: the demand, with the cyclic clipped
    /// when saturation is enforced.
    pub fn applied_input(&self, theta: &Vec3, omega: &Vec3) -> Vec3 {
        if !self.scenario.enforce_saturation {
            return *theta;
        }
        let lim = self.scenario.cyclic_limit;
        let u = pseudo_to_physical(theta, omega, &self.scenario.vehicle);
        let clipped = PhysicalInputs {
            theta_a: u.theta_a.clamp(-lim, lim),
            theta_b: u.theta_b.clamp(-lim, lim),
            theta_t: u.theta_t,
        };
        physical_to_pseudo(&clipped, omega, &self.scenario.vehicle)
    }

    /// Time derivative of `(x, w, M)` where `R = R_k expm(x)`, with the
    /// control output it was computed from.
    fn stage(
        &self,
        controller: &Controller,
        t: f64,
        r_k: &Rotation,
        x: &Vec3,
        omega: &Vec3,
        moment: &Vec3,
    ) -> Result<([Vec3; 3], ControlOutput)> {
        let state = PlantState { r: *r_k * so3::expm(x), omega: *omega, moment: *moment };
        let out = controller.evaluate(t, &state, &self.reference.sample(t))?;
        let theta = self.applied_input(&out.theta, omega);
        let torque = disturbance_torque(t, &self.scenario.disturbance);
        let rates = [
            dexpinv(x, omega),
            fuselage_acceleration(omega, moment, &torque, &self.plant),
            moment_rate(omega, moment, &theta, &self.plant),
        ];
        Ok((rates, out))
    }

    /// One step of length `h` of the Runge–Kutta–Munthe-Kaas method:
    /// classical RK4 on the local coordinates `x` of `R = R_k expm(x)`
    /// together with `(w, M)`. The controller is evaluated at every stage.
    /// Also returns the control output at the start of the step.
    pub fn step(&self, controller: &Controller, t: f64, h: f64, s: &PlantState) -> Result<(PlantState, ControlOutput)> {
        let z = Vec3::zeros();
        let ([x1, w1, m1], out) = self.stage(controller, t, &s.r, &z, &s.omega, &s.moment)?;
        let half = h / 2.0;
        let ([x2, w2, m2], _) =
            self.stage(controller, t + half, &s.r, &(x1 * half), &(s.omega + w1 * half), &(s.moment + m1 * half))?;
        let ([x3, w3, m3], _) =
            self.stage(controller, t + half, &s.r, &(x2 * half), &(s.omega + w2 * half), &(s.moment + m2 * half))?;
        let ([x4, w4, m4], _) = self.stage(controller, t + h, &s.r, &(x3 * h), &(s.omega + w3 * h), &(s.moment + m3 * h))?;
        let c = h / 6.0;
        let x = (x1 + x2 * 2.0 + x3 * 2.0 + x4) * c;
        let next = PlantState {
            r: s.r * so3::expm(&x),
            omega: s.omega + (w1 + w2 * 2.0 + w3 * 2.0 + w4) * c,
            moment: s.moment + (m1 + m2 * 2.0 + m3 * 2.0 + m4) * c,
        };
        Ok((next, out))
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// One logged sample. The CSV carries the fields up to `flap_b`; the rest
/// are kept in memory for analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunRow {
    pub t: f64,
    pub r: Rotation,
    pub omega: Vec3,
    pub moment: Vec3,
    pub r_d: Rotation,
    pub omega_d: Vec3,
    pub inputs: PhysicalInputs,
    pub theta: Vec3,
    pub psi: f64,
    pub e_r_norm: f64,
    pub e_omega_norm: f64,
    pub e_m_norm: f64,
    pub lyapunov: f64,
    pub delta_f: Vec3,
    pub flap_a: f64,
    pub flap_b: f64,
    /// `|z|` with `z = (|e_R|, |e~_w|, |e_M|)` (backstepping laws only, else 0).
    pub z_norm: f64,
    /// Analytic rate of `lyapunov` for SPR, the decrease bound `-z.W z + eps`
    /// for backstepping, `NaN` otherwise.
    pub lyapunov_rate: f64,
}

pub const CSV_COLUMNS: [&str; 44] = [
    "t", "r11", "r12", "r13", "r21", "r22", "r23", "r31", "r32", "r33", "omega_x", "omega_y", "omega_z", "m_x",
    "m_y", "m_z", "rd11", "rd12", "rd13", "rd21", "rd22", "rd23", "rd31", "rd32", "rd33", "omega_d_x", "omega_d_y",
    "omega_d_z", "theta_a", "theta_b", "theta_t", "pseudo_x", "pseudo_y", "pseudo_z", "psi", "e_r_norm",
    "e_omega_norm", "e_m_norm", "lyapunov", "delta_f_x", "delta_f_y", "delta_f_z", "flap_a", "flap_b",
];

impl RunRow {
    /// Values in [`CSV_COLUMNS`] order.
    pub fn values(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(CSV_COLUMNS.len());
        v.push(self.t);
        v.extend(self.r.rows().iter().flatten());
        v.extend(self.omega.iter());
        v.extend(self.moment.iter());
        v.extend(self.r_d.rows().iter().flatten());
        v.extend(self.omega_d.iter());
        v.extend([self.inputs.theta_a, self.inputs.theta_b, self.inputs.theta_t]);
        v.extend(self.theta.iter());
        v.extend([self.psi, self.e_r_norm, self.e_omega_norm, self.e_m_norm, self.lyapunov]);
        v.extend(self.delta_f.iter());
        v.extend([self.flap_a, self.flap_b]);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Divergence {
    pub t: f64,
    pub step: usize,
    pub omega_norm: f64,
    /// Index of the last row logged before the blow-up.
    pub last_valid_row: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunLog {
    pub rows: Vec<RunRow>,
    pub divergence: Option<Divergence>,
}

impl RunLog {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", CSV_COLUMNS.join(","))?;
        for row in &self.rows {
            writeln!(w, "{}", csvfmt::join(row.values()))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii csv")
    }

    pub fn into_result(self) -> Result<RunLog> {
        match self.divergence {
            Some(d) => Err(Error::NumericalBlowup { t: d.t, step: d.step, omega_norm: d.omega_norm }),
            None => Ok(self),
        }
    }

    /// Largest demanded cyclic magnitude over rows with `t >= t0` (rad).
    pub fn peak_cyclic(&self, t0: f64) -> f64 {
        self.after(t0).map(|r| r.inputs.max_cyclic()).fold(0.0, f64::max)
    }

    pub fn max_e_r(&self, t0: f64) -> f64 {
        self.after(t0).map(|r| r.e_r_norm).fold(0.0, f64::max)
    }

    pub fn max_z(&self, t0: f64) -> f64 {
        self.after(t0).map(|r| r.z_norm).fold(0.0, f64::max)
    }

    pub fn after(&self, t0: f64) -> impl Iterator<Item = &RunRow> {
        self.rows.iter().filter(move |r| r.t >= t0)
    }
}

pub fn write_csv(log: &RunLog, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    log.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Deserializes any input document, reporting failures with the field path.
pub fn parse_json<T: serde::de::DeserializeOwned>(json: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(json);
    serde_path_to_error::deserialize(de)
        .map_err(|e| Error::Schema { path: e.path().to_string(), message: e.inner().to_string() })
}

pub fn parse_scenario(json: &str) -> Result<Scenario> {
    parse_json(json)
}

pub fn read_scenario(path: &Path) -> Result<Scenario> {
    parse_scenario(&fs::read_to_string(path)?)
}

fn log_row(lp: &ClosedLoop, t: f64, s: &PlantState, out: &ControlOutput, reference: &ReferenceSample) -> RunRow {
    let sc = lp.scenario;
    let m = &lp.plant;
    let err = &out.desired.errors;
    let e_m = s.moment - out.desired.m_d;
    let (lyapunov, z_norm, lyapunov_rate) = match &sc.controller {
        ControlLaw::OpenLoop => {
            (0.5 * s.omega.dot(&(m.j * s.omega)) + 0.5 * s.moment.dot(&(m.k_inv() * s.moment)), 0.0, f64::NAN)
        }
        ControlLaw::Spr(g) => {
            let e = ErrorState { r_e: err.r_e, e_omega: err.e_omega, e_m };
            let (v, v_dot) = lyapunov_spr(&e, spr_scalar_gain(g), &g.p, m);
            (v, 0.0, v_dot)
        }
        ControlLaw::Nominal(g) | ControlLaw::Brc(g) => {
            let e = TildeErrorState { r_e: err.r_e, e_tilde: err.e_tilde, e_m };
            let (v, bound) = brc_lyapunov(&e, g, m);
            (v, brc_z(&e).norm(), bound)
        }
    };
    let (flap_a, flap_b) = moment_to_flap(&s.moment, &sc.vehicle);
    RunRow {
        t,
        r: s.r,
        omega: s.omega,
        moment: s.moment,
        r_d: reference.r_d,
        omega_d: reference.omega_d,
        inputs: pseudo_to_physical(&out.theta, &s.omega, &sc.vehicle),
        theta: out.theta,
        psi: so3::psi(&err.r_e),
        e_r_norm: err.e_r.norm(),
        e_omega_norm: err.e_omega.norm(),
        e_m_norm: e_m.norm(),
        lyapunov,
        delta_f: disturbance_torque(t, &sc.disturbance),
        flap_a,
        flap_b,
        z_norm,
        lyapunov_rate,
    }
}

/// Scalar proportional gain used for the logged SPR Lyapunov function (the
/// mean of the diagonal; exact for uniform gains).
fn spr_scalar_gain(g: &SprGains) -> f64 {
    g.k_r.mean()
}

/// `V3` and its decrease bound without the sublevel-set check.
fn brc_lyapunov(e: &TildeErrorState, g: &BrcGains, m: &DerivedMatrices) -> (f64, f64) {
    let v3 = so3::psi(&e.r_e) + 0.5 * e.e_tilde.dot(&(m.j * e.e_tilde)) + 0.5 * e.e_m.norm_squared();
    let z = brc_z(e);
    let w = Vec3::new(g.k_r, g.k_omega, m.a_tau.diagonal().min());
    (v3, -z.component_mul(&z).dot(&w) + g.epsilon())
}

/// Runs a scenario to completion. A blow-up stops the run and is reported in
/// [`RunLog::divergence`]; the rows logged so far are kept.
pub fn run(scenario: &Scenario) -> Result<RunLog> {
    let lp = ClosedLoop::new(scenario)?;
    let mut controller = lp.controller()?;
    let mut state = lp.initial_state();
    let n = scenario.steps();
    let sub = scenario.substeps;
    let h = scenario.step_size();
    let mut log = RunLog { rows: Vec::with_capacity(n + 1), divergence: None };
    for k in 0..n {
        for j in 0..sub {
            let i = k * sub + j;
            let t = i as f64 * h;
            let (next, out) = lp.step(&controller, t, h, &state)?;
            if j == 0 {
                log.rows.push(log_row(&lp, k as f64 * scenario.dt, &state, &out, &lp.reference.sample(t)));
            }
            controller.commit(t, &out);
            let omega_norm = next.omega.norm();
            let finite = next.r.matrix().iter().chain(next.moment.iter()).all(|x| x.is_finite());
            if !(omega_norm <= BLOWUP_RATE) || !finite {
                let t_next = (i + 1) as f64 * h;
                log::warn!("{}: divergence at t = {t_next} (|omega| = {omega_norm:.3e})", scenario.name);
                log.divergence = Some(Divergence { t: t_next, step: i + 1, omega_norm, last_valid_row: k });
                return Ok(log);
            }
            state = next;
        }
    }
    let t = n as f64 * scenario.dt;
    let reference = lp.reference.sample(t);
    let out = controller.evaluate(t, &state, &reference)?;
    log.rows.push(log_row(&lp, t, &state, &out, &reference));
    Ok(log)
}

/// Runs every scenario on a pool of `jobs` threads (all cores if `None`).
/// Results keep the input order.
pub fn batch(scenarios: &[Scenario], jobs: Option<usize>) -> Result<Vec<Result<RunLog>>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::BadSpec(format!("thread pool: {e}")))?;
    Ok(pool.install(|| scenarios.par_iter().map(run).collect()))
}

/// Scenario files (`*.json`) of a directory in name order.
pub fn scenario_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    Ok(files)
}

pub const PRESETS: [&str; 8] = [
    "fig3-damping",
    "fig4-structured",
    "fig5-unstructured",
    "fig6-combined",
    "flip-roll-180",
    "flip-pitch-180",
    "flip-roll-360",
    "flip-pitch-360",
];

fn canonical_preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().copied().find(|p| *p == name || p.split('-').next() == Some(name) && name.starts_with("fig"))
}

pub const TRACKING_SUBSTEPS: usize = 100;
pub const TRACKING_TAU_FILT: f64 = 2e-5;

/// Roll sinusoid of 20 deg at 1 Hz, started 80 deg off in pitch with a
/// 90 deg/s pitch-rate offset.
/// The backstepping compensators have boundary layers far thinner than a
/// millisecond step resolves, hence the fine internal step; `dM_d/dt` is
/// differenced so that it sees the fuselage torque.
fn tracking_scenario(name: &str, uncertainty: UncertaintySpec, disturbance: DisturbanceSpec) -> Scenario {
    Scenario {
        name: name.to_string(),
        vehicle: VehicleParams::default(),
        controller: ControlLaw::Brc(BrcGains::default()),
        md_dot: MdDotMode::FilteredNumeric { tau_filt: TRACKING_TAU_FILT },
        uncertainty,
        disturbance,
        reference: ReferenceSpec::Sinusoid(SinusoidSpec::roll(20f64.to_radians(), 1.0)),
        initial: InitialCondition::Relative {
            attitude_error: Vec3::y() * 80f64.to_radians(),
            omega_offset: Vec3::y() * 90f64.to_radians(),
            moment: Vec3::zeros(),
        },
        dt: default_dt(),
        substeps: TRACKING_SUBSTEPS,
        duration: 10.0,
        seed: 0,
        enforce_saturation: false,
        cyclic_limit: default_cyclic_limit(),
    }
}

/// The pitch inertia is four times the roll inertia; 1.2 s and 2.3 s pitch
/// flips are infeasible within the cyclic limit for these parameters.
pub const PITCH_FLIP_180_DURATION: f64 = 1.4;
pub const PITCH_FLIP_360_DURATION: f64 = 2.5;

fn flip_scenario(name: &str, axis: Vec3, angle: f64, duration: f64) -> Scenario {
    Scenario {
        name: name.to_string(),
        vehicle: VehicleParams::default(),
        controller: ControlLaw::Spr(SprGains::default()),
        md_dot: MdDotMode::Analytic,
        uncertainty: UncertaintySpec::exact(),
        disturbance: DisturbanceSpec::None,
        reference: ReferenceSpec::Flip(FlipSpec::new(axis, angle, duration)),
        initial: InitialCondition::default(),
        dt: default_dt(),
        substeps: 1,
        duration: duration + 1.0,
        seed: 0,
        enforce_saturation: false,
        cyclic_limit: default_cyclic_limit(),
    }
}

/// Built-in scenarios. `fig3` .. `fig6` are accepted as short names.
pub fn preset(name: &str) -> Result<Scenario> {
    let canonical = canonical_preset(name).ok_or_else(|| Error::Unknown { kind: "preset", name: name.to_string() })?;
    let structured = UncertaintySpec { alpha_m: 0.3, ..UncertaintySpec::exact() };
    let gust = DisturbanceSpec::roll_cosine(5.0, 1.5 * PI);
    Ok(match canonical {
        "fig3-damping" => Scenario {
            name: canonical.to_string(),
            vehicle: VehicleParams::default(),
            controller: ControlLaw::OpenLoop,
            md_dot: MdDotMode::Analytic,
            uncertainty: UncertaintySpec::exact(),
            disturbance: DisturbanceSpec::None,
            reference: ReferenceSpec::Hover,
            initial: InitialCondition::Relative {
                attitude_error: Vec3::zeros(),
                omega_offset: Vec3::x() * 360f64.to_radians(),
                moment: Vec3::zeros(),
            },
            dt: default_dt(),
            substeps: 1,
            duration: 2.0,
            seed: 0,
            enforce_saturation: false,
            cyclic_limit: default_cyclic_limit(),
        },
        "fig4-structured" => tracking_scenario(canonical, structured, DisturbanceSpec::None),
        "fig5-unstructured" => tracking_scenario(canonical, UncertaintySpec::exact(), gust),
        "fig6-combined" => tracking_scenario(canonical, structured, gust),
        "flip-roll-180" => flip_scenario(canonical, Vec3::x(), PI, 1.2),
        "flip-pitch-180" => flip_scenario(canonical, Vec3::y(), PI, PITCH_FLIP_180_DURATION),
        "flip-roll-360" => flip_scenario(canonical, Vec3::x(), 2.0 * PI, 2.3),
        "flip-pitch-360" => flip_scenario(canonical, Vec3::y(), 2.0 * PI, PITCH_FLIP_360_DURATION),
        _ => unreachable!("preset table and match agree"),
    })
}

/// Summary of the open-loop damping demonstration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DampingSummary {
    pub initial_rate: f64,
    /// First time `|w|` falls below 5 % of its initial value (s).
    pub decay_time: Option<f64>,
    /// Largest `|M|` over the run (N m).
    pub peak_moment: f64,
    pub peak_moment_time: f64,
}

pub fn damping_summary(log: &RunLog) -> DampingSummary {
    let w0 = log.rows.first().map_or(0.0, |r| r.omega.norm());
    let decay_time = log.rows.iter().find(|r| r.omega.norm() < 0.05 * w0).map(|r| r.t);
    let (peak_moment, peak_moment_time) =
        log.rows.iter().map(|r| (r.moment.norm(), r.t)).fold((0.0, 0.0), |a, b| if b.0 > a.0 { b } else { a });
    DampingSummary { initial_rate: w0, decay_time, peak_moment, peak_moment_time }
}

pub fn damping_demo() -> Result<(RunLog, DampingSummary)> {
    let log = run(&preset("fig3-damping")?)?.into_result()?;
    let summary = damping_summary(&log);
    Ok((log, summary))
}
