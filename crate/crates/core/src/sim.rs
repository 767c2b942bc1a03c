//! Fixed-step closed-loop simulation of the true plant under a chosen
//! controller, the outer ILC iteration loop, composite-energy monitoring and
//! residual-vibration post-processing.
//!
//! Each grid step first runs the controller's per-step work (measurement,
//! barrier check, iteration-axis weight update, memory recording), then
//! integrates the plant one step with classical RK4. Feedback terms are
//! re-evaluated at the RK4 substates while the adapted weights and integral
//! terms hold for the step, so the exact-model case tracks to integration
//! accuracy. Iterations reset to the reference initial state (identical
//! initialization every iteration) and thread memory strictly sequentially.

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::bcef::{self, BcefTrace, MismatchProjection};
use crate::control::{
    afc_weight_rates, amcilc_torque, auxiliary_error, barrier_terms, pidilc_control, update_sample,
    AmcilcGains, IterationMemory, PidGains, UpdateInput,
};
use crate::dynamics::{compute_terms, forward_dynamics_with_terms, RigidModel};
use crate::error::{Error, Result};
use crate::fls::{self, FlsConfig, FlsWeights};
use crate::kinematics::JointState;
use crate::modal::{residual_oscillator_response, ModalModel, OscillatorResponse};
use crate::trajectory::ReferenceTrajectory;

/// Simulation settings shared by every iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Fixed integration step; must match the reference grid.
    pub dt: f64,
    /// Number of ILC iterations to run.
    pub iterations: usize,
    /// Velocity limit; derived from the reference and v_c when absent.
    pub theta_dot_max: Option<f64>,
    /// Zero-mean i.i.d. measurement noise std on the controller inputs.
    pub noise_std: f64,
    pub seed: u64,
    /// Soft torque threshold (N m): exceedances are logged, never enforced.
    pub torque_warning: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            iterations: 21,
            theta_dot_max: None,
            noise_std: 0.0,
            seed: 42,
            torque_warning: 50.0,
        }
    }
}

impl SimConfig {
    /// Velocity limit: explicit value, or `1.1 (v_c + max reference rate)`.
    pub fn resolved_theta_dot_max(&self, traj: &ReferenceTrajectory, v_c: f64) -> Result<f64> {
        let r_max = traj.max_rate();
        let limit = match self.theta_dot_max {
            Some(v) => v,
            None => 1.1 * (v_c + r_max),
        };
        // Feasibility of the barrier bound: v_c < limit - reference rate.
        if v_c >= limit - r_max {
            return Err(Error::Config(format!(
                "infeasible velocity bound: v_c = {v_c} >= theta_dot_max - theta_dot_r_max = {}",
                limit - r_max
            )));
        }
        Ok(limit)
    }

    pub fn validate(&self, traj: &ReferenceTrajectory) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::Config("dt must be positive".into()));
        }
        if (self.dt - traj.dt).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "sim dt {} does not match trajectory dt {}",
                self.dt, traj.dt
            )));
        }
        if self.iterations == 0 {
            return Err(Error::Config("at least one iteration required".into()));
        }
        if self.noise_std < 0.0 {
            return Err(Error::Config("noise std must be nonnegative".into()));
        }
        traj.validate_rest_to_rest(1e-9)
    }
}

/// Controller choice for a run.
#[derive(Debug, Clone)]
pub enum ControllerSelect {
    Amcilc {
        gains: AmcilcGains,
        fls: FlsConfig,
    },
    Pidilc {
        bootstrap: PidGains,
        correction: PidGains,
    },
    Afc {
        gains: AmcilcGains,
        fls: FlsConfig,
    },
}

impl ControllerSelect {
    pub fn name(&self) -> &'static str {
        match self {
            ControllerSelect::Amcilc { .. } => "amcilc",
            ControllerSelect::Pidilc { .. } => "pidilc",
            ControllerSelect::Afc { .. } => "afc",
        }
    }

    fn v_c(&self) -> f64 {
        match self {
            ControllerSelect::Amcilc { gains, .. } | ControllerSelect::Afc { gains, .. } => {
                gains.v_c
            }
            // The PID baselines carry no barrier; monitoring uses the shared
            // default bound.
            ControllerSelect::Pidilc { .. } => AmcilcGains::case2().v_c,
        }
    }
}

/// Per-iteration time series on the grid.
#[derive(Debug, Clone)]
pub struct IterationTraces {
    pub dt: f64,
    pub theta: Vec<Vector3<f64>>,
    pub theta_dot: Vec<Vector3<f64>>,
    pub e: Vec<Vector3<f64>>,
    pub e_dot: Vec<Vector3<f64>>,
    pub eta: Vec<Vector3<f64>>,
    pub u: Vec<Vector3<f64>>,
    pub accel: Vec<Vector3<f64>>,
}

impl IterationTraces {
    fn with_capacity(dt: f64, n: usize) -> Self {
        Self {
            dt,
            theta: Vec::with_capacity(n),
            theta_dot: Vec::with_capacity(n),
            e: Vec::with_capacity(n),
            e_dot: Vec::with_capacity(n),
            eta: Vec::with_capacity(n),
            u: Vec::with_capacity(n),
            accel: Vec::with_capacity(n),
        }
    }
}

/// Scalar summary of one iteration.
#[derive(Debug, Clone, Copy)]
pub struct IterationMetrics {
    /// max_t |e_i(t)| per joint.
    pub max_abs_e: Vector3<f64>,
    /// Discrete 2-norm of the velocity error per joint.
    pub e_dot_norm: Vector3<f64>,
    pub max_abs_eta: f64,
    pub max_abs_theta_dot: f64,
}

impl IterationMetrics {
    fn from_traces(traces: &IterationTraces) -> Self {
        let mut max_abs_e: Vector3<f64> = Vector3::zeros();
        let mut sq = Vector3::zeros();
        let mut max_eta = 0.0f64;
        let mut max_rate = 0.0f64;
        for i in 0..traces.e.len() {
            for j in 0..3 {
                max_abs_e[j] = max_abs_e[j].max(traces.e[i][j].abs());
                sq[j] += traces.e_dot[i][j] * traces.e_dot[i][j];
            }
            max_eta = max_eta.max(traces.eta[i].amax());
            max_rate = max_rate.max(traces.theta_dot[i].amax());
        }
        Self {
            max_abs_e,
            e_dot_norm: sq.map(f64::sqrt),
            max_abs_eta: max_eta,
            max_abs_theta_dot: max_rate,
        }
    }
}

/// Classical RK4 step of the joint state under an acceleration field.
pub fn rk4_step<F>(t: f64, dt: f64, state: &JointState, accel: F) -> Result<JointState>
where
    F: Fn(f64, &JointState) -> Result<Vector3<f64>>,
{
    let f = |tau: f64, s: &JointState| -> Result<(Vector3<f64>, Vector3<f64>)> {
        Ok((s.theta_dot, accel(tau, s)?))
    };
    let advance = |s: &JointState, k: &(Vector3<f64>, Vector3<f64>), h: f64| JointState {
        theta: s.theta + h * k.0,
        theta_dot: s.theta_dot + h * k.1,
    };
    let k1 = f(t, state)?;
    let k2 = f(t + 0.5 * dt, &advance(state, &k1, 0.5 * dt))?;
    let k3 = f(t + 0.5 * dt, &advance(state, &k2, 0.5 * dt))?;
    let k4 = f(t + dt, &advance(state, &k3, dt))?;
    Ok(JointState {
        theta: state.theta + dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        theta_dot: state.theta_dot + dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
    })
}

fn tag_barrier(err: Error, iteration: usize, t: f64) -> Error {
    match err {
        Error::BarrierViolation {
            joint, eta, v_c, ..
        } => Error::BarrierViolation {
            iteration,
            t,
            joint,
            eta,
            v_c,
        },
        other => other,
    }
}

/// Per-step controller interface used by the engine. `prepare` runs once at
/// each grid instant on the measured state (adaptation, memory recording,
/// barrier checks) and returns the recorded torque; `torque` evaluates the
/// control law at RK4 substates with the step's frozen adaptation state.
trait StepController {
    fn prepare(&mut self, idx: usize, t: f64, meas: &JointState) -> Result<Vector3<f64>>;
    fn torque(&self, t: f64, meas: &JointState) -> Result<Vector3<f64>>;
    fn into_memory(self: Box<Self>) -> IterationMemory;
}

struct AmcilcRunner<'a> {
    gains: &'a AmcilcGains,
    fls_config: &'a FlsConfig,
    nominal: &'a RigidModel,
    traj: &'a ReferenceTrajectory,
    prev: &'a IterationMemory,
    memory: IterationMemory,
    weights: FlsWeights,
    iteration: usize,
}

impl<'a> AmcilcRunner<'a> {
    fn new(
        gains: &'a AmcilcGains,
        fls_config: &'a FlsConfig,
        nominal: &'a RigidModel,
        traj: &'a ReferenceTrajectory,
        prev: &'a IterationMemory,
        iteration: usize,
    ) -> Result<Self> {
        prev.check_grid(traj.len())?;
        let rules = fls_config.rule_count;
        let mut weights = FlsWeights::zeros(rules);
        weights.vartheta_min = gains.vartheta_min;
        weights.vartheta_max = gains.vartheta_max;
        Ok(Self {
            gains,
            fls_config,
            nominal,
            traj,
            prev,
            memory: IterationMemory::zeros(rules, traj.len(), traj.dt),
            weights,
            iteration,
        })
    }
}

impl StepController for AmcilcRunner<'_> {
    fn prepare(&mut self, idx: usize, t: f64, meas: &JointState) -> Result<Vector3<f64>> {
        let reference = self.traj.grid_sample(idx);
        let e = meas.theta - reference.theta;
        let e_dot = meas.theta_dot - reference.theta_dot;
        let eta = auxiliary_error(&e, &e_dot, self.gains.sigma);
        barrier_terms(&eta, self.gains.v_c).map_err(|err| tag_barrier(err, self.iteration, t))?;

        let terms = compute_terms(self.nominal, meas)?;
        let m_inv = terms.m.try_inverse().ok_or(Error::SingularMass)?;
        let phi = fls::basis_from_state(self.fls_config, &meas.theta, &meas.theta_dot)?;
        let input = UpdateInput {
            phi: phi.clone(),
            eta,
            m_inv,
        };
        let (vartheta, eps) = update_sample(
            &self.prev.vartheta[idx],
            &self.prev.eps[idx],
            &input,
            self.gains,
        )
        .map_err(|err| tag_barrier(err, self.iteration, t))?;
        self.weights.vartheta_hat = vartheta.clone();
        self.weights.eps_hat = eps;

        let u = amcilc_torque(&terms, meas, &reference, &self.weights, &phi, self.gains);
        self.memory.vartheta[idx] = vartheta;
        self.memory.eps[idx] = eps;
        self.memory.u[idx] = u;
        self.memory.e[idx] = e;
        self.memory.e_dot[idx] = e_dot;
        self.memory.eta[idx] = eta;
        Ok(u)
    }

    fn torque(&self, t: f64, meas: &JointState) -> Result<Vector3<f64>> {
        let reference = self.traj.sample(t);
        let terms = compute_terms(self.nominal, meas)?;
        let phi = fls::basis_from_state(self.fls_config, &meas.theta, &meas.theta_dot)?;
        Ok(amcilc_torque(
            &terms,
            meas,
            &reference,
            &self.weights,
            &phi,
            self.gains,
        ))
    }

    fn into_memory(self: Box<Self>) -> IterationMemory {
        self.memory
    }
}

struct PidIlcRunner<'a> {
    gains: PidGains,
    /// Previous-iteration torque trace; `None` on the bootstrap iteration.
    feedforward: Option<&'a IterationMemory>,
    traj: &'a ReferenceTrajectory,
    memory: IterationMemory,
    /// Error-combination gain used only to record eta for monitoring; the
    /// PID law itself carries no barrier.
    sigma_monitor: f64,
    e_int: Vector3<f64>,
    prev_e: Vector3<f64>,
    step_ff: Vector3<f64>,
}

impl<'a> PidIlcRunner<'a> {
    fn new(
        gains: PidGains,
        feedforward: Option<&'a IterationMemory>,
        traj: &'a ReferenceTrajectory,
        sigma_monitor: f64,
    ) -> Result<Self> {
        if let Some(m) = feedforward {
            m.check_grid(traj.len())?;
        }
        Ok(Self {
            gains,
            feedforward,
            traj,
            memory: IterationMemory::zeros(0, traj.len(), traj.dt),
            sigma_monitor,
            e_int: Vector3::zeros(),
            prev_e: Vector3::zeros(),
            step_ff: Vector3::zeros(),
        })
    }
}

impl StepController for PidIlcRunner<'_> {
    fn prepare(&mut self, idx: usize, _t: f64, meas: &JointState) -> Result<Vector3<f64>> {
        let reference = self.traj.grid_sample(idx);
        let e = meas.theta - reference.theta;
        let e_dot = meas.theta_dot - reference.theta_dot;
        if idx > 0 {
            self.e_int += self.traj.dt * 0.5 * (self.prev_e + e);
        }
        self.prev_e = e;
        self.step_ff = self.feedforward.map_or(Vector3::zeros(), |m| m.u[idx]);

        let u = pidilc_control(&self.step_ff, &e, &e_dot, &self.e_int, &self.gains);
        self.memory.u[idx] = u;
        self.memory.e[idx] = e;
        self.memory.e_dot[idx] = e_dot;
        // eta recorded for constraint monitoring only; no barrier in the law.
        self.memory.eta[idx] = auxiliary_error(&e, &e_dot, self.sigma_monitor);
        Ok(u)
    }

    fn torque(&self, t: f64, meas: &JointState) -> Result<Vector3<f64>> {
        let reference = self.traj.sample(t);
        let e = meas.theta - reference.theta;
        let e_dot = meas.theta_dot - reference.theta_dot;
        Ok(pidilc_control(
            &self.step_ff,
            &e,
            &e_dot,
            &self.e_int,
            &self.gains,
        ))
    }

    fn into_memory(self: Box<Self>) -> IterationMemory {
        self.memory
    }
}

struct AfcRunner<'a> {
    gains: &'a AmcilcGains,
    fls_config: &'a FlsConfig,
    nominal: &'a RigidModel,
    traj: &'a ReferenceTrajectory,
    memory: IterationMemory,
    weights: FlsWeights,
    iteration: usize,
}

impl<'a> AfcRunner<'a> {
    fn new(
        gains: &'a AmcilcGains,
        fls_config: &'a FlsConfig,
        nominal: &'a RigidModel,
        traj: &'a ReferenceTrajectory,
        iteration: usize,
    ) -> Self {
        let rules = fls_config.rule_count;
        let mut weights = FlsWeights::zeros(rules);
        weights.vartheta_min = gains.vartheta_min;
        weights.vartheta_max = gains.vartheta_max;
        Self {
            gains,
            fls_config,
            nominal,
            traj,
            memory: IterationMemory::zeros(rules, traj.len(), traj.dt),
            weights,
            iteration,
        }
    }
}

impl StepController for AfcRunner<'_> {
    fn prepare(&mut self, idx: usize, t: f64, meas: &JointState) -> Result<Vector3<f64>> {
        let reference = self.traj.grid_sample(idx);
        let e = meas.theta - reference.theta;
        let e_dot = meas.theta_dot - reference.theta_dot;
        let eta = auxiliary_error(&e, &e_dot, self.gains.sigma);
        barrier_terms(&eta, self.gains.v_c).map_err(|err| tag_barrier(err, self.iteration, t))?;

        let terms = compute_terms(self.nominal, meas)?;
        let m_inv = terms.m.try_inverse().ok_or(Error::SingularMass)?;
        let phi = fls::basis_from_state(self.fls_config, &meas.theta, &meas.theta_dot)?;
        // Forward-Euler integration of the continuous update laws.
        let input = UpdateInput {
            phi: phi.clone(),
            eta,
            m_inv,
        };
        let (dv, de) = afc_weight_rates(&input, self.gains)
            .map_err(|err| tag_barrier(err, self.iteration, t))?;
        self.weights.vartheta_hat += self.traj.dt * dv;
        self.weights.eps_hat += self.traj.dt * de;

        let u = amcilc_torque(&terms, meas, &reference, &self.weights, &phi, self.gains);
        self.memory.vartheta[idx] = self.weights.vartheta_hat.clone();
        self.memory.eps[idx] = self.weights.eps_hat;
        self.memory.u[idx] = u;
        self.memory.e[idx] = e;
        self.memory.e_dot[idx] = e_dot;
        self.memory.eta[idx] = eta;
        Ok(u)
    }

    fn torque(&self, t: f64, meas: &JointState) -> Result<Vector3<f64>> {
        let reference = self.traj.sample(t);
        let terms = compute_terms(self.nominal, meas)?;
        let phi = fls::basis_from_state(self.fls_config, &meas.theta, &meas.theta_dot)?;
        Ok(amcilc_torque(
            &terms,
            meas,
            &reference,
            &self.weights,
            &phi,
            self.gains,
        ))
    }

    fn into_memory(self: Box<Self>) -> IterationMemory {
        self.memory
    }
}

fn controller_runner<'a>(
    select: &'a ControllerSelect,
    nominal: &'a RigidModel,
    traj: &'a ReferenceTrajectory,
    prev: &'a IterationMemory,
    iteration: usize,
) -> Result<Box<dyn StepController + 'a>> {
    Ok(match select {
        ControllerSelect::Amcilc { gains, fls } => Box::new(AmcilcRunner::new(
            gains, fls, nominal, traj, prev, iteration,
        )?),
        ControllerSelect::Pidilc {
            bootstrap,
            correction,
        } => {
            if iteration == 0 {
                Box::new(PidIlcRunner::new(*bootstrap, None, traj, 1.0)?)
            } else {
                Box::new(PidIlcRunner::new(*correction, Some(prev), traj, 1.0)?)
            }
        }
        ControllerSelect::Afc { gains, fls } => {
            Box::new(AfcRunner::new(gains, fls, nominal, traj, iteration))
        }
    })
}

/// One closed-loop run of the true plant under the controller.
///
/// Returns the traces plus the memory produced for the next iteration.
pub fn simulate_iteration(
    plant: &RigidModel,
    nominal: &RigidModel,
    select: &ControllerSelect,
    traj: &ReferenceTrajectory,
    memory_prev: &IterationMemory,
    config: &SimConfig,
    iteration: usize,
) -> Result<(IterationTraces, IterationMemory)> {
    config.validate(traj)?;
    let n = traj.len();
    let dt = traj.dt;
    let theta_dot_max = config.resolved_theta_dot_max(traj, select.v_c())?;

    let mut controller = controller_runner(select, nominal, traj, memory_prev, iteration)?;
    let mut traces = IterationTraces::with_capacity(dt, n);
    let mut torque_exceedances = 0usize;

    // Identical initialization each iteration.
    let start = traj.grid_sample(0);
    let mut state = JointState::new(start.theta, start.theta_dot);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(iteration as u64);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    for idx in 0..n {
        let t = idx as f64 * dt;
        if !state.is_finite() {
            return Err(Error::NumericalDivergence { iteration, t });
        }
        // Measurement noise is frozen over the step; the plant itself always
        // integrates true states.
        let noise = if config.noise_std > 0.0 {
            let mut sample = || config.noise_std * normal.sample(&mut rng);
            (
                Vector3::new(sample(), sample(), sample()),
                Vector3::new(sample(), sample(), sample()),
            )
        } else {
            (Vector3::zeros(), Vector3::zeros())
        };
        let measure = |s: &JointState| JointState {
            theta: s.theta + noise.0,
            theta_dot: s.theta_dot + noise.1,
        };

        let meas = measure(&state);
        let u_grid = controller.prepare(idx, t, &meas)?;

        let reference = traj.grid_sample(idx);
        let plant_terms = compute_terms(plant, &state)?;
        let accel = forward_dynamics_with_terms(&plant_terms, &state, &u_grid)?;

        traces.theta.push(state.theta);
        traces.theta_dot.push(state.theta_dot);
        traces.e.push(state.theta - reference.theta);
        traces.e_dot.push(state.theta_dot - reference.theta_dot);
        traces.u.push(u_grid);
        traces.accel.push(accel);

        if state.theta_dot.amax() >= theta_dot_max {
            return Err(Error::VelocityLimit {
                iteration,
                t,
                rate: state.theta_dot.amax(),
                limit: theta_dot_max,
            });
        }
        if u_grid.amax() > config.torque_warning {
            torque_exceedances += 1;
        }

        if idx + 1 < n {
            let ctrl = &*controller;
            state = rk4_step(t, dt, &state, |tau, s| {
                let u = ctrl.torque(tau, &measure(s))?;
                let terms = compute_terms(plant, s)?;
                forward_dynamics_with_terms(&terms, s, &u)
            })
            .map_err(|err| tag_barrier(err, iteration, t))?;
        }
    }

    if torque_exceedances > 0 {
        eprintln!(
            "note: iteration {iteration}: torque exceeded the soft {} N m threshold at {torque_exceedances} samples",
            config.torque_warning
        );
    }

    let memory = controller.into_memory();
    // The controllers record eta as measured with their own sigma; mirror it
    // into the traces for constraint monitoring.
    traces.eta = memory.eta.clone();
    Ok((traces, memory))
}

/// One iteration's record inside a full run.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub index: usize,
    pub metrics: IterationMetrics,
    pub traces: IterationTraces,
}

/// Full ILC run output.
#[derive(Debug)]
pub struct SimResult {
    pub controller: String,
    pub iterations: Vec<IterationRecord>,
    /// Composite-energy traces per iteration (AMCILC only).
    pub bcef: Vec<BcefTrace>,
    pub final_memory: Option<IterationMemory>,
    pub theta_dot_max: f64,
}

impl SimResult {
    pub fn metrics(&self) -> Vec<(usize, IterationMetrics)> {
        self.iterations
            .iter()
            .map(|r| (r.index, r.metrics))
            .collect()
    }
}

/// A failed run carrying the iterations completed before the error.
#[derive(Debug)]
pub struct IlcAbort {
    pub error: Error,
    pub partial: SimResult,
}

impl std::fmt::Display for IlcAbort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "run aborted after {} completed iterations: {}",
            self.partial.iterations.len(),
            self.error
        )
    }
}

/// Sequential ILC loop threading memory between iterations.
pub fn run_ilc(
    plant: &RigidModel,
    nominal: &RigidModel,
    select: &ControllerSelect,
    traj: &ReferenceTrajectory,
    config: &SimConfig,
) -> std::result::Result<SimResult, Box<IlcAbort>> {
    let rules = match select {
        ControllerSelect::Amcilc { fls, .. } | ControllerSelect::Afc { fls, .. } => fls.rule_count,
        ControllerSelect::Pidilc { .. } => 0,
    };
    let memory = IterationMemory::zeros(rules, traj.len(), traj.dt);
    run_ilc_from(plant, nominal, select, traj, config, memory, 0, None)
}

/// Resume an ILC run from checkpointed memory at iteration `start`,
/// optionally writing a memory checkpoint after every iteration. The
/// per-iteration noise streams are keyed by iteration index, so a resumed
/// run reproduces an uninterrupted one bit for bit.
#[allow(clippy::too_many_arguments)]
pub fn run_ilc_from(
    plant: &RigidModel,
    nominal: &RigidModel,
    select: &ControllerSelect,
    traj: &ReferenceTrajectory,
    config: &SimConfig,
    initial_memory: IterationMemory,
    start: usize,
    checkpoint_dir: Option<&std::path::Path>,
) -> std::result::Result<SimResult, Box<IlcAbort>> {
    let theta_dot_max = match config
        .validate(traj)
        .and_then(|_| config.resolved_theta_dot_max(traj, select.v_c()))
    {
        Ok(v) => v,
        Err(error) => {
            return Err(Box::new(IlcAbort {
                error,
                partial: SimResult {
                    controller: select.name().into(),
                    iterations: Vec::new(),
                    bcef: Vec::new(),
                    final_memory: None,
                    theta_dot_max: f64::NAN,
                },
            }))
        }
    };

    let projection: Option<MismatchProjection> = match select {
        ControllerSelect::Amcilc { gains, fls } => {
            let bound = gains.vartheta_max.min(-gains.vartheta_min);
            bcef::project_mismatch_bounded(nominal, plant, traj, fls, bound).ok()
        }
        _ => None,
    };

    let mut memory = initial_memory;
    let mut result = SimResult {
        controller: select.name().into(),
        iterations: Vec::new(),
        bcef: Vec::new(),
        final_memory: None,
        theta_dot_max,
    };

    for k in start..config.iterations {
        match simulate_iteration(plant, nominal, select, traj, &memory, config, k) {
            Ok((traces, new_memory)) => {
                if let (Some(proj), ControllerSelect::Amcilc { gains, .. }) = (&projection, select)
                {
                    result.bcef.push(bcef::monitor(&new_memory, gains, proj));
                }
                result.iterations.push(IterationRecord {
                    index: k,
                    metrics: IterationMetrics::from_traces(&traces),
                    traces,
                });
                memory = new_memory;
                if let Some(dir) = checkpoint_dir {
                    if let Err(error) = memory.save_csv(&dir.join(format!("memory_iter{k:03}.csv")))
                    {
                        result.final_memory = Some(memory);
                        return Err(Box::new(IlcAbort {
                            error,
                            partial: result,
                        }));
                    }
                }
            }
            Err(error) => {
                result.final_memory = Some(memory);
                return Err(Box::new(IlcAbort {
                    error,
                    partial: result,
                }));
            }
        }
    }
    result.final_memory = Some(memory);
    Ok(result)
}

/// Residual-vibration metrics of an acceleration trace through a modal bank.
#[derive(Debug, Clone)]
pub struct ResidualReport {
    pub shaped: bool,
    pub mode_freqs_hz: Vec<f64>,
    pub response: OscillatorResponse,
}

/// Drive the oscillator bank with achieved (or reference) joint
/// accelerations; the residual window starts when the trace ends.
pub fn residual_vibration_report(
    accel: &[Vector3<f64>],
    dt: f64,
    modal: &ModalModel,
    shaped: bool,
) -> ResidualReport {
    let t_end = accel.len().saturating_sub(1) as f64 * dt;
    ResidualReport {
        shaped,
        mode_freqs_hz: modal.frequencies_hz.clone(),
        response: residual_oscillator_response(modal, accel, dt, t_end),
    }
}

/// Convenience constructor for the update-law input at a recorded sample,
/// used by offline batch updates and diagnostics.
pub fn update_input_at(
    nominal: &RigidModel,
    fls_config: &FlsConfig,
    state: &JointState,
    eta: Vector3<f64>,
) -> Result<UpdateInput> {
    let terms = compute_terms(nominal, state)?;
    let m_inv: Matrix3<f64> = terms.m.try_inverse().ok_or(Error::SingularMass)?;
    let phi = fls::basis_from_state(fls_config, &state.theta, &state.theta_dot)?;
    Ok(UpdateInput { phi, eta, m_inv })
}

/// Least-squares fit of FLS weights to a target trace, used by the
/// composite-energy monitor and as a test oracle for the approximation
/// capacity of the structure.
///
/// The basis rows along a single trajectory are nearly collinear (the inputs
/// explore a thin slice of the domain), so the plain normal equations are
/// rank-deficient; a small ridge keeps the fitted weights at the physical
/// torque scale without changing the achievable residual.
pub fn fit_weights_least_squares(
    fls_config: &FlsConfig,
    inputs: &[(Vector3<f64>, Vector3<f64>)],
    targets: &[Vector3<f64>],
) -> Result<DMatrix<f64>> {
    fit_weights_bounded(fls_config, inputs, targets, f64::INFINITY)
}

/// Ridge-regularized fit with the ridge escalated (decade steps) until every
/// fitted weight fits within `bound`; keeps the stand-in inside the
/// saturation interval the convergence argument assumes.
pub fn fit_weights_bounded(
    fls_config: &FlsConfig,
    inputs: &[(Vector3<f64>, Vector3<f64>)],
    targets: &[Vector3<f64>],
    bound: f64,
) -> Result<DMatrix<f64>> {
    if inputs.len() != targets.len() || inputs.is_empty() {
        return Err(Error::GridMismatch {
            expected: inputs.len(),
            got: targets.len(),
        });
    }
    let l = fls_config.rule_count;
    let mut gram = DMatrix::zeros(l, l);
    let mut rhs = DMatrix::zeros(l, 3);
    for ((theta, theta_dot), g) in inputs.iter().zip(targets) {
        let phi = fls::basis_from_state(fls_config, theta, theta_dot)?;
        gram += &phi * phi.transpose();
        for c in 0..3 {
            for r in 0..l {
                rhs[(r, c)] += phi[r] * g[c];
            }
        }
    }
    let scale = gram.trace().max(f64::MIN_POSITIVE) / l as f64;
    let mut ridge = 1e-6 * scale;
    for _ in 0..24 {
        let mut regularized = gram.clone();
        for i in 0..l {
            regularized[(i, i)] += ridge;
        }
        let solution = regularized
            .cholesky()
            .map(|ch| ch.solve(&rhs))
            .ok_or_else(|| {
                Error::Config("least-squares fit failed: singular Gram matrix".into())
            })?;
        if solution.amax() <= bound {
            return Ok(solution);
        }
        ridge *= 10.0;
    }
    Err(Error::Config(
        "least-squares fit failed: weights exceed bound at any ridge".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::PerturbationProfile;
    use crate::kinematics::RobotParams;
    use crate::trajectory::pick_and_place;

    const Z: f64 = -0.8151;

    fn setup() -> (RigidModel, RigidModel, ReferenceTrajectory) {
        let params = RobotParams::default();
        let nominal = RigidModel::nominal(params.clone());
        let plant = RigidModel::perturbed(params.clone(), PerturbationProfile::default_mismatch());
        let traj = pick_and_place(&params, 0.25, 0.08, 1.5, Z, 1e-3).unwrap();
        (plant, nominal, traj)
    }

    #[test]
    fn exact_model_tracks_to_integration_accuracy() {
        let (_, nominal, traj) = setup();
        let select = ControllerSelect::Amcilc {
            gains: AmcilcGains::case2(),
            fls: FlsConfig::default(),
        };
        let config = SimConfig {
            iterations: 1,
            ..Default::default()
        };
        let memory = IterationMemory::zeros(9, traj.len(), traj.dt);
        let (traces, _) =
            simulate_iteration(&nominal, &nominal, &select, &traj, &memory, &config, 0).unwrap();
        let metrics = IterationMetrics::from_traces(&traces);
        assert!(
            metrics.max_abs_e.amax() < 1e-6,
            "exact-model tracking error {}",
            metrics.max_abs_e.amax()
        );
    }

    #[test]
    fn mismatch_raises_error_and_ilc_reduces_it() {
        let (plant, nominal, traj) = setup();
        let select = ControllerSelect::Amcilc {
            gains: AmcilcGains::case2(),
            fls: FlsConfig::default(),
        };
        let config = SimConfig {
            iterations: 6,
            ..Default::default()
        };
        let result = run_ilc(&plant, &nominal, &select, &traj, &config).unwrap();
        let first = result.iterations.first().unwrap().metrics.max_abs_e.amax();
        let last = result.iterations.last().unwrap().metrics.max_abs_e.amax();
        assert!(
            first > 1e-4,
            "iteration 0 error unexpectedly small: {first}"
        );
        assert!(last < 0.2 * first, "ILC did not learn: {first} -> {last}");
    }

    #[test]
    fn identical_seeds_reproduce_bitwise() {
        let (plant, nominal, traj) = setup();
        let select = ControllerSelect::Amcilc {
            gains: AmcilcGains::case2(),
            fls: FlsConfig::default(),
        };
        let config = SimConfig {
            iterations: 2,
            noise_std: 1e-5,
            ..Default::default()
        };
        let a = run_ilc(&plant, &nominal, &select, &traj, &config).unwrap();
        let b = run_ilc(&plant, &nominal, &select, &traj, &config).unwrap();
        for (ra, rb) in a.iterations.iter().zip(b.iterations.iter()) {
            for (ta, tb) in ra.traces.theta.iter().zip(rb.traces.theta.iter()) {
                assert_eq!(ta, tb);
            }
            for (ua, ub) in ra.traces.u.iter().zip(rb.traces.u.iter()) {
                assert_eq!(ua, ub);
            }
        }
    }

    #[test]
    fn afc_runs_are_iteration_invariant() {
        let (plant, nominal, traj) = setup();
        let select = ControllerSelect::Afc {
            gains: AmcilcGains::afc(),
            fls: FlsConfig::default(),
        };
        let config = SimConfig {
            iterations: 3,
            ..Default::default()
        };
        let result = run_ilc(&plant, &nominal, &select, &traj, &config).unwrap();
        let e0 = result.iterations[0].metrics.max_abs_e;
        for rec in &result.iterations[1..] {
            assert!((rec.metrics.max_abs_e - e0).amax() < 1e-14);
        }
    }

    #[test]
    fn pidilc_bootstrap_then_improvement() {
        let (plant, nominal, traj) = setup();
        let select = ControllerSelect::Pidilc {
            bootstrap: PidGains::bootstrap(),
            correction: PidGains::ilc(),
        };
        let config = SimConfig {
            iterations: 5,
            ..Default::default()
        };
        let result = run_ilc(&plant, &nominal, &select, &traj, &config).unwrap();
        let errs: Vec<f64> = result
            .iterations
            .iter()
            .map(|r| r.metrics.max_abs_e.amax())
            .collect();
        for w in errs.windows(2) {
            assert!(w[1] <= w[0] * 1.05, "PIDILC error increased: {errs:?}");
        }
        assert!(errs.last().unwrap() < &errs[0]);
    }

    #[test]
    fn k_equals_one_matches_single_iteration() {
        let (plant, nominal, traj) = setup();
        let select = ControllerSelect::Amcilc {
            gains: AmcilcGains::case2(),
            fls: FlsConfig::default(),
        };
        let config = SimConfig {
            iterations: 1,
            ..Default::default()
        };
        let run = run_ilc(&plant, &nominal, &select, &traj, &config).unwrap();
        let memory = IterationMemory::zeros(9, traj.len(), traj.dt);
        let (traces, _) =
            simulate_iteration(&plant, &nominal, &select, &traj, &memory, &config, 0).unwrap();
        assert_eq!(run.iterations.len(), 1);
        for (a, b) in run.iterations[0]
            .traces
            .theta
            .iter()
            .zip(traces.theta.iter())
        {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn step_refinement_changes_iteration0_error_under_1_percent() {
        let params = RobotParams::default();
        let nominal = RigidModel::nominal(params.clone());
        let plant = RigidModel::perturbed(params.clone(), PerturbationProfile::default_mismatch());
        let select = ControllerSelect::Amcilc {
            gains: AmcilcGains::case2(),
            fls: FlsConfig::default(),
        };
        let mut errs = Vec::new();
        for dt in [1e-3, 5e-4] {
            let traj = pick_and_place(&params, 0.25, 0.08, 1.5, Z, dt).unwrap();
            let config = SimConfig {
                dt,
                iterations: 1,
                ..Default::default()
            };
            let memory = IterationMemory::zeros(9, traj.len(), traj.dt);
            let (traces, _) =
                simulate_iteration(&plant, &nominal, &select, &traj, &memory, &config, 0).unwrap();
            errs.push(IterationMetrics::from_traces(&traces).max_abs_e.amax());
        }
        let rel = (errs[0] - errs[1]).abs() / errs[1];
        assert!(
            rel < 0.01,
            "iteration-0 error not converged in dt: {errs:?}"
        );
    }

    /// The initial iteration's composite energy is finite and below the
    /// boundedness construction's estimate `c_0 T` (the composite starts at
    /// zero under identical initialization).
    #[test]
    fn initial_composite_energy_within_derived_bound() {
        let (plant, nominal, traj) = setup();
        let gains = AmcilcGains::case2();
        let select = ControllerSelect::Amcilc {
            gains: gains.clone(),
            fls: FlsConfig::default(),
        };
        let config = SimConfig {
            iterations: 1,
            ..Default::default()
        };
        let result = run_ilc(&plant, &nominal, &select, &traj, &config).unwrap();
        let e0_final = result.bcef[0].final_value();
        assert!(e0_final.is_finite() && e0_final >= 0.0);

        let projection = crate::bcef::project_mismatch_bounded(
            &nominal,
            &plant,
            &traj,
            &FlsConfig::default(),
            gains.vartheta_max,
        )
        .unwrap();
        let bound = crate::bcef::initial_bound_estimate(
            result.final_memory.as_ref().unwrap(),
            &gains,
            &projection,
        )
        .unwrap();
        assert!(
            e0_final <= bound,
            "E_0(T) = {e0_final} exceeds the boundedness estimate {bound}"
        );
    }

    #[test]
    fn resumed_run_matches_uninterrupted() {
        let (plant, nominal, traj) = setup();
        let select = ControllerSelect::Amcilc {
            gains: AmcilcGains::case2(),
            fls: FlsConfig::default(),
        };
        let config = SimConfig {
            iterations: 4,
            ..Default::default()
        };
        let full = run_ilc(&plant, &nominal, &select, &traj, &config).unwrap();

        // Run two iterations, checkpoint through CSV, resume for the rest.
        let half_cfg = SimConfig {
            iterations: 2,
            ..config.clone()
        };
        let half = run_ilc(&plant, &nominal, &select, &traj, &half_cfg).unwrap();
        let dir = std::env::temp_dir().join("delta_ilc_resume_test");
        std::fs::create_dir_all(&dir).unwrap();
        let ckpt = dir.join("memory.csv");
        half.final_memory.as_ref().unwrap().save_csv(&ckpt).unwrap();
        let restored = IterationMemory::load_csv(&ckpt, 9, traj.dt).unwrap();
        let resumed =
            run_ilc_from(&plant, &nominal, &select, &traj, &config, restored, 2, None).unwrap();

        assert_eq!(resumed.iterations.len(), 2);
        for (a, b) in full.iterations[2..].iter().zip(resumed.iterations.iter()) {
            assert_eq!(a.index, b.index);
            assert_eq!(a.metrics.max_abs_e, b.metrics.max_abs_e);
            for (ta, tb) in a.traces.u.iter().zip(b.traces.u.iter()) {
                assert_eq!(ta, tb);
            }
        }
    }

    #[test]
    fn zero_motion_zero_residual() {
        let modal = ModalModel::single_mode(18.0, 0.075);
        let accel = vec![Vector3::zeros(); 50];
        let report = residual_vibration_report(&accel, 1e-3, &modal, false);
        assert_eq!(report.response.residual[0], 0.0);
    }

    #[test]
    fn least_squares_fit_reduces_mismatch_residual() {
        // Fit the FLS to the injected mismatch along a trajectory and check
        // the residual is small relative to the mismatch itself (the
        // universal-approximation bound on this instance).
        let (plant, nominal, traj) = setup();
        let cfg = FlsConfig::default();
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for i in (0..traj.len()).step_by(5) {
            let s = traj.grid_sample(i);
            let state = JointState::new(s.theta, s.theta_dot);
            let tn = compute_terms(&nominal, &state).unwrap();
            let tp = compute_terms(&plant, &state).unwrap();
            let g = -((tp.m - tn.m) * s.theta_ddot
                + (tp.c - tn.c) * s.theta_dot
                + (tp.g - tn.g)
                + tp.b * s.theta_dot);
            inputs.push((s.theta, s.theta_dot));
            targets.push(g);
        }
        let w = fit_weights_least_squares(&cfg, &inputs, &targets).unwrap();
        let mut worst = 0.0f64;
        let mut scale = 0.0f64;
        for (i, (theta, theta_dot)) in inputs.iter().enumerate() {
            let phi = fls::basis_from_state(&cfg, theta, theta_dot).unwrap();
            let fit = w.transpose() * phi;
            for c in 0..3 {
                worst = worst.max((fit[c] - targets[i][c]).abs());
                scale = scale.max(targets[i][c].abs());
            }
        }
        assert!(
            worst < 0.5 * scale,
            "fit residual {worst} vs mismatch scale {scale}"
        );
    }
}
