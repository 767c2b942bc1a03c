//! Control laws: the adaptive mismatch-compensated iterative learning
//! controller (AMCILC) with barrier-constrained update laws, plus the PID
//! bootstrap, PID-type ILC and adaptive fuzzy control baselines.
//!
//! AMCILC torque: nominal feedforward `Cbar qd + Gbar + Mbar (qdd_r - sigma
//! edot - k eta)` minus the fuzzy mismatch estimate `vartheta_hat^T phi(x) +
//! eps_hat`. The iteration-axis update laws adapt the estimates pointwise on
//! the shared time grid; the barrier factor `eta/cos^2(pi eta^2 / 2 v_c^2)`
//! blows up toward the velocity-error bound `v_c`, which is what enforces the
//! constraint.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{compute_terms, DynamicsTerms, RigidModel};
use crate::error::{Error, Result};
use crate::fls::{self, FlsConfig, FlsWeights};
use crate::kinematics::JointState;
use crate::trajectory::RefSample;

/// Barrier check margin: |eta| >= v_c (1 - margin) raises a violation.
pub const BARRIER_MARGIN: f64 = 1e-6;

/// AMCILC gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AmcilcGains {
    /// Error-combination gain (1/s).
    pub sigma: f64,
    /// Diagonal feedback gain entries.
    pub k_gain: [f64; 3],
    /// Barrier bound on the error combination (rad/s).
    pub v_c: f64,
    /// Adaptation gain per joint; Gamma_i = gamma_i * I_l.
    pub gamma: [f64; 3],
    /// Approximation-error adaptation gain per joint.
    pub nu: [f64; 3],
    pub vartheta_min: f64,
    pub vartheta_max: f64,
}

impl Default for AmcilcGains {
    fn default() -> Self {
        Self::case2()
    }
}

impl AmcilcGains {
    /// Gain set of the mathematical-model study: k = I.
    pub fn case1() -> Self {
        Self {
            sigma: 1.0,
            k_gain: [1.0; 3],
            v_c: 0.1,
            gamma: [1.0; 3],
            nu: [0.01; 3],
            vartheta_min: -fls::DEFAULT_VARTHETA_BOUND,
            vartheta_max: fls::DEFAULT_VARTHETA_BOUND,
        }
    }

    /// Gain set of the high-fidelity study: k = diag(15, 15, 15).
    pub fn case2() -> Self {
        Self {
            k_gain: [15.0; 3],
            ..Self::case1()
        }
    }

    /// AFC baseline gains: k = 10 I, Gamma = 20 I, nu = 0.1.
    pub fn afc() -> Self {
        Self {
            k_gain: [10.0; 3],
            gamma: [20.0; 3],
            nu: [0.1; 3],
            ..Self::case1()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all_pos = self.sigma > 0.0
            && self.v_c > 0.0
            && self.k_gain.iter().all(|&v| v > 0.0)
            && self.gamma.iter().all(|&v| v > 0.0)
            && self.nu.iter().all(|&v| v > 0.0);
        if !all_pos {
            return Err(Error::Config(
                "AMCILC gains must be strictly positive".into(),
            ));
        }
        if self.vartheta_min >= self.vartheta_max {
            return Err(Error::Config("vartheta bounds must be ordered".into()));
        }
        Ok(())
    }

    pub fn k_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::from_row_slice(&self.k_gain))
    }
}

/// Error combination `eta = edot + sigma e`.
pub fn auxiliary_error(e: &Vector3<f64>, e_dot: &Vector3<f64>, sigma: f64) -> Vector3<f64> {
    e_dot + sigma * e
}

/// Barrier value per joint and the update-law barrier vector Psi.
///
/// `V_b,i = (v_c^2/pi) tan(pi eta_i^2 / (2 v_c^2))` diverges as |eta_i| nears
/// v_c; a violation aborts with diagnostics rather than evaluating past the
/// singularity.
pub fn barrier_terms(eta: &Vector3<f64>, v_c: f64) -> Result<(Vector3<f64>, Vector3<f64>)> {
    let mut v_b = Vector3::zeros();
    let mut psi = Vector3::zeros();
    for i in 0..3 {
        if eta[i].abs() >= v_c * (1.0 - BARRIER_MARGIN) {
            return Err(Error::BarrierViolation {
                iteration: 0,
                t: 0.0,
                joint: i,
                eta: eta[i],
                v_c,
            });
        }
        let arg = std::f64::consts::PI * eta[i] * eta[i] / (2.0 * v_c * v_c);
        v_b[i] = v_c * v_c / std::f64::consts::PI * arg.tan();
        psi[i] = eta[i] / arg.cos().powi(2);
    }
    Ok((v_b, psi))
}

/// AMCILC torque from nominal dynamics terms and the current estimates.
pub fn amcilc_torque(
    terms: &DynamicsTerms,
    state: &JointState,
    reference: &RefSample,
    weights: &FlsWeights,
    phi: &DVector<f64>,
    gains: &AmcilcGains,
) -> Vector3<f64> {
    let e = state.theta - reference.theta;
    let e_dot = state.theta_dot - reference.theta_dot;
    let eta = auxiliary_error(&e, &e_dot, gains.sigma);
    // fls::approximate already carries the -eps_hat share: it returns
    // vartheta_hat^T phi + eps_hat, both subtracted in the law.
    let mismatch = fls::approximate(weights, phi);
    terms.c * state.theta_dot + terms.g - mismatch
        + terms.m * (reference.theta_ddot - gains.sigma * e_dot - gains.k_matrix() * eta)
}

/// Full AMCILC control evaluation against the nominal model.
pub fn amcilc_control(
    state: &JointState,
    reference: &RefSample,
    weights: &FlsWeights,
    fls_config: &FlsConfig,
    gains: &AmcilcGains,
    nominal: &RigidModel,
) -> Result<Vector3<f64>> {
    let e = state.theta - reference.theta;
    let e_dot = state.theta_dot - reference.theta_dot;
    let eta = auxiliary_error(&e, &e_dot, gains.sigma);
    barrier_terms(&eta, gains.v_c)?;
    let terms = compute_terms(nominal, state)?;
    let phi = fls::basis_from_state(fls_config, &state.theta, &state.theta_dot)?;
    Ok(amcilc_torque(
        &terms, state, reference, weights, &phi, gains,
    ))
}

/// Time-indexed memory threaded between ILC iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationMemory {
    pub dt: f64,
    /// FLS weights per sample (`rule_count x 3`).
    pub vartheta: Vec<DMatrix<f64>>,
    /// Approximation-error estimates per sample.
    pub eps: Vec<Vector3<f64>>,
    /// Applied torque per sample.
    pub u: Vec<Vector3<f64>>,
    pub e: Vec<Vector3<f64>>,
    pub e_dot: Vec<Vector3<f64>>,
    pub eta: Vec<Vector3<f64>>,
}

impl IterationMemory {
    /// All-zero memory (the initialization of the update laws).
    pub fn zeros(rule_count: usize, samples: usize, dt: f64) -> Self {
        Self {
            dt,
            vartheta: vec![DMatrix::zeros(rule_count, 3); samples],
            eps: vec![Vector3::zeros(); samples],
            u: vec![Vector3::zeros(); samples],
            e: vec![Vector3::zeros(); samples],
            e_dot: vec![Vector3::zeros(); samples],
            eta: vec![Vector3::zeros(); samples],
        }
    }

    pub fn len(&self) -> usize {
        self.vartheta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vartheta.is_empty()
    }

    pub fn check_grid(&self, samples: usize) -> Result<()> {
        if self.len() != samples {
            return Err(Error::GridMismatch {
                expected: samples,
                got: self.len(),
            });
        }
        Ok(())
    }

    /// Checkpoint to CSV so interrupted runs can resume between iterations.
    pub fn save_csv(&self, path: &std::path::Path) -> Result<()> {
        use std::io::Write;
        let rules = self.vartheta.first().map_or(0, |m| m.nrows());
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(w, "idx,t")?;
        for r in 0..rules {
            for c in 0..3 {
                write!(w, ",vartheta_{r}_{c}")?;
            }
        }
        for name in ["eps", "u", "e", "e_dot", "eta"] {
            for c in 0..3 {
                write!(w, ",{name}_{c}")?;
            }
        }
        writeln!(w)?;
        for i in 0..self.len() {
            write!(w, "{i},{:.6}", i as f64 * self.dt)?;
            for r in 0..rules {
                for c in 0..3 {
                    write!(w, ",{:.17e}", self.vartheta[i][(r, c)])?;
                }
            }
            for field in [&self.eps, &self.u, &self.e, &self.e_dot, &self.eta] {
                for c in 0..3 {
                    write!(w, ",{:.17e}", field[i][c])?;
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Read back a checkpoint written by [`Self::save_csv`].
    pub fn load_csv(path: &std::path::Path, rule_count: usize, dt: f64) -> Result<Self> {
        use std::io::BufRead;
        let file = std::fs::File::open(path)?;
        let reader = std::io::BufReader::new(file);
        let mut memory = IterationMemory::zeros(rule_count, 0, dt);
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Config(format!("bad memory CSV line {}: {e}", lineno + 1)))?;
            let expected = 2 + 3 * rule_count + 15;
            if fields.len() != expected {
                return Err(Error::Config(format!(
                    "memory CSV line {} has {} fields, expected {expected}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let mut vartheta = DMatrix::zeros(rule_count, 3);
            for r in 0..rule_count {
                for c in 0..3 {
                    vartheta[(r, c)] = fields[2 + 3 * r + c];
                }
            }
            let base = 2 + 3 * rule_count;
            let v3 = |o: usize| Vector3::new(fields[o], fields[o + 1], fields[o + 2]);
            memory.vartheta.push(vartheta);
            memory.eps.push(v3(base));
            memory.u.push(v3(base + 3));
            memory.e.push(v3(base + 6));
            memory.e_dot.push(v3(base + 9));
            memory.eta.push(v3(base + 12));
        }
        Ok(memory)
    }
}

/// Per-sample inputs to the iteration-axis update laws.
#[derive(Debug, Clone)]
pub struct UpdateInput {
    pub phi: DVector<f64>,
    pub eta: Vector3<f64>,
    /// Inverse of the nominal inertia at the sample.
    pub m_inv: Matrix3<f64>,
}

/// One pointwise update: `vartheta_bar = vartheta_prev + Gamma phi Lambda`,
/// saturated; `eps = eps_prev + nu Lambda`; `Lambda_i = Psi^T m_inv[:, i]`.
pub fn update_sample(
    prev_vartheta: &DMatrix<f64>,
    prev_eps: &Vector3<f64>,
    input: &UpdateInput,
    gains: &AmcilcGains,
) -> Result<(DMatrix<f64>, Vector3<f64>)> {
    let (_, psi) = barrier_terms(&input.eta, gains.v_c)?;
    let mut vartheta = prev_vartheta.clone();
    let mut eps = *prev_eps;
    for i in 0..3 {
        let lambda = psi.dot(&input.m_inv.column(i).into_owned());
        for r in 0..vartheta.nrows() {
            let raw = prev_vartheta[(r, i)] + gains.gamma[i] * input.phi[r] * lambda;
            vartheta[(r, i)] = raw.clamp(gains.vartheta_min, gains.vartheta_max);
        }
        eps[i] = prev_eps[i] + gains.nu[i] * lambda;
    }
    Ok((vartheta, eps))
}

/// Batch update over one iteration's aligned grid.
pub fn update_laws(
    prev: &IterationMemory,
    inputs: &[UpdateInput],
    gains: &AmcilcGains,
) -> Result<(Vec<DMatrix<f64>>, Vec<Vector3<f64>>)> {
    prev.check_grid(inputs.len())?;
    let mut vartheta = Vec::with_capacity(inputs.len());
    let mut eps = Vec::with_capacity(inputs.len());
    for (idx, input) in inputs.iter().enumerate() {
        let (v, e) = update_sample(&prev.vartheta[idx], &prev.eps[idx], input, gains)?;
        vartheta.push(v);
        eps.push(e);
    }
    Ok((vartheta, eps))
}

/// PID gains applied as scalar multiples of the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self::bootstrap()
    }
}

impl PidGains {
    /// Bootstrap PID used to seed the ILC memory.
    pub fn bootstrap() -> Self {
        Self {
            kp: 20.0,
            ki: 20.0,
            kd: 10.0,
        }
    }

    /// Iteration-axis correction gains of the PID-type ILC.
    pub fn ilc() -> Self {
        Self {
            kp: 1.0,
            ki: 1.0,
            kd: 1.0,
        }
    }
}

/// Plain PID on the tracking error (negative feedback).
pub fn pid_bootstrap(
    e: &Vector3<f64>,
    e_dot: &Vector3<f64>,
    e_int: &Vector3<f64>,
    gains: &PidGains,
) -> Vector3<f64> {
    -(gains.kp * e + gains.kd * e_dot + gains.ki * e_int)
}

/// PID-type ILC: previous input as feedforward plus a PID correction.
pub fn pidilc_control(
    u_prev: &Vector3<f64>,
    e: &Vector3<f64>,
    e_dot: &Vector3<f64>,
    e_int: &Vector3<f64>,
    gains: &PidGains,
) -> Vector3<f64> {
    u_prev + pid_bootstrap(e, e_dot, e_int, gains)
}

/// AFC torque: same structure as the AMCILC law; the weights integrate in
/// continuous time within a single run and carry no cross-iteration memory.
pub fn afc_control(
    state: &JointState,
    reference: &RefSample,
    weights: &FlsWeights,
    fls_config: &FlsConfig,
    gains: &AmcilcGains,
    nominal: &RigidModel,
) -> Result<Vector3<f64>> {
    amcilc_control(state, reference, weights, fls_config, gains, nominal)
}

/// Continuous-time AFC weight rates: `vartheta_dot = Gamma phi Lambda`,
/// `eps_dot = nu Lambda`.
pub fn afc_weight_rates(
    input: &UpdateInput,
    gains: &AmcilcGains,
) -> Result<(DMatrix<f64>, Vector3<f64>)> {
    let (_, psi) = barrier_terms(&input.eta, gains.v_c)?;
    let l = input.phi.len();
    let mut dv = DMatrix::zeros(l, 3);
    let mut de = Vector3::zeros();
    for i in 0..3 {
        let lambda = psi.dot(&input.m_inv.column(i).into_owned());
        for r in 0..l {
            dv[(r, i)] = gains.gamma[i] * input.phi[r] * lambda;
        }
        de[i] = gains.nu[i] * lambda;
    }
    Ok((dv, de))
}
