//! Rigid-body dynamic model with geared PMSM actuation.
//!
//! The mechanism model is the standard lumped Delta simplification: each
//! upper arm is a rod pivoting at the base joint, each lower-arm pair
//! contributes half its mass to the elbow lump and half to the platform, so
//! the platform-side inertia is a point mass moving with the MP. Gearing
//! folds the mechanism terms by `1/n_gear` and reflects rotor inertia as
//! `I_M * n_gear`; motor damping reflects as `B * n_gear` and belongs to the
//! true plant only (it is part of the model mismatch, never of the nominal
//! model). Coriolis terms come from Christoffel symbols of the closed-form
//! inertia via the analytic Jacobian partials, which makes the energy
//! balance exact by construction.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{kin_solution, JointState, RobotParams, GRAVITY};

/// Relative parameter deviations of the true plant, zero for the nominal model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationProfile {
    pub m_p: f64,
    pub rho: f64,
    pub m_lump: f64,
    pub l1: f64,
    pub l2: f64,
    pub i_motor: f64,
}

impl Default for PerturbationProfile {
    fn default() -> Self {
        Self {
            m_p: 0.0,
            rho: 0.0,
            m_lump: 0.0,
            l1: 0.0,
            l2: 0.0,
            i_motor: 0.0,
        }
    }
}

impl PerturbationProfile {
    /// Default mismatch injection: +5% platform mass, +5% arm density.
    pub fn default_mismatch() -> Self {
        Self {
            m_p: 0.05,
            rho: 0.05,
            ..Self::default()
        }
    }

    pub fn is_zero(&self) -> bool {
        self.m_p == 0.0
            && self.rho == 0.0
            && self.m_lump == 0.0
            && self.l1 == 0.0
            && self.l2 == 0.0
            && self.i_motor == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("m_p", self.m_p),
            ("rho", self.rho),
            ("m_lump", self.m_lump),
            ("l1", self.l1),
            ("l2", self.l2),
            ("i_motor", self.i_motor),
        ] {
            if !(v.abs() < 0.5) {
                return Err(Error::Config(format!(
                    "perturbation {name} = {v} out of range (|delta| < 0.5)"
                )));
            }
        }
        Ok(())
    }
}

/// Rigid-body model, nominal or perturbed ("true plant") variant.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidModel {
    pub params: RobotParams,
    pub perturbation: PerturbationProfile,
    pub include_motor_damping: bool,
}

impl RigidModel {
    /// Nominal model: no parameter deviation, no damping term.
    pub fn nominal(params: RobotParams) -> Self {
        Self {
            params,
            perturbation: PerturbationProfile::default(),
            include_motor_damping: false,
        }
    }

    /// Perturbed true plant with motor damping active.
    pub fn perturbed(params: RobotParams, perturbation: PerturbationProfile) -> Self {
        Self {
            params,
            perturbation,
            include_motor_damping: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.perturbation.validate()?;
        if self.perturbation.is_zero() && self.include_motor_damping {
            // Allowed (damping-only mismatch), nothing to check.
        }
        Ok(())
    }

    /// Parameters with the relative deviations applied.
    pub fn effective_params(&self) -> RobotParams {
        let mut p = self.params.clone();
        p.m_p *= 1.0 + self.perturbation.m_p;
        p.rho *= 1.0 + self.perturbation.rho;
        p.m_lump *= 1.0 + self.perturbation.m_lump;
        p.l1 *= 1.0 + self.perturbation.l1;
        p.l2 *= 1.0 + self.perturbation.l2;
        p.i_motor *= 1.0 + self.perturbation.i_motor;
        p
    }
}

/// Gear-folded dynamics terms: `M qdd + (C + B) qd + G = u`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsTerms {
    pub m: Matrix3<f64>,
    pub c: Matrix3<f64>,
    pub g: Vector3<f64>,
    pub b: Matrix3<f64>,
}

struct LumpedConstants {
    /// Upper arm + elbow lump rotational inertia about the base joint.
    i_arm: f64,
    /// Translating mass carried with the MP (platform + rod halves).
    m_nt: f64,
    /// Gravity lever of the arm-side masses.
    w_arm: f64,
}

fn lumped(params: &RobotParams) -> LumpedConstants {
    let m_arm = params.mass_upper_arm();
    let m_rod = params.mass_lower_rod();
    // Half of each lower-arm pair lumps to the elbow, half to the platform.
    let m_elbow = params.m_lump + m_rod;
    LumpedConstants {
        i_arm: m_arm * params.l1 * params.l1 / 3.0 + m_elbow * params.l1 * params.l1,
        m_nt: params.m_p + 3.0 * m_rod,
        w_arm: (0.5 * m_arm + m_elbow) * params.l1,
    }
}

/// Mechanism-side terms before gear folding, plus the inertia partials.
fn mechanism_terms(
    params: &RobotParams,
    state: &JointState,
) -> Result<(Matrix3<f64>, Matrix3<f64>, Vector3<f64>, [Matrix3<f64>; 3])> {
    let lc = lumped(params);
    let sol = kin_solution(&state.theta, params)?;
    let j = sol.j;

    let mut m = lc.m_nt * j.transpose() * j;
    for i in 0..3 {
        m[(i, i)] += lc.i_arm;
    }

    let mut dm = [Matrix3::zeros(); 3];
    for k in 0..3 {
        let djk = sol.dj[k];
        dm[k] = lc.m_nt * (djk.transpose() * j + j.transpose() * djk);
    }

    // Christoffel symbols of the first kind.
    let mut c = Matrix3::zeros();
    for i in 0..3 {
        for jj in 0..3 {
            let mut cij = 0.0;
            for k in 0..3 {
                cij +=
                    0.5 * (dm[k][(i, jj)] + dm[jj][(i, k)] - dm[i][(jj, k)]) * state.theta_dot[k];
            }
            c[(i, jj)] = cij;
        }
    }

    // G = dU/dtheta with U = -w_arm*g*sum(sin theta_i) + m_nt*g*p_z.
    let mut g = Vector3::zeros();
    for i in 0..3 {
        g[i] = -lc.w_arm * GRAVITY * state.theta[i].cos() + lc.m_nt * GRAVITY * j[(2, i)];
    }

    Ok((m, c, g, dm))
}

/// Dynamics terms of the (possibly perturbed) model at a joint state.
pub fn compute_terms(model: &RigidModel, state: &JointState) -> Result<DynamicsTerms> {
    let params = model.effective_params();
    let (m_rr, c_rr, g_rr, _) = mechanism_terms(&params, state)?;
    let n = params.n_gear;
    let mut m = m_rr / n;
    for i in 0..3 {
        m[(i, i)] += params.i_motor * n;
    }
    let b = if model.include_motor_damping {
        Matrix3::from_diagonal_element(params.b_motor * n)
    } else {
        Matrix3::zeros()
    };
    Ok(DynamicsTerms {
        m,
        c: c_rr / n,
        g: g_rr / n,
        b,
    })
}

/// Joint acceleration under input torque: `qdd = M^{-1}(u - (C+B) qd - G)`.
pub fn forward_dynamics(
    model: &RigidModel,
    state: &JointState,
    u: &Vector3<f64>,
) -> Result<Vector3<f64>> {
    let t = compute_terms(model, state)?;
    forward_dynamics_with_terms(&t, state, u)
}

/// Same as [`forward_dynamics`] with precomputed terms.
pub fn forward_dynamics_with_terms(
    terms: &DynamicsTerms,
    state: &JointState,
    u: &Vector3<f64>,
) -> Result<Vector3<f64>> {
    let rhs = u - (terms.c + terms.b) * state.theta_dot - terms.g;
    nalgebra::Cholesky::new(terms.m)
        .map(|ch| ch.solve(&rhs))
        .ok_or(Error::SingularMass)
}

/// Torque realizing a desired joint acceleration at a state.
pub fn inverse_dynamics(
    model: &RigidModel,
    state: &JointState,
    theta_ddot: &Vector3<f64>,
) -> Result<Vector3<f64>> {
    let t = compute_terms(model, state)?;
    Ok(t.m * theta_ddot + (t.c + t.b) * state.theta_dot + t.g)
}

/// Gear-folded potential energy, consistent with the G term of
/// [`compute_terms`] (`dU/dtheta = G`).
pub fn potential_energy(model: &RigidModel, theta: &Vector3<f64>) -> Result<f64> {
    let params = model.effective_params();
    let lc = lumped(&params);
    let pose = crate::kinematics::forward_kinematics(theta, &params)?;
    let u_arm: f64 = (0..3).map(|i| -lc.w_arm * GRAVITY * theta[i].sin()).sum();
    Ok((u_arm + lc.m_nt * GRAVITY * pose.p.z) / params.n_gear)
}

/// Kinetic + potential energy of the gear-folded model.
pub fn total_energy(model: &RigidModel, state: &JointState) -> Result<f64> {
    let t = compute_terms(model, state)?;
    let kinetic = 0.5 * state.theta_dot.dot(&(t.m * state.theta_dot));
    Ok(kinetic + potential_energy(model, &state.theta)?)
}
