//! Delta robot geometry: parameters, inverse/forward kinematics, Jacobians
//! and workspace sampling.
//!
//! Conventions. Chain `i` sits at azimuth `2*pi*i/3` about the vertical axis.
//! Its actuated joint is at radius `e_a` on the fixed base, rotating about the
//! horizontal axis tangent to the base circle. The joint angle is measured
//! from the horizontal, positive swinging the elbow downward, so the elbow of
//! chain `i` sits at `R_i * [e_a + l1*cos(theta_i), 0, -l1*sin(theta_i)]`.
//! The elbow-out solution branch is fixed globally. The moving platform (MP)
//! hangs below the base and never rotates.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Exec};

/// Discriminant below this is treated as a fully extended (singular) chain.
pub const SINGULAR_DISCRIMINANT_TOL: f64 = 1e-10;

/// Jacobian condition-number bound beyond which a configuration is rejected.
pub const JACOBIAN_COND_BOUND: f64 = 1e9;

pub const GRAVITY: f64 = 9.81;

/// Geometric, inertial and actuation constants of the robot.
///
/// Defaults reproduce the reference hardware: arm lengths/diameters, base and
/// platform radii, material constants, platform and lumped elbow masses, gear
/// ratio, and the motor constants (rotor inertia, viscous damping, torque
/// constant) of the geared PMSM drives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobotParams {
    /// Upper arm length (m).
    pub l1: f64,
    /// Lower arm length (m).
    pub l2: f64,
    /// Upper arm tube outer diameter (m).
    pub d1_outer: f64,
    /// Upper arm tube inner diameter (m).
    pub d1_inner: f64,
    /// Lower arm tube outer diameter (m).
    pub d2_outer: f64,
    /// Lower arm tube inner diameter (m).
    pub d2_inner: f64,
    /// Fixed base radius (m).
    pub e_a: f64,
    /// Moving platform radius (m).
    pub e_b: f64,
    /// Elastic modulus of the arms (Pa).
    pub e_modulus: f64,
    /// Arm material density (kg/m^3).
    pub rho: f64,
    /// Poisson ratio.
    pub nu: f64,
    /// Moving platform mass (kg).
    pub m_p: f64,
    /// Lumped elbow mass between upper and lower arms (kg).
    pub m_lump: f64,
    /// MP inertia about x (kg m^2).
    pub i_px: f64,
    /// MP inertia about y (kg m^2).
    pub i_py: f64,
    /// MP inertia about z (kg m^2).
    pub i_pz: f64,
    /// Gear ratio.
    pub n_gear: f64,
    /// Motor rotor inertia per motor (kg m^2).
    pub i_motor: f64,
    /// Motor viscous damping per motor (N m s/rad).
    pub b_motor: f64,
    /// Motor torque constant (N m/A).
    pub k_t: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        Self {
            l1: 0.375,
            l2: 0.95,
            d1_outer: 0.058,
            d1_inner: 0.048,
            d2_outer: 0.016,
            d2_inner: 0.012,
            e_a: 0.164,
            e_b: 0.051,
            e_modulus: 71e9,
            rho: 2770.0,
            nu: 0.3,
            m_p: 0.676,
            m_lump: 0.157,
            i_px: 2.25e-6,
            i_py: 2.25e-6,
            i_pz: 4.39e-6,
            n_gear: 15.0,
            i_motor: 3.0e-3,
            b_motor: 0.05,
            k_t: 1.3,
        }
    }
}

impl RobotParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("l1", self.l1),
            ("l2", self.l2),
            ("d1_outer", self.d1_outer),
            ("d1_inner", self.d1_inner),
            ("d2_outer", self.d2_outer),
            ("d2_inner", self.d2_inner),
            ("e_a", self.e_a),
            ("e_b", self.e_b),
            ("e_modulus", self.e_modulus),
            ("rho", self.rho),
            ("m_p", self.m_p),
            ("m_lump", self.m_lump),
            ("i_px", self.i_px),
            ("i_py", self.i_py),
            ("i_pz", self.i_pz),
            ("i_motor", self.i_motor),
            ("k_t", self.k_t),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!(
                    "{name} must be strictly positive, got {v}"
                )));
            }
        }
        if self.d1_inner >= self.d1_outer {
            return Err(Error::Config(
                "d1_inner must be smaller than d1_outer".into(),
            ));
        }
        if self.d2_inner >= self.d2_outer {
            return Err(Error::Config(
                "d2_inner must be smaller than d2_outer".into(),
            ));
        }
        if self.n_gear < 1.0 {
            return Err(Error::Config(format!(
                "n_gear must be >= 1, got {}",
                self.n_gear
            )));
        }
        if self.b_motor < 0.0 {
            return Err(Error::Config("b_motor must be nonnegative".into()));
        }
        Ok(())
    }

    /// Azimuth of chain `i` about the vertical axis.
    pub fn azimuth(&self, chain: usize) -> f64 {
        2.0 * std::f64::consts::PI * chain as f64 / 3.0
    }

    /// Rotation taking the chain-local frame to the global frame.
    pub fn chain_rotation(&self, chain: usize) -> Matrix3<f64> {
        rot_z(self.azimuth(chain))
    }

    /// Upper arm tube cross-section area (m^2).
    pub fn area_upper(&self) -> f64 {
        std::f64::consts::FRAC_PI_4 * (self.d1_outer.powi(2) - self.d1_inner.powi(2))
    }

    /// Lower arm tube cross-section area (m^2).
    pub fn area_lower(&self) -> f64 {
        std::f64::consts::FRAC_PI_4 * (self.d2_outer.powi(2) - self.d2_inner.powi(2))
    }

    /// Lower arm bending second moment of area (m^4).
    pub fn i_bend_lower(&self) -> f64 {
        std::f64::consts::PI / 64.0 * (self.d2_outer.powi(4) - self.d2_inner.powi(4))
    }

    /// Lower arm polar second moment of area (m^4).
    pub fn j_polar_lower(&self) -> f64 {
        2.0 * self.i_bend_lower()
    }

    /// Mass of one upper arm tube (kg).
    pub fn mass_upper_arm(&self) -> f64 {
        self.rho * self.area_upper() * self.l1
    }

    /// Mass of one lower arm rod (kg); each chain carries a parallel pair.
    pub fn mass_lower_rod(&self) -> f64 {
        self.rho * self.area_lower() * self.l2
    }

    /// Shear modulus of the arm material (Pa).
    pub fn g_modulus(&self) -> f64 {
        self.e_modulus / (2.0 * (1.0 + self.nu))
    }

    /// Actuated joint position of chain `i` on the fixed base.
    pub fn base_joint(&self, chain: usize) -> Vector3<f64> {
        self.chain_rotation(chain) * Vector3::new(self.e_a, 0.0, 0.0)
    }

    /// Joint rotation axis of chain `i` (unit, tangent to the base circle).
    pub fn joint_axis(&self, chain: usize) -> Vector3<f64> {
        self.chain_rotation(chain) * Vector3::new(0.0, 1.0, 0.0)
    }

    /// Elbow position of chain `i` at joint angle `theta_i`.
    pub fn elbow(&self, chain: usize, theta_i: f64) -> Vector3<f64> {
        self.chain_rotation(chain)
            * Vector3::new(
                self.e_a + self.l1 * theta_i.cos(),
                0.0,
                -self.l1 * theta_i.sin(),
            )
    }

    /// Derivative of the elbow position with respect to `theta_i`.
    pub fn elbow_tangent(&self, chain: usize, theta_i: f64) -> Vector3<f64> {
        self.chain_rotation(chain)
            * Vector3::new(-self.l1 * theta_i.sin(), 0.0, -self.l1 * theta_i.cos())
    }

    /// Second derivative of the elbow position with respect to `theta_i`.
    pub fn elbow_curvature(&self, chain: usize, theta_i: f64) -> Vector3<f64> {
        self.chain_rotation(chain)
            * Vector3::new(-self.l1 * theta_i.cos(), 0.0, self.l1 * theta_i.sin())
    }

    /// MP attachment offset of chain `i` from the platform center.
    pub fn mp_offset(&self, chain: usize) -> Vector3<f64> {
        self.chain_rotation(chain) * Vector3::new(self.e_b, 0.0, 0.0)
    }
}

pub fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Moving platform center position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpPose {
    pub p: Vector3<f64>,
}

impl MpPose {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self {
            p: Vector3::new(x, y, z),
        }
    }
}

impl From<Vector3<f64>> for MpPose {
    fn from(p: Vector3<f64>) -> Self {
        Self { p }
    }
}

/// Active joint angles and rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointState {
    pub theta: Vector3<f64>,
    pub theta_dot: Vector3<f64>,
}

impl JointState {
    pub fn new(theta: Vector3<f64>, theta_dot: Vector3<f64>) -> Self {
        Self { theta, theta_dot }
    }

    pub fn at_rest(theta: Vector3<f64>) -> Self {
        Self {
            theta,
            theta_dot: Vector3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.theta
            .iter()
            .chain(self.theta_dot.iter())
            .all(|v| v.is_finite())
    }
}

fn unreachable_err(p: &Vector3<f64>, chain: usize) -> Error {
    Error::UnreachablePose {
        x: p.x,
        y: p.y,
        z: p.z,
        chain,
    }
}

/// Joint angle of one chain for a given MP position, elbow-out branch.
fn ik_chain(p: &Vector3<f64>, chain: usize, params: &RobotParams) -> Result<f64> {
    // Work in the chain-local frame with the base joint at the origin.
    let p_loc = params.chain_rotation(chain).transpose() * p;
    let v = Vector3::new(p_loc.x + params.e_b - params.e_a, p_loc.y, p_loc.z);

    let k = (v.norm_squared() + params.l1 * params.l1 - params.l2 * params.l2) / (2.0 * params.l1);
    let e = v.x;
    let f = -v.z;
    let disc = e * e + f * f - k * k;
    if disc < 0.0 {
        return Err(unreachable_err(p, chain));
    }
    if disc < SINGULAR_DISCRIMINANT_TOL {
        return Err(Error::SingularConfiguration { chain });
    }
    // Elbow-out root of E*cos + F*sin = k in tan-half-angle form, written as
    // (k - E)/(F + sqrt(disc)) to stay stable where E + k changes sign.
    let denom = f + disc.sqrt();
    if denom.abs() < 1e-14 {
        return Err(Error::SingularConfiguration { chain });
    }
    Ok(2.0 * ((k - e) / denom).atan())
}

/// Inverse kinematics: joint angles reaching `pose`, elbow-out branch.
pub fn inverse_kinematics(pose: &MpPose, params: &RobotParams) -> Result<Vector3<f64>> {
    Ok(Vector3::new(
        ik_chain(&pose.p, 0, params)?,
        ik_chain(&pose.p, 1, params)?,
        ik_chain(&pose.p, 2, params)?,
    ))
}

/// Forward kinematics: MP center as the intersection of the three elbow
/// spheres of radius `l2`, lower-z root (the platform hangs below the base).
pub fn forward_kinematics(theta: &Vector3<f64>, params: &RobotParams) -> Result<MpPose> {
    let err = || Error::NoIntersection {
        theta: [theta.x, theta.y, theta.z],
    };
    // Shift each elbow by the MP attachment offset so all spheres target the
    // platform center.
    let c: Vec<Vector3<f64>> = (0..3)
        .map(|i| params.elbow(i, theta[i]) - params.mp_offset(i))
        .collect();

    let d21 = c[1] - c[0];
    let d31 = c[2] - c[0];
    let n = d21.cross(&d31);
    if n.norm() < 1e-12 {
        return Err(err());
    }
    // Two linear trilateration equations plus the centers' plane pin a point
    // p0; the solution line is p0 + s*n.
    let a = Matrix3::from_rows(&[
        (2.0 * d21).transpose(),
        (2.0 * d31).transpose(),
        n.transpose(),
    ]);
    let rhs = Vector3::new(
        c[1].norm_squared() - c[0].norm_squared(),
        c[2].norm_squared() - c[0].norm_squared(),
        n.dot(&c[0]),
    );
    let p0 = a.lu().solve(&rhs).ok_or_else(err)?;

    let radicand = (params.l2 * params.l2 - (p0 - c[0]).norm_squared()) / n.norm_squared();
    if radicand < 0.0 {
        return Err(err());
    }
    let s = radicand.sqrt();
    let p_a = p0 + s * n;
    let p_b = p0 - s * n;
    let p = if p_a.z <= p_b.z { p_a } else { p_b };
    Ok(MpPose { p })
}

/// Full kinematic solution at a configuration: MP position, the velocity
/// Jacobian `J` with `p_dot = J * theta_dot`, and its configuration partials.
#[derive(Debug, Clone)]
pub struct KinSolution {
    pub pose: MpPose,
    pub j: Matrix3<f64>,
    /// dJ/dtheta_k for k = 0, 1, 2.
    pub dj: [Matrix3<f64>; 3],
}

/// Velocity Jacobian mapping joint rates to MP velocity.
pub fn jacobian(theta: &Vector3<f64>, params: &RobotParams) -> Result<Matrix3<f64>> {
    Ok(kin_solution(theta, params)?.j)
}

/// Jacobian together with its analytic configuration partials.
///
/// Differentiating the loop closure |p + rho_i - A_i(theta_i)|^2 = l2^2 gives
/// row i of `J_p = [s_i^T]` and `J_theta = diag(s_i . a_i)` with
/// `s_i = p + rho_i - A_i` and `a_i = dA_i/dtheta_i`, so `J = J_p^{-1} J_theta`.
/// The partials follow from `dJ = J_p^{-1} (dJ_theta - dJ_p J)`.
pub fn kin_solution(theta: &Vector3<f64>, params: &RobotParams) -> Result<KinSolution> {
    let pose = forward_kinematics(theta, params)?;
    let p = pose.p;

    let mut s = [Vector3::zeros(); 3];
    let mut a = [Vector3::zeros(); 3];
    let mut b = [Vector3::zeros(); 3];
    for i in 0..3 {
        s[i] = p + params.mp_offset(i) - params.elbow(i, theta[i]);
        a[i] = params.elbow_tangent(i, theta[i]);
        b[i] = params.elbow_curvature(i, theta[i]);
    }

    let j_p = Matrix3::from_rows(&[s[0].transpose(), s[1].transpose(), s[2].transpose()]);
    let j_theta = Matrix3::from_diagonal(&Vector3::new(
        s[0].dot(&a[0]),
        s[1].dot(&a[1]),
        s[2].dot(&a[2]),
    ));
    let j_p_lu = j_p.lu();
    let j = j_p_lu.solve(&j_theta).ok_or(Error::SingularJacobian {
        cond: f64::INFINITY,
        bound: JACOBIAN_COND_BOUND,
    })?;

    let svd = j.svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = if smin > 0.0 {
        smax / smin
    } else {
        f64::INFINITY
    };
    if cond > JACOBIAN_COND_BOUND {
        return Err(Error::SingularJacobian {
            cond,
            bound: JACOBIAN_COND_BOUND,
        });
    }

    let mut dj = [Matrix3::zeros(); 3];
    for k in 0..3 {
        // ds_i/dtheta_k = J[:,k] - delta_ik a_i
        let mut d_jp = Matrix3::zeros();
        let mut d_jtheta = Matrix3::zeros();
        for i in 0..3 {
            let mut ds = j.column(k).into_owned();
            if i == k {
                ds -= a[i];
            }
            d_jp.set_row(i, &ds.transpose());
            let mut dd = ds.dot(&a[i]);
            if i == k {
                dd += s[i].dot(&b[i]);
            }
            d_jtheta[(i, i)] = dd;
        }
        dj[k] = j_p_lu
            .solve(&(d_jtheta - d_jp * j))
            .ok_or(Error::SingularJacobian {
                cond,
                bound: JACOBIAN_COND_BOUND,
            })?;
    }

    Ok(KinSolution { pose, j, dj })
}

/// Rectangular sampling grid over a list of horizontal workspace planes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkspaceGrid {
    pub nx: usize,
    pub ny: usize,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub z_planes: Vec<f64>,
}

impl Default for WorkspaceGrid {
    fn default() -> Self {
        Self {
            nx: 21,
            ny: 21,
            x_range: (-0.5, 0.5),
            y_range: (-0.5, 0.5),
            // Brackets the z = -0.8151 m test plane.
            z_planes: vec![-1.05, -0.95, -0.85, -0.75, -0.65],
        }
    }
}

impl WorkspaceGrid {
    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.z_planes.is_empty() {
            return Err(Error::Config(
                "workspace grid resolution must be positive".into(),
            ));
        }
        if self.x_range.1 <= self.x_range.0 || self.y_range.1 <= self.y_range.0 {
            return Err(Error::Config(
                "workspace grid ranges must be increasing".into(),
            ));
        }
        Ok(())
    }

    pub fn cell_area(&self) -> f64 {
        let dx = (self.x_range.1 - self.x_range.0) / self.nx as f64;
        let dy = (self.y_range.1 - self.y_range.0) / self.ny as f64;
        dx * dy
    }
}

/// One reachable workspace sample with its cell-area weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkspaceSample {
    pub pose: MpPose,
    /// Cell area (m^2); per plane the weights sum to the reachable area.
    pub weight: f64,
    pub plane: usize,
}

fn sample_plane(params: &RobotParams, grid: &WorkspaceGrid, plane: usize) -> Vec<WorkspaceSample> {
    let z = grid.z_planes[plane];
    let dx = (grid.x_range.1 - grid.x_range.0) / grid.nx as f64;
    let dy = (grid.y_range.1 - grid.y_range.0) / grid.ny as f64;
    let area = dx * dy;
    let mut out = Vec::new();
    for ix in 0..grid.nx {
        let x = grid.x_range.0 + (ix as f64 + 0.5) * dx;
        for iy in 0..grid.ny {
            let y = grid.y_range.0 + (iy as f64 + 0.5) * dy;
            let pose = MpPose::new(x, y, z);
            if inverse_kinematics(&pose, params).is_ok() {
                out.push(WorkspaceSample {
                    pose,
                    weight: area,
                    plane,
                });
            }
        }
    }
    out
}

/// Cell-centered reachability sampling, parallel per z-plane.
pub fn sample_workspace(
    params: &RobotParams,
    grid: &WorkspaceGrid,
) -> Result<Vec<WorkspaceSample>> {
    sample_workspace_exec(params, grid, Exec::Parallel)
}

/// Sequential variant of [`sample_workspace`], kept for benchmarking.
pub fn sample_workspace_seq(
    params: &RobotParams,
    grid: &WorkspaceGrid,
) -> Result<Vec<WorkspaceSample>> {
    sample_workspace_exec(params, grid, Exec::Sequential)
}

fn sample_workspace_exec(
    params: &RobotParams,
    grid: &WorkspaceGrid,
    exec: Exec,
) -> Result<Vec<WorkspaceSample>> {
    grid.validate()?;
    let planes: Vec<usize> = (0..grid.z_planes.len()).collect();
    let per_plane = exec::map(exec, planes, |plane| sample_plane(params, grid, plane));
    let samples: Vec<WorkspaceSample> = per_plane.into_iter().flatten().collect();
    if samples.is_empty() {
        return Err(Error::EmptyWorkspace);
    }
    Ok(samples)
}
