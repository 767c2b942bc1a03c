//! Frozen-configuration modal analysis of the rigid-flexible structure.
//!
//! Coordinates of the unconstrained (cut-joint) model, 48 total:
//! `[theta_ri(3), theta_fl(3), tip_0(6) .. tip_5(6), d_p(6)]` where
//! `theta_ri`/`theta_fl` split each actuated joint angle into rigid motion
//! plus servo/gearbox spring deflection, each lower-arm rod is one frame
//! element whose root is carried by the elbow (its own DOFs condensed into
//! the arm rotation) and whose tip node keeps all six DOFs, and `d_p` is the
//! small platform displacement `[xi(3), delta_p(3)]`.
//!
//! Closing the loops constrains each tip translation to the platform motion,
//! `delta_a = xi - [r_b x] I_delta delta_p`, which removes 18 coordinates and
//! yields the 48x30 compatibility matrix. Modal analysis clamps `theta_ri`
//! (instantaneous substructure at the frozen configuration) and solves the
//! generalized symmetric eigenproblem of the reduced matrices. The low modes
//! are dominated by the servo springs and vary with configuration; the first
//! few feed a damped modal oscillator bank used for residual-vibration
//! studies.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::kinematics::{inverse_kinematics, MpPose, RobotParams, WorkspaceSample};

/// Total DOF of the unconstrained model.
pub const DOF_UNCONSTRAINED: usize = 48;
/// Independent coordinates after deformation compatibility.
pub const DOF_REDUCED: usize = 30;
/// Coordinates clamped for the frozen-configuration eigenproblem.
pub const DOF_CLAMPED: usize = 3;

/// Servo/gearbox torsional stiffness (N m/rad) calibrated so the first
/// natural frequency at the central pose (0, 0, -0.85) m sits at 20 Hz,
/// the midpoint of the working 16-24 Hz band.
pub const DEFAULT_SERVO_STIFFNESS: f64 = 5.93e3;

/// Default modal damping ratio for the oscillator bank.
pub const DEFAULT_MODAL_ZETA: f64 = 0.075;

/// Modes kept in the oscillator bank (vibration is dominated by the first few).
pub const DEFAULT_BANK_MODES: usize = 3;

/// Frequencies below this are treated as numerical rigid-body leakage.
pub const MIN_FREQUENCY_HZ: f64 = 0.1;

/// Half-spacing of the parallelogram rod pair about the chain centerline.
fn rod_half_spacing(params: &RobotParams) -> f64 {
    params.e_b
}

fn rod_sign(rod: usize) -> f64 {
    if rod % 2 == 0 {
        -1.0
    } else {
        1.0
    }
}

/// Vector from the platform center to the attachment point of rod `j`.
fn rod_rb(params: &RobotParams, rod: usize, frame: &Matrix3<f64>) -> Vector3<f64> {
    let chain = rod / 2;
    frame
        * (params.mp_offset(chain)
            + rod_sign(rod) * rod_half_spacing(params) * params.joint_axis(chain))
}

const IDX_FL: usize = 3;
const IDX_TIP: usize = 6;
const IDX_MP: usize = 42;

/// Anti-diagonal identity mapping the Euler-angle triple to the rotation
/// vector (reverses component order).
fn i_delta() -> Matrix3<f64> {
    Matrix3::new(0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0)
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Unconstrained mass and stiffness at a frozen configuration.
pub fn assemble_unconstrained(
    params: &RobotParams,
    theta: &Vector3<f64>,
    servo_stiffness: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    assemble_in_frame(params, theta, servo_stiffness, &Matrix3::identity())
}

/// Assembly expressed in a rotated global frame; frequencies must not depend
/// on the frame choice, which the module tests verify.
pub(crate) fn assemble_in_frame(
    params: &RobotParams,
    theta: &Vector3<f64>,
    servo_stiffness: f64,
    frame: &Matrix3<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(servo_stiffness > 0.0) {
        return Err(Error::Config(format!(
            "servo stiffness must be positive, got {servo_stiffness}"
        )));
    }
    let pose = crate::kinematics::forward_kinematics(theta, params)?;

    let mut m_u = DMatrix::zeros(DOF_UNCONSTRAINED, DOF_UNCONSTRAINED);
    let mut k_u = DMatrix::zeros(DOF_UNCONSTRAINED, DOF_UNCONSTRAINED);

    let m_arm = params.mass_upper_arm();
    // Upper arm rod inertia about the base joint plus the lumped elbow mass;
    // the rod (lower-arm) masses enter through the beam elements.
    let i_upper = m_arm * params.l1 * params.l1 / 3.0 + params.m_lump * params.l1 * params.l1;

    let h = rod_half_spacing(params);
    for chain in 0..3 {
        let ri = chain;
        let fl = IDX_FL + chain;

        for (r, c) in [(ri, ri), (ri, fl), (fl, ri), (fl, fl)] {
            m_u[(r, c)] += i_upper;
        }
        // Servo/gearbox spring acting on the flexible part of the joint angle.
        k_u[(fl, fl)] += servo_stiffness;

        let lever = frame * params.elbow_tangent(chain, theta[chain]);
        let axis = frame * params.joint_axis(chain);
        let elbow = frame * params.elbow(chain, theta[chain]);
        let attach = frame * (pose.p + params.mp_offset(chain));

        for s in 0..2 {
            let rod = 2 * chain + s;
            let sign = rod_sign(rod);
            let root = elbow + sign * h * axis;
            let tip = attach + sign * h * axis;
            let axis_dir = (tip - root) / params.l2;
            let element = crate::beam::BeamElement::lower_arm(params, &axis_dir);
            let m_e = element.mass_global();
            let k_e = element.stiffness_global();

            // Root node motion is carried by the joint angle: translation by
            // the elbow lever, rotation about the joint axis. Tip node DOFs
            // map one-to-one.
            let mut map = DMatrix::zeros(12, DOF_UNCONSTRAINED);
            for r in 0..3 {
                map[(r, ri)] = lever[r];
                map[(r, fl)] = lever[r];
                map[(3 + r, ri)] = axis[r];
                map[(3 + r, fl)] = axis[r];
            }
            for d in 0..6 {
                map[(6 + d, IDX_TIP + 6 * rod + d)] = 1.0;
            }

            m_u += map.transpose() * m_e * &map;
            k_u += map.transpose() * k_e * &map;
        }
    }

    // Platform rigid body. The rotational block is expressed in the Euler
    // triple, whose rate maps to the rotation vector through the
    // anti-diagonal flip, so the inertia order reverses.
    for d in 0..3 {
        m_u[(IDX_MP + d, IDX_MP + d)] += params.m_p;
    }
    m_u[(IDX_MP + 3, IDX_MP + 3)] += params.i_pz;
    m_u[(IDX_MP + 4, IDX_MP + 4)] += params.i_py;
    m_u[(IDX_MP + 5, IDX_MP + 5)] += params.i_px;

    Ok((m_u, k_u))
}

/// Deformation compatibility map from the 30 independent coordinates to the
/// 48 unconstrained ones.
#[derive(Debug, Clone)]
pub struct CompatibilityMatrix {
    pub t_dc: DMatrix<f64>,
    /// Per rod, the 3x6 block mapping platform displacement to the tip
    /// translation: `[I | -[r_b x] I_delta]`.
    pub tip_blocks: Vec<nalgebra::SMatrix<f64, 3, 6>>,
}

/// Compatibility matrix at a configuration.
///
/// The platform is translational-only, so the attachment vectors `r_b` do not
/// depend on the joint angles; the matrix is checked for full column rank.
pub fn build_compatibility(
    params: &RobotParams,
    theta: &Vector3<f64>,
) -> Result<CompatibilityMatrix> {
    build_compatibility_in_frame(params, theta, &Matrix3::identity())
}

pub(crate) fn build_compatibility_in_frame(
    params: &RobotParams,
    theta: &Vector3<f64>,
    frame: &Matrix3<f64>,
) -> Result<CompatibilityMatrix> {
    inverse_kinematics(
        &crate::kinematics::forward_kinematics(theta, params)?,
        params,
    )?;

    // Reduced coordinate order: [theta_ri(3), theta_fl(3), tip rotations
    // (3 per rod, 18), d_p(6)].
    let mut t = DMatrix::zeros(DOF_UNCONSTRAINED, DOF_REDUCED);
    for d in 0..6 {
        t[(d, d)] = 1.0;
    }
    let q_mp = 24;
    let mut tip_blocks = Vec::with_capacity(6);
    for rod in 0..6 {
        let rb = rod_rb(params, rod, frame);
        let block = -skew(&rb) * i_delta();
        let mut t_l = nalgebra::SMatrix::<f64, 3, 6>::zeros();
        for r in 0..3 {
            t_l[(r, r)] = 1.0;
            for c in 0..3 {
                t_l[(r, 3 + c)] = block[(r, c)];
            }
        }
        tip_blocks.push(t_l);

        let row0 = IDX_TIP + 6 * rod;
        for r in 0..3 {
            // Tip translation follows the platform.
            t[(row0 + r, q_mp + r)] = 1.0;
            for c in 0..3 {
                t[(row0 + r, q_mp + 3 + c)] = block[(r, c)];
            }
            // Tip rotation stays an independent coordinate.
            t[(row0 + 3 + r, 6 + 3 * rod + r)] = 1.0;
        }
    }
    for d in 0..6 {
        t[(IDX_MP + d, q_mp + d)] = 1.0;
    }

    let rank = t.clone().svd(false, false).rank(1e-9);
    if rank < DOF_REDUCED {
        return Err(Error::RankDeficiency {
            rank,
            expected: DOF_REDUCED,
        });
    }
    Ok(CompatibilityMatrix {
        t_dc: t,
        tip_blocks,
    })
}

#[derive(Debug, Clone)]
pub struct ModalOptions {
    /// Modes retained in the oscillator bank.
    pub n_modes: usize,
    /// Damping ratio assigned to every retained mode.
    pub zeta: f64,
}

impl Default for ModalOptions {
    fn default() -> Self {
        Self {
            n_modes: DEFAULT_BANK_MODES,
            zeta: DEFAULT_MODAL_ZETA,
        }
    }
}

/// Natural frequencies, mass-normalized shapes and oscillator-bank data.
#[derive(Debug, Clone)]
pub struct ModalModel {
    /// Ascending natural frequencies (Hz).
    pub frequencies_hz: Vec<f64>,
    /// Mass-normalized shapes in the clamped reduced coordinates, one column
    /// per retained frequency.
    pub shapes: DMatrix<f64>,
    /// Damping ratio per mode.
    pub damping: Vec<f64>,
    /// Base-excitation participation: modal force = participation . theta_ddot.
    pub participation: Vec<Vector3<f64>>,
    /// Tip z-displacement coefficient per mode and rod.
    pub tip_z: Vec<[f64; 6]>,
}

impl ModalModel {
    /// Keep only the first `n` modes.
    pub fn truncated(mut self, n: usize) -> Self {
        let n = n.min(self.frequencies_hz.len());
        self.frequencies_hz.truncate(n);
        self.damping.truncate(n);
        self.participation.truncate(n);
        self.tip_z.truncate(n);
        self.shapes = self.shapes.columns(0, n).into_owned();
        self
    }

    /// Synthetic single-mode bank, used for oracle cross-checks.
    pub fn single_mode(freq_hz: f64, zeta: f64) -> Self {
        Self {
            frequencies_hz: vec![freq_hz],
            shapes: DMatrix::zeros(0, 1),
            damping: vec![zeta],
            participation: vec![Vector3::new(1.0, 0.0, 0.0)],
            tip_z: vec![[1.0; 6]],
        }
    }
}

/// Generalized symmetric eigenproblem of the reduced model with the rigid
/// actuated coordinates clamped.
pub fn modal_analysis(
    m_u: &DMatrix<f64>,
    k_u: &DMatrix<f64>,
    compat: &CompatibilityMatrix,
    opts: &ModalOptions,
) -> Result<ModalModel> {
    let t = &compat.t_dc;
    let m_red = t.transpose() * m_u * t;
    let k_red = t.transpose() * k_u * t;

    let free = DOF_REDUCED - DOF_CLAMPED;
    let m_ff = m_red
        .view((DOF_CLAMPED, DOF_CLAMPED), (free, free))
        .into_owned();
    let k_ff = k_red
        .view((DOF_CLAMPED, DOF_CLAMPED), (free, free))
        .into_owned();
    let m_fp = m_red
        .view((DOF_CLAMPED, 0), (free, DOF_CLAMPED))
        .into_owned();

    let chol = nalgebra::Cholesky::new(m_ff).ok_or(Error::IndefiniteMass)?;
    let l = chol.l();
    // A = L^{-1} K L^{-T}, symmetric with the eigenvalues of (M, K).
    let li_k = l
        .solve_lower_triangular(&k_ff)
        .ok_or(Error::IndefiniteMass)?;
    let mut a = l
        .solve_lower_triangular(&li_k.transpose())
        .ok_or(Error::IndefiniteMass)?;
    a = (&a + a.transpose()) * 0.5;

    let eig = nalgebra::SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));

    let min_lambda = (2.0 * std::f64::consts::PI * MIN_FREQUENCY_HZ).powi(2);
    let mut freqs = Vec::new();
    let mut shapes_cols: Vec<DVector<f64>> = Vec::new();
    for &i in &order {
        let lambda = eig.eigenvalues[i];
        if lambda < min_lambda {
            continue; // rigid-body leakage
        }
        freqs.push(lambda.sqrt() / (2.0 * std::f64::consts::PI));
        // phi = L^{-T} v, mass-normalized by construction.
        let v = eig.eigenvectors.column(i).into_owned();
        let phi = l
            .transpose()
            .solve_upper_triangular(&v)
            .ok_or(Error::IndefiniteMass)?;
        shapes_cols.push(phi);
    }
    if freqs.is_empty() {
        return Err(Error::IndefiniteMass);
    }

    let kept = freqs.len().min(opts.n_modes.max(1));
    let mut shapes = DMatrix::zeros(free, kept);
    let mut participation = Vec::with_capacity(kept);
    let mut tip_z = Vec::with_capacity(kept);
    for m in 0..kept {
        shapes.set_column(m, &shapes_cols[m]);
        let phi = &shapes_cols[m];
        let beta = -(phi.transpose() * &m_fp);
        participation.push(Vector3::new(beta[(0, 0)], beta[(0, 1)], beta[(0, 2)]));

        // Platform displacement block sits at the tail of the free coords.
        let dp = phi.rows(free - 6, 6).into_owned();
        let mut tz = [0.0; 6];
        for rod in 0..6 {
            let tip = compat.tip_blocks[rod]
                * nalgebra::SVector::<f64, 6>::from_iterator(dp.iter().copied());
            tz[rod] = tip.z;
        }
        tip_z.push(tz);
    }
    freqs.truncate(kept);

    Ok(ModalModel {
        frequencies_hz: freqs,
        shapes,
        damping: vec![opts.zeta; kept],
        participation,
        tip_z,
    })
}

/// Modal model at a configuration given by joint angles.
pub fn modal_at(
    params: &RobotParams,
    theta: &Vector3<f64>,
    servo_stiffness: f64,
    opts: &ModalOptions,
) -> Result<ModalModel> {
    let (m_u, k_u) = assemble_unconstrained(params, theta, servo_stiffness)?;
    let compat = build_compatibility(params, theta)?;
    modal_analysis(&m_u, &k_u, &compat, opts)
}

/// First-frequency sample of the workspace map.
#[derive(Debug, Clone, Copy)]
pub struct FrequencySample {
    pub pose: MpPose,
    pub weight: f64,
    pub f1_hz: f64,
}

#[derive(Debug)]
pub struct FrequencyMap {
    pub samples: Vec<FrequencySample>,
    /// Poses where the per-sample analysis failed, with the failure text.
    pub failures: Vec<(MpPose, String)>,
}

impl FrequencyMap {
    pub fn min_hz(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| s.f1_hz)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_hz(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| s.f1_hz)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `(frequency, area weight)` pairs for the shaper J2 average.
    pub fn weighting(&self) -> Vec<(f64, f64)> {
        self.samples.iter().map(|s| (s.f1_hz, s.weight)).collect()
    }
}

/// First natural frequency over workspace samples, parallel per sample.
pub fn frequency_map(
    params: &RobotParams,
    samples: &[WorkspaceSample],
    servo_stiffness: f64,
    opts: &ModalOptions,
) -> Result<FrequencyMap> {
    frequency_map_exec(params, samples, servo_stiffness, opts, Exec::Parallel)
}

/// Sequential variant of [`frequency_map`], kept for benchmarking.
pub fn frequency_map_seq(
    params: &RobotParams,
    samples: &[WorkspaceSample],
    servo_stiffness: f64,
    opts: &ModalOptions,
) -> Result<FrequencyMap> {
    frequency_map_exec(params, samples, servo_stiffness, opts, Exec::Sequential)
}

fn frequency_map_exec(
    params: &RobotParams,
    samples: &[WorkspaceSample],
    servo_stiffness: f64,
    opts: &ModalOptions,
    exec: Exec,
) -> Result<FrequencyMap> {
    let items: Vec<WorkspaceSample> = samples.to_vec();
    let results = exec::map(exec, items, |sample| {
        let f1 = inverse_kinematics(&sample.pose, params)
            .and_then(|theta| modal_at(params, &theta, servo_stiffness, opts))
            .map(|m| m.frequencies_hz[0]);
        (sample, f1)
    });
    let mut map = FrequencyMap {
        samples: Vec::new(),
        failures: Vec::new(),
    };
    for (sample, f1) in results {
        match f1 {
            Ok(f1_hz) => map.samples.push(FrequencySample {
                pose: sample.pose,
                weight: sample.weight,
                f1_hz,
            }),
            Err(e) => map.failures.push((sample.pose, e.to_string())),
        }
    }
    if map.samples.is_empty() {
        return Err(Error::EmptyWorkspace);
    }
    Ok(map)
}

/// Response of the modal oscillator bank to a joint acceleration trace.
#[derive(Debug, Clone)]
pub struct OscillatorResponse {
    /// Peak |q_m| during the excitation, per mode.
    pub peak: Vec<f64>,
    /// Residual amplitude per mode: max |q_m| over a window of three decay
    /// time constants after the motion ends.
    pub residual: Vec<f64>,
    /// Free-decay envelope amplitude at `t_end` per mode,
    /// `sqrt(q^2 + ((qd + zeta*wn*q)/wd)^2)`. Phase-free residual measure;
    /// valid when the excitation has ended by `t_end`.
    pub residual_envelope: Vec<f64>,
    /// Residual of the tip z-displacements (modal superposition), per rod.
    pub tip_z_residual: [f64; 6],
}

/// Integrate the damped oscillator bank driven by the modal projection of the
/// joint accelerations. The trace is linearly interpolated; the window after
/// `t_end` is excitation-free.
pub fn residual_oscillator_response(
    modal: &ModalModel,
    accel: &[Vector3<f64>],
    dt: f64,
    t_end: f64,
) -> OscillatorResponse {
    let n_modes = modal.frequencies_hz.len();
    let mut peak = vec![0.0f64; n_modes];
    let mut residual = vec![0.0f64; n_modes];
    let mut envelope = vec![f64::NAN; n_modes];
    let mut tip_res = [0.0f64; 6];

    // Free-decay window of three time constants (capped at twenty periods of
    // the slowest mode for the lightly damped case), shared across modes so
    // the tip superposition has one time base.
    let window: f64 = modal
        .frequencies_hz
        .iter()
        .zip(&modal.damping)
        .map(|(&f, &z)| {
            let wn = 2.0 * std::f64::consts::PI * f;
            (3.0 / (z.max(1e-9) * wn)).min(20.0 / f)
        })
        .fold(0.0, f64::max);
    let t_total = t_end + window;

    let force = |mode: usize, t: f64| -> f64 {
        if accel.is_empty() || t > (accel.len() - 1) as f64 * dt {
            return 0.0;
        }
        let pos = (t / dt).max(0.0);
        let i = (pos.floor() as usize).min(accel.len() - 1);
        let j = (i + 1).min(accel.len() - 1);
        let frac = pos - i as f64;
        let a = accel[i] * (1.0 - frac) + accel[j] * frac;
        modal.participation[mode].dot(&a)
    };

    // Substep so the fastest retained mode is well resolved.
    let f_max = modal.frequencies_hz.iter().cloned().fold(1.0, f64::max);
    let sub = ((dt * f_max * 40.0).ceil() as usize).max(1);
    let h = dt / sub as f64;
    let n_steps = (t_total / h).ceil() as usize;

    let mut q = vec![0.0f64; n_modes];
    let mut qd = vec![0.0f64; n_modes];
    for step in 0..n_steps {
        let t = step as f64 * h;
        if t >= t_end {
            for rod in 0..6 {
                let z: f64 = (0..n_modes).map(|m| modal.tip_z[m][rod] * q[m]).sum();
                tip_res[rod] = tip_res[rod].max(z.abs());
            }
        }
        for m in 0..n_modes {
            let wn = 2.0 * std::f64::consts::PI * modal.frequencies_hz[m];
            let zeta = modal.damping[m];
            if t >= t_end && envelope[m].is_nan() {
                let wd = wn * (1.0 - zeta * zeta).sqrt();
                envelope[m] = (q[m] * q[m] + ((qd[m] + zeta * wn * q[m]) / wd).powi(2)).sqrt();
            }
            let acc = |x: f64, v: f64, tau: f64| force(m, tau) - 2.0 * zeta * wn * v - wn * wn * x;
            let (x, v) = (q[m], qd[m]);
            let k1x = v;
            let k1v = acc(x, v, t);
            let k2x = v + 0.5 * h * k1v;
            let k2v = acc(x + 0.5 * h * k1x, v + 0.5 * h * k1v, t + 0.5 * h);
            let k3x = v + 0.5 * h * k2v;
            let k3v = acc(x + 0.5 * h * k2x, v + 0.5 * h * k2v, t + 0.5 * h);
            let k4x = v + h * k3v;
            let k4v = acc(x + h * k3x, v + h * k3v, t + h);
            q[m] += h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
            qd[m] += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);

            peak[m] = peak[m].max(q[m].abs());
            if t + h >= t_end {
                residual[m] = residual[m].max(q[m].abs());
            }
        }
    }
    for (m, env) in envelope.iter_mut().enumerate() {
        if env.is_nan() {
            let wn = 2.0 * std::f64::consts::PI * modal.frequencies_hz[m];
            let zeta = modal.damping[m];
            let wd = wn * (1.0 - zeta * zeta).sqrt();
            *env = (q[m] * q[m] + ((qd[m] + zeta * wn * q[m]) / wd).powi(2)).sqrt();
        }
    }

    OscillatorResponse {
        peak,
        residual,
        residual_envelope: envelope,
        tip_z_residual: tip_res,
    }
}
