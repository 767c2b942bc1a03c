//! Reference trajectory generation, rest-to-rest in task space and mapped to
//! joint space through the inverse kinematics and Jacobian chain rule.
//!
//! Every generator starts and ends at rest with zero acceleration, so the
//! closed-loop iterations can reset to identical initial conditions and the
//! input shaper convolves cleanly. Time scaling is the minimal-degree quintic
//! `s(tau) = 10 tau^3 - 15 tau^4 + 6 tau^5`.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::kinematics::{inverse_kinematics, kin_solution, MpPose, RobotParams};
use crate::shaper::{shape_trajectory, ShaperSpec};

/// Uniformly sampled joint-space reference with consistent derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    pub dt: f64,
    pub theta: Vec<Vector3<f64>>,
    pub theta_dot: Vec<Vector3<f64>>,
    pub theta_ddot: Vec<Vector3<f64>>,
    /// Task-space origin of the path, when generated from one.
    pub origin: Option<MpPose>,
}

/// Reference values at one time instant.
#[derive(Debug, Clone, Copy)]
pub struct RefSample {
    pub theta: Vector3<f64>,
    pub theta_dot: Vector3<f64>,
    pub theta_ddot: Vector3<f64>,
}

impl ReferenceTrajectory {
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn duration(&self) -> f64 {
        (self.len().saturating_sub(1)) as f64 * self.dt
    }

    /// Largest joint rate over the grid.
    pub fn max_rate(&self) -> f64 {
        self.theta_dot.iter().map(|v| v.amax()).fold(0.0, f64::max)
    }

    /// Cubic Hermite interpolation between grid points, using the stored
    /// derivatives; positions interpolate with (theta, theta_dot), rates
    /// with (theta_dot, theta_ddot), accelerations linearly.
    pub fn sample(&self, t: f64) -> RefSample {
        let n = self.len();
        if n == 1 || t <= 0.0 {
            return self.grid_sample(0);
        }
        let t_max = self.duration();
        if t >= t_max {
            return self.grid_sample(n - 1);
        }
        let pos = t / self.dt;
        let i = (pos.floor() as usize).min(n - 2);
        let s = pos - i as f64;
        let h = self.dt;

        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        let hermite =
            |y0: &Vector3<f64>, d0: &Vector3<f64>, y1: &Vector3<f64>, d1: &Vector3<f64>| {
                y0 * h00 + d0 * (h * h10) + y1 * h01 + d1 * (h * h11)
            };

        let theta = hermite(
            &self.theta[i],
            &self.theta_dot[i],
            &self.theta[i + 1],
            &self.theta_dot[i + 1],
        );
        let theta_dot = hermite(
            &self.theta_dot[i],
            &self.theta_ddot[i],
            &self.theta_dot[i + 1],
            &self.theta_ddot[i + 1],
        );
        // Acceleration as the exact derivative of the rate interpolant, so the
        // feedforward stays consistent with the interpolated rate.
        let d00 = 6.0 * s * s - 6.0 * s;
        let d10 = 3.0 * s * s - 4.0 * s + 1.0;
        let d01 = 6.0 * s - 6.0 * s * s;
        let d11 = 3.0 * s * s - 2.0 * s;
        let theta_ddot = (self.theta_dot[i] * d00
            + self.theta_ddot[i] * (h * d10)
            + self.theta_dot[i + 1] * d01
            + self.theta_ddot[i + 1] * (h * d11))
            / h;
        RefSample {
            theta,
            theta_dot,
            theta_ddot,
        }
    }

    pub fn grid_sample(&self, i: usize) -> RefSample {
        RefSample {
            theta: self.theta[i],
            theta_dot: self.theta_dot[i],
            theta_ddot: self.theta_ddot[i],
        }
    }

    /// Rest-to-rest check at both ends.
    pub fn validate_rest_to_rest(&self, tol: f64) -> Result<()> {
        let ends = [0, self.len() - 1];
        for i in ends {
            if self.theta_dot[i].amax() > tol || self.theta_ddot[i].amax() > tol {
                return Err(Error::Config(format!(
                    "trajectory not at rest at sample {i}: rate {:.3e}, accel {:.3e}",
                    self.theta_dot[i].amax(),
                    self.theta_ddot[i].amax()
                )));
            }
        }
        Ok(())
    }

    /// Convolve all three traces with the impulse train; the result is longer
    /// by the shaper duration and still rest-to-rest.
    pub fn shaped(&self, shaper: &ShaperSpec) -> Result<ReferenceTrajectory> {
        let mut columns: Vec<Vec<f64>> = Vec::with_capacity(9);
        for field in [&self.theta, &self.theta_dot, &self.theta_ddot] {
            for axis in 0..3 {
                let raw: Vec<f64> = field.iter().map(|v| v[axis]).collect();
                columns.push(shape_trajectory(shaper, &raw, self.dt)?);
            }
        }
        let n = columns[0].len();
        let collect = |base: usize| -> Vec<Vector3<f64>> {
            (0..n)
                .map(|i| Vector3::new(columns[base][i], columns[base + 1][i], columns[base + 2][i]))
                .collect()
        };
        Ok(ReferenceTrajectory {
            dt: self.dt,
            theta: collect(0),
            theta_dot: collect(3),
            theta_ddot: collect(6),
            origin: self.origin,
        })
    }

    /// Write as CSV (t, theta, theta_dot, theta_ddot).
    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "t,th1,th2,th3,thd1,thd2,thd3,thdd1,thdd2,thdd3")?;
        for i in 0..self.len() {
            let t = i as f64 * self.dt;
            let q = self.theta[i];
            let qd = self.theta_dot[i];
            let qdd = self.theta_ddot[i];
            writeln!(
                w,
                "{t:.6},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                q.x, q.y, q.z, qd.x, qd.y, qd.z, qdd.x, qdd.y, qdd.z
            )?;
        }
        Ok(())
    }

    /// Read back a CSV written by [`Self::to_csv`] (or an external reference
    /// in the same layout).
    pub fn from_csv(path: &Path) -> Result<ReferenceTrajectory> {
        let file = std::fs::File::open(path)?;
        let reader = std::io::BufReader::new(file);
        let mut rows: Vec<[f64; 10]> = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| {
                    Error::Config(format!("bad trajectory CSV line {}: {e}", lineno + 1))
                })?;
            if fields.len() != 10 {
                return Err(Error::Config(format!(
                    "trajectory CSV line {} has {} fields, expected 10",
                    lineno + 1,
                    fields.len()
                )));
            }
            let mut row = [0.0; 10];
            row.copy_from_slice(&fields);
            rows.push(row);
        }
        if rows.len() < 2 {
            return Err(Error::Config(
                "trajectory CSV needs at least two samples".into(),
            ));
        }
        let dt = rows[1][0] - rows[0][0];
        if !(dt > 0.0) {
            return Err(Error::Config(
                "trajectory CSV time column must be increasing".into(),
            ));
        }
        let v3 = |r: &[f64; 10], o: usize| Vector3::new(r[o], r[o + 1], r[o + 2]);
        Ok(ReferenceTrajectory {
            dt,
            theta: rows.iter().map(|r| v3(r, 1)).collect(),
            theta_dot: rows.iter().map(|r| v3(r, 4)).collect(),
            theta_ddot: rows.iter().map(|r| v3(r, 7)).collect(),
            origin: None,
        })
    }
}

/// Quintic rest-to-rest scaling on [0, 1]: value, rate and curvature.
fn quintic(tau: f64) -> (f64, f64, f64) {
    let t2 = tau * tau;
    let t3 = t2 * tau;
    (
        10.0 * t3 - 15.0 * t2 * t2 + 6.0 * t2 * t3,
        30.0 * t2 - 60.0 * t3 + 30.0 * t2 * t2,
        60.0 * tau - 180.0 * t2 + 120.0 * t3,
    )
}

/// Task-space path samples mapped to joint space with analytic derivatives:
/// `qd = J^{-1} pd`, `qdd = J^{-1} (pdd - Jdot qd)`.
fn task_to_joint(
    params: &RobotParams,
    dt: f64,
    points: &[(Vector3<f64>, Vector3<f64>, Vector3<f64>)],
    origin: MpPose,
) -> Result<ReferenceTrajectory> {
    let mut theta = Vec::with_capacity(points.len());
    let mut theta_dot = Vec::with_capacity(points.len());
    let mut theta_ddot = Vec::with_capacity(points.len());
    for (p, pd, pdd) in points {
        let q = inverse_kinematics(&MpPose { p: *p }, params)?;
        let sol = kin_solution(&q, params)?;
        let j_lu = sol.j.lu();
        let qd = j_lu.solve(pd).ok_or(Error::SingularJacobian {
            cond: f64::INFINITY,
            bound: crate::kinematics::JACOBIAN_COND_BOUND,
        })?;
        let mut j_dot = nalgebra::Matrix3::zeros();
        for k in 0..3 {
            j_dot += sol.dj[k] * qd[k];
        }
        let qdd = j_lu
            .solve(&(pdd - j_dot * qd))
            .ok_or(Error::SingularJacobian {
                cond: f64::INFINITY,
                bound: crate::kinematics::JACOBIAN_COND_BOUND,
            })?;
        theta.push(q);
        theta_dot.push(qd);
        theta_ddot.push(qdd);
    }
    Ok(ReferenceTrajectory {
        dt,
        theta,
        theta_dot,
        theta_ddot,
        origin: Some(origin),
    })
}

/// Straight segments traversed with per-segment quintic timing, zero velocity
/// at the joints between segments. Segment durations split proportionally to
/// length.
fn polyline_trajectory(
    params: &RobotParams,
    waypoints: &[Vector3<f64>],
    cycle_time: f64,
    dt: f64,
) -> Result<ReferenceTrajectory> {
    if waypoints.len() < 2 {
        return Err(Error::Config(
            "polyline needs at least two waypoints".into(),
        ));
    }
    if !(dt > 0.0) || !(cycle_time > dt) {
        return Err(Error::Config("invalid cycle time or step".into()));
    }
    let lengths: Vec<f64> = waypoints.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
    let total: f64 = lengths.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Config("polyline has zero length".into()));
    }
    // Segment boundaries snapped to the grid so corners carry exact zeros.
    let n = (cycle_time / dt).round() as usize;
    let mut boundaries = vec![0usize];
    let mut acc = 0.0;
    for len in &lengths {
        acc += len / total;
        boundaries.push(((acc * n as f64).round() as usize).min(n));
    }

    let mut points = Vec::with_capacity(n + 1);
    for i in 0..=n {
        // Locate the segment containing sample i.
        let seg = boundaries
            .windows(2)
            .position(|b| i >= b[0] && (i < b[1] || (i == n && b[1] == n)))
            .unwrap_or(lengths.len() - 1);
        let (i0, i1) = (boundaries[seg], boundaries[seg + 1]);
        let span = (i1 - i0).max(1) as f64 * dt;
        let tau = ((i - i0) as f64 * dt / span).clamp(0.0, 1.0);
        let (s, sd, sdd) = quintic(tau);
        let a = waypoints[seg];
        let b = waypoints[seg + 1];
        let dir = b - a;
        points.push((a + dir * s, dir * (sd / span), dir * (sdd / (span * span))));
    }
    task_to_joint(params, dt, &points, MpPose { p: waypoints[0] })
}

/// Door-shaped pick-and-place path: lift, traverse, lower.
pub fn pick_and_place(
    params: &RobotParams,
    span: f64,
    lift: f64,
    cycle_time: f64,
    z_plane: f64,
    dt: f64,
) -> Result<ReferenceTrajectory> {
    if !(span > 0.0) || !(lift > 0.0) {
        return Err(Error::Config("span and lift must be positive".into()));
    }
    let start = Vector3::new(-span / 2.0, 0.0, z_plane);
    let waypoints = [
        start,
        start + Vector3::new(0.0, 0.0, lift),
        start + Vector3::new(span, 0.0, lift),
        start + Vector3::new(span, 0.0, 0.0),
    ];
    polyline_trajectory(params, &waypoints, cycle_time, dt)
}

/// Closed square path in the horizontal plane, corner dwell at zero velocity.
pub fn square_trajectory(
    params: &RobotParams,
    side: f64,
    z_plane: f64,
    cycle_time: f64,
    dt: f64,
) -> Result<ReferenceTrajectory> {
    if !(side > 0.0) {
        return Err(Error::Config("side must be positive".into()));
    }
    let h = side / 2.0;
    let corners = [
        Vector3::new(h, h, z_plane),
        Vector3::new(-h, h, z_plane),
        Vector3::new(-h, -h, z_plane),
        Vector3::new(h, -h, z_plane),
        Vector3::new(h, h, z_plane),
    ];
    polyline_trajectory(params, &corners, cycle_time, dt)
}

/// Butterfly radial law `r(phi) = e^{cos phi} - 2 cos 4phi + sin^5(phi/12)`
/// and its derivatives; closed and C2 over `phi` in `[0, 12 pi]`.
fn butterfly_r(phi: f64) -> (f64, f64, f64) {
    let ec = phi.cos().exp();
    let s = phi.sin();
    let c = phi.cos();
    let u = phi / 12.0;
    let (su, cu) = u.sin_cos();
    let r = ec - 2.0 * (4.0 * phi).cos() + su.powi(5);
    let rp = -s * ec + 8.0 * (4.0 * phi).sin() + 5.0 / 12.0 * su.powi(4) * cu;
    let rpp = ec * (s * s - c)
        + 32.0 * (4.0 * phi).cos()
        + 5.0 / 144.0 * (4.0 * su.powi(3) * cu * cu - su.powi(5));
    (r, rp, rpp)
}

/// Planar point and derivatives of the scaled butterfly at angle `phi`.
fn butterfly_point(phi: f64, scale: f64, z: f64) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
    let (r, rp, rpp) = butterfly_r(phi);
    let (s, c) = phi.sin_cos();
    let p = Vector3::new(scale * r * c, scale * r * s, z);
    let dp = Vector3::new(scale * (rp * c - r * s), scale * (rp * s + r * c), 0.0);
    let ddp = Vector3::new(
        scale * (rpp * c - 2.0 * rp * s - r * c),
        scale * (rpp * s + 2.0 * rp * c - r * s),
        0.0,
    );
    (p, dp, ddp)
}

const BUTTERFLY_PHI_END: f64 = 12.0 * std::f64::consts::PI;

/// Regularization of the arc-length speed law. The butterfly has near-cusps
/// (|dp/dphi| dips to ~1% of its mean) where a strict constant-speed
/// traversal would demand unbounded accelerations, so the parameterization
/// runs the quintic profile along the regularized arc length
/// `ds~ = sqrt(|dp/dphi|^2 + g0^2) dphi`; the path speed dips smoothly near
/// the cusps and equals the nominal profile elsewhere.
const BUTTERFLY_SPEED_FLOOR_FRACTION: f64 = 0.5;

/// Butterfly curve traversed with a rest-to-rest quintic speed profile along
/// (regularized) arc length: the parameter solves
/// `dphi/dt = sdot~(t)/g~(phi)`.
pub fn butterfly_trajectory(
    params: &RobotParams,
    scale: f64,
    z_plane: f64,
    cycle_time: f64,
    dt: f64,
) -> Result<ReferenceTrajectory> {
    if !(scale > 0.0) {
        return Err(Error::Config("scale must be positive".into()));
    }
    if !(dt > 0.0) || !(cycle_time > dt) {
        return Err(Error::Config("invalid cycle time or step".into()));
    }
    // Plain arc length first (fixes the regularization floor), then the
    // regularized length, both by composite Simpson quadrature.
    let quad_n = 24_000; // even
    let hq = BUTTERFLY_PHI_END / quad_n as f64;
    let simpson = |f: &dyn Fn(f64) -> f64| -> f64 {
        let mut total = f(0.0) + f(BUTTERFLY_PHI_END);
        for i in 1..quad_n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            total += w * f(i as f64 * hq);
        }
        total * hq / 3.0
    };
    let speed = |phi: f64| butterfly_point(phi, scale, z_plane).1.norm();
    let arc_plain = simpson(&speed);
    let g0 = BUTTERFLY_SPEED_FLOOR_FRACTION * arc_plain / BUTTERFLY_PHI_END;
    let reg = move |phi: f64| (speed(phi).powi(2) + g0 * g0).sqrt();
    let arc = simpson(&reg);

    let n = (cycle_time / dt).round() as usize;
    let mut points = Vec::with_capacity(n + 1);
    let mut phi = 0.0f64;
    for i in 0..=n {
        let t = i as f64 * dt;
        let tau = (t / cycle_time).clamp(0.0, 1.0);
        let (_, sd, sdd) = quintic(tau);
        let s_dot = sd * arc / cycle_time;
        let s_ddot = sdd * arc / (cycle_time * cycle_time);

        let (p, dp, ddp) = butterfly_point(phi, scale, z_plane);
        let g_tilde = reg(phi);
        let phi_dot = s_dot / g_tilde;
        // dg~/dphi = (dp . ddp)/g~
        let dg = dp.dot(&ddp) / g_tilde;
        let phi_ddot = (s_ddot - dg * phi_dot * phi_dot) / g_tilde;
        points.push((p, dp * phi_dot, ddp * (phi_dot * phi_dot) + dp * phi_ddot));

        if i < n {
            // Advance phi on dphi/dt = sdot~(t)/g~(phi), substepped so each
            // RK4 stage moves phi by a small increment.
            let rate = |tt: f64, ph: f64| -> f64 {
                let tau = (tt / cycle_time).clamp(0.0, 1.0);
                let (_, sd, _) = quintic(tau);
                sd * arc / cycle_time / reg(ph)
            };
            let max_rate = s_dot.abs().max(s_ddot.abs() * dt) / g0;
            let sub = ((max_rate * dt / 5e-3).ceil() as usize).max(1);
            let h = dt / sub as f64;
            for k in 0..sub {
                let tk = t + k as f64 * h;
                let k1 = rate(tk, phi);
                let k2 = rate(tk + 0.5 * h, phi + 0.5 * h * k1);
                let k3 = rate(tk + 0.5 * h, phi + 0.5 * h * k2);
                let k4 = rate(tk + h, phi + h * k3);
                phi += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
        }
    }
    task_to_joint(params, dt, &points, MpPose::new(0.0, 0.0, z_plane))
}
