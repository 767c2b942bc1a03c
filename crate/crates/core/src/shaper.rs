//! Three-impulse optimal input shaper.
//!
//! The shaper places impulses at `t = 0, T, 2T` with `T = k_t * T_d / 2`,
//! `T_d` the damped period at the design frequency. The amplitudes are
//! normalized so the train has unit DC gain and a vibration notch at the
//! design frequency for any lag coefficient `k_t`. Design quality is scored
//! by the residual-vibration percentage over a frequency band: `J1` the worst
//! case, `J2` a workspace-weighted average, combined as `J = w1*J1 + w2*J2`
//! and minimized by exhaustive grid search.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Exec};

/// Impulse amplitudes/times plus the design triple they were generated from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShaperSpec {
    pub amplitudes: [f64; 3],
    pub times: [f64; 3],
    pub f_n_hz: f64,
    pub zeta_d: f64,
    pub k_t: f64,
}

impl ShaperSpec {
    /// A single unit impulse at t = 0 (the "no shaping" element).
    pub fn unit_impulse() -> Self {
        Self {
            amplitudes: [1.0, 0.0, 0.0],
            times: [0.0, 0.0, 0.0],
            f_n_hz: 0.0,
            zeta_d: 0.0,
            k_t: 0.0,
        }
    }

    /// Duration of the impulse train (time of the last impulse).
    pub fn duration(&self) -> f64 {
        self.times[2]
    }
}

/// Shaper coefficients for a design triple.
///
/// `T = k_t * T_d / 2` with `0 <= k_t <= 1`; `k_t = 0` collapses all three
/// impulses onto t = 0 and is rejected as degenerate (the train reduces to a
/// single unit impulse).
pub fn make_shaper(f_n_hz: f64, zeta_d: f64, k_t: f64) -> Result<ShaperSpec> {
    if !(f_n_hz > 0.0) {
        return Err(Error::Config(format!(
            "shaper natural frequency must be positive, got {f_n_hz}"
        )));
    }
    if !(0.0..1.0).contains(&zeta_d) {
        return Err(Error::Config(format!(
            "shaper damping ratio must be in [0, 1), got {zeta_d}"
        )));
    }
    if !(0.0..=1.0).contains(&k_t) {
        return Err(Error::Config(format!(
            "shaper lag coefficient must be in [0, 1], got {k_t}"
        )));
    }
    if k_t == 0.0 {
        return Err(Error::DegenerateShaper);
    }
    let omega_n = 2.0 * std::f64::consts::PI * f_n_hz;
    let omega_d = omega_n * (1.0 - zeta_d * zeta_d).sqrt();
    let t_d = 2.0 * std::f64::consts::PI / omega_d;
    let t = k_t * t_d / 2.0;

    let decay = (-zeta_d * omega_n * t).exp();
    // Xi = 1 - 2 e cos + e^2 rewritten as (1-e)^2 + 2e(1-cos) from stable
    // pieces, since the direct form cancels catastrophically for small k_t.
    let one_minus_decay = -(-zeta_d * omega_n * t).exp_m1();
    let one_minus_cos = 2.0 * (omega_d * t / 2.0).sin().powi(2);
    let xi = one_minus_decay * one_minus_decay + 2.0 * decay * one_minus_cos;
    let a1 = 1.0 / xi;
    let a3 = decay * decay / xi;
    // A2 = -2 e cos/Xi = 1 - A1 - A3 exactly; the difference form keeps the
    // unit DC gain to rounding even when the amplitudes are huge.
    let a2 = 1.0 - a1 - a3;
    Ok(ShaperSpec {
        amplitudes: [a1, a2, a3],
        times: [0.0, t, 2.0 * t],
        f_n_hz,
        zeta_d,
        k_t,
    })
}

/// Residual-vibration percentage of the impulse train evaluated on an
/// oscillator with natural frequency `omega_n` (rad/s) and damping `zeta`:
/// the amplitude remaining after the last impulse, relative to the response
/// to a single unit impulse.
pub fn residual_percentage(shaper: &ShaperSpec, omega_n: f64, zeta: f64) -> f64 {
    let omega_d = omega_n * (1.0 - zeta * zeta).sqrt();
    let mut c = 0.0;
    let mut s = 0.0;
    for i in 0..3 {
        let amp = shaper.amplitudes[i] * (zeta * omega_n * shaper.times[i]).exp();
        c += amp * (omega_d * shaper.times[i]).cos();
        s += amp * (omega_d * shaper.times[i]).sin();
    }
    (-zeta * omega_n * shaper.times[2]).exp() * (c * c + s * s).sqrt()
}

/// Weighted evaluation band for the J2 average: `(frequency Hz, weight)`.
pub type FreqWeighting = Vec<(f64, f64)>;

/// Uniform weighting over `[f_min, f_max]` on `n` points.
pub fn uniform_weighting(f_min: f64, f_max: f64, n: usize) -> FreqWeighting {
    (0..n)
        .map(|i| {
            (
                f_min + (f_max - f_min) * i as f64 / (n - 1).max(1) as f64,
                1.0,
            )
        })
        .collect()
}

/// Worst-case and average residual objectives with their weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShaperObjective {
    pub j1: f64,
    pub j2: f64,
    pub w1: f64,
    pub w2: f64,
}

impl ShaperObjective {
    pub fn total(&self) -> f64 {
        self.w1 * self.j1 + self.w2 * self.j2
    }
}

/// Grid step used for the inner `max V` of J1.
pub const J1_GRID_STEP_HZ: f64 = 0.01;

fn assert_weights(w1: f64, w2: f64) -> Result<()> {
    if w1 < 0.0 || w2 < 0.0 || (w1 + w2 - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "objective weights must be nonnegative and sum to 1, got {w1}, {w2}"
        )));
    }
    Ok(())
}

fn eval_spec(
    spec: &ShaperSpec,
    weighting: &[(f64, f64)],
    f_range: (f64, f64),
    zeta_design: f64,
    w1: f64,
    w2: f64,
) -> ShaperObjective {
    let two_pi = 2.0 * std::f64::consts::PI;
    let n1 = ((f_range.1 - f_range.0) / J1_GRID_STEP_HZ).round() as usize;
    let mut j1 = 0.0f64;
    for i in 0..=n1 {
        let f = f_range.0 + i as f64 * J1_GRID_STEP_HZ;
        j1 = j1.max(residual_percentage(spec, two_pi * f, zeta_design));
    }
    let wsum: f64 = weighting.iter().map(|(_, w)| w).sum();
    let j2 = weighting
        .iter()
        .map(|(f, w)| w * residual_percentage(spec, two_pi * f, zeta_design))
        .sum::<f64>()
        / wsum;
    ShaperObjective { j1, j2, w1, w2 }
}

/// Weighted performance index of a design `(f_n, k_t)`.
///
/// `J1` is the maximum of `V` over a dense grid on `f_range`; `J2` is the
/// weighted average of `V` over `weighting` (workspace-area weights, or a
/// uniform fallback).
pub fn evaluate_objective(
    f_n_hz: f64,
    k_t: f64,
    weighting: &[(f64, f64)],
    f_range: (f64, f64),
    zeta_design: f64,
    w1: f64,
    w2: f64,
) -> Result<ShaperObjective> {
    if weighting.is_empty() {
        return Err(Error::EmptyWeighting);
    }
    assert_weights(w1, w2)?;
    if !(f_range.1 > f_range.0) {
        return Err(Error::Config("invalid frequency range".into()));
    }
    let spec = match make_shaper(f_n_hz, zeta_design, k_t) {
        Ok(s) => s,
        // k_t = 0: the train degenerates to a unit impulse with V = 1.
        Err(Error::DegenerateShaper) => ShaperSpec::unit_impulse(),
        Err(e) => return Err(e),
    };
    Ok(eval_spec(&spec, weighting, f_range, zeta_design, w1, w2))
}

/// Search configuration for [`optimize_shaper`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShaperDesign {
    pub f_range: (f64, f64),
    pub k_range: (f64, f64),
    pub grid: f64,
    pub zeta_design: f64,
    pub w1: f64,
    pub w2: f64,
}

impl Default for ShaperDesign {
    fn default() -> Self {
        Self {
            f_range: (16.0, 24.0),
            k_range: (0.0, 1.0),
            grid: 0.01,
            zeta_design: 0.075,
            w1: 0.5,
            w2: 0.5,
        }
    }
}

/// One row of the exported J surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceRow {
    pub f_n_hz: f64,
    pub k_t: f64,
    pub j1: f64,
    pub j2: f64,
    pub j: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub f_n_hz: f64,
    pub k_t: f64,
    pub objective: ShaperObjective,
    pub spec: ShaperSpec,
    pub surface: Vec<SurfaceRow>,
}

/// Exhaustive grid search over `(f_n, k_t)`; deterministic tie-breaking by
/// lowest `f_n`, then lowest `k_t`.
pub fn optimize_shaper(design: &ShaperDesign, weighting: &[(f64, f64)]) -> Result<OptimizeResult> {
    optimize_shaper_exec(design, weighting, Exec::Parallel)
}

/// Sequential variant of [`optimize_shaper`], kept for benchmarking.
pub fn optimize_shaper_seq(
    design: &ShaperDesign,
    weighting: &[(f64, f64)],
) -> Result<OptimizeResult> {
    optimize_shaper_exec(design, weighting, Exec::Sequential)
}

fn optimize_shaper_exec(
    design: &ShaperDesign,
    weighting: &[(f64, f64)],
    exec: Exec,
) -> Result<OptimizeResult> {
    if weighting.is_empty() {
        return Err(Error::EmptyWeighting);
    }
    assert_weights(design.w1, design.w2)?;
    if !(design.grid > 0.0) {
        return Err(Error::Config("grid step must be positive".into()));
    }
    let nf = ((design.f_range.1 - design.f_range.0) / design.grid).round() as usize;
    let nk = ((design.k_range.1 - design.k_range.0) / design.grid).round() as usize;

    let points: Vec<(f64, f64)> = (0..=nf)
        .flat_map(|i| {
            let f = design.f_range.0 + i as f64 * design.grid;
            (0..=nk).map(move |j| (f, design.k_range.0 + j as f64 * design.grid))
        })
        .collect();

    let rows = exec::map(exec, points, |(f, k)| {
        let obj = evaluate_objective(
            f,
            k,
            weighting,
            design.f_range,
            design.zeta_design,
            design.w1,
            design.w2,
        )
        .expect("grid point evaluation");
        SurfaceRow {
            f_n_hz: f,
            k_t: k,
            j1: obj.j1,
            j2: obj.j2,
            j: obj.total(),
        }
    });

    // Sequential argmin so ties resolve to lowest f_n, then lowest k_t,
    // independent of thread count.
    let mut best = &rows[0];
    for row in &rows[1..] {
        if row.j < best.j {
            best = row;
        }
    }
    let objective = ShaperObjective {
        j1: best.j1,
        j2: best.j2,
        w1: design.w1,
        w2: design.w2,
    };
    let spec = make_shaper(best.f_n_hz, design.zeta_design, best.k_t)
        .unwrap_or_else(|_| ShaperSpec::unit_impulse());
    Ok(OptimizeResult {
        f_n_hz: best.f_n_hz,
        k_t: best.k_t,
        objective,
        spec,
        surface: rows,
    })
}

/// Convolve a uniformly sampled trajectory with the impulse train.
///
/// Impulse times are rounded to the sample grid (`t2` to the nearest sample,
/// `t3 = 2 t2` kept exact) and the signal is held at its boundary values, so
/// constant signals pass through unchanged and the final value is preserved.
/// The output is longer by the shaper duration.
pub fn shape_trajectory(shaper: &ShaperSpec, trajectory: &[f64], dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::Config("sample step must be positive".into()));
    }
    if trajectory.is_empty() {
        return Ok(Vec::new());
    }
    let k2 = (shaper.times[1] / dt).round() as usize;
    if shaper.times[1] > 0.0 && k2 == 0 {
        return Err(Error::ImpulseAliasing {
            t2: shaper.times[1],
            dt,
        });
    }
    let offsets = [0usize, k2, 2 * k2];
    let n = trajectory.len();
    let n_out = n + offsets[2];
    let mut out = vec![0.0; n_out];
    for (amp, off) in shaper.amplitudes.iter().zip(offsets) {
        for i in 0..n_out {
            let src = i.saturating_sub(off).min(n - 1);
            out[i] += amp * trajectory[src];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn amplitudes_sum_to_one() {
        let mut rng = StdRng::seed_from_u64(2);
        for _ in 0..1000 {
            let f = rng.random_range(1.0..100.0);
            let z = rng.random_range(0.0..0.5);
            let k = rng.random_range(0.01..1.0);
            let s = make_shaper(f, z, k).unwrap();
            let sum: f64 = s.amplitudes.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "sum {sum} at ({f}, {z}, {k})");
            assert_eq!(s.times[0], 0.0);
            assert!((s.times[2] - 2.0 * s.times[1]).abs() < 1e-15);
        }
    }

    #[test]
    fn undamped_full_lag_recovers_zvd_pattern() {
        let s = make_shaper(10.0, 0.0, 1.0).unwrap();
        assert!((s.amplitudes[0] - 0.25).abs() < 1e-12);
        assert!((s.amplitudes[1] - 0.5).abs() < 1e-12);
        assert!((s.amplitudes[2] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn reference_design_triple_matches_direct_formula() {
        // Independent high-precision re-evaluation of the coefficient
        // formulas at the reference design point (16.4 Hz, 0.075, 0.83).
        let (f, z, k) = (16.4, 0.075, 0.83);
        let s = make_shaper(f, z, k).unwrap();
        let wn = 2.0 * std::f64::consts::PI * f;
        let wd = wn * (1.0f64 - z * z).sqrt();
        let t = k * (2.0 * std::f64::consts::PI / wd) / 2.0;
        let e1 = (-z * wn * t).exp();
        let xi = 1.0 - 2.0 * e1 * (wd * t).cos() + e1 * e1;
        assert!((s.times[1] - t).abs() < 1e-15);
        assert!((s.amplitudes[0] - 1.0 / xi).abs() < 1e-12);
        assert!((s.amplitudes[1] + 2.0 * e1 * (wd * t).cos() / xi).abs() < 1e-12);
        assert!((s.amplitudes[2] - e1 * e1 / xi).abs() < 1e-12);
    }

    #[test]
    fn degenerate_shaper_rejected() {
        match make_shaper(16.0, 0.075, 0.0) {
            Err(Error::DegenerateShaper) => {}
            other => panic!("expected DegenerateShaper, got {other:?}"),
        }
    }

    #[test]
    fn unit_impulse_has_unit_residual() {
        let s = ShaperSpec::unit_impulse();
        let v = residual_percentage(&s, 2.0 * std::f64::consts::PI * 20.0, 0.075);
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn residual_vanishes_at_design_point() {
        let s = make_shaper(18.0, 0.075, 0.7).unwrap();
        let v = residual_percentage(&s, 2.0 * std::f64::consts::PI * 18.0, 0.075);
        assert!(v < 1e-12, "V at design point = {v}");
    }

    /// Time-domain oracle: integrate the damped oscillator driven by the
    /// impulse train (velocity jumps at exact impulse times, RK4 between
    /// events) and measure the envelope amplitude right after the last
    /// impulse, relative to the single-impulse response.
    pub(super) fn simulated_residual(shaper: &ShaperSpec, omega_n: f64, zeta: f64) -> f64 {
        let omega_d = omega_n * (1.0 - zeta * zeta).sqrt();
        let accel = |x: f64, v: f64| -2.0 * zeta * omega_n * v - omega_n * omega_n * x;
        let mut x = 0.0f64;
        let mut v = 0.0f64;
        let period = 2.0 * std::f64::consts::PI / omega_d;
        for seg in 0..2 {
            v += shaper.amplitudes[seg]; // impulse
            let t_seg = shaper.times[seg + 1] - shaper.times[seg];
            let steps = ((t_seg / period) * 2000.0).ceil().max(1.0) as usize;
            let h = t_seg / steps as f64;
            for _ in 0..steps {
                let (k1x, k1v) = (v, accel(x, v));
                let (k2x, k2v) = (
                    v + 0.5 * h * k1v,
                    accel(x + 0.5 * h * k1x, v + 0.5 * h * k1v),
                );
                let (k3x, k3v) = (
                    v + 0.5 * h * k2v,
                    accel(x + 0.5 * h * k2x, v + 0.5 * h * k2v),
                );
                let (k4x, k4v) = (v + h * k3v, accel(x + h * k3x, v + h * k3v));
                x += h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
                v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
            }
        }
        v += shaper.amplitudes[2];
        // Free-decay envelope amplitude at t3; a single unit impulse at t = 0
        // has envelope 1/omega_d at its own reference time.
        let env = (x * x + ((v + zeta * omega_n * x) / omega_d).powi(2)).sqrt();
        env * omega_d
    }

    #[test]
    fn residual_formula_matches_time_domain_oracle() {
        let mut rng = StdRng::seed_from_u64(17);
        for _ in 0..100 {
            let f = rng.random_range(5.0..50.0);
            let z = rng.random_range(0.0..0.3);
            let k = rng.random_range(0.1..1.0);
            let s = make_shaper(f, z, k).unwrap();
            let wn = 2.0 * std::f64::consts::PI * f;
            let v_formula = residual_percentage(&s, wn, z);
            let v_sim = simulated_residual(&s, wn, z);
            assert!(
                (v_formula - v_sim).abs() <= 0.02 * v_sim.max(0.02),
                "V formula {v_formula} vs simulated {v_sim} at ({f}, {z}, {k})"
            );
        }
    }

    #[test]
    fn residual_curve_is_continuous() {
        let s = make_shaper(18.0, 0.075, 0.8).unwrap();
        let mut prev: Option<f64> = None;
        for i in 0..=4000 {
            let f = 10.0 + 20.0 * i as f64 / 4000.0;
            let v = residual_percentage(&s, 2.0 * std::f64::consts::PI * f, 0.075);
            if let Some(pv) = prev {
                // Local Lipschitz bound: |dV/df| is below ~2*pi*t3 + slack.
                let lip = 2.0 * (2.0 * std::f64::consts::PI * s.times[2] + 1.0);
                assert!((v - pv).abs() <= lip * (20.0 / 4000.0));
            }
            prev = Some(v);
        }
    }

    #[test]
    fn degenerate_weighting_reduces_j2_to_point_value() {
        let obj =
            evaluate_objective(18.0, 0.8, &[(19.5, 1.0)], (16.0, 24.0), 0.075, 0.5, 0.5).unwrap();
        let s = make_shaper(18.0, 0.075, 0.8).unwrap();
        let v = residual_percentage(&s, 2.0 * std::f64::consts::PI * 19.5, 0.075);
        assert!((obj.j2 - v).abs() < 1e-15);
        assert!(obj.j1 >= obj.j2);
    }

    #[test]
    fn empty_weighting_rejected() {
        match evaluate_objective(18.0, 0.8, &[], (16.0, 24.0), 0.075, 0.5, 0.5) {
            Err(Error::EmptyWeighting) => {}
            other => panic!("expected EmptyWeighting, got {other:?}"),
        }
    }

    #[test]
    fn optimum_beats_centered_zvd_equivalent() {
        let w = uniform_weighting(16.0, 24.0, 81);
        let at = |f: f64, k: f64| {
            evaluate_objective(f, k, &w, (16.0, 24.0), 0.075, 0.5, 0.5)
                .unwrap()
                .total()
        };
        assert!(at(16.4, 0.83) < at(20.0, 1.0));
    }

    #[test]
    fn coarse_grid_search_matches_brute_force() {
        let design = ShaperDesign {
            grid: 0.1,
            ..ShaperDesign::default()
        };
        let w = uniform_weighting(16.0, 24.0, 41);
        let res = optimize_shaper(&design, &w).unwrap();
        // Independent re-scan.
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..=((24.0f64 - 16.0) / 0.1).round() as usize {
            let f = 16.0 + i as f64 * 0.1;
            for jj in 0..=(1.0f64 / 0.1).round() as usize {
                let k = jj as f64 * 0.1;
                let obj = evaluate_objective(f, k, &w, (16.0, 24.0), 0.075, 0.5, 0.5).unwrap();
                if obj.total() < best.0 {
                    best = (obj.total(), f, k);
                }
            }
        }
        assert_eq!(res.f_n_hz, best.1);
        assert_eq!(res.k_t, best.2);
        assert_eq!(res.surface.len(), 81 * 11);
    }

    #[test]
    fn single_frequency_range_pins_optimal_frequency() {
        // Degenerate band: the band maximum and average both reduce to V at
        // the single frequency, which the shaper can null exactly there.
        let design = ShaperDesign {
            f_range: (19.0, 19.02),
            grid: 0.01,
            ..ShaperDesign::default()
        };
        let w = vec![(19.0, 1.0)];
        let res = optimize_shaper(&design, &w).unwrap();
        assert!((res.f_n_hz - 19.0).abs() < 0.011);
        assert!(res.objective.total() < 0.02);
    }

    #[test]
    fn parallel_and_sequential_search_agree() {
        let design = ShaperDesign {
            grid: 0.25,
            ..ShaperDesign::default()
        };
        let w = uniform_weighting(16.0, 24.0, 17);
        let a = optimize_shaper(&design, &w).unwrap();
        let b = optimize_shaper_seq(&design, &w).unwrap();
        assert_eq!(a.f_n_hz, b.f_n_hz);
        assert_eq!(a.k_t, b.k_t);
        assert_eq!(a.surface.len(), b.surface.len());
    }

    #[test]
    fn constant_trajectory_unchanged() {
        let s = make_shaper(16.4, 0.075, 0.83).unwrap();
        let traj = vec![0.7; 200];
        let out = shape_trajectory(&s, &traj, 1e-3).unwrap();
        assert_eq!(out.len(), 200 + 2 * (s.times[1] / 1e-3).round() as usize);
        for v in &out {
            assert!((v - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn step_becomes_three_level_staircase() {
        let s = make_shaper(10.0, 0.1, 0.8).unwrap();
        let dt = 1e-3;
        let mut traj = vec![0.0; 400];
        for v in traj.iter_mut().skip(1) {
            *v = 1.0;
        }
        let out = shape_trajectory(&s, &traj, dt).unwrap();
        let k2 = (s.times[1] / dt).round() as usize;
        let a = s.amplitudes;
        assert!((out[k2 / 2] - a[0]).abs() < 1e-12);
        assert!((out[k2 + k2 / 2] - (a[0] + a[1])).abs() < 1e-12);
        assert!((out[2 * k2 + k2 / 2] - 1.0).abs() < 1e-12);
        assert!((out.last().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn endpoints_preserved() {
        let s = make_shaper(16.4, 0.075, 0.83).unwrap();
        let dt = 1e-3;
        let traj: Vec<f64> = (0..500).map(|i| 0.3 + 0.2 * (i as f64 / 499.0)).collect();
        let out = shape_trajectory(&s, &traj, dt).unwrap();
        assert!((out[0] - traj[0]).abs() < 1e-12);
        assert!((out.last().unwrap() - traj.last().unwrap()).abs() < 1e-12);
    }

    #[test]
    fn aliasing_rejected() {
        let s = make_shaper(100.0, 0.0, 0.05).unwrap();
        match shape_trajectory(&s, &[0.0, 1.0], 0.01) {
            Err(Error::ImpulseAliasing { .. }) => {}
            other => panic!("expected ImpulseAliasing, got {other:?}"),
        }
    }
}
