//! Subcommand implementations and CSV emission.
//!
//! Column orders are fixed and documented in the README; floats print with
//! enough digits that reruns with identical configs are byte-identical.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};

use delta_ilc::config::ExperimentConfig;
use delta_ilc::control::IterationMemory;
use delta_ilc::kinematics::inverse_kinematics;
use delta_ilc::kinematics::sample_workspace;
use delta_ilc::modal::{frequency_map, modal_at, FrequencyMap};
use delta_ilc::shaper::{make_shaper, optimize_shaper, uniform_weighting, OptimizeResult};
use delta_ilc::sim::{residual_vibration_report, run_ilc_from, IterationRecord, SimResult};
use delta_ilc::trajectory::ReferenceTrajectory;

fn write_manifest(config: &ExperimentConfig, name: &str) -> Result<()> {
    let path = config.output.dir.join(name);
    std::fs::write(&path, config.manifest())
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn csv_writer(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(
        File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

/// Workspace frequency map: `freq_map.csv` with columns x, y, z, f1_hz.
pub fn freq_map(config: &ExperimentConfig) -> Result<()> {
    write_manifest(config, "freq_map_manifest.toml")?;
    let map = compute_map(config)?;
    let mut w = csv_writer(&config.output.dir, "freq_map.csv")?;
    writeln!(w, "x,y,z,f1_hz")?;
    for s in &map.samples {
        writeln!(
            w,
            "{:.6},{:.6},{:.6},{:.9}",
            s.pose.p.x, s.pose.p.y, s.pose.p.z, s.f1_hz
        )?;
    }
    w.flush()?;
    for (pose, reason) in &map.failures {
        eprintln!(
            "note: sample ({:.3}, {:.3}, {:.3}) skipped: {reason}",
            pose.p.x, pose.p.y, pose.p.z
        );
    }
    println!(
        "freq-map: {} samples, f1 in [{:.2}, {:.2}] Hz -> {}",
        map.samples.len(),
        map.min_hz(),
        map.max_hz(),
        config.output.dir.join("freq_map.csv").display()
    );
    Ok(())
}

fn compute_map(config: &ExperimentConfig) -> Result<FrequencyMap> {
    let samples = sample_workspace(&config.robot, &config.workspace)?;
    Ok(frequency_map(
        &config.robot,
        &samples,
        config.modal.servo_stiffness,
        &config.modal.options(),
    )?)
}

/// Grid-search shaper design: `shaper_spec.toml` plus `j_surface.csv` with
/// columns f_n_hz, k_t, j1, j2, j.
pub fn design_shaper(config: &ExperimentConfig) -> Result<()> {
    write_manifest(config, "design_shaper_manifest.toml")?;
    let weighting = match config.shaper.weighting.as_str() {
        "uniform" => uniform_weighting(
            config.shaper.design.f_range.0,
            config.shaper.design.f_range.1,
            config.shaper.weighting_points,
        ),
        "workspace" => compute_map(config)?.weighting(),
        other => bail!("unknown shaper weighting '{other}' (uniform|workspace)"),
    };
    let result: OptimizeResult = optimize_shaper(&config.shaper.design, &weighting)?;

    let mut w = csv_writer(&config.output.dir, "j_surface.csv")?;
    writeln!(w, "f_n_hz,k_t,j1,j2,j")?;
    for row in &result.surface {
        writeln!(
            w,
            "{:.4},{:.4},{:.12e},{:.12e},{:.12e}",
            row.f_n_hz, row.k_t, row.j1, row.j2, row.j
        )?;
    }
    w.flush()?;

    let spec_toml = toml::to_string_pretty(&result.spec)
        .unwrap_or_else(|e| format!("# serialization failed: {e}"));
    std::fs::write(config.output.dir.join("shaper_spec.toml"), spec_toml)?;
    println!(
        "design-shaper: optimum f_n = {:.2} Hz, k_t = {:.2}, J = {:.4} ({} surface rows)",
        result.f_n_hz,
        result.k_t,
        result.objective.total(),
        result.surface.len()
    );
    Ok(())
}

fn build_reference(config: &ExperimentConfig) -> Result<ReferenceTrajectory> {
    let traj = config.trajectory.build(&config.robot)?;
    if config.shaper.enabled {
        let spec = make_shaper(
            config.shaper.f_n_hz,
            config.shaper.zeta_d,
            config.shaper.k_t,
        )?;
        Ok(traj.shaped(&spec)?)
    } else {
        Ok(traj)
    }
}

fn run_controller(
    config: &ExperimentConfig,
    kind: &str,
    traj: &ReferenceTrajectory,
    checkpoints: bool,
) -> Result<SimResult> {
    let select = config.controller.select(kind)?;
    let sim_config = config.sim.sim_config(traj.dt);
    let rules = config.controller.fls.rule_count;
    let (memory, start) = match &config.sim.resume_memory {
        Some(path) => {
            let memory = IterationMemory::load_csv(path, rules, traj.dt)?;
            memory.check_grid(traj.len())?;
            (memory, config.sim.resume_iteration + 1)
        }
        None => {
            let rules = match kind {
                "pidilc" => 0,
                _ => rules,
            };
            (IterationMemory::zeros(rules, traj.len(), traj.dt), 0)
        }
    };
    let ckpt_dir = checkpoints.then_some(config.output.dir.as_path());
    match run_ilc_from(
        &config.plant_model(),
        &config.nominal_model(),
        &select,
        traj,
        &sim_config,
        memory,
        start,
        ckpt_dir,
    ) {
        Ok(result) => Ok(result),
        Err(abort) => {
            // Preserve whatever completed before the failure.
            let _ = write_summary(
                &config.output.dir,
                &format!("{kind}_partial_summary.csv"),
                &abort.partial.iterations,
            );
            bail!("{kind}: {abort}");
        }
    }
}

fn write_summary(dir: &Path, name: &str, iterations: &[IterationRecord]) -> Result<()> {
    let mut w = csv_writer(dir, name)?;
    writeln!(
        w,
        "iteration,e1_max,e2_max,e3_max,edot1_norm,edot2_norm,edot3_norm,eta_max,theta_dot_max"
    )?;
    for rec in iterations {
        let m = rec.metrics;
        writeln!(
            w,
            "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
            rec.index,
            m.max_abs_e[0],
            m.max_abs_e[1],
            m.max_abs_e[2],
            m.e_dot_norm[0],
            m.e_dot_norm[1],
            m.e_dot_norm[2],
            m.max_abs_eta,
            m.max_abs_theta_dot
        )?;
    }
    w.flush()?;
    Ok(())
}

fn write_traces(dir: &Path, name: &str, rec: &IterationRecord) -> Result<()> {
    let mut w = csv_writer(dir, name)?;
    writeln!(
        w,
        "t,th1,th2,th3,thd1,thd2,thd3,e1,e2,e3,ed1,ed2,ed3,eta1,eta2,eta3,u1,u2,u3,acc1,acc2,acc3"
    )?;
    let tr = &rec.traces;
    for i in 0..tr.theta.len() {
        write!(w, "{:.6}", i as f64 * tr.dt)?;
        for v in [
            &tr.theta[i],
            &tr.theta_dot[i],
            &tr.e[i],
            &tr.e_dot[i],
            &tr.eta[i],
            &tr.u[i],
            &tr.accel[i],
        ] {
            write!(w, ",{:.12e},{:.12e},{:.12e}", v[0], v[1], v[2])?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

fn write_bcef(dir: &Path, name: &str, result: &SimResult) -> Result<()> {
    if result.bcef.is_empty() {
        return Ok(());
    }
    let mut w = csv_writer(dir, name)?;
    writeln!(
        w,
        "iteration,v_eta_final,v_vartheta_final,v_eps_final,e_final"
    )?;
    for (k, trace) in result.bcef.iter().enumerate() {
        writeln!(
            w,
            "{},{:.12e},{:.12e},{:.12e},{:.12e}",
            k,
            trace.v_eta.last().unwrap_or(&f64::NAN),
            trace.v_vartheta.last().unwrap_or(&f64::NAN),
            trace.v_eps.last().unwrap_or(&f64::NAN),
            trace.final_value()
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Full pipeline for the configured controller.
pub fn run(config: &ExperimentConfig) -> Result<()> {
    write_manifest(config, "manifest.toml")?;
    let traj = build_reference(config)?;
    traj.to_csv(&config.output.dir.join("reference.csv"))?;

    let kind = config.controller.kind.clone();
    let result = run_controller(config, &kind, &traj, config.sim.checkpoint_memory)?;

    write_summary(&config.output.dir, "summary.csv", &result.iterations)?;
    if let Some(first) = result.iterations.first() {
        write_traces(&config.output.dir, "traces_first_iteration.csv", first)?;
    }
    if let Some(last) = result.iterations.last() {
        write_traces(&config.output.dir, "traces_last_iteration.csv", last)?;
    }
    write_bcef(&config.output.dir, "bcef.csv", &result)?;

    // Residual vibration of the achieved accelerations through the modal
    // bank frozen at the trajectory start configuration.
    if let Some(last) = result.iterations.last() {
        let theta0 = inverse_kinematics(
            &delta_ilc::kinematics::MpPose::new(0.0, 0.0, config.trajectory.z_plane),
            &config.robot,
        )?;
        let modal = modal_at(
            &config.robot,
            &theta0,
            config.modal.servo_stiffness,
            &config.modal.options(),
        )?;
        let report =
            residual_vibration_report(&last.traces.accel, traj.dt, &modal, config.shaper.enabled);
        let mut w = csv_writer(&config.output.dir, "residual.csv")?;
        writeln!(w, "mode,freq_hz,shaped,residual,residual_envelope")?;
        for m in 0..report.mode_freqs_hz.len() {
            writeln!(
                w,
                "{},{:.6},{},{:.12e},{:.12e}",
                m,
                report.mode_freqs_hz[m],
                report.shaped,
                report.response.residual[m],
                report.response.residual_envelope[m]
            )?;
        }
        w.flush()?;
    }

    let last = result
        .iterations
        .last()
        .context("no iterations completed")?;
    println!(
        "run: {} finished {} iterations; final max|e| = {:.3e} rad -> {}",
        result.controller,
        result.iterations.len(),
        last.metrics.max_abs_e.amax(),
        config.output.dir.display()
    );
    Ok(())
}

/// Side-by-side controller comparison on the identical plant, reference and
/// seed: `compare.csv`.
pub fn compare(config: &ExperimentConfig) -> Result<()> {
    if config.compare.controllers.len() < 2 {
        bail!("compare needs at least two controllers in [compare].controllers");
    }
    write_manifest(config, "compare_manifest.toml")?;
    let traj = build_reference(config)?;

    // A controller abort (barrier violation, divergence) should not take the
    // other comparisons down with it; record it and keep going.
    let mut results = Vec::new();
    let mut aborted = Vec::new();
    for kind in &config.compare.controllers {
        match run_controller(config, kind, &traj, false) {
            Ok(result) => {
                write_summary(
                    &config.output.dir,
                    &format!("summary_{kind}.csv"),
                    &result.iterations,
                )?;
                results.push(result);
            }
            Err(err) => {
                eprintln!("compare: {kind} aborted: {err}");
                aborted.push(kind.clone());
            }
        }
    }

    let mut w = csv_writer(&config.output.dir, "compare.csv")?;
    writeln!(
        w,
        "controller,iteration,e1_max,e2_max,e3_max,edot1_norm,edot2_norm,edot3_norm,eta_max"
    )?;
    for result in &results {
        for rec in &result.iterations {
            let m = rec.metrics;
            writeln!(
                w,
                "{},{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                result.controller,
                rec.index,
                m.max_abs_e[0],
                m.max_abs_e[1],
                m.max_abs_e[2],
                m.e_dot_norm[0],
                m.e_dot_norm[1],
                m.e_dot_norm[2],
                m.max_abs_eta
            )?;
        }
    }
    w.flush()?;

    for result in &results {
        let last = result.iterations.last().context("no iterations")?;
        println!(
            "compare: {:>7} final max|e| = {:.3e} rad",
            result.controller,
            last.metrics.max_abs_e.amax()
        );
    }
    if !aborted.is_empty() {
        bail!("controllers aborted: {}", aborted.join(", "));
    }
    Ok(())
}
