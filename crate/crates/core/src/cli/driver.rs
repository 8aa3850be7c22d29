//! Executes run files and presets and writes their result bundles.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::cli::config::emit_config;
use crate::cli::output::{fmt_f64, snapshot_csv, to_json, trajectory_csv, write_file};
use crate::cli::presets::{expand, ExperimentPreset, NamedRun, Overrides, PresetName, Study};
use crate::diagnostics::{
    artifact_duration, bv_bound_check, bv_bound_constant, convergence_order, discrete_entropy_check,
    kinematics_check, model_gap_errors, model_gap_lockstep, oslc_check, range_check, refinement_lockstep,
    xi_regularity_check, DiagnosticsReport, PairErrors, RefinementStudy,
};
use crate::error::{Error, Result};
use crate::solver::{run, DensityRange, RunConfig, Simulation, Trajectory};

/// Outcome of one run with a stored trajectory.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunOutcome {
    pub final_position: f64,
    pub min_speed: f64,
    pub max_speed: f64,
    /// Steps on which the interface flux was capped.
    pub constrained_steps: usize,
    pub mass_drift: f64,
    pub boundary_inflow: f64,
    pub boundary_outflow: f64,
    pub snapshots: Vec<SnapshotEntry>,
    pub diagnostics: Vec<DiagnosticsReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SnapshotEntry {
    pub requested: f64,
    pub t: f64,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub cells: usize,
    pub dx: f64,
    pub dt: f64,
    pub steps: usize,
    pub final_time: f64,
    /// Extremes of the density over every step.
    pub density_range: DensityRange,
    #[serde(flatten)]
    pub outcome: Option<RunOutcome>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GapRow {
    pub run: String,
    pub e1: f64,
    pub einf: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeRow {
    pub run: String,
    pub duration: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StudySummary {
    Convergence {
        #[serde(flatten)]
        study: RefinementStudy,
        order_rho: Option<f64>,
        order_y: Option<f64>,
    },
    ModelGap { reference: String, rows: Vec<GapRow> },
    ArtifactProbe { rows: Vec<ProbeRow> },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub preset: Option<String>,
    pub runs: Vec<RunSummary>,
    pub study: Option<StudySummary>,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub name: String,
    pub config: RunConfig,
    pub trajectory: Option<Trajectory>,
}

/// Everything a preset or run file produced.
#[derive(Clone, Debug)]
pub struct ResultBundle {
    pub runs: Vec<RunResult>,
    pub summary: Summary,
    /// Kept out of the summary so that the summary is reproducible.
    pub wall_time_seconds: f64,
}

/// Every check that applies to a stored run.
pub fn run_diagnostics(config: &RunConfig, tr: &Trajectory) -> Result<Vec<DiagnosticsReport>> {
    let model = &config.model;
    let r = model.r_max();
    let mut out = vec![
        range_check(tr, r),
        kinematics_check(tr, model.sigma()),
        xi_regularity_check(tr, &config.weight, r, config.cfl_constant(), config.time_step()),
    ];
    let gap = model.constraint_gap();
    if gap.violated || !gap.epsilon.is_finite() {
        out.push(inapplicable("bv_bound", "constraint gap is not positive"));
    } else {
        out.push(bv_bound_check(tr, r, bv_bound_constant(model, gap.epsilon)?));
    }
    if tr.states.is_some() {
        out.push(discrete_entropy_check(tr, config, None)?);
        match model.flux().concavity() {
            Some(alpha) => out.push(oslc_check(tr, config, alpha)?),
            None => out.push(inapplicable("oslc", "flux is not uniformly concave")),
        }
    } else {
        out.push(inapplicable("discrete_entropy", "states not stored"));
        out.push(inapplicable("oslc", "states not stored"));
    }
    Ok(out)
}

fn inapplicable(name: &str, note: &str) -> DiagnosticsReport {
    DiagnosticsReport {
        name: name.to_string(),
        status: crate::diagnostics::CheckStatus::Inapplicable,
        worst_margin: 0.0,
        tolerance: 0.0,
        location: Default::default(),
        evaluated: 0,
        note: Some(note.to_string()),
    }
}

fn snapshot_file(i: usize) -> String {
    format!("snapshot_{i:03}.csv")
}

fn summarize(run: &NamedRun, tr: Option<&Trajectory>, range: DensityRange) -> Result<RunSummary> {
    let c = &run.config;
    let outcome = match tr {
        None => None,
        Some(tr) => {
            let speeds = tr.applied_speeds();
            Some(RunOutcome {
                final_position: tr.final_position(),
                min_speed: speeds.iter().copied().fold(f64::INFINITY, f64::min),
                max_speed: speeds.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                constrained_steps: tr.records[..tr.steps()].iter().filter(|r| r.constraint_active).count(),
                mass_drift: tr.mass_drift(),
                boundary_inflow: tr.boundary_inflow,
                boundary_outflow: tr.boundary_outflow,
                snapshots: tr
                    .snapshots
                    .iter()
                    .enumerate()
                    .map(|(i, s)| SnapshotEntry {
                        requested: s.requested,
                        t: s.t,
                        file: snapshot_file(i),
                    })
                    .collect(),
                diagnostics: run_diagnostics(c, tr)?,
            })
        }
    };
    Ok(RunSummary {
        name: run.name.clone(),
        cells: c.grid.cells(),
        dx: c.grid.dx(),
        dt: c.time_step(),
        steps: c.step_count(),
        final_time: c.final_time,
        density_range: range,
        outcome,
    })
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Usage(format!("cannot start {jobs} worker threads: {e}")))?;
    Ok(pool.install(f))
}

fn stored_runs(runs: &[NamedRun]) -> Result<Vec<(RunResult, RunSummary)>> {
    runs.par_iter()
        .map(|r| {
            let tr = run(&r.config).map_err(|e| e.in_run(r.name.clone()))?;
            let summary = summarize(r, Some(&tr), tr.density_range).map_err(|e| e.in_run(r.name.clone()))?;
            Ok((
                RunResult {
                    name: r.name.clone(),
                    config: r.config.clone(),
                    trajectory: Some(tr),
                },
                summary,
            ))
        })
        .collect()
}

fn streamed_runs(runs: &[NamedRun], ranges: &[DensityRange]) -> Result<(Vec<RunResult>, Vec<RunSummary>)> {
    let summaries = runs
        .iter()
        .zip(ranges)
        .map(|(r, &range)| summarize(r, None, range))
        .collect::<Result<_>>()?;
    let results = runs
        .iter()
        .map(|r| RunResult {
            name: r.name.clone(),
            config: r.config.clone(),
            trajectory: None,
        })
        .collect();
    Ok((results, summaries))
}

fn ladder(runs: &[NamedRun]) -> Result<(StudySummary, Vec<DensityRange>)> {
    let pairs: Vec<(PairErrors, [DensityRange; 2])> = runs
        .par_windows(2)
        .map(|w| {
            let pair = || -> Result<_> {
                let mut c = Simulation::new(&w[0].config)?;
                let mut f = Simulation::new(&w[1].config)?;
                let e = refinement_lockstep(&mut c, &mut f)?;
                Ok((e, [c.density_range(), f.density_range()]))
            };
            pair().map_err(|e| e.in_run(w[0].name.clone()))
        })
        .collect::<Result<_>>()?;
    let mut ranges = vec![DensityRange::EMPTY; runs.len()];
    for (i, (_, r)) in pairs.iter().enumerate() {
        ranges[i] = ranges[i].merge(r[0]);
        ranges[i + 1] = ranges[i + 1].merge(r[1]);
    }
    let errors: Vec<PairErrors> = pairs.into_iter().map(|(e, _)| e).collect();
    let study = RefinementStudy {
        cells: runs[..runs.len() - 1].iter().map(|r| r.config.grid.cells()).collect(),
        e_rho: errors.iter().map(|e| e.density).collect(),
        e_y: errors.iter().map(|e| e.position).collect(),
    };
    let (order_rho, order_y) = match convergence_order(&study) {
        Ok((a, b)) => (Some(a), Some(b)),
        Err(_) => (None, None),
    };
    Ok((
        StudySummary::Convergence {
            study,
            order_rho,
            order_y,
        },
        ranges,
    ))
}

fn model_gap(runs: &[NamedRun], reference: usize, jobs: usize) -> Result<(StudySummary, Vec<DensityRange>)> {
    let base = &runs[reference];
    let others: Vec<usize> = (0..runs.len()).filter(|&i| i != reference).collect();
    let mut ranges = vec![DensityRange::EMPTY; runs.len()];
    // one shared reference when sequential, independent pairs otherwise;
    // both give the same numbers
    let errors: Vec<PairErrors> = if jobs <= 1 {
        let mut all = || -> Result<_> {
            let mut b = Simulation::new(&base.config)?;
            let mut sims = others
                .iter()
                .map(|&i| Simulation::new(&runs[i].config))
                .collect::<Result<Vec<_>>>()?;
            let e = model_gap_lockstep(&mut b, &mut sims)?;
            ranges[reference] = b.density_range();
            for (&i, s) in others.iter().zip(&sims) {
                ranges[i] = s.density_range();
            }
            Ok(e)
        };
        all().map_err(|e| e.in_run(base.name.clone()))?
    } else {
        let pairs: Vec<(PairErrors, DensityRange, DensityRange)> = others
            .par_iter()
            .map(|&i| {
                let pair = || -> Result<_> {
                    let mut b = Simulation::new(&base.config)?;
                    let mut sim = [Simulation::new(&runs[i].config)?];
                    let e = model_gap_lockstep(&mut b, &mut sim)?;
                    Ok((e[0], b.density_range(), sim[0].density_range()))
                };
                pair().map_err(|e| e.in_run(runs[i].name.clone()))
            })
            .collect::<Result<_>>()?;
        for (&i, &(_, b, r)) in others.iter().zip(&pairs) {
            ranges[reference] = ranges[reference].merge(b);
            ranges[i] = r;
        }
        pairs.into_iter().map(|(e, _, _)| e).collect()
    };
    let summary = StudySummary::ModelGap {
        reference: base.name.clone(),
        rows: others
            .iter()
            .zip(errors)
            .map(|(&i, e)| GapRow {
                run: runs[i].name.clone(),
                e1: e.density,
                einf: e.position,
            })
            .collect(),
    };
    Ok((summary, ranges))
}

/// Run every configuration of a preset and the study attached to it.
pub fn execute(preset: &ExperimentPreset, jobs: usize) -> Result<ResultBundle> {
    execute_runs(Some(preset.name), &preset.runs, &preset.study, jobs)
}

fn execute_runs(
    label: Option<PresetName>,
    runs: &[NamedRun],
    study: &Study,
    jobs: usize,
) -> Result<ResultBundle> {
    let start = Instant::now();
    let (results, summaries, study) = with_pool(jobs, || -> Result<_> {
        Ok(match *study {
            Study::Single => {
                let (res, sum): (Vec<_>, Vec<_>) = stored_runs(runs)?.into_iter().unzip();
                (res, sum, None)
            }
            Study::ArtifactProbe => {
                let (res, sum): (Vec<_>, Vec<_>) = stored_runs(runs)?.into_iter().unzip();
                let rows = res
                    .iter()
                    .map(|r| ProbeRow {
                        run: r.name.clone(),
                        duration: artifact_duration(r.trajectory.as_ref().unwrap(), &r.config.model),
                    })
                    .collect();
                (res, sum, Some(StudySummary::ArtifactProbe { rows }))
            }
            Study::Ladder => {
                let (study, ranges) = ladder(runs)?;
                let (res, sum) = streamed_runs(runs, &ranges)?;
                (res, sum, Some(study))
            }
            Study::ModelGap { reference } => {
                let needs_states = runs.iter().any(|r| r.config.store_states);
                if needs_states {
                    // small meshes: keep the trajectories and use the dense errors
                    let stored = stored_runs(runs)?;
                    let base = stored[reference].0.trajectory.as_ref().unwrap();
                    let mut rows = Vec::new();
                    for (i, (r, _)) in stored.iter().enumerate() {
                        if i != reference {
                            let e = model_gap_errors(r.trajectory.as_ref().unwrap(), base)?;
                            rows.push(GapRow {
                                run: r.name.clone(),
                                e1: e.density,
                                einf: e.position,
                            });
                        }
                    }
                    let reference = stored[reference].0.name.clone();
                    let (res, sum): (Vec<_>, Vec<_>) = stored.into_iter().unzip();
                    (res, sum, Some(StudySummary::ModelGap { reference, rows }))
                } else {
                    let (study, ranges) = model_gap(runs, reference, jobs)?;
                    let (res, sum) = streamed_runs(runs, &ranges)?;
                    (res, sum, Some(study))
                }
            }
        })
    })??;
    Ok(ResultBundle {
        runs: results,
        summary: Summary {
            preset: label.map(|p| p.as_str().to_string()),
            runs: summaries,
            study,
        },
        wall_time_seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn run_preset(name: PresetName, overrides: &Overrides, jobs: usize) -> Result<ResultBundle> {
    execute(&expand(name, overrides)?, jobs)
}

/// A single run file.
pub fn run_config(name: &str, config: RunConfig) -> Result<ResultBundle> {
    let runs = [NamedRun {
        name: name.to_string(),
        config,
    }];
    execute_runs(None, &runs, &Study::Single, 1)
}

fn errors_csv(study: &StudySummary) -> String {
    let mut out = String::new();
    match study {
        StudySummary::Convergence { study, .. } => {
            out.push_str("cells,e_rho,e_y\n");
            for i in 0..study.cells.len() {
                let _ = writeln!(out, "{},{},{}", study.cells[i], fmt_f64(study.e_rho[i]), fmt_f64(study.e_y[i]));
            }
        }
        StudySummary::ModelGap { rows, .. } => {
            out.push_str("run,e1,einf\n");
            for r in rows {
                let _ = writeln!(out, "{},{},{}", r.run, fmt_f64(r.e1), fmt_f64(r.einf));
            }
        }
        StudySummary::ArtifactProbe { rows } => {
            out.push_str("run,duration\n");
            for r in rows {
                let _ = writeln!(out, "{},{}", r.run, fmt_f64(r.duration));
            }
        }
    }
    out
}

/// Write the bundle under `out_dir`:
/// `summary.json`, `timing.json`, `errors.csv` for studies, and per run
/// `<run>/config.toml`, `<run>/trajectory.csv`, `<run>/snapshot_NNN.csv`.
pub fn write_outputs(bundle: &ResultBundle, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for r in &bundle.runs {
        let dir = out_dir.join(&r.name);
        paths.push(write_file(&dir.join("config.toml"), &emit_config(&r.config))?);
        if let Some(tr) = &r.trajectory {
            paths.push(write_file(&dir.join("trajectory.csv"), &trajectory_csv(&tr.records))?);
            for (i, snap) in tr.snapshots.iter().enumerate() {
                paths.push(write_file(&dir.join(snapshot_file(i)), &snapshot_csv(&tr.grid, snap))?);
            }
        }
    }
    if let Some(study) = &bundle.summary.study {
        paths.push(write_file(&out_dir.join("errors.csv"), &errors_csv(study))?);
    }
    paths.push(write_file(&out_dir.join("summary.json"), &to_json(&bundle.summary))?);
    #[derive(Serialize)]
    struct Timing {
        wall_time_seconds: f64,
    }
    paths.push(write_file(
        &out_dir.join("timing.json"),
        &to_json(&Timing {
            wall_time_seconds: bundle.wall_time_seconds,
        }),
    )?);
    Ok(paths)
}
