//! Named experiment setups.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::{ConstraintLaw, FluxModel, PiecewiseConstantProfile, SpeedLaw, WeightProfile};
use crate::numflux::NumericalFluxKind;
use crate::solver::{CouplingMode, RunConfig, DEFAULT_CFL_TARGET};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetName {
    /// Rational speed law, `mu_4`, platoon behind the vehicle, `T = 13`.
    Validation,
    /// Refinement ladder of the validation run.
    Convergence,
    Case1,
    Case2,
    Case3,
    /// case3 with the non-local and the local coupling on a fine mesh.
    CompareLocal,
    /// case3 for `mu_1 .. mu_5` against the local coupling.
    WeightSweep,
    /// Jam ending just ahead of the vehicle, for `mu_3 .. mu_5`.
    ArtifactProbe,
}

impl PresetName {
    pub const ALL: [PresetName; 8] = [
        PresetName::Validation,
        PresetName::Convergence,
        PresetName::Case1,
        PresetName::Case2,
        PresetName::Case3,
        PresetName::CompareLocal,
        PresetName::WeightSweep,
        PresetName::ArtifactProbe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PresetName::Validation => "validation",
            PresetName::Convergence => "convergence",
            PresetName::Case1 => "case1",
            PresetName::Case2 => "case2",
            PresetName::Case3 => "case3",
            PresetName::CompareLocal => "compare_local",
            PresetName::WeightSweep => "weight_sweep",
            PresetName::ArtifactProbe => "artifact_probe",
        }
    }
}

impl fmt::Display for PresetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PresetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PresetName::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::UnknownPreset(s.to_string()))
    }
}

pub const VALIDATION_CELLS: usize = 1100;
pub const VALIDATION_FINAL_TIME: f64 = 13.0;
pub const LADDER_CELLS: [usize; 7] = [160, 320, 640, 1280, 2560, 5120, 10240];
pub const CASE_CELLS: usize = 640;
pub const CASE_FINAL_TIME: f64 = 0.7245;
pub const COMPARE_CELLS: usize = 40960;
pub const SWEEP_WEIGHTS: [u32; 5] = [1, 2, 3, 4, 5];
pub const PROBE_WEIGHTS: [u32; 3] = [3, 4, 5];
pub const PROBE_CELLS: usize = 2560;
pub const PROBE_FINAL_TIME: f64 = 0.2;
/// The probe vehicle starts this fraction of the weight support behind the
/// end of the jam.
pub const PROBE_OFFSET: f64 = 0.5;
const PROBE_JAM_END: f64 = 0.5;

/// Road `[0, 11]` seen from the vehicle at `y0 = 1.5`.
const VALIDATION_BEHIND: f64 = 1.5;
const VALIDATION_LENGTH: f64 = 11.0;

pub fn validation_model() -> FluxModel {
    FluxModel::greenshields(
        SpeedLaw::RationalThenLinear {
            v0: 0.7,
            v1: 0.4,
            rho_star: 0.6,
        },
        ConstraintLaw::Bottleneck { coefficient: 0.75 },
    )
    .expect("validation model is valid")
}

pub fn case_model() -> FluxModel {
    FluxModel::greenshields(
        SpeedLaw::LwrMin { v_bus: 0.3 },
        ConstraintLaw::Bottleneck { coefficient: 0.6 },
    )
    .expect("case model is valid")
}

/// Grid over the validation road with `cells` cells. Cells not dividing the
/// window evenly around `x = 0` shift the window left by less than one cell.
pub fn validation_grid(cells: usize) -> Result<Grid> {
    let dx = VALIDATION_LENGTH / cells as f64;
    let behind = (VALIDATION_BEHIND / dx).round() as usize;
    if (behind as f64 * dx - VALIDATION_BEHIND).abs() < 1e-9 {
        return Grid::new(-VALIDATION_BEHIND, VALIDATION_LENGTH - VALIDATION_BEHIND, cells);
    }
    Grid::from_counts(dx, behind, cells - behind)
}

/// Nested validation grids: the coarsest level fixes the cell split and
/// every finer level doubles both sides.
pub fn ladder_grids(coarsest: usize, levels: usize) -> Result<Vec<Grid>> {
    let base = validation_grid(coarsest)?;
    let mut grids = vec![base];
    for _ in 1..levels {
        let next = grids.last().unwrap().refined()?;
        grids.push(next);
    }
    Ok(grids)
}

fn case_grid(y0: f64, cells: usize) -> Result<Grid> {
    Grid::new(-y0, 1.0 - y0, cells)
}

fn validation_config(grid: Grid) -> RunConfig {
    RunConfig {
        model: validation_model(),
        grid,
        weight: WeightProfile::mu(4),
        initial: PiecewiseConstantProfile {
            breakpoints: vec![0.5, 1.0],
            values: vec![0.0, 0.5, 0.0],
        },
        y0: 1.5,
        final_time: VALIDATION_FINAL_TIME,
        cfl_target: DEFAULT_CFL_TARGET,
        bulk_flux: NumericalFluxKind::LocalRusanov,
        interface_flux: NumericalFluxKind::Godunov,
        coupling: CouplingMode::Nonlocal,
        snapshots: vec![0.0, 1.0, 3.0, 6.0, 9.0, 13.0],
        store_states: false,
    }
}

/// `(left, right, y0)` of the three Riemann cases.
fn case_data(name: PresetName) -> (f64, f64, f64) {
    match name {
        PresetName::Case1 => (0.4, 0.5, 0.5),
        PresetName::Case2 => (0.8, 0.5, 0.5),
        _ => (0.8, 0.4, 0.4),
    }
}

fn case_config(name: PresetName, cells: usize) -> Result<RunConfig> {
    let (left, right, y0) = case_data(name);
    Ok(RunConfig {
        model: case_model(),
        grid: case_grid(y0, cells)?,
        weight: WeightProfile::mu(3),
        initial: PiecewiseConstantProfile::riemann(left, right, 0.5),
        y0,
        final_time: CASE_FINAL_TIME,
        cfl_target: DEFAULT_CFL_TARGET,
        bulk_flux: NumericalFluxKind::LocalRusanov,
        interface_flux: NumericalFluxKind::Godunov,
        coupling: CouplingMode::Nonlocal,
        snapshots: vec![0.0, 0.25, 0.5, CASE_FINAL_TIME],
        store_states: true,
    })
}

fn probe_config(k: u32, cells: usize) -> Result<RunConfig> {
    let y0 = PROBE_JAM_END - PROBE_OFFSET * 0.5f64.powi(k as i32);
    Ok(RunConfig {
        model: case_model(),
        grid: case_grid(y0, cells)?,
        weight: WeightProfile::mu(k),
        initial: PiecewiseConstantProfile::riemann(1.0, 0.0, PROBE_JAM_END),
        y0,
        final_time: PROBE_FINAL_TIME,
        cfl_target: DEFAULT_CFL_TARGET,
        bulk_flux: NumericalFluxKind::LocalRusanov,
        interface_flux: NumericalFluxKind::Godunov,
        coupling: CouplingMode::Nonlocal,
        snapshots: vec![],
        store_states: false,
    })
}

/// The single configuration a run file with `preset = "<name>"` starts from.
pub fn base_config(name: PresetName) -> Result<RunConfig> {
    Ok(match name {
        PresetName::Validation => validation_config(validation_grid(VALIDATION_CELLS)?),
        PresetName::Convergence => validation_config(validation_grid(LADDER_CELLS[0])?),
        PresetName::Case1 | PresetName::Case2 | PresetName::Case3 => case_config(name, CASE_CELLS)?,
        PresetName::CompareLocal | PresetName::WeightSweep => {
            let mut c = case_config(PresetName::Case3, COMPARE_CELLS)?;
            c.store_states = false;
            c.snapshots.clear();
            c
        }
        PresetName::ArtifactProbe => probe_config(PROBE_WEIGHTS[0], PROBE_CELLS)?,
    })
}

/// Command-line adjustments of a preset.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    /// Cell counts: the ladder for `convergence`, otherwise a single value.
    pub cells: Vec<usize>,
    pub weight: Option<WeightProfile>,
    pub store_states: Option<bool>,
}

/// What is computed from the runs of a preset.
#[derive(Clone, Debug, PartialEq)]
pub enum Study {
    /// Independent runs, each with its own diagnostics.
    Single,
    /// Run `i + 1` is the 2:1 refinement of run `i`; errors per pair.
    Ladder,
    /// Errors of every other run against run `reference`, same mesh and clock.
    ModelGap { reference: usize },
    /// Duration of the initial fast-vehicle interval of every run.
    ArtifactProbe,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedRun {
    pub name: String,
    pub config: RunConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentPreset {
    pub name: PresetName,
    pub runs: Vec<NamedRun>,
    pub study: Study,
}

fn one_cell_count(name: PresetName, o: &Overrides, default: usize) -> Result<usize> {
    match o.cells.as_slice() {
        [] => Ok(default),
        [c] => Ok(*c),
        _ => Err(Error::Usage(format!("preset `{name}` takes a single cell count"))),
    }
}

fn named(name: impl Into<String>, config: RunConfig) -> NamedRun {
    NamedRun {
        name: name.into(),
        config,
    }
}

fn weight_name(w: &WeightProfile) -> String {
    w.k().map_or_else(|| "custom".to_string(), |k| format!("mu{k}"))
}

/// Expand a preset into its runs.
pub fn expand(name: PresetName, o: &Overrides) -> Result<ExperimentPreset> {
    let (runs, study) = match name {
        PresetName::Validation => {
            let cells = one_cell_count(name, o, VALIDATION_CELLS)?;
            (vec![named("validation", validation_config(validation_grid(cells)?))], Study::Single)
        }
        PresetName::Convergence => {
            let levels = if o.cells.is_empty() { LADDER_CELLS.to_vec() } else { o.cells.clone() };
            if levels.windows(2).any(|w| w[1] != 2 * w[0]) {
                return Err(Error::Usage("ladder cell counts must double".into()));
            }
            let grids = ladder_grids(levels[0], levels.len() + 1)?;
            let runs = grids
                .into_iter()
                .map(|g| named(format!("cells_{}", g.cells()), validation_config(g)))
                .collect();
            (runs, Study::Ladder)
        }
        PresetName::Case1 | PresetName::Case2 | PresetName::Case3 => {
            let cells = one_cell_count(name, o, CASE_CELLS)?;
            (vec![named(name.as_str(), case_config(name, cells)?)], Study::Single)
        }
        PresetName::CompareLocal => {
            let cells = one_cell_count(name, o, COMPARE_CELLS)?;
            let mut c = case_config(PresetName::Case3, cells)?;
            c.store_states = false;
            c.snapshots.clear();
            let runs = vec![
                named("local", c.with_coupling(CouplingMode::Local)),
                named("nonlocal", c),
            ];
            (runs, Study::ModelGap { reference: 0 })
        }
        PresetName::WeightSweep => {
            if o.weight.is_some() {
                return Err(Error::Usage("weight_sweep runs its own weights".into()));
            }
            let cells = one_cell_count(name, o, COMPARE_CELLS)?;
            let mut c = case_config(PresetName::Case3, cells)?;
            c.store_states = false;
            c.snapshots.clear();
            let mut runs = vec![named("local", c.with_coupling(CouplingMode::Local))];
            for k in SWEEP_WEIGHTS {
                let mut ck = c.clone();
                ck.weight = WeightProfile::mu(k);
                runs.push(named(format!("mu{k}"), ck));
            }
            (runs, Study::ModelGap { reference: 0 })
        }
        PresetName::ArtifactProbe => {
            let cells = one_cell_count(name, o, PROBE_CELLS)?;
            let ks: Vec<u32> = match &o.weight {
                Some(w) => vec![w
                    .k()
                    .ok_or_else(|| Error::Usage("artifact_probe needs a muK weight".into()))?],
                None => PROBE_WEIGHTS.to_vec(),
            };
            let runs = ks
                .into_iter()
                .map(|k| Ok(named(format!("mu{k}"), probe_config(k, cells)?)))
                .collect::<Result<Vec<_>>>()?;
            (runs, Study::ArtifactProbe)
        }
    };
    let mut preset = ExperimentPreset { name, runs, study };
    for run in &mut preset.runs {
        if let Some(w) = &o.weight {
            if name != PresetName::ArtifactProbe {
                run.config.weight = w.clone();
                if name == PresetName::CompareLocal && run.name == "nonlocal" {
                    run.name = format!("nonlocal_{}", weight_name(w));
                }
            }
        }
        if let Some(s) = o.store_states {
            run.config.store_states = s;
        }
        run.config.validate().map_err(|e| e.in_run(run.name.clone()))?;
    }
    Ok(preset)
}
