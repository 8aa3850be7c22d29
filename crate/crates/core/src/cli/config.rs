//! TOML run files.
//!
//! ```toml
//! preset = "case1"          # optional; the remaining keys override it
//!
//! [model]
//! flux = { kind = "quadratic", r_max = 1.0, v_max = 1.0 }
//! omega = { kind = "lwr_min", v_bus = 0.3 }
//! constraint = { kind = "bottleneck", coefficient = 0.6 }
//!
//! [grid]
//! x_min = -0.5
//! x_max = 0.5
//! cells = 640
//!
//! [initial]
//! profile = { breakpoints = [0.5], values = [0.4, 0.5] }
//! y0 = 0.5
//! weight = "mu3"
//!
//! [coupling]
//! mode = "nonlocal"         # local | frozen (s, q) | splitting (delta)
//! final_time = 0.7245
//! cfl_target = 0.5
//! bulk_flux = "rusanov"
//! interface_flux = "godunov"
//!
//! [output]
//! snapshots = [0.0, 0.7245]
//! store_states = false
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cli::presets::{base_config, PresetName};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::{
    ConstraintLaw, FluxModel, FundamentalDiagram, PiecewiseConstantProfile, SpeedLaw, WeightProfile,
};
use crate::numflux::NumericalFluxKind;
use crate::solver::{CouplingMode, RunConfig, DEFAULT_CFL_TARGET};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    model: ModelSection,
    grid: Grid,
    initial: InitialSection,
    coupling: CouplingSection,
    #[serde(default)]
    output: OutputSection,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSection {
    #[serde(default = "FundamentalDiagram::greenshields")]
    flux: FundamentalDiagram,
    omega: SpeedLaw,
    constraint: ConstraintLaw,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InitialSection {
    profile: PiecewiseConstantProfile,
    y0: f64,
    weight: WeightProfile,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ModeName {
    Nonlocal,
    Local,
    Frozen,
    Splitting,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CouplingSection {
    mode: ModeName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    delta: Option<f64>,
    final_time: f64,
    #[serde(default = "default_cfl")]
    cfl_target: f64,
    #[serde(default = "default_bulk")]
    bulk_flux: NumericalFluxKind,
    #[serde(default = "default_interface")]
    interface_flux: NumericalFluxKind,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    #[serde(default)]
    snapshots: Vec<f64>,
    #[serde(default)]
    store_states: bool,
}

fn default_cfl() -> f64 {
    DEFAULT_CFL_TARGET
}

fn default_bulk() -> NumericalFluxKind {
    NumericalFluxKind::Rusanov
}

fn default_interface() -> NumericalFluxKind {
    NumericalFluxKind::Godunov
}

fn parse_error(key: impl Into<String>, message: impl ToString) -> Error {
    Error::Parse {
        key: key.into(),
        message: message.to_string(),
    }
}

impl CouplingSection {
    fn mode(&self) -> Result<CouplingMode> {
        let stray = |key: &str, present: bool| {
            if present {
                Err(parse_error(
                    format!("coupling.{key}"),
                    format!("not used by mode `{:?}`", self.mode).to_lowercase(),
                ))
            } else {
                Ok(())
            }
        };
        match self.mode {
            ModeName::Nonlocal | ModeName::Local => {
                stray("s", self.s.is_some())?;
                stray("q", self.q.is_some())?;
                stray("delta", self.delta.is_some())?;
                Ok(if self.mode == ModeName::Local {
                    CouplingMode::Local
                } else {
                    CouplingMode::Nonlocal
                })
            }
            ModeName::Frozen => {
                stray("delta", self.delta.is_some())?;
                let s = self
                    .s
                    .ok_or_else(|| parse_error("coupling.s", "missing for frozen mode"))?;
                Ok(CouplingMode::Frozen { s, q: self.q })
            }
            ModeName::Splitting => {
                stray("s", self.s.is_some())?;
                stray("q", self.q.is_some())?;
                let delta = self
                    .delta
                    .ok_or_else(|| parse_error("coupling.delta", "missing for splitting mode"))?;
                Ok(CouplingMode::Splitting { delta })
            }
        }
    }
}

impl ConfigFile {
    fn into_config(self) -> Result<RunConfig> {
        let m = self.model;
        let model = FluxModel::new(m.flux, m.omega, m.constraint).map_err(|e| parse_error("model", e))?;
        let c = &self.coupling;
        let config = RunConfig {
            coupling: c.mode()?,
            final_time: c.final_time,
            cfl_target: c.cfl_target,
            bulk_flux: c.bulk_flux,
            interface_flux: c.interface_flux,
            model,
            grid: self.grid,
            weight: self.initial.weight,
            initial: self.initial.profile,
            y0: self.initial.y0,
            snapshots: self.output.snapshots,
            store_states: self.output.store_states,
        };
        check_keys(&config)?;
        Ok(config)
    }

    fn from_config(c: &RunConfig) -> Self {
        let (mode, s, q, delta) = match c.coupling {
            CouplingMode::Nonlocal => (ModeName::Nonlocal, None, None, None),
            CouplingMode::Local => (ModeName::Local, None, None, None),
            CouplingMode::Frozen { s, q } => (ModeName::Frozen, Some(s), q, None),
            CouplingMode::Splitting { delta } => (ModeName::Splitting, None, None, Some(delta)),
        };
        ConfigFile {
            model: ModelSection {
                flux: c.model.flux().clone(),
                omega: c.model.speed_law().clone(),
                constraint: c.model.constraint_law().clone(),
            },
            grid: c.grid.clone(),
            initial: InitialSection {
                profile: c.initial.clone(),
                y0: c.y0,
                weight: c.weight.clone(),
            },
            coupling: CouplingSection {
                mode,
                s,
                q,
                delta,
                final_time: c.final_time,
                cfl_target: c.cfl_target,
                bulk_flux: c.bulk_flux,
                interface_flux: c.interface_flux,
            },
            output: OutputSection {
                snapshots: c.snapshots.clone(),
                store_states: c.store_states,
            },
        }
    }
}

/// Field checks that can be pinned to one key, then the full validation.
fn check_keys(c: &RunConfig) -> Result<()> {
    if !(c.cfl_target > 0.0 && c.cfl_target <= 1.0) {
        return Err(parse_error(
            "coupling.cfl_target",
            format!("{} must lie in ]0, 1]", c.cfl_target),
        ));
    }
    if !(c.final_time > 0.0 && c.final_time.is_finite()) {
        return Err(parse_error("coupling.final_time", "must be positive and finite"));
    }
    if !c.y0.is_finite() {
        return Err(parse_error("initial.y0", "must be finite"));
    }
    c.initial
        .validate()
        .and_then(|_| c.initial.check_range(c.model.r_max()))
        .map_err(|e| parse_error("initial.profile", e))?;
    c.weight.discretize(&c.grid).map_err(|e| parse_error("initial.weight", e))?;
    if c.snapshots.iter().any(|&t| !(0.0..=c.final_time).contains(&t)) {
        return Err(parse_error("output.snapshots", "times must lie in [0, final_time]"));
    }
    c.validate().map_err(|e| parse_error("coupling", e))
}

/// Overlay `top` onto `base`. Tables merge key by key, except that a table
/// whose `kind` changes is replaced as a whole.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t))
                if b.get("kind").is_none() || t.get("kind").is_none() || b.get("kind") == t.get("kind") =>
            {
                merge(b, t)
            }
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// Parse a run file from text.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| parse_error("", e.message()))?;
    if let Some(preset) = table.remove("preset") {
        let name = preset
            .as_str()
            .ok_or_else(|| parse_error("preset", "must be a string"))?;
        let name: PresetName = name.parse()?;
        let mut base: toml::Table = emit_config(&base_config(name)?)
            .parse()
            .expect("emitted configs are valid TOML");
        merge(&mut base, table);
        table = base;
    }
    let file: ConfigFile = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
        let key = e.path().to_string();
        parse_error(if key == "." { String::new() } else { key }, e.into_inner())
    })?;
    file.into_config()
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text)
}

/// Fully resolved run file; `parse_config_str(&emit_config(c)) == c`.
pub fn emit_config(config: &RunConfig) -> String {
    toml::to_string(&ConfigFile::from_config(config)).expect("run configs serialize to TOML")
}
