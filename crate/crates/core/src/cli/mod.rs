//! Command-line front end: run files, presets and the invariant check.

pub mod config;
pub mod driver;
pub mod output;
pub mod presets;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{emit_config, parse_config, parse_config_str};
pub use driver::{execute, run_config, run_diagnostics, run_preset, write_outputs, ResultBundle, Summary};
pub use presets::{expand, ExperimentPreset, Overrides, PresetName};

use crate::diagnostics::CheckStatus;
use crate::error::{Error, Result};
use crate::model::WeightProfile;

/// Environment variable holding the default output directory.
pub const OUT_DIR_ENV: &str = "BOTTLENECK_OUT_DIR";

/// States above this many values are not stored by `check`.
const CHECK_STATE_BUDGET: usize = 50_000_000;

#[derive(Debug, Parser)]
#[command(name = "bottleneck", version, about = "LWR traffic with a non-local moving bottleneck")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one configuration file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = OUT_DIR_ENV, default_value = "out")]
        out: PathBuf,
    },
    /// Run a named experiment.
    Preset {
        name: String,
        /// Cell counts (the whole ladder for `convergence`).
        #[arg(long, num_args = 1..)]
        cells: Vec<usize>,
        /// Weight `muK` replacing the preset's.
        #[arg(long)]
        weight: Option<String>,
        #[arg(long)]
        store_states: Option<bool>,
        #[arg(long, env = OUT_DIR_ENV, default_value = "out")]
        out: PathBuf,
        /// Worker threads for independent runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Run a configuration and report the invariant checks only.
    Check {
        #[arg(long)]
        config: PathBuf,
    },
}

fn report_line(name: &str, status: CheckStatus, margin: f64) -> String {
    let status = match status {
        CheckStatus::Pass => "pass",
        CheckStatus::Fail => "FAIL",
        CheckStatus::Inapplicable => "n/a",
    };
    format!("{status:>4}  {name:<20} worst margin {margin:.3e}")
}

/// Execute a parsed command line, printing progress to stdout.
pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = parse_config(&config)?;
            let name = config
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("run")
                .to_string();
            let bundle = run_config(&name, cfg)?;
            let paths = write_outputs(&bundle, &out)?;
            println!("wrote {} files to {}", paths.len(), out.display());
            Ok(())
        }
        Command::Preset {
            name,
            cells,
            weight,
            store_states,
            out,
            jobs,
        } => {
            let preset: PresetName = name.parse()?;
            let overrides = Overrides {
                cells,
                weight: weight.as_deref().map(WeightProfile::from_name).transpose()?,
                store_states,
            };
            let bundle = run_preset(preset, &overrides, jobs)?;
            let dir = out.join(preset.as_str());
            let paths = write_outputs(&bundle, &dir)?;
            println!(
                "{preset}: {} runs in {:.1} s, wrote {} files to {}",
                bundle.runs.len(),
                bundle.wall_time_seconds,
                paths.len(),
                dir.display()
            );
            Ok(())
        }
        Command::Check { config } => {
            let mut cfg = parse_config(&config)?;
            cfg.store_states = cfg.step_count().saturating_mul(cfg.grid.cells()) <= CHECK_STATE_BUDGET;
            let bundle = run_config("check", cfg)?;
            let mut failed = 0;
            for run in &bundle.summary.runs {
                for rep in run.outcome.iter().flat_map(|o| &o.diagnostics) {
                    println!("{}", report_line(&rep.name, rep.status, rep.worst_margin));
                    failed += usize::from(rep.status == CheckStatus::Fail);
                }
            }
            if failed > 0 {
                return Err(Error::Usage(format!("{failed} invariant check(s) failed")));
            }
            Ok(())
        }
    }
}
