//! Time marching in the vehicle frame.
//!
//! One step of the scheme first fixes the vehicle speed `s` and constraint
//! level `q` (by the coupling rule of the run), then applies the conservative
//! update `rho_i -= lambda * (F_{i+1} - F_i)` with the bulk numerical flux on
//! every edge except the one at `x = 0`, where the flux is `min{base, q}`.
//! Ghost cells copy the boundary cells.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::{FluxModel, PiecewiseConstantProfile, WeightProfile};
use crate::numflux::{local_rusanov_affine, scheme_cfl_constant, FrozenFlux, NumericalFluxKind};

/// How the vehicle speed is obtained at each step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum CouplingMode {
    /// `s = omega(sum_j rho_j mu_j dx)`.
    Nonlocal,
    /// `s = omega(rho)` in the first cell ahead of the vehicle.
    Local,
    /// Constant prescribed speed and constraint; `q = None` means no constraint.
    Frozen { s: f64, q: Option<f64> },
    /// Speed recomputed only every `delta` time units.
    Splitting { delta: f64 },
}

/// Everything needed to run one simulation.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: FluxModel,
    pub grid: Grid,
    pub weight: WeightProfile,
    /// Initial density in road coordinates.
    pub initial: PiecewiseConstantProfile,
    /// Initial vehicle position in road coordinates.
    pub y0: f64,
    pub final_time: f64,
    /// Target value of `lambda * L`, in `]0, 1]`.
    pub cfl_target: f64,
    pub bulk_flux: NumericalFluxKind,
    pub interface_flux: NumericalFluxKind,
    pub coupling: CouplingMode,
    pub snapshots: Vec<f64>,
    /// Keep every intermediate density (needed by the entropy and OSLC checks).
    pub store_states: bool,
}

pub const DEFAULT_CFL_TARGET: f64 = 0.5;

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl_target > 0.0 && self.cfl_target <= 1.0) {
            return Err(Error::config(format!(
                "cfl_target = {} must lie in ]0, 1]",
                self.cfl_target
            )));
        }
        if !(self.final_time > 0.0 && self.final_time.is_finite()) {
            return Err(Error::config(format!("final_time = {} must be > 0", self.final_time)));
        }
        if !self.y0.is_finite() {
            return Err(Error::config("y0 must be finite"));
        }
        if let Some(t) = self
            .snapshots
            .iter()
            .find(|&&t| !(0.0..=self.final_time).contains(&t))
        {
            return Err(Error::config(format!("snapshot time {t} outside [0, final_time]")));
        }
        self.initial.validate()?;
        self.initial.check_range(self.model.r_max())?;
        self.weight.discretize(&self.grid)?;
        match self.coupling {
            CouplingMode::Frozen { s, q } => {
                if !(0.0..=self.model.sigma()).contains(&s) {
                    return Err(Error::config(format!(
                        "frozen speed {s} outside [0, {}]",
                        self.model.sigma()
                    )));
                }
                if q.is_some_and(|q| !(q >= 0.0)) {
                    return Err(Error::config("frozen constraint must be >= 0"));
                }
            }
            CouplingMode::Splitting { delta } => {
                if delta < self.time_step() {
                    return Err(Error::config(format!(
                        "splitting window {delta} is shorter than the time step {}",
                        self.time_step()
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// `L = 2 (sup |f'| + Sigma)`, or `3 (sup |f'| + Sigma)` with local Rusanov.
    pub fn cfl_constant(&self) -> f64 {
        scheme_cfl_constant(&self.model, self.bulk_flux, self.interface_flux)
    }

    /// `dt = cfl_target * dx / L`.
    pub fn time_step(&self) -> f64 {
        self.cfl_target * self.grid.dx() / self.cfl_constant()
    }

    /// Number of steps, the last one clipped to land on `final_time`.
    pub fn step_count(&self) -> usize {
        let ratio = self.final_time / self.time_step();
        let n = (ratio - 1e-9).ceil();
        (n.max(1.0)) as usize
    }

    /// Initial cell averages of `rho_o(. + y0)` in the vehicle frame.
    pub fn initial_density(&self) -> Vec<f64> {
        let r = self.model.r_max();
        self.initial
            .cell_averages(&self.grid, self.y0)
            .into_iter()
            .map(|v| v.clamp(0.0, r))
            .collect()
    }

    pub fn with_coupling(&self, coupling: CouplingMode) -> RunConfig {
        RunConfig {
            coupling,
            ..self.clone()
        }
    }

    pub fn with_grid(&self, grid: Grid) -> RunConfig {
        RunConfig {
            grid,
            ..self.clone()
        }
    }
}

/// Row of a trajectory: the state at time `t` and the quantities it induces
/// for the step starting there.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub y: f64,
    pub s: f64,
    pub xi: f64,
    pub q: f64,
    pub interface_flux: f64,
    pub constraint_active: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    /// Requested time.
    pub requested: f64,
    /// Step time at which it was taken.
    pub t: f64,
    /// Vehicle position at `t`.
    pub y: f64,
    pub rho: Vec<f64>,
}

/// Output of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub grid: Grid,
    /// One row per step start plus a terminal row at the final time.
    pub records: Vec<StepRecord>,
    /// `TV(rho^n)` for every row.
    pub total_variation: Vec<f64>,
    /// `sum rho^n dx` for every row.
    pub mass: Vec<f64>,
    /// Density in the first cell ahead of the vehicle, for every row.
    pub front_density: Vec<f64>,
    /// Densities at every row when `store_states` was set.
    pub states: Option<Vec<Vec<f64>>>,
    pub snapshots: Vec<Snapshot>,
    pub final_state: Vec<f64>,
    /// `int F(left ghost) dt` through the left boundary.
    pub boundary_inflow: f64,
    /// `int F(right ghost) dt` through the right boundary.
    pub boundary_outflow: f64,
    /// Over every row.
    pub density_range: DensityRange,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.t)
    }

    pub fn final_position(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.y)
    }

    /// Speed actually applied on each step.
    pub fn applied_speeds(&self) -> Vec<f64> {
        self.records[..self.steps()].iter().map(|r| r.s).collect()
    }

    /// Constraint actually applied on each step.
    pub fn applied_constraints(&self) -> Vec<f64> {
        self.records[..self.steps()].iter().map(|r| r.q).collect()
    }

    /// Change of total mass not explained by the boundary fluxes.
    pub fn mass_drift(&self) -> f64 {
        let m0 = self.mass.first().copied().unwrap_or(0.0);
        let m1 = self.mass.last().copied().unwrap_or(0.0);
        (m1 - m0 - (self.boundary_inflow - self.boundary_outflow)).abs()
    }
}

/// Fluxes produced by a single step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepFluxes {
    /// Value used on the edge at `x = 0`.
    pub interface: f64,
    /// Unconstrained base flux on that edge.
    pub interface_base: f64,
    pub left_boundary: f64,
    pub right_boundary: f64,
    /// Extremes of the updated density.
    pub range: DensityRange,
}

/// Smallest and largest density seen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityRange {
    pub min: f64,
    pub max: f64,
}

impl DensityRange {
    pub fn of(rho: &[f64]) -> Self {
        rho.iter().fold(DensityRange::EMPTY, |r, &v| r.with(v))
    }

    pub const EMPTY: DensityRange = DensityRange {
        min: f64::INFINITY,
        max: f64::NEG_INFINITY,
    };

    #[inline(always)]
    fn with(self, v: f64) -> Self {
        DensityRange {
            min: if v < self.min { v } else { self.min },
            max: if v > self.max { v } else { self.max },
        }
    }

    pub fn merge(self, other: DensityRange) -> Self {
        DensityRange {
            min: self.min.min(other.min),
            max: self.max.max(other.max),
        }
    }

    /// Inside `[0, r_max]` exactly.
    pub fn within(&self, r_max: f64) -> bool {
        self.min >= 0.0 && self.max <= r_max
    }
}

/// One step of the marching formula from `rho` into `out`, with prescribed
/// `(s, q)` and step `dt`.
#[allow(clippy::too_many_arguments)]
pub fn step(
    model: &FluxModel,
    grid: &Grid,
    bulk: NumericalFluxKind,
    interface: NumericalFluxKind,
    s: f64,
    q: f64,
    dt: f64,
    rho: &[f64],
    out: &mut [f64],
) -> Result<StepFluxes> {
    let lambda = dt / grid.dx();
    let product = lambda * scheme_cfl_constant(model, bulk, interface);
    if product > 1.0 + 1e-12 {
        return Err(Error::Cfl { product, limit: 1.0 });
    }
    if rho.len() != grid.cells() || out.len() != grid.cells() {
        return Err(Error::Usage("density length does not match the grid".into()));
    }
    let mut scratch = vec![0.0; rho.len()];
    Ok(march(model, grid, bulk, interface, s, q, lambda, rho, out, &mut scratch))
}

#[allow(clippy::too_many_arguments)]
fn march(
    model: &FluxModel,
    grid: &Grid,
    bulk: NumericalFluxKind,
    interface: NumericalFluxKind,
    s: f64,
    q: f64,
    lambda: f64,
    rho: &[f64],
    out: &mut [f64],
    point_flux: &mut [f64],
) -> StepFluxes {
    let ff = FrozenFlux::new(model, s);
    for (f, &r) in point_flux.iter_mut().zip(rho) {
        *f = ff.f(r);
    }
    let e0 = grid.interface_edge();
    let base = ff.two_point(interface, rho[e0 - 1], rho[e0], point_flux[e0 - 1], point_flux[e0]);
    let iface = base.min(q);
    let range = match bulk {
        NumericalFluxKind::Godunov => sweep(rho, point_flux, out, lambda, e0, iface, |a, b, fa, fb| {
            ff.two_point(NumericalFluxKind::Godunov, a, b, fa, fb)
        }),
        NumericalFluxKind::Rusanov => sweep(rho, point_flux, out, lambda, e0, iface, |a, b, fa, fb| {
            ff.two_point(NumericalFluxKind::Rusanov, a, b, fa, fb)
        }),
        NumericalFluxKind::EngquistOsher => {
            sweep(rho, point_flux, out, lambda, e0, iface, |a, b, fa, fb| {
                ff.two_point(NumericalFluxKind::EngquistOsher, a, b, fa, fb)
            })
        }
        NumericalFluxKind::LocalRusanov => match ff.affine_slope() {
            Some((d0, d2)) => sweep(rho, point_flux, out, lambda, e0, iface, |a, b, _, _| {
                local_rusanov_affine(d0, d2, a, b)
            }),
            None => sweep(rho, point_flux, out, lambda, e0, iface, |a, b, fa, fb| {
                ff.two_point(NumericalFluxKind::LocalRusanov, a, b, fa, fb)
            }),
        },
    };
    StepFluxes {
        interface: iface,
        interface_base: base,
        left_boundary: point_flux[0],
        right_boundary: point_flux[rho.len() - 1],
        range,
    }
}

#[inline(always)]
fn sweep(
    rho: &[f64],
    fvals: &[f64],
    out: &mut [f64],
    lambda: f64,
    e0: usize,
    iface: f64,
    flux: impl Fn(f64, f64, f64, f64) -> f64,
) -> DensityRange {
    let n = rho.len();
    // edge fluxes first, stored one slot left of the cell they feed
    for k in 0..n - 1 {
        out[k] = flux(rho[k], rho[k + 1], fvals[k], fvals[k + 1]);
    }
    out[e0 - 1] = iface;
    // ghost cells are copies, so boundary edges carry the point flux
    let mut left = fvals[0];
    let mut range = DensityRange::EMPTY;
    for i in 0..n {
        let right = if i + 1 == n { fvals[n - 1] } else { out[i] };
        out[i] = rho[i] - lambda * (right - left);
        range = range.with(out[i]);
        left = right;
    }
    range
}

#[derive(Clone, Debug)]
enum SpeedSource {
    Nonlocal,
    Local,
    Frozen { s: Vec<f64>, q: Vec<f64> },
    Splitting { window: usize, current: Option<(f64, f64)> },
}

/// Step-by-step driver; `run*` functions wrap it, and the comparison
/// diagnostics use it to march two runs in lockstep without storing them.
#[derive(Clone, Debug)]
pub struct Simulation<'c> {
    config: &'c RunConfig,
    source: SpeedSource,
    weights: Vec<(usize, f64)>,
    rho: Vec<f64>,
    next: Vec<f64>,
    scratch: Vec<f64>,
    range: DensityRange,
    dt: f64,
    lambda: f64,
    steps: usize,
    step_index: usize,
    t: f64,
    y: f64,
    boundary_inflow: f64,
    boundary_outflow: f64,
}

impl<'c> Simulation<'c> {
    /// Driver following `config.coupling`.
    pub fn new(config: &'c RunConfig) -> Result<Self> {
        config.validate()?;
        let source = match config.coupling {
            CouplingMode::Nonlocal => SpeedSource::Nonlocal,
            CouplingMode::Local => SpeedSource::Local,
            CouplingMode::Frozen { s, q } => {
                let n = config.step_count();
                SpeedSource::Frozen {
                    s: vec![s; n],
                    q: vec![q.unwrap_or(f64::INFINITY); n],
                }
            }
            CouplingMode::Splitting { delta } => {
                let dt = config.time_step();
                let window = if delta >= config.final_time {
                    usize::MAX
                } else {
                    ((delta / dt) + 1e-9).floor().max(1.0) as usize
                };
                SpeedSource::Splitting {
                    window,
                    current: None,
                }
            }
        };
        Self::with_source(config, source)
    }

    /// Driver with prescribed per-step speed and constraint series.
    pub fn frozen(config: &'c RunConfig, s: &[f64], q: &[f64]) -> Result<Self> {
        config.validate()?;
        let n = config.step_count();
        if s.len() < n || q.len() < n {
            return Err(Error::config(format!(
                "prescribed series have {} / {} entries, run needs {n}",
                s.len(),
                q.len()
            )));
        }
        let sigma = config.model.sigma();
        if let Some(bad) = s.iter().find(|&&v| !(0.0..=sigma).contains(&v)) {
            return Err(Error::config(format!("prescribed speed {bad} outside [0, {sigma}]")));
        }
        if q.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::config("prescribed constraint must be >= 0"));
        }
        Self::with_source(
            config,
            SpeedSource::Frozen {
                s: s.to_vec(),
                q: q.to_vec(),
            },
        )
    }

    fn with_source(config: &'c RunConfig, source: SpeedSource) -> Result<Self> {
        let dx = config.grid.dx();
        let weights = config
            .weight
            .discretize(&config.grid)?
            .into_iter()
            .enumerate()
            .filter(|&(_, m)| m != 0.0)
            .map(|(i, m)| (i, m * dx))
            .collect();
        let rho = config.initial_density();
        let n = rho.len();
        let dt = config.time_step();
        Ok(Simulation {
            config,
            source,
            weights,
            range: DensityRange::of(&rho),
            rho,
            next: vec![0.0; n],
            scratch: vec![0.0; n],
            dt,
            lambda: dt / dx,
            steps: config.step_count(),
            step_index: 0,
            t: 0.0,
            y: config.y0,
            boundary_inflow: 0.0,
            boundary_outflow: 0.0,
        })
    }

    pub fn config(&self) -> &RunConfig {
        self.config
    }

    pub fn density(&self) -> &[f64] {
        &self.rho
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn position(&self) -> f64 {
        self.y
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn step_count(&self) -> usize {
        self.steps
    }

    pub fn time_step(&self) -> f64 {
        self.dt
    }

    pub fn is_finished(&self) -> bool {
        self.step_index >= self.steps
    }

    /// Time at the end of the next step.
    pub fn next_time(&self) -> f64 {
        Self::time_of(self.step_index + 1, self.dt, self.steps, self.config.final_time)
    }

    fn time_of(n: usize, dt: f64, steps: usize, final_time: f64) -> f64 {
        if n >= steps {
            final_time
        } else {
            n as f64 * dt
        }
    }

    /// `xi = sum_j rho_j mu_j dx` of the current density.
    pub fn xi(&self) -> f64 {
        self.weights.iter().map(|&(i, w)| self.rho[i] * w).sum()
    }

    /// Extremes over every state so far.
    pub fn density_range(&self) -> DensityRange {
        self.range
    }

    pub fn boundary_totals(&self) -> (f64, f64) {
        (self.boundary_inflow, self.boundary_outflow)
    }

    fn speed(&mut self, xi: f64) -> (f64, f64) {
        let model = &self.config.model;
        match &mut self.source {
            SpeedSource::Nonlocal => {
                let s = model.omega(xi);
                (s, model.q(s))
            }
            SpeedSource::Local => {
                let s = model.omega(self.rho[self.config.grid.interface_edge()]);
                (s, model.q(s))
            }
            SpeedSource::Frozen { s, q } => {
                let k = self.step_index.min(s.len() - 1);
                (s[k], q[k])
            }
            SpeedSource::Splitting { window, current } => {
                if current.is_none() || self.step_index % *window == 0 {
                    let s = model.omega(xi);
                    *current = Some((s, model.q(s)));
                }
                current.unwrap()
            }
        }
    }

    fn record(&self, xi: f64, s: f64, q: f64, fluxes: (f64, f64)) -> StepRecord {
        StepRecord {
            t: self.t,
            y: self.y,
            s,
            xi,
            q,
            interface_flux: fluxes.0,
            constraint_active: fluxes.1 >= q,
        }
    }

    /// Advance one step; returns the row describing the state before the step.
    pub fn step(&mut self) -> StepRecord {
        debug_assert!(!self.is_finished());
        let xi = self.xi();
        let (s, q) = self.speed(xi);
        let cfg = self.config;
        let fluxes = march(
            &cfg.model,
            &cfg.grid,
            cfg.bulk_flux,
            cfg.interface_flux,
            s,
            q,
            self.lambda_for_step(),
            &self.rho,
            &mut self.next,
            &mut self.scratch,
        );
        let record = self.record(xi, s, q, (fluxes.interface, fluxes.interface_base));
        let t_next = self.next_time();
        let h = t_next - self.t;
        self.boundary_inflow += h * fluxes.left_boundary;
        self.boundary_outflow += h * fluxes.right_boundary;
        self.range = self.range.merge(fluxes.range);
        std::mem::swap(&mut self.rho, &mut self.next);
        self.y += h * s;
        self.t = t_next;
        self.step_index += 1;
        record
    }

    fn lambda_for_step(&self) -> f64 {
        let h = self.next_time() - self.t;
        if h == self.dt {
            self.lambda
        } else {
            h / self.config.grid.dx()
        }
    }

    /// Row for the current state without advancing (the terminal row).
    pub fn peek_record(&mut self) -> StepRecord {
        let xi = self.xi();
        let (s, q) = self.speed(xi);
        let cfg = self.config;
        let e0 = cfg.grid.interface_edge();
        let ff = FrozenFlux::new(&cfg.model, s);
        let base = ff.eval(cfg.interface_flux, self.rho[e0 - 1], self.rho[e0]);
        self.record(xi, s, q, (base.min(q), base))
    }

    /// March to the final time collecting the trajectory.
    pub fn run(mut self) -> Trajectory {
        let cfg = self.config;
        let dx = cfg.grid.dx();
        let rows = self.steps + 1;
        let mut records = Vec::with_capacity(rows);
        let mut tv = Vec::with_capacity(rows);
        let mut mass = Vec::with_capacity(rows);
        let mut front = Vec::with_capacity(rows);
        let e0 = cfg.grid.interface_edge();
        let mut states = cfg.store_states.then(|| Vec::with_capacity(rows));
        let mut pending: Vec<f64> = cfg.snapshots.clone();
        pending.sort_by(f64::total_cmp);
        let mut pending = pending.into_iter().peekable();
        let mut snapshots = Vec::new();

        loop {
            tv.push(total_variation(&self.rho));
            mass.push(self.rho.iter().sum::<f64>() * dx);
            front.push(self.rho[e0]);
            if let Some(st) = states.as_mut() {
                st.push(self.rho.clone());
            }
            while let Some(&req) = pending.peek() {
                if req <= self.t || self.is_finished() {
                    snapshots.push(Snapshot {
                        requested: req,
                        t: self.t,
                        y: self.y,
                        rho: self.rho.clone(),
                    });
                    pending.next();
                } else {
                    break;
                }
            }
            if self.is_finished() {
                records.push(self.peek_record());
                break;
            }
            records.push(self.step());
        }

        Trajectory {
            grid: cfg.grid.clone(),
            records,
            total_variation: tv,
            mass,
            front_density: front,
            states,
            snapshots,
            final_state: self.rho,
            boundary_inflow: self.boundary_inflow,
            boundary_outflow: self.boundary_outflow,
            density_range: self.range,
        }
    }
}

fn total_variation(rho: &[f64]) -> f64 {
    rho.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// Run following `config.coupling`.
pub fn run(config: &RunConfig) -> Result<Trajectory> {
    Ok(Simulation::new(config)?.run())
}

/// The non-local coupled scheme.
pub fn run_coupled(config: &RunConfig) -> Result<Trajectory> {
    run(&config.with_coupling(CouplingMode::Nonlocal))
}

/// Same loop with the speed read from the first cell ahead of the vehicle.
pub fn run_local(config: &RunConfig) -> Result<Trajectory> {
    run(&config.with_coupling(CouplingMode::Local))
}

/// Prescribed per-step speed and constraint; no feedback from the density.
pub fn run_frozen(config: &RunConfig, s_series: &[f64], q_series: &[f64]) -> Result<Trajectory> {
    Ok(Simulation::frozen(config, s_series, q_series)?.run())
}

/// Speed frozen on windows of length `delta`, rounded down to a whole number
/// of steps.
pub fn run_splitting(config: &RunConfig, delta: f64) -> Result<Trajectory> {
    run(&config.with_coupling(CouplingMode::Splitting { delta }))
}
