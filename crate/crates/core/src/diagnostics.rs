//! Verification instruments run over completed (or lockstep) simulations:
//! discrete entropy inequalities, total-variation and BV-bound certificates,
//! one-sided decay of positive jumps, regularity of the averaged density,
//! refinement and model-gap errors, and continuous-dependence probes.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{FluxModel, WeightProfile};
use crate::numflux::{FrozenFlux, NumericalFluxKind};
use crate::solver::{RunConfig, Simulation, Trajectory};

/// Slack allowed on inequalities that hold exactly in exact arithmetic.
pub const ROUNDOFF_TOL: f64 = 1e-12;
/// Default number of uniform entropy levels `k` in `[0, R]`.
pub const DEFAULT_K_SAMPLES: usize = 21;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// Preconditions of the check do not hold for this run.
    Inapplicable,
}

/// Where the worst margin of a check was found.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Location {
    pub step: Option<usize>,
    pub cell: Option<i64>,
    pub k: Option<f64>,
}

/// Outcome of one check. `worst_margin` is `lhs - rhs` of the checked
/// inequality at its worst point, so nonpositive values mean it holds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub name: String,
    pub status: CheckStatus,
    pub worst_margin: f64,
    pub tolerance: f64,
    pub location: Location,
    pub evaluated: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl DiagnosticsReport {
    fn new(name: &str, tolerance: f64) -> Self {
        DiagnosticsReport {
            name: name.to_string(),
            status: CheckStatus::Pass,
            worst_margin: f64::NEG_INFINITY,
            tolerance,
            location: Location::default(),
            evaluated: 0,
            note: None,
        }
    }

    fn inapplicable(name: &str, why: impl Into<String>) -> Self {
        DiagnosticsReport {
            status: CheckStatus::Inapplicable,
            worst_margin: 0.0,
            note: Some(why.into()),
            ..Self::new(name, 0.0)
        }
    }

    #[inline]
    fn observe(&mut self, margin: f64, at: impl FnOnce() -> Location) {
        self.evaluated += 1;
        if margin > self.worst_margin || margin.is_nan() {
            self.worst_margin = margin;
            self.location = at();
        }
    }

    fn finish(mut self) -> Self {
        if self.evaluated == 0 {
            self.worst_margin = 0.0;
        }
        self.status = if self.worst_margin <= self.tolerance {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        };
        self
    }

    pub fn passed(&self) -> bool {
        self.status == CheckStatus::Pass
    }
}

/// Kruzhkov entropy flux in the vehicle frame:
/// `sign(a - k) (f(a) - f(k)) - s |a - k|`.
pub fn kruzhkov_flux(model: &FluxModel, s: f64, a: f64, k: f64) -> Result<f64> {
    model.check_density(a)?;
    model.check_density(k)?;
    let f = model.flux();
    let phi = (a - k).signum() * (f.eval(a) - f.eval(k));
    let phi = if a == k { 0.0 } else { phi };
    Ok(phi - s * (a - k).abs())
}

/// `sum_j |rho_{j+1/2} - rho_{j-1/2}|`.
pub fn total_variation(profile: &[f64]) -> f64 {
    profile.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

fn stored_states<'a>(run: &'a Trajectory, check: &str) -> Result<&'a [Vec<f64>]> {
    run.states
        .as_deref()
        .ok_or_else(|| Error::Usage(format!("{check} needs a run with stored states")))
}

/// Check the cell entropy inequalities of the scheme for every step, cell and
/// entropy level. The levels are `k_samples` (or `DEFAULT_K_SAMPLES` uniform
/// values) plus the constraint roots of each step.
pub fn discrete_entropy_check(
    run: &Trajectory,
    config: &RunConfig,
    k_samples: Option<&[f64]>,
) -> Result<DiagnosticsReport> {
    let states = stored_states(run, "discrete_entropy_check")?;
    let model = &config.model;
    let grid = &run.grid;
    let r = model.r_max();
    let uniform: Vec<f64> = (0..DEFAULT_K_SAMPLES)
        .map(|i| r * i as f64 / (DEFAULT_K_SAMPLES - 1) as f64)
        .collect();
    let base_levels = k_samples.unwrap_or(&uniform);
    let dx = grid.dx();
    let e0 = grid.interface_edge();
    let n_cells = grid.cells();
    let mut report = DiagnosticsReport::new("discrete_entropy", ROUNDOFF_TOL);
    let mut phi = vec![0.0; n_cells + 1];

    for n in 0..run.steps() {
        let rec = &run.records[n];
        let dt = run.records[n + 1].t - rec.t;
        let (s, q) = (rec.s, rec.q);
        let ff = FrozenFlux::new(model, s);
        let mut levels = base_levels.to_vec();
        if q.is_finite() {
            if let Ok((c, h)) = model.constraint_roots(s, q) {
                levels.extend([c, h]);
            }
        }
        let (old, new) = (&states[n], &states[n + 1]);
        for &k in &levels {
            let mut phi_int = 0.0;
            for (e, p) in phi.iter_mut().enumerate() {
                let a = old[e.saturating_sub(1)];
                let b = old[e.min(n_cells - 1)];
                let kind = if e == e0 { config.interface_flux } else { config.bulk_flux };
                let up = ff.eval(kind, a.max(k), b.max(k));
                let down = ff.eval(kind, a.min(k), b.min(k));
                *p = up - down;
                if e == e0 {
                    phi_int = up.min(q) - down.min(q);
                }
            }
            let fk = ff.f(k);
            let source = fk - fk.min(q);
            for i in 0..n_cells {
                let lhs = ((new[i] - k).abs() - (old[i] - k).abs()) * dx + (phi[i + 1] - phi[i]) * dt;
                let rhs = if i + 1 == e0 {
                    source * dt + (phi[e0] - phi_int) * dt
                } else if i == e0 {
                    source * dt - (phi[e0] - phi_int) * dt
                } else {
                    0.0
                };
                report.observe(lhs - rhs, || Location {
                    step: Some(n),
                    cell: Some(i as i64 - e0 as i64),
                    k: Some(k),
                });
            }
        }
    }
    Ok(report.finish())
}

/// Sampled `C_0 = min |dF/drho|` outside the `epsilon` level band and the
/// resulting `C_eps = 4 (1 + sup |dF/ds|) / C_0`, with `sup |dF/ds| = R`.
pub fn bv_bound_constant(model: &FluxModel, epsilon: f64) -> Result<f64> {
    Ok(4.0 * (1.0 + model.r_max()) / level_band_slope(model, epsilon)?)
}

/// `C_0` of [`bv_bound_constant`].
pub fn level_band_slope(model: &FluxModel, epsilon: f64) -> Result<f64> {
    let gap = model.constraint_gap();
    if !(epsilon > 0.0 && epsilon <= gap.epsilon) {
        return Err(Error::domain(format!(
            "epsilon = {epsilon} must lie in ]0, {}]",
            gap.epsilon
        )));
    }
    const SPEEDS: usize = 1001;
    const DENSITIES: usize = 2001;
    let r = model.r_max();
    let slope = |s: f64, rho: f64| model.flux().derivative(rho) - s;
    let mut c0 = f64::INFINITY;
    for i in 0..SPEEDS {
        let s = model.sigma() * i as f64 / (SPEEDS - 1) as f64;
        let level = model.max_flux(s) - epsilon;
        let (check, hat) = model.constraint_roots(s, level.max(0.0))?;
        // the slope is monotone on each branch, so the band edges are the
        // extreme points; interior samples cover non-smooth tables
        c0 = c0.min(slope(s, check).abs()).min(slope(s, hat).abs());
        for j in 0..DENSITIES {
            let rho = r * j as f64 / (DENSITIES - 1) as f64;
            if rho <= check || rho >= hat {
                c0 = c0.min(slope(s, rho).abs());
            }
        }
    }
    Ok(c0)
}

/// `TV(rho^{n+1}) <= TV(rho^0) + 4R + C_eps (sum |dq| + sum |ds|)` for every step.
pub fn bv_bound_check(run: &Trajectory, r_max: f64, c_eps: f64) -> DiagnosticsReport {
    let mut report = DiagnosticsReport::new("bv_bound", ROUNDOFF_TOL);
    let tv0 = run.total_variation.first().copied().unwrap_or(0.0);
    let mut var_s = 0.0;
    let mut var_q = 0.0;
    for n in 0..run.steps() {
        if n > 0 {
            let (prev, cur) = (&run.records[n - 1], &run.records[n]);
            var_s += (cur.s - prev.s).abs();
            if cur.q.is_finite() && prev.q.is_finite() {
                var_q += (cur.q - prev.q).abs();
            } else if cur.q.is_finite() != prev.q.is_finite() {
                var_q = f64::INFINITY;
            }
        }
        let bound = tv0 + 4.0 * r_max + c_eps * (var_q + var_s);
        let margin = run.total_variation[n + 1] - bound;
        report.observe(margin, || Location {
            step: Some(n + 1),
            ..Location::default()
        });
    }
    report.finish()
}

/// One-sided decay of positive jumps `D_j = max(rho_{j-1/2} - rho_{j+1/2}, 0)`
/// away from the vehicle (edges `|j| >= 2`) and from the domain boundaries:
/// `D^{n+1}_j <= M - a M^2` with `M` the neighbouring maximum, and
/// `D^{n+1}_j <= 1 / (min(|j| - 1, n + 1) a)`, where `a = lambda alpha / 4`.
pub fn oslc_check(run: &Trajectory, config: &RunConfig, alpha: f64) -> Result<DiagnosticsReport> {
    const NAME: &str = "oslc";
    if matches!(config.bulk_flux, NumericalFluxKind::Rusanov | NumericalFluxKind::LocalRusanov) {
        return Ok(DiagnosticsReport::inapplicable(
            NAME,
            "needs Godunov or Engquist-Osher flux away from the vehicle",
        ));
    }
    if !(alpha > 0.0) {
        return Ok(DiagnosticsReport::inapplicable(NAME, "flux is not uniformly concave"));
    }
    let states = stored_states(run, "oslc_check")?;
    let grid = &run.grid;
    let dx = grid.dx();
    let e0 = grid.interface_edge() as i64;
    let cells = grid.cells();
    let jump = |rho: &[f64], e: usize| (rho[e - 1] - rho[e]).max(0.0);
    let mut report = DiagnosticsReport::new(NAME, ROUNDOFF_TOL);
    let mut a_min = f64::INFINITY;
    for n in 0..run.steps() {
        let dt = run.records[n + 1].t - run.records[n].t;
        let a = dt / dx * alpha / 4.0;
        a_min = a_min.min(a);
        let (old, new) = (&states[n], &states[n + 1]);
        for e in 2..cells - 1 {
            let j = e as i64 - e0;
            if j.abs() <= 1 {
                continue;
            }
            let m = jump(old, e - 1).max(jump(old, e)).max(jump(old, e + 1));
            let d = jump(new, e);
            let decay = d - (m - a * m * m);
            let dist = ((j.abs() - 1) as f64).min((n + 1) as f64);
            let cap = d - 1.0 / (dist * a_min);
            let margin = decay.max(cap);
            report.observe(margin, || Location {
                step: Some(n + 1),
                cell: Some(j),
                k: None,
            });
        }
    }
    Ok(report.finish())
}

/// `K = max(||mu||_1, TV(mu))`.
pub fn weight_regularity_constant(weight: &WeightProfile) -> f64 {
    weight.mass().max(weight.total_variation())
}

/// Two-point bound `|xi(t) - xi(tau)| <= R L K (|t - tau| + 2 dt)` over all
/// consecutive rows and a strided sample of row pairs.
pub fn xi_regularity_check(
    run: &Trajectory,
    weight: &WeightProfile,
    r_max: f64,
    cfl_constant: f64,
    dt: f64,
) -> DiagnosticsReport {
    const STRIDED: usize = 100;
    let k = weight_regularity_constant(weight);
    let mut report = DiagnosticsReport::new("xi_regularity", ROUNDOFF_TOL);
    let rows = &run.records;
    let mut pair = |m: usize, n: usize| {
        let (a, b) = (&rows[m], &rows[n]);
        let bound = r_max * cfl_constant * k * ((a.t - b.t).abs() + 2.0 * dt);
        report.observe((a.xi - b.xi).abs() - bound, || Location {
            step: Some(n),
            cell: Some(m as i64),
            k: None,
        });
    };
    for n in 1..rows.len() {
        pair(n - 1, n);
    }
    let stride = (rows.len() / STRIDED).max(1);
    let picks: Vec<usize> = (0..rows.len()).step_by(stride).collect();
    for (i, &m) in picks.iter().enumerate() {
        for &n in &picks[i + 1..] {
            pair(m, n);
        }
    }
    report.finish()
}

/// Errors between a run and a reference on the same or a 2:1 refined mesh.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct PairErrors {
    /// `L1(0, T; L1)` distance of the densities.
    pub density: f64,
    /// `L_inf(0, T)` distance of the vehicle positions.
    pub position: f64,
}

/// Accumulates time-integrated `L1` distances on the coarse clock.
struct PairAccumulator {
    ratio: usize,
    dx_fine: f64,
    errors: PairErrors,
}

impl PairAccumulator {
    fn new(ratio: usize, dx_fine: f64) -> Self {
        PairAccumulator {
            ratio,
            dx_fine,
            errors: PairErrors::default(),
        }
    }

    fn l1(&self, coarse: &[f64], fine: &[f64]) -> f64 {
        let r = self.ratio;
        fine.iter()
            .enumerate()
            .map(|(i, &v)| (coarse[i / r] - v).abs())
            .sum::<f64>()
            * self.dx_fine
    }

    fn density(&mut self, h: f64, coarse: &[f64], fine: &[f64]) {
        self.errors.density += h * self.l1(coarse, fine);
    }

    fn position(&mut self, y_coarse: f64, y_fine: f64) {
        self.errors.position = self.errors.position.max((y_coarse - y_fine).abs());
    }
}

fn latest_row_at(run: &Trajectory, t: f64) -> usize {
    run.records.partition_point(|r| r.t <= t).saturating_sub(1)
}

/// `E_rho = ||rho_D - rho_{D/2}||_{L1(0,T;L1)}` and
/// `E_y = ||y_D - y_{D/2}||_inf` from two stored runs, the fine one on the
/// 2:1 refinement of the coarse mesh.
pub fn refinement_errors(fine: &Trajectory, coarse: &Trajectory) -> Result<PairErrors> {
    if !coarse.grid.nests(&fine.grid) {
        return Err(Error::Usage("fine grid is not a 2:1 refinement of the coarse grid".into()));
    }
    let fs = stored_states(fine, "refinement_errors")?;
    let cs = stored_states(coarse, "refinement_errors")?;
    let mut acc = PairAccumulator::new(2, fine.grid.dx());
    for n in 0..coarse.records.len() {
        let t = coarse.records[n].t;
        let m = latest_row_at(fine, t);
        if n + 1 < coarse.records.len() {
            acc.density(coarse.records[n + 1].t - t, &cs[n], &fs[m]);
        }
        acc.position(coarse.records[n].y, fine.records[m].y);
    }
    Ok(acc.errors)
}

/// [`refinement_errors`] computed while marching both runs, without storing
/// states. `fine` must be the 2:1 refinement of `coarse`.
pub fn refinement_errors_streaming(coarse: &RunConfig, fine: &RunConfig) -> Result<PairErrors> {
    if !coarse.grid.nests(&fine.grid) {
        return Err(Error::Usage("fine grid is not a 2:1 refinement of the coarse grid".into()));
    }
    refinement_lockstep(&mut Simulation::new(coarse)?, &mut Simulation::new(fine)?)
}

/// [`refinement_errors_streaming`] on caller-owned simulations, which are
/// left at the final time.
pub fn refinement_lockstep(c: &mut Simulation, f: &mut Simulation) -> Result<PairErrors> {
    if !c.config().grid.nests(&f.config().grid) {
        return Err(Error::Usage("fine grid is not a 2:1 refinement of the coarse grid".into()));
    }
    let mut acc = PairAccumulator::new(2, f.config().grid.dx());
    loop {
        let t = c.time();
        while !f.is_finished() && f.next_time() <= t {
            f.step();
        }
        acc.position(c.position(), f.position());
        if c.is_finished() {
            break;
        }
        let h = c.next_time() - t;
        acc.density(h, c.density(), f.density());
        c.step();
    }
    Ok(acc.errors)
}

/// `E1 = ||rho - rho_bar||_{L1(0,T;L1)}` and `Einf = ||y - y_bar||_inf`
/// between two stored runs on the same mesh and clock.
pub fn model_gap_errors(nonlocal: &Trajectory, local: &Trajectory) -> Result<PairErrors> {
    if nonlocal.grid != local.grid || nonlocal.records.len() != local.records.len() {
        return Err(Error::Usage("model gap needs runs on the same mesh and clock".into()));
    }
    if nonlocal.times().zip(local.times()).any(|(a, b)| a != b) {
        return Err(Error::Usage("model gap needs runs on the same clock".into()));
    }
    let a = stored_states(nonlocal, "model_gap_errors")?;
    let b = stored_states(local, "model_gap_errors")?;
    let mut acc = PairAccumulator::new(1, nonlocal.grid.dx());
    for n in 0..nonlocal.records.len() {
        if n + 1 < nonlocal.records.len() {
            let h = nonlocal.records[n + 1].t - nonlocal.records[n].t;
            acc.density(h, &a[n], &b[n]);
        }
        acc.position(nonlocal.records[n].y, local.records[n].y);
    }
    Ok(acc.errors)
}

/// Model-gap errors of several runs against one shared reference, marched in
/// lockstep. All configs must share mesh and time step.
pub fn model_gap_streaming(reference: &RunConfig, others: &[RunConfig]) -> Result<Vec<PairErrors>> {
    let mut sims = others
        .iter()
        .map(Simulation::new)
        .collect::<Result<Vec<_>>>()?;
    model_gap_lockstep(&mut Simulation::new(reference)?, &mut sims)
}

/// [`model_gap_streaming`] on caller-owned simulations, which are left at the
/// final time.
pub fn model_gap_lockstep(base: &mut Simulation, sims: &mut [Simulation]) -> Result<Vec<PairErrors>> {
    let grid = &base.config().grid;
    for s in sims.iter() {
        if &s.config().grid != grid
            || s.time_step() != base.time_step()
            || s.step_count() != base.step_count()
        {
            return Err(Error::Usage("model gap needs runs on the same mesh and clock".into()));
        }
    }
    let mut accs: Vec<PairAccumulator> = sims.iter().map(|_| PairAccumulator::new(1, grid.dx())).collect();
    loop {
        for (sim, acc) in sims.iter().zip(accs.iter_mut()) {
            acc.position(sim.position(), base.position());
        }
        if base.is_finished() {
            break;
        }
        let h = base.next_time() - base.time();
        for (sim, acc) in sims.iter_mut().zip(accs.iter_mut()) {
            acc.density(h, sim.density(), base.density());
            sim.step();
        }
        base.step();
    }
    Ok(accs.into_iter().map(|a| a.errors).collect())
}

/// Errors of a refinement ladder.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RefinementStudy {
    /// Coarse cell count of each level.
    pub cells: Vec<usize>,
    pub e_rho: Vec<f64>,
    pub e_y: Vec<f64>,
}

impl RefinementStudy {
    pub fn validate(&self) -> Result<()> {
        let n = self.cells.len();
        if self.e_rho.len() != n || self.e_y.len() != n {
            return Err(Error::Usage("refinement study columns differ in length".into()));
        }
        if self.cells.windows(2).any(|w| w[1] != 2 * w[0]) {
            return Err(Error::Usage("refinement levels must double the cell count".into()));
        }
        Ok(())
    }
}

/// Least-squares slope of `-log2(error)` against the level index.
pub fn fitted_order(errors: &[f64]) -> Result<f64> {
    if errors.len() < 3 {
        return Err(Error::Usage("an order fit needs at least 3 levels".into()));
    }
    if errors.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
        return Err(Error::domain("errors must be positive and finite"));
    }
    let n = errors.len() as f64;
    let xs: Vec<f64> = (0..errors.len()).map(|i| i as f64).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.log2()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(-sxy / sxx)
}

/// Fitted orders `(order_rho, order_y)`.
pub fn convergence_order(study: &RefinementStudy) -> Result<(f64, f64)> {
    study.validate()?;
    Ok((fitted_order(&study.e_rho)?, fitted_order(&study.e_y)?))
}

/// Perturbation of the initial data for [`stability_probe`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Perturbation {
    /// Added to every value of the initial profile (then clamped to `[0, R]`).
    pub density_offset: f64,
    /// Added to the initial vehicle position.
    pub position_offset: f64,
}

/// Distance between a run and its perturbed twin over time.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityCurve {
    pub t: Vec<f64>,
    pub density_gap: Vec<f64>,
    pub position_gap: Vec<f64>,
}

impl StabilityCurve {
    pub fn final_density_gap(&self) -> f64 {
        *self.density_gap.last().unwrap_or(&0.0)
    }
}

/// Initial data of `config` perturbed by `p`.
pub fn perturbed(config: &RunConfig, p: Perturbation) -> RunConfig {
    let r = config.model.r_max();
    let mut out = config.clone();
    for v in &mut out.initial.values {
        *v = (*v + p.density_offset).clamp(0.0, r);
    }
    out.y0 += p.position_offset;
    out
}

/// Road-frame `L1` distance of the densities and distance of the vehicle
/// positions between `config` and its perturbation, at every step.
pub fn stability_probe(config: &RunConfig, p: Perturbation) -> Result<StabilityCurve> {
    let other = perturbed(config, p);
    let mut a = Simulation::new(config)?;
    let mut b = Simulation::new(&other)?;
    let dx = config.grid.dx();
    let mut curve = StabilityCurve {
        t: Vec::new(),
        density_gap: Vec::new(),
        position_gap: Vec::new(),
    };
    loop {
        curve.t.push(a.time());
        curve.density_gap.push(road_frame_l1(a.density(), a.position(), b.density(), b.position(), dx));
        curve.position_gap.push((a.position() - b.position()).abs());
        if a.is_finished() {
            break;
        }
        a.step();
        b.step();
    }
    Ok(curve)
}

/// `L1` distance of two cell profiles living in frames shifted by `ya` and
/// `yb`, over the part of the road both meshes cover.
fn road_frame_l1(a: &[f64], ya: f64, b: &[f64], yb: f64, dx: f64) -> f64 {
    let shift = (yb - ya) / dx;
    if shift == 0.0 {
        return a.iter().zip(b).map(|(u, v)| (u - v).abs()).sum::<f64>() * dx;
    }
    // exact integral of |a(u) - b(u - shift)| over the merged edge set
    let n = a.len() as f64;
    let mut edges: Vec<f64> = (0..=a.len()).map(|i| i as f64).collect();
    edges.extend((0..=b.len()).map(|i| i as f64 + shift));
    edges.sort_by(f64::total_cmp);
    edges.dedup();
    let at = |p: &[f64], x: f64| p[(x as usize).min(p.len() - 1)];
    // only the overlap of the two meshes is compared
    let lo = shift.max(0.0);
    let hi = n + shift.min(0.0);
    edges
        .windows(2)
        .filter(|w| w[0] >= lo && w[1] <= hi)
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            (at(a, mid) - at(b, mid - shift)).abs() * (w[1] - w[0])
        })
        .sum::<f64>()
        * dx
}

/// Qualitative continuous dependence: the final density gap of the halved
/// perturbation is at most `4 * (gap / 2)`.
pub fn continuous_dependence_check(config: &RunConfig, p: Perturbation) -> Result<DiagnosticsReport> {
    let full = stability_probe(config, p)?;
    let half = stability_probe(
        config,
        Perturbation {
            density_offset: 0.5 * p.density_offset,
            position_offset: 0.5 * p.position_offset,
        },
    )?;
    let mut report = DiagnosticsReport::new("continuous_dependence", ROUNDOFF_TOL);
    let margin = half.final_density_gap() - 4.0 * 0.5 * full.final_density_gap();
    report.observe(margin, Location::default);
    Ok(report.finish())
}

/// Length of the initial time interval during which the vehicle is faster
/// than the cars just ahead of it, `s > f(rho_front) / rho_front`.
pub fn artifact_duration(run: &Trajectory, model: &FluxModel) -> f64 {
    let steps = run.steps();
    let mut end = 0.0;
    for n in 0..steps {
        let rec = &run.records[n];
        if rec.s > model.car_speed(run.front_density[n]) + ROUNDOFF_TOL {
            end = run.records[n + 1].t;
        } else {
            break;
        }
    }
    end
}

/// Step speeds stay in `[0, Sigma]` and each displacement is `dt * s`.
pub fn kinematics_check(run: &Trajectory, sigma: f64) -> DiagnosticsReport {
    let mut report = DiagnosticsReport::new("vehicle_kinematics", ROUNDOFF_TOL);
    for n in 0..run.steps() {
        let (a, b) = (&run.records[n], &run.records[n + 1]);
        let drift = (b.y - a.y - (b.t - a.t) * a.s).abs();
        report.observe((a.s - sigma).max(-a.s).max(drift), || Location {
            step: Some(n),
            ..Location::default()
        });
    }
    report.finish()
}

/// Every stored or final density lies in `[0, R]`.
pub fn range_check(run: &Trajectory, r_max: f64) -> DiagnosticsReport {
    let mut report = DiagnosticsReport::new("density_range", 0.0);
    let mut visit = |step: Option<usize>, rho: &[f64]| {
        for (i, &v) in rho.iter().enumerate() {
            report.observe((v - r_max).max(-v), || Location {
                step,
                cell: Some(i as i64),
                k: None,
            });
        }
    };
    match &run.states {
        Some(states) => {
            for (n, rho) in states.iter().enumerate() {
                visit(Some(n), rho);
            }
        }
        None => visit(Some(run.steps()), &run.final_state),
    }
    for snap in &run.snapshots {
        visit(None, &snap.rho);
    }
    report.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::model::{ConstraintLaw, PiecewiseConstantProfile, SpeedLaw};
    use crate::solver::{run, run_coupled, CouplingMode, DEFAULT_CFL_TARGET};
    use rand::{Rng, SeedableRng};

    fn model() -> FluxModel {
        FluxModel::greenshields(
            SpeedLaw::LwrMin { v_bus: 0.3 },
            ConstraintLaw::Bottleneck { coefficient: 0.6 },
        )
        .unwrap()
    }

    fn config(initial: PiecewiseConstantProfile, cells: usize) -> RunConfig {
        RunConfig {
            model: model(),
            grid: Grid::new(-0.5, 0.5, cells).unwrap(),
            weight: WeightProfile::mu(3),
            initial,
            y0: 0.5,
            final_time: 0.3,
            cfl_target: DEFAULT_CFL_TARGET,
            bulk_flux: NumericalFluxKind::Rusanov,
            interface_flux: NumericalFluxKind::Godunov,
            coupling: CouplingMode::Nonlocal,
            snapshots: vec![],
            store_states: true,
        }
    }

    #[test]
    fn kruzhkov_examples() {
        let m = model();
        assert_eq!(kruzhkov_flux(&m, 0.2, 0.4, 0.4).unwrap(), 0.0);
        assert!(kruzhkov_flux(&m, 0.0, 0.75, 0.25).unwrap().abs() < 1e-15);
        assert!((kruzhkov_flux(&m, 0.3, 0.75, 0.25).unwrap() + 0.15).abs() < 1e-15);
        assert!(kruzhkov_flux(&m, 0.3, 1.5, 0.25).is_err());
    }

    #[test]
    fn total_variation_matches_pairwise_sum() {
        assert_eq!(total_variation(&[0.3; 10]), 0.0);
        assert!((total_variation(&[0.4, 0.5]) - 0.1).abs() < 1e-15);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let p: Vec<f64> = (0..100).map(|_| rng.gen::<f64>()).collect();
            let mut brute = 0.0;
            for i in 1..p.len() {
                brute += f64::abs(p[i] - p[i - 1]);
            }
            assert_eq!(total_variation(&p), brute);
        }
    }

    #[test]
    fn entropy_constant_state_holds_with_equality_at_k() {
        let cfg = config(PiecewiseConstantProfile::constant(0.1), 64);
        let tr = run_coupled(&cfg).unwrap();
        // constraint inactive at 0.1: F(0.3, 0.1) = 0.06 < q = 0.0735
        assert!(tr.records.iter().all(|r| !r.constraint_active));
        let rep = discrete_entropy_check(&tr, &cfg, Some(&[0.1])).unwrap();
        assert!(rep.passed());
        assert!(rep.worst_margin.abs() < 1e-15, "{rep:?}");
    }

    #[test]
    fn entropy_check_detects_corruption() {
        let cfg = config(PiecewiseConstantProfile::riemann(0.4, 0.5, 0.5), 64);
        let mut tr = run_coupled(&cfg).unwrap();
        assert!(discrete_entropy_check(&tr, &cfg, None).unwrap().passed());
        let states = tr.states.as_mut().unwrap();
        states[5][10] += 0.05;
        let rep = discrete_entropy_check(&tr, &cfg, None).unwrap();
        assert_eq!(rep.status, CheckStatus::Fail);
        assert!(rep.worst_margin.is_finite());
        let step = rep.location.step.unwrap();
        assert!(step == 4 || step == 5, "{rep:?}");
        let no_states = Trajectory { states: None, ..tr };
        assert!(matches!(discrete_entropy_check(&no_states, &cfg, None), Err(Error::Usage(_))));
    }

    #[test]
    fn bv_constant_matches_closed_form() {
        let m = model();
        // F = max - (rho - rho_bar)^2, so |F'| = 2 sqrt(eps) on the eps band edge
        let c0 = level_band_slope(&m, 0.01).unwrap();
        assert!((c0 - 0.2).abs() < 1e-12);
        assert!((bv_bound_constant(&m, 0.01).unwrap() - 40.0).abs() < 1e-9);
        assert!((bv_bound_constant(&m, 0.04).unwrap() - 20.0).abs() < 1e-9);
        assert!(bv_bound_constant(&m, 0.05).is_err());
        assert!(bv_bound_constant(&m, 0.0).is_err());
    }

    #[test]
    fn bv_check_on_constant_run() {
        let cfg = config(PiecewiseConstantProfile::constant(0.5), 32);
        let tr = run_coupled(&cfg).unwrap();
        let rep = bv_bound_check(&tr, 1.0, 40.0);
        assert!(rep.passed());
    }

    #[test]
    fn oslc_gates_and_trivial_profiles() {
        let mut cfg = config(PiecewiseConstantProfile::riemann(0.8, 0.5, 0.5), 64);
        let tr = run_coupled(&cfg).unwrap();
        let rep = oslc_check(&tr, &cfg, 2.0).unwrap();
        assert_eq!(rep.status, CheckStatus::Inapplicable);

        // nondecreasing in x: every D vanishes
        cfg.bulk_flux = NumericalFluxKind::Godunov;
        cfg.initial = PiecewiseConstantProfile::riemann(0.2, 0.3, 0.7);
        cfg.coupling = CouplingMode::Frozen { s: 0.1, q: None };
        let tr = run(&cfg).unwrap();
        let rep = oslc_check(&tr, &cfg, 2.0).unwrap();
        assert!(rep.passed(), "{rep:?}");
    }

    #[test]
    fn xi_regularity_and_negative_control() {
        let cfg = config(PiecewiseConstantProfile::riemann(0.8, 0.4, 0.45), 64);
        let mut tr = run_coupled(&cfg).unwrap();
        let args = (1.0, cfg.cfl_constant(), cfg.time_step());
        assert!(xi_regularity_check(&tr, &cfg.weight, args.0, args.1, args.2).passed());
        tr.records[10].xi += 50.0;
        assert!(!xi_regularity_check(&tr, &cfg.weight, args.0, args.1, args.2).passed());
    }

    #[test]
    fn prolonged_l1_on_crafted_cells() {
        let acc = PairAccumulator::new(2, 0.25);
        // coarse cells of width 0.5: [1, 0]; fine [1, 0.5, 0.25, 0]
        let v = acc.l1(&[1.0, 0.0], &[1.0, 0.5, 0.25, 0.0]);
        assert!((v - (0.5 * 0.25 + 0.25 * 0.25)).abs() < 1e-15);
    }

    #[test]
    fn refinement_errors_dense_and_streaming_agree() {
        let coarse = config(PiecewiseConstantProfile::riemann(0.8, 0.4, 0.45), 40);
        let fine = coarse.with_grid(coarse.grid.refined().unwrap());
        let tc = run_coupled(&coarse).unwrap();
        let tf = run_coupled(&fine).unwrap();
        let dense = refinement_errors(&tf, &tc).unwrap();
        let streamed = refinement_errors_streaming(&coarse, &fine).unwrap();
        assert_eq!(dense, streamed);
        assert!(dense.density > 0.0 && dense.position >= 0.0);

        let same = refinement_errors(&tf, &tf);
        assert!(matches!(same, Err(Error::Usage(_))));
    }

    #[test]
    fn model_gap_of_identical_runs_vanishes() {
        let cfg = config(PiecewiseConstantProfile::riemann(0.8, 0.4, 0.45), 40);
        let a = run_coupled(&cfg).unwrap();
        assert_eq!(model_gap_errors(&a, &a).unwrap(), PairErrors::default());
        let local = cfg.with_coupling(CouplingMode::Local);
        let b = run(&local).unwrap();
        let dense = model_gap_errors(&a, &b).unwrap();
        let streamed = model_gap_streaming(&local, &[cfg.clone()]).unwrap();
        assert_eq!(dense, streamed[0]);
    }

    #[test]
    fn order_fit() {
        let halving: Vec<f64> = (0..6).map(|i| 0.5f64.powi(i)).collect();
        assert!((fitted_order(&halving).unwrap() - 1.0).abs() < 1e-15);
        assert!(fitted_order(&[1.0, 0.5]).is_err());
        assert!(matches!(fitted_order(&[1.0, 0.0, 0.5]), Err(Error::Domain(_))));
        let study = RefinementStudy {
            cells: vec![10, 20, 40],
            e_rho: vec![0.4, 0.2, 0.1],
            e_y: vec![0.8, 0.2, 0.05],
        };
        let (a, b) = convergence_order(&study).unwrap();
        assert!((a - 1.0).abs() < 1e-15 && (b - 2.0).abs() < 1e-15);
    }

    #[test]
    fn zero_perturbation_gives_zero_gap() {
        let cfg = config(PiecewiseConstantProfile::riemann(0.4, 0.5, 0.5), 40);
        let c = stability_probe(&cfg, Perturbation::default()).unwrap();
        assert!(c.density_gap.iter().all(|&g| g == 0.0));
        assert!(c.position_gap.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn road_frame_l1_handles_shifts() {
        // same profile seen from frames one cell apart
        let a = [0.0, 1.0, 0.0, 0.0];
        let b = [1.0, 0.0, 0.0, 0.0];
        assert!(road_frame_l1(&a, 0.0, &b, 0.1, 0.1).abs() < 1e-15);
        assert!((road_frame_l1(&a, 0.0, &a, 0.0, 0.1)).abs() < 1e-15);
        assert!((road_frame_l1(&a, 0.0, &b, 0.0, 0.1) - 0.2).abs() < 1e-15);
    }
}
