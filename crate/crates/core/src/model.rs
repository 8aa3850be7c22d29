//! Continuous model data: the fundamental diagram `f`, the vehicle speed law
//! `omega`, the constraint law `Q`, weight functions and piecewise-constant
//! initial data.
//!
//! In the vehicle frame the normal flux through the trajectory is
//! `F(s, rho) = f(rho) - s * rho`; every helper here is phrased in terms of
//! that function.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Absolute tolerance of the bracketing root finders.
pub const ROOT_TOL: f64 = 1e-12;
/// Iteration cap for bisection and golden-section search.
pub const MAX_ITER: usize = 200;
/// Number of speed samples used by [`FluxModel::constraint_gap`].
pub const GAP_SAMPLES: usize = 1001;

const RANGE_SLACK: f64 = 1e-12;

/// Fundamental diagram `f` on `[0, R]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FundamentalDiagram {
    /// `f(rho) = v_max * rho * (1 - rho / r_max)`.
    Quadratic { r_max: f64, v_max: f64 },
    /// Piecewise-linear interpolation of a strictly concave table.
    Tabulated { rho: Vec<f64>, flux: Vec<f64> },
}

impl FundamentalDiagram {
    pub fn greenshields() -> Self {
        FundamentalDiagram::Quadratic {
            r_max: 1.0,
            v_max: 1.0,
        }
    }

    pub fn r_max(&self) -> f64 {
        match self {
            FundamentalDiagram::Quadratic { r_max, .. } => *r_max,
            FundamentalDiagram::Tabulated { rho, .. } => *rho.last().unwrap_or(&0.0),
        }
    }

    #[inline]
    pub fn eval(&self, rho: f64) -> f64 {
        match self {
            FundamentalDiagram::Quadratic { r_max, v_max } => v_max * rho * (1.0 - rho / r_max),
            FundamentalDiagram::Tabulated { rho: nodes, flux } => {
                let i = segment_index(nodes, rho);
                let t = (rho - nodes[i]) / (nodes[i + 1] - nodes[i]);
                flux[i] + t * (flux[i + 1] - flux[i])
            }
        }
    }

    /// Derivative; on a tabulated curve the right-hand slope at nodes.
    pub fn derivative(&self, rho: f64) -> f64 {
        match self {
            FundamentalDiagram::Quadratic { r_max, v_max } => v_max * (1.0 - 2.0 * rho / r_max),
            FundamentalDiagram::Tabulated { rho: nodes, flux } => {
                let i = segment_index(nodes, rho);
                (flux[i + 1] - flux[i]) / (nodes[i + 1] - nodes[i])
            }
        }
    }

    /// `sup |f'|` over `[0, R]`.
    pub fn max_slope(&self) -> f64 {
        match self {
            FundamentalDiagram::Quadratic { v_max, .. } => v_max.abs(),
            FundamentalDiagram::Tabulated { rho, flux } => rho
                .windows(2)
                .zip(flux.windows(2))
                .map(|(r, f)| ((f[1] - f[0]) / (r[1] - r[0])).abs())
                .fold(0.0, f64::max),
        }
    }

    /// Uniform concavity constant `alpha` with `f'' <= -alpha`, when one exists.
    pub fn concavity(&self) -> Option<f64> {
        match self {
            FundamentalDiagram::Quadratic { r_max, v_max } => Some(2.0 * v_max / r_max),
            FundamentalDiagram::Tabulated { .. } => None,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            FundamentalDiagram::Quadratic { r_max, v_max } => {
                if !(r_max.is_finite() && *r_max > 0.0 && v_max.is_finite() && *v_max > 0.0) {
                    return Err(Error::Model(format!(
                        "quadratic flux needs r_max > 0 and v_max > 0, got ({r_max}, {v_max})"
                    )));
                }
            }
            FundamentalDiagram::Tabulated { rho, flux } => {
                if rho.len() < 3 || rho.len() != flux.len() {
                    return Err(Error::Model(
                        "tabulated flux needs at least 3 nodes and matching lengths".into(),
                    ));
                }
                if rho[0] != 0.0 || flux[0] != 0.0 || *flux.last().unwrap() != 0.0 {
                    return Err(Error::Model("tabulated flux must satisfy f(0) = f(R) = 0".into()));
                }
                if rho.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::Model("tabulated densities must increase".into()));
                }
                let slopes: Vec<f64> = rho
                    .windows(2)
                    .zip(flux.windows(2))
                    .map(|(r, f)| (f[1] - f[0]) / (r[1] - r[0]))
                    .collect();
                if slopes.windows(2).any(|w| !(w[1] < w[0])) {
                    return Err(Error::Model("tabulated flux must be strictly concave".into()));
                }
                if !(slopes[0] > 0.0 && *slopes.last().unwrap() < 0.0) {
                    return Err(Error::Model("tabulated flux must be bell-shaped".into()));
                }
            }
        }
        Ok(())
    }
}

fn segment_index(nodes: &[f64], x: f64) -> usize {
    let last = nodes.len() - 2;
    nodes.partition_point(|&n| n <= x).saturating_sub(1).min(last)
}

/// Vehicle speed as a function of the (averaged) density ahead.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpeedLaw {
    /// `rho -> min{v_bus, 1 - rho}`.
    LwrMin { v_bus: f64 },
    /// `alpha / (beta + rho)^2` on `[0, rho_star]`, `1 - rho` beyond, with
    /// `alpha, beta` calibrated so that `omega(0) = v0` and
    /// `omega(rho_star) = v1`.
    RationalThenLinear { v0: f64, v1: f64, rho_star: f64 },
    /// Piecewise-linear nonincreasing table.
    Tabulated { rho: Vec<f64>, speed: Vec<f64> },
}

impl SpeedLaw {
    fn validate(&self) -> Result<()> {
        match self {
            SpeedLaw::LwrMin { v_bus } => {
                if !(v_bus.is_finite() && *v_bus >= 0.0) {
                    return Err(Error::Model(format!("v_bus must be nonnegative, got {v_bus}")));
                }
            }
            SpeedLaw::RationalThenLinear { v0, v1, rho_star } => {
                calibrate_rational_omega(*v0, *v1, *rho_star)?;
            }
            SpeedLaw::Tabulated { rho, speed } => {
                if rho.len() < 2 || rho.len() != speed.len() {
                    return Err(Error::Model("tabulated speed law needs matching node lists".into()));
                }
                if rho.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::Model("tabulated speed densities must increase".into()));
                }
                if speed.windows(2).any(|w| w[1] > w[0]) || speed.iter().any(|&v| v < 0.0) {
                    return Err(Error::Model(
                        "tabulated speed must be nonnegative and nonincreasing".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Evaluated form of a [`SpeedLaw`] with calibrated constants.
#[derive(Clone, Debug, PartialEq)]
enum SpeedFn {
    LwrMin { v_bus: f64 },
    Rational { alpha: f64, beta: f64, rho_star: f64 },
    Tabulated { rho: Vec<f64>, speed: Vec<f64> },
}

impl SpeedFn {
    fn from_law(law: &SpeedLaw) -> Result<Self> {
        Ok(match law {
            SpeedLaw::LwrMin { v_bus } => SpeedFn::LwrMin { v_bus: *v_bus },
            SpeedLaw::RationalThenLinear { v0, v1, rho_star } => {
                let (alpha, beta) = calibrate_rational_omega(*v0, *v1, *rho_star)?;
                SpeedFn::Rational {
                    alpha,
                    beta,
                    rho_star: *rho_star,
                }
            }
            SpeedLaw::Tabulated { rho, speed } => SpeedFn::Tabulated {
                rho: rho.clone(),
                speed: speed.clone(),
            },
        })
    }

    #[inline]
    fn eval(&self, rho: f64) -> f64 {
        match self {
            SpeedFn::LwrMin { v_bus } => v_bus.min(1.0 - rho).max(0.0),
            SpeedFn::Rational {
                alpha,
                beta,
                rho_star,
            } => {
                if rho <= *rho_star {
                    alpha / ((beta + rho) * (beta + rho))
                } else {
                    (1.0 - rho).max(0.0)
                }
            }
            SpeedFn::Tabulated { rho: nodes, speed } => {
                if rho <= nodes[0] {
                    return speed[0];
                }
                if rho >= *nodes.last().unwrap() {
                    return *speed.last().unwrap();
                }
                let i = segment_index(nodes, rho);
                let t = (rho - nodes[i]) / (nodes[i + 1] - nodes[i]);
                speed[i] + t * (speed[i + 1] - speed[i])
            }
        }
    }
}

/// Solve `alpha / beta^2 = v0` and `alpha / (beta + rho_star)^2 = v1`, with the
/// continuity requirement `v1 = 1 - rho_star` against the linear branch.
pub fn calibrate_rational_omega(v0: f64, v1: f64, rho_star: f64) -> Result<(f64, f64)> {
    if !(v0.is_finite() && v1.is_finite() && rho_star.is_finite()) {
        return Err(Error::Calibration("non-finite calibration input".into()));
    }
    if !(0.0 < v1 && v1 < v0) {
        return Err(Error::Calibration(format!(
            "need 0 < v1 < v0, got v0 = {v0}, v1 = {v1}"
        )));
    }
    if !(rho_star > 0.0 && rho_star < 1.0) {
        return Err(Error::Calibration(format!("rho_star = {rho_star} outside ]0, 1[")));
    }
    if ((1.0 - rho_star) - v1).abs() > 1e-12 {
        return Err(Error::Calibration(format!(
            "discontinuous speed law: v1 = {v1} but 1 - rho_star = {}",
            1.0 - rho_star
        )));
    }
    let beta = rho_star / ((v0 / v1).sqrt() - 1.0);
    let alpha = v0 * beta * beta;
    Ok((alpha, beta))
}

/// Constraint law `Q(s)` bounding the flux through the vehicle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintLaw {
    /// `Q(s) = coefficient * ((1 - s) / 2)^2`.
    Bottleneck { coefficient: f64 },
    /// `Q(s) = value`.
    Constant { value: f64 },
    /// No constraint, `Q = +inf`.
    Unconstrained,
}

impl ConstraintLaw {
    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        match self {
            ConstraintLaw::Bottleneck { coefficient } => {
                let h = 0.5 * (1.0 - s);
                coefficient * h * h
            }
            ConstraintLaw::Constant { value } => *value,
            ConstraintLaw::Unconstrained => f64::INFINITY,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            ConstraintLaw::Bottleneck { coefficient } if !(*coefficient >= 0.0) => Err(
                Error::Model(format!("constraint coefficient must be >= 0, got {coefficient}")),
            ),
            ConstraintLaw::Constant { value } if !(*value >= 0.0) => Err(Error::Model(format!(
                "constant constraint must be >= 0, got {value}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Result of [`FluxModel::constraint_gap`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConstraintGap {
    /// `min_s (max_rho F(s, rho) - Q(s))` over the speed samples.
    pub epsilon: f64,
    /// Speed at which the minimum is attained.
    pub at_speed: f64,
    /// Set when the gap is not strictly positive.
    pub violated: bool,
}

/// The complete flux model: fundamental diagram, speed law and constraint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelSpec", into = "ModelSpec")]
pub struct FluxModel {
    flux: FundamentalDiagram,
    speed: SpeedLaw,
    constraint: ConstraintLaw,
    speed_fn: SpeedFn,
    sigma: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSpec {
    flux: FundamentalDiagram,
    omega: SpeedLaw,
    constraint: ConstraintLaw,
}

impl TryFrom<ModelSpec> for FluxModel {
    type Error = Error;

    fn try_from(spec: ModelSpec) -> Result<Self> {
        FluxModel::new(spec.flux, spec.omega, spec.constraint)
    }
}

impl From<FluxModel> for ModelSpec {
    fn from(m: FluxModel) -> Self {
        ModelSpec {
            flux: m.flux,
            omega: m.speed,
            constraint: m.constraint,
        }
    }
}

impl FluxModel {
    pub fn new(flux: FundamentalDiagram, speed: SpeedLaw, constraint: ConstraintLaw) -> Result<Self> {
        flux.validate()?;
        speed.validate()?;
        constraint.validate()?;
        let speed_fn = SpeedFn::from_law(&speed)?;
        let r = flux.r_max();
        let sigma = speed_fn.eval(0.0);
        let model = FluxModel {
            flux,
            speed,
            constraint,
            speed_fn,
            sigma,
        };

        // omega: nonincreasing with values in [0, sigma]
        let mut prev = sigma;
        for i in 0..=1000 {
            let w = model.omega(r * i as f64 / 1000.0);
            if !(w >= 0.0 && w <= sigma && w <= prev + 1e-15) {
                return Err(Error::Model(format!(
                    "speed law must be nonincreasing with values in [0, {sigma}]"
                )));
            }
            prev = w;
        }
        // every F(s, .) must keep its maximiser inside ]0, R[
        if model.critical_density(sigma) <= 0.0 {
            return Err(Error::Model(format!(
                "max speed {sigma} leaves F(s, .) without an interior maximiser"
            )));
        }
        Ok(model)
    }

    /// Greenshields flux `rho (1 - rho)` with the given speed and constraint laws.
    pub fn greenshields(speed: SpeedLaw, constraint: ConstraintLaw) -> Result<Self> {
        Self::new(FundamentalDiagram::greenshields(), speed, constraint)
    }

    pub fn flux(&self) -> &FundamentalDiagram {
        &self.flux
    }

    pub fn speed_law(&self) -> &SpeedLaw {
        &self.speed
    }

    pub fn constraint_law(&self) -> &ConstraintLaw {
        &self.constraint
    }

    /// Maximal density `R`.
    pub fn r_max(&self) -> f64 {
        self.flux.r_max()
    }

    /// `Sigma = sup omega = omega(0)`.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Vehicle speed for an averaged density; the argument is clamped to `[0, R]`.
    #[inline]
    pub fn omega(&self, xi: f64) -> f64 {
        self.speed_fn.eval(xi.clamp(0.0, self.r_max()))
    }

    /// Constraint level `Q(s)`.
    #[inline]
    pub fn q(&self, s: f64) -> f64 {
        self.constraint.eval(s)
    }

    /// Constants `(alpha, beta)` of a rational speed law.
    pub fn rational_constants(&self) -> Option<(f64, f64)> {
        match self.speed_fn {
            SpeedFn::Rational { alpha, beta, .. } => Some((alpha, beta)),
            _ => None,
        }
    }

    fn check_speed(&self, s: f64) -> Result<()> {
        if !(s >= -RANGE_SLACK && s <= self.sigma + RANGE_SLACK) {
            return Err(Error::domain(format!("speed {s} outside [0, {}]", self.sigma)));
        }
        Ok(())
    }

    pub(crate) fn check_density(&self, rho: f64) -> Result<()> {
        if !(rho >= -RANGE_SLACK && rho <= self.r_max() + RANGE_SLACK) {
            return Err(Error::domain(format!("density {rho} outside [0, {}]", self.r_max())));
        }
        Ok(())
    }

    /// `F(s, rho) = f(rho) - s rho` without range checks.
    #[inline]
    pub fn flux_unchecked(&self, s: f64, rho: f64) -> f64 {
        self.flux.eval(rho) - s * rho
    }

    /// `F(s, rho) = f(rho) - s rho`.
    pub fn eval_flux(&self, s: f64, rho: f64) -> Result<f64> {
        self.check_speed(s)?;
        self.check_density(rho)?;
        Ok(self.flux_unchecked(s, rho))
    }

    /// Maximiser of `F(s, .)` on `[0, R]`.
    pub fn critical_density(&self, s: f64) -> f64 {
        match self.flux {
            FundamentalDiagram::Quadratic { r_max, v_max } => {
                (0.5 * r_max * (1.0 - s / v_max)).clamp(0.0, r_max)
            }
            FundamentalDiagram::Tabulated { .. } => {
                golden_section_max(|r| self.flux_unchecked(s, r), 0.0, self.r_max())
            }
        }
    }

    /// `max_rho F(s, rho)`.
    pub fn max_flux(&self, s: f64) -> f64 {
        match self.flux {
            FundamentalDiagram::Quadratic { r_max, v_max } => {
                let d = v_max - s;
                if d <= 0.0 {
                    0.0
                } else {
                    d * d * r_max / (4.0 * v_max)
                }
            }
            FundamentalDiagram::Tabulated { .. } => {
                self.flux_unchecked(s, self.critical_density(s))
            }
        }
    }

    /// The pair `(rho_check, rho_hat)` with `F(s, .) = q` on the increasing and
    /// decreasing branch respectively.
    pub fn constraint_roots(&self, s: f64, q: f64) -> Result<(f64, f64)> {
        self.check_speed(s)?;
        if !(q >= 0.0) {
            return Err(Error::domain(format!("constraint level {q} must be >= 0")));
        }
        let max_flux = self.max_flux(s);
        if q > max_flux * (1.0 + 1e-12) + 1e-15 {
            return Err(Error::InfeasibleConstraint { s, q, max_flux });
        }
        let q = q.min(max_flux);
        match self.flux {
            FundamentalDiagram::Quadratic { r_max, v_max } => {
                // (v/R) rho^2 - (v - s) rho + q = 0
                let b = v_max - s;
                let a = v_max / r_max;
                let disc = (b * b - 4.0 * a * q).max(0.0).sqrt();
                let big = b + disc;
                let hat = big / (2.0 * a);
                let check = if big > 0.0 { 2.0 * q / big } else { 0.0 };
                Ok((check, hat))
            }
            FundamentalDiagram::Tabulated { .. } => {
                let bar = self.critical_density(s);
                let g = |r: f64| self.flux_unchecked(s, r) - q;
                let check = bisect(g, 0.0, bar, true);
                let hat = bisect(g, bar, self.r_max(), false);
                Ok((check, hat))
            }
        }
    }

    /// Smallest gap between the maximal flux and the constraint level over a
    /// uniform sample of `GAP_SAMPLES` speeds in `[0, Sigma]`.
    pub fn constraint_gap(&self) -> ConstraintGap {
        let mut best = ConstraintGap {
            epsilon: f64::INFINITY,
            at_speed: 0.0,
            violated: false,
        };
        for i in 0..GAP_SAMPLES {
            let s = self.sigma * i as f64 / (GAP_SAMPLES - 1) as f64;
            let gap = self.max_flux(s) - self.q(s);
            if gap < best.epsilon {
                best.epsilon = gap;
                best.at_speed = s;
            }
        }
        best.violated = !(best.epsilon > 0.0);
        best
    }

    /// `sup |d F / d rho|` over `[0, R]` for speed `s`.
    pub fn flux_lipschitz(&self, s: f64) -> f64 {
        match self.flux {
            FundamentalDiagram::Quadratic { v_max, .. } => v_max + s.abs(),
            FundamentalDiagram::Tabulated { ref rho, .. } => rho
                .windows(2)
                .map(|w| (self.flux.derivative(w[0]) - s).abs())
                .fold(0.0, f64::max),
        }
    }

    /// Kinematic car speed `f(rho) / rho`, with `f'(0)` at zero density.
    pub fn car_speed(&self, rho: f64) -> f64 {
        if rho <= 0.0 {
            self.flux.derivative(0.0)
        } else {
            self.flux.eval(rho) / rho
        }
    }
}

/// Maximiser of a unimodal function on `[lo, hi]`.
pub(crate) fn golden_section_max(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let inv_phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut g1 = g(x1);
    let mut g2 = g(x2);
    for _ in 0..MAX_ITER {
        if hi - lo <= ROOT_TOL {
            break;
        }
        if g1 < g2 {
            lo = x1;
            x1 = x2;
            g1 = g2;
            x2 = lo + inv_phi * (hi - lo);
            g2 = g(x2);
        } else {
            hi = x2;
            x2 = x1;
            g2 = g1;
            x1 = hi - inv_phi * (hi - lo);
            g1 = g(x1);
        }
    }
    0.5 * (lo + hi)
}

/// Root of a monotone function on `[lo, hi]`; `increasing` gives its direction.
pub(crate) fn bisect(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, increasing: bool) -> f64 {
    for _ in 0..MAX_ITER {
        if hi - lo <= ROOT_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let below = g(mid) < 0.0;
        if below == increasing {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Piecewise-constant function on the real line: `values[0]` left of
/// `breakpoints[0]`, `values[i]` on `]breakpoints[i-1], breakpoints[i][`,
/// `values[n]` right of the last breakpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiecewiseConstantProfile {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

impl PiecewiseConstantProfile {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let p = PiecewiseConstantProfile { breakpoints, values };
        p.validate()?;
        Ok(p)
    }

    pub fn constant(value: f64) -> Self {
        PiecewiseConstantProfile {
            breakpoints: Vec::new(),
            values: vec![value],
        }
    }

    /// `left` for `x < at`, `right` for `x > at`.
    pub fn riemann(left: f64, right: f64, at: f64) -> Self {
        PiecewiseConstantProfile {
            breakpoints: vec![at],
            values: vec![left, right],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.breakpoints.len() + 1 {
            return Err(Error::domain("profile needs exactly one more value than breakpoints"));
        }
        if self.breakpoints.iter().any(|b| !b.is_finite())
            || self.breakpoints.windows(2).any(|w| !(w[1] > w[0]))
        {
            return Err(Error::domain("profile breakpoints must be finite and increasing"));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("profile values must be finite"));
        }
        Ok(())
    }

    pub fn check_range(&self, r_max: f64) -> Result<()> {
        if self.values.iter().any(|&v| !(0.0..=r_max).contains(&v)) {
            return Err(Error::domain(format!("profile values must lie in [0, {r_max}]")));
        }
        Ok(())
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.values[self.breakpoints.partition_point(|&b| b <= x)]
    }

    /// Total variation.
    pub fn total_variation(&self) -> f64 {
        self.values.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
    }

    /// Cell means of `x -> self(x + shift)` on `grid`, exact for
    /// piecewise-constant data.
    pub fn cell_averages(&self, grid: &Grid, shift: f64) -> Vec<f64> {
        let dx = grid.dx();
        (0..grid.cells())
            .map(|i| {
                let lo = grid.edge(i) + shift;
                let hi = grid.edge(i + 1) + shift;
                let mut k = self.breakpoints.partition_point(|&b| b <= lo);
                if k == self.breakpoints.len() || self.breakpoints[k] >= hi {
                    return self.values[k];
                }
                let mut acc = self.values[k] * (self.breakpoints[k] - lo);
                while k + 1 < self.breakpoints.len() && self.breakpoints[k + 1] < hi {
                    acc += self.values[k + 1] * (self.breakpoints[k + 1] - self.breakpoints[k]);
                    k += 1;
                }
                acc += self.values[k + 1] * (hi - self.breakpoints[k]);
                acc / dx
            })
            .collect()
    }
}

/// Nonnegative piecewise-constant weight `mu` with compact support.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WeightSpec", into = "WeightSpec")]
pub struct WeightProfile {
    profile: PiecewiseConstantProfile,
    k: Option<u32>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum WeightSpec {
    Named(String),
    Explicit {
        breakpoints: Vec<f64>,
        values: Vec<f64>,
    },
}

impl TryFrom<WeightSpec> for WeightProfile {
    type Error = Error;

    fn try_from(spec: WeightSpec) -> Result<Self> {
        match spec {
            WeightSpec::Named(name) => WeightProfile::from_name(&name),
            WeightSpec::Explicit {
                breakpoints,
                values,
            } => WeightProfile::new(breakpoints, values),
        }
    }
}

impl From<WeightProfile> for WeightSpec {
    fn from(w: WeightProfile) -> Self {
        match w.k {
            Some(k) => WeightSpec::Named(format!("mu{k}")),
            None => WeightSpec::Explicit {
                breakpoints: w.profile.breakpoints,
                values: w.profile.values,
            },
        }
    }
}

impl WeightProfile {
    /// Explicit weight: the outer values must vanish (compact support).
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let profile = PiecewiseConstantProfile::new(breakpoints, values)?;
        if profile.breakpoints.is_empty() {
            return Err(Error::domain("weight needs a compact support"));
        }
        if profile.values[0] != 0.0 || *profile.values.last().unwrap() != 0.0 {
            return Err(Error::domain("weight must vanish outside its support"));
        }
        if profile.values.iter().any(|&v| v < 0.0) {
            return Err(Error::domain("weight must be nonnegative"));
        }
        Ok(WeightProfile { profile, k: None })
    }

    /// `mu_k = 2^k * 1_[0, 2^-k]`.
    pub fn mu(k: u32) -> Self {
        let width = 0.5f64.powi(k as i32);
        WeightProfile {
            profile: PiecewiseConstantProfile {
                breakpoints: vec![0.0, width],
                values: vec![0.0, 2f64.powi(k as i32), 0.0],
            },
            k: Some(k),
        }
    }

    /// Parse `"muK"`.
    pub fn from_name(name: &str) -> Result<Self> {
        name.strip_prefix("mu")
            .and_then(|k| k.parse::<u32>().ok())
            .filter(|&k| (1..=30).contains(&k))
            .map(WeightProfile::mu)
            .ok_or_else(|| Error::domain(format!("unknown weight `{name}`, expected muK with K >= 1")))
    }

    pub fn k(&self) -> Option<u32> {
        self.k
    }

    pub fn profile(&self) -> &PiecewiseConstantProfile {
        &self.profile
    }

    pub fn support(&self) -> (f64, f64) {
        (self.profile.breakpoints[0], *self.profile.breakpoints.last().unwrap())
    }

    /// `int mu`.
    pub fn mass(&self) -> f64 {
        let b = &self.profile.breakpoints;
        b.windows(2)
            .zip(&self.profile.values[1..])
            .map(|(w, v)| v * (w[1] - w[0]))
            .sum()
    }

    pub fn total_variation(&self) -> f64 {
        self.profile.total_variation()
    }

    /// Cell means `mu_{j+1/2}` on `grid`.
    pub fn discretize(&self, grid: &Grid) -> Result<Vec<f64>> {
        let (lo, hi) = self.support();
        if lo < grid.x_min() || hi > grid.x_max() {
            return Err(Error::domain(format!(
                "weight support [{lo}, {hi}] exceeds grid [{}, {}]",
                grid.x_min(),
                grid.x_max()
            )));
        }
        Ok(self.profile.cell_averages(grid, 0.0))
    }
}

/// Free-function form of [`WeightProfile::discretize`].
pub fn discretize_weight(mu: &WeightProfile, grid: &Grid) -> Result<Vec<f64>> {
    mu.discretize(grid)
}
