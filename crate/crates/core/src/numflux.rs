//! Two-point monotone numerical fluxes for `rho -> F(s, rho)` and the
//! constrained interface flux.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{FluxModel, FundamentalDiagram};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumericalFluxKind {
    Godunov,
    /// Rusanov with the global diffusion constant `sup |f'| + s`.
    Rusanov,
    EngquistOsher,
    /// Rusanov with the edge-local constant `max(|F'(a)|, |F'(b)|)`.
    LocalRusanov,
}

impl NumericalFluxKind {
    pub const ALL: [NumericalFluxKind; 4] = [
        NumericalFluxKind::Godunov,
        NumericalFluxKind::Rusanov,
        NumericalFluxKind::EngquistOsher,
        NumericalFluxKind::LocalRusanov,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NumericalFluxKind::Godunov => "godunov",
            NumericalFluxKind::Rusanov => "rusanov",
            NumericalFluxKind::EngquistOsher => "engquist_osher",
            NumericalFluxKind::LocalRusanov => "local_rusanov",
        }
    }
}

/// Quantities of `F(s, .)` shared by all edges of one time step.
#[derive(Clone, Copy, Debug)]
pub struct FrozenFlux<'m> {
    model: &'m FluxModel,
    pub s: f64,
    /// Maximiser of `F(s, .)`.
    pub bar: f64,
    /// `F(s, bar)`.
    pub f_bar: f64,
    /// Rusanov diffusion constant.
    pub diffusion: f64,
    /// `(F'(0), F'')` when `F'` is affine.
    affine_slope: Option<(f64, f64)>,
}

impl<'m> FrozenFlux<'m> {
    pub fn new(model: &'m FluxModel, s: f64) -> Self {
        let bar = model.critical_density(s);
        FrozenFlux {
            model,
            s,
            bar,
            f_bar: model.flux_unchecked(s, bar),
            diffusion: model.flux().max_slope() + s,
            affine_slope: match *model.flux() {
                FundamentalDiagram::Quadratic { r_max, v_max } => Some((v_max - s, -2.0 * v_max / r_max)),
                FundamentalDiagram::Tabulated { .. } => None,
            },
        }
    }

    #[inline]
    pub fn f(&self, rho: f64) -> f64 {
        self.model.flux_unchecked(self.s, rho)
    }

    /// `(F'(0), F'')` when `F'` is affine in `rho`.
    pub fn affine_slope(&self) -> Option<(f64, f64)> {
        self.affine_slope
    }

    /// `dF/drho` at `rho`.
    #[inline]
    pub fn slope(&self, rho: f64) -> f64 {
        match self.affine_slope {
            Some((d0, d2)) => d0 + d2 * rho,
            None => self.model.flux().derivative(rho) - self.s,
        }
    }

    /// Flux value from densities `a, b` and their point fluxes `fa = F(a)`,
    /// `fb = F(b)`.
    #[inline]
    pub fn two_point(&self, kind: NumericalFluxKind, a: f64, b: f64, fa: f64, fb: f64) -> f64 {
        match kind {
            NumericalFluxKind::Godunov => {
                if a <= b {
                    fa.min(fb)
                } else if b <= self.bar && self.bar <= a {
                    self.f_bar
                } else {
                    fa.max(fb)
                }
            }
            NumericalFluxKind::Rusanov => 0.5 * (fa + fb) - 0.5 * self.diffusion * (b - a),
            NumericalFluxKind::LocalRusanov => {
                match self.affine_slope {
                    Some((d0, d2)) => local_rusanov_affine(d0, d2, a, b),
                    None => 0.5 * (fa + fb) - 0.5 * self.diffusion * (b - a),
                }
            }
            NumericalFluxKind::EngquistOsher => {
                let left = if a < self.bar { fa } else { self.f_bar };
                let right = if b > self.bar { fb } else { self.f_bar };
                left + right - self.f_bar
            }
        }
    }

    #[inline]
    pub fn eval(&self, kind: NumericalFluxKind, a: f64, b: f64) -> f64 {
        self.two_point(kind, a, b, self.f(a), self.f(b))
    }
}

/// Local Rusanov flux for `F(rho) = d0 rho + d2 rho^2 / 2`, in split form so
/// that the sign of each half is exact near vacuum.
#[inline(always)]
pub fn local_rusanov_affine(d0: f64, d2: f64, a: f64, b: f64) -> f64 {
    let d = (d0 + d2 * a).abs().max((d0 + d2 * b).abs());
    0.5 * ((d0 + d) * a + 0.5 * d2 * a * a) + 0.5 * ((d0 - d) * b + 0.5 * d2 * b * b)
}

fn checked(model: &FluxModel, s: f64, a: f64, b: f64) -> Result<FrozenFlux<'_>> {
    model.eval_flux(s, a)?;
    model.check_density(b)?;
    Ok(FrozenFlux::new(model, s))
}

/// Godunov flux: `min F` over `[a, b]` if `a <= b`, `max F` over `[b, a]` otherwise.
pub fn godunov(model: &FluxModel, s: f64, a: f64, b: f64) -> Result<f64> {
    Ok(checked(model, s, a, b)?.eval(NumericalFluxKind::Godunov, a, b))
}

/// Rusanov flux with global diffusion constant `sup |f'| + s`.
pub fn rusanov(model: &FluxModel, s: f64, a: f64, b: f64) -> Result<f64> {
    Ok(checked(model, s, a, b)?.eval(NumericalFluxKind::Rusanov, a, b))
}

pub fn engquist_osher(model: &FluxModel, s: f64, a: f64, b: f64) -> Result<f64> {
    Ok(checked(model, s, a, b)?.eval(NumericalFluxKind::EngquistOsher, a, b))
}

pub fn numerical_flux(kind: NumericalFluxKind, model: &FluxModel, s: f64, a: f64, b: f64) -> Result<f64> {
    Ok(checked(model, s, a, b)?.eval(kind, a, b))
}

/// `min{base(a, b), q}`; `q = +inf` leaves the base flux untouched.
pub fn interface_flux(
    base: NumericalFluxKind,
    model: &FluxModel,
    s: f64,
    q: f64,
    a: f64,
    b: f64,
) -> Result<f64> {
    if !(q >= 0.0) {
        return Err(crate::error::Error::domain(format!("constraint level {q} must be >= 0")));
    }
    Ok(numerical_flux(base, model, s, a, b)?.min(q))
}

/// `L` such that `lambda * L <= 1` makes the scheme monotone.
///
/// The local Rusanov constant moves with the states, which adds up to
/// `(sup |f'| + s)` to the self-coefficient of a cell on the quadratic
/// diagram; elsewhere it uses the global constant.
pub fn cfl_constant(model: &FluxModel, kind: NumericalFluxKind) -> f64 {
    let m = model.flux().max_slope() + model.sigma();
    match (kind, model.flux()) {
        (NumericalFluxKind::LocalRusanov, FundamentalDiagram::Quadratic { .. }) => 3.0 * m,
        _ => 2.0 * m,
    }
}

/// `L` for a scheme with separate bulk and interface fluxes.
pub fn scheme_cfl_constant(model: &FluxModel, bulk: NumericalFluxKind, interface: NumericalFluxKind) -> f64 {
    cfl_constant(model, bulk).max(cfl_constant(model, interface))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ConstraintLaw, SpeedLaw};
    use proptest::prelude::*;

    fn model(v_bus: f64) -> FluxModel {
        FluxModel::greenshields(
            SpeedLaw::LwrMin { v_bus },
            ConstraintLaw::Bottleneck { coefficient: 0.6 },
        )
        .unwrap()
    }

    #[test]
    fn godunov_examples() {
        let m = model(0.3);
        assert_eq!(godunov(&m, 0.2, 0.3, 0.3).unwrap(), m.flux_unchecked(0.2, 0.3));
        assert!((godunov(&m, 0.0, 0.25, 0.75).unwrap() - 0.1875).abs() < 1e-15);
        assert!((godunov(&m, 0.0, 0.75, 0.25).unwrap() - 0.25).abs() < 1e-15);
        assert!(godunov(&m, 0.0, -0.1, 0.2).is_err());
    }

    #[test]
    fn rusanov_examples() {
        let m = model(0.3);
        assert_eq!(rusanov(&m, 0.1, 0.6, 0.6).unwrap(), m.flux_unchecked(0.1, 0.6));
        assert!((rusanov(&m, 0.0, 0.4, 0.5).unwrap() - 0.195).abs() < 1e-15);
        assert!((rusanov(&m, 0.0, 0.0, 1.0).unwrap() + 0.5).abs() < 1e-15);
    }

    #[test]
    fn local_rusanov_examples() {
        let m = model(0.3);
        let f = |a, b| numerical_flux(NumericalFluxKind::LocalRusanov, &m, 0.0, a, b).unwrap();
        assert!((f(0.4, 0.5) - 0.235).abs() < 1e-15);
        assert!((f(0.0, 1.0) + 0.5).abs() < 1e-15);
        assert!((f(0.5, 0.5) - 0.25).abs() < 1e-16);
    }

    #[test]
    fn engquist_osher_examples() {
        let m = model(0.3);
        assert_eq!(engquist_osher(&m, 0.1, 0.2, 0.2).unwrap(), m.flux_unchecked(0.1, 0.2));
        assert!((engquist_osher(&m, 0.0, 0.75, 0.25).unwrap() - 0.25).abs() < 1e-15);
        assert!((engquist_osher(&m, 0.0, 0.25, 0.75).unwrap() - 0.125).abs() < 1e-15);
    }

    #[test]
    fn interface_flux_examples() {
        let m = model(0.3);
        let g = NumericalFluxKind::Godunov;
        assert_eq!(
            interface_flux(g, &m, 0.1, f64::INFINITY, 0.2, 0.6).unwrap(),
            godunov(&m, 0.1, 0.2, 0.6).unwrap()
        );
        assert_eq!(interface_flux(g, &m, 0.3, 0.0735, 0.5, 0.5).unwrap(), 0.0735);
        assert!((interface_flux(g, &m, 0.0, 0.5, 0.25, 0.25).unwrap() - 0.1875).abs() < 1e-15);
        assert!(interface_flux(g, &m, 0.0, -1.0, 0.25, 0.25).is_err());
    }

    #[test]
    fn cfl_constant_examples() {
        let k = NumericalFluxKind::Rusanov;
        let v = FluxModel::greenshields(
            SpeedLaw::RationalThenLinear {
                v0: 0.7,
                v1: 0.4,
                rho_star: 0.6,
            },
            ConstraintLaw::Bottleneck { coefficient: 0.75 },
        )
        .unwrap();
        assert!((cfl_constant(&v, k) - 3.4).abs() < 1e-12);
        assert_eq!(cfl_constant(&model(0.0), k), 2.0);
        assert!((cfl_constant(&model(0.3), k) - 2.6).abs() < 1e-15);
        let l = NumericalFluxKind::LocalRusanov;
        assert!((cfl_constant(&model(0.3), l) - 3.9).abs() < 1e-15);
        assert!((scheme_cfl_constant(&model(0.3), NumericalFluxKind::Godunov, l) - 3.9).abs() < 1e-15);
        assert!((cfl_constant(&v, l) - 5.1).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn consistency(s in 0.0..0.3f64, rho in 0.0..=1.0f64) {
            let m = model(0.3);
            for kind in NumericalFluxKind::ALL {
                let v = numerical_flux(kind, &m, s, rho, rho).unwrap();
                prop_assert!((v - m.flux_unchecked(s, rho)).abs() <= 1e-14);
            }
        }

        #[test]
        fn monotone(s in 0.0..0.3f64, a in 0.0..1.0f64, b in 0.0..1.0f64) {
            let m = model(0.3);
            let h = 1e-6;
            for kind in NumericalFluxKind::ALL {
                let v = numerical_flux(kind, &m, s, a, b).unwrap();
                let va = numerical_flux(kind, &m, s, (a + h).min(1.0), b).unwrap();
                let vb = numerical_flux(kind, &m, s, a, (b + h).min(1.0)).unwrap();
                prop_assert!(va >= v - 1e-12, "{kind:?} not increasing in a");
                prop_assert!(vb <= v + 1e-12, "{kind:?} not decreasing in b");
            }
        }

        #[test]
        fn bounded_by_interval_range(s in 0.0..0.3f64, a in 0.0..=1.0f64, b in 0.0..=1.0f64) {
            let m = model(0.3);
            let (lo, hi) = (a.min(b), a.max(b));
            let samples: Vec<f64> = (0..=200)
                .map(|i| m.flux_unchecked(s, lo + (hi - lo) * i as f64 / 200.0))
                .chain([m.flux_unchecked(s, m.critical_density(s).clamp(lo, hi))])
                .collect();
            let fmin = samples.iter().cloned().fold(f64::INFINITY, f64::min);
            let fmax = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let slack = (1.0 + s) * 1.0 / 2.0;
            for kind in NumericalFluxKind::ALL {
                let v = numerical_flux(kind, &m, s, a, b).unwrap();
                prop_assert!(v >= fmin - slack - 1e-12 && v <= fmax + slack + 1e-12);
            }
        }

        #[test]
        fn local_rusanov_keeps_vacuum(s in 0.0..0.3f64, e in -300.0..0.0f64) {
            let m = model(0.3);
            let b = 10f64.powf(e);
            prop_assert!(numerical_flux(NumericalFluxKind::LocalRusanov, &m, s, 0.0, b).unwrap() <= 0.0);
        }

        #[test]
        fn interface_is_min_exactly(s in 0.0..0.3f64, a in 0.0..=1.0f64, b in 0.0..=1.0f64, q in 0.0..0.3f64) {
            let m = model(0.3);
            let base = godunov(&m, s, a, b).unwrap();
            let v = interface_flux(NumericalFluxKind::Godunov, &m, s, q, a, b).unwrap();
            prop_assert_eq!(v, base.min(q));
        }
    }
}
