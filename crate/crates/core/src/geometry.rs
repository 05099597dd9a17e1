//! Backend contract and the Kähler state.
//!
//! Conventions (complex dimension one, one coordinate `z` per backend):
//!
//! * `omega = i g dz ^ dzbar` with `g = g0 * rho`, where `g0` is the base
//!   metric coefficient and `rho = omega_phi / omega_0` the density ratio.
//! * `Delta u = g^{-1} d dbar u` (trace of `i d dbar u`); on the round sphere
//!   the first nonzero eigenvalue of `-Delta` is 1.
//! * `<grad a, grad b> = (2g)^{-1} (da dbar b + dbar a db)`,
//!   `|grad f|^2 = g^{-1} |df|^2`.
//! * Integrals: `int F omega_phi = sum_k w_k rho_k F_k` with backend weights
//!   `w_k` that already include the base density.
//!
//! Every divergence is assembled from the backend primitive
//! `div0(w) = g0^{-1} d(g0 w)`, which is the discrete negative transpose of
//! `d` under the quadrature. That single rule makes the weighted operators
//! self-adjoint on the grid, not just in the continuum limit.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{LabError, Result};
use crate::field::{BackendKind, BackendTag, ScalarField, TensorField11, TensorField20};
use crate::sphere::MomentGrid;
use crate::torus::TorusGrid;

/// Relative tolerance for the volume and normalization checks in
/// [`make_state`].
pub const VOLUME_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone)]
pub enum Grid {
    Torus(TorusGrid),
    Sphere(MomentGrid),
}

#[derive(Debug)]
struct GeometryInner {
    kind: BackendKind,
    lambda: f64,
    grid: Grid,
    weights: Vec<f64>,
    base_metric: ScalarField,
    base_density: ScalarField,
    base_christoffel: ScalarField,
    base_ricci_potential: ScalarField,
    total_volume: f64,
}

/// The model manifold: base metric, sign of `c_1`, base Ricci potential and
/// the differentiation/quadrature machinery. Cheap to clone.
#[derive(Debug, Clone)]
pub struct BackendGeometry {
    inner: Arc<GeometryInner>,
}

/// Flat unit torus, `lambda = 0`.
pub fn torus_base(n: usize) -> Result<BackendGeometry> {
    let grid = TorusGrid::new(n)?;
    let tag = grid.tag();
    let weights = vec![1.0 / (n * n) as f64; n * n];
    Ok(BackendGeometry {
        inner: Arc::new(GeometryInner {
            kind: BackendKind::Torus,
            lambda: 0.0,
            grid: Grid::Torus(grid),
            weights,
            base_metric: ScalarField::constant(tag, 0.5),
            base_density: ScalarField::constant(tag, 1.0),
            base_christoffel: ScalarField::zeros(tag),
            base_ricci_potential: ScalarField::zeros(tag),
            total_volume: 1.0,
        }),
    })
}

/// Round sphere with `Ric(omega_0) = omega_0`, `lambda = 1`, area `4 pi`.
pub fn sphere_base(n: usize) -> Result<BackendGeometry> {
    let grid = MomentGrid::new(n)?;
    let tag = grid.tag();
    let weights = grid
        .weights()
        .iter()
        .map(|w| 2.0 * std::f64::consts::PI * w)
        .collect();
    let a = grid.field(|m| 0.5 * (1.0 - m * m));
    let christoffel = grid.field(|m| -m);
    Ok(BackendGeometry {
        inner: Arc::new(GeometryInner {
            kind: BackendKind::Sphere,
            lambda: 1.0,
            weights,
            base_metric: a.clone(),
            // Density of omega_0 in (t, theta) coordinates is x'(t) = a.
            base_density: a,
            base_christoffel: christoffel,
            base_ricci_potential: ScalarField::zeros(tag),
            total_volume: 4.0 * std::f64::consts::PI,
            grid: Grid::Sphere(grid),
        }),
    })
}

impl BackendGeometry {
    pub fn kind(&self) -> BackendKind {
        self.inner.kind
    }

    pub fn lambda(&self) -> f64 {
        self.inner.lambda
    }

    pub fn grid(&self) -> &Grid {
        &self.inner.grid
    }

    pub fn tag(&self) -> BackendTag {
        match &self.inner.grid {
            Grid::Torus(g) => g.tag(),
            Grid::Sphere(g) => g.tag(),
        }
    }

    pub fn resolution(&self) -> usize {
        self.tag().resolution
    }

    pub fn len(&self) -> usize {
        self.inner.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.weights.is_empty()
    }

    pub fn total_volume(&self) -> f64 {
        self.inner.total_volume
    }

    /// Quadrature weights for `omega_0`.
    pub fn weights(&self) -> &[f64] {
        &self.inner.weights
    }

    /// Base metric coefficient `g0`.
    pub fn base_metric(&self) -> &ScalarField {
        &self.inner.base_metric
    }

    /// Density of `omega_0` in backend coordinates (`dx dy` or `dt dtheta`).
    pub fn base_density(&self) -> &ScalarField {
        &self.inner.base_density
    }

    pub fn base_ricci_potential(&self) -> &ScalarField {
        &self.inner.base_ricci_potential
    }

    pub fn check(&self, u: &ScalarField) -> Result<()> {
        self.tag().ensure(&u.tag())
    }

    pub fn as_torus(&self) -> Option<&TorusGrid> {
        match &self.inner.grid {
            Grid::Torus(g) => Some(g),
            Grid::Sphere(_) => None,
        }
    }

    pub fn as_sphere(&self) -> Option<&MomentGrid> {
        match &self.inner.grid {
            Grid::Sphere(g) => Some(g),
            Grid::Torus(_) => None,
        }
    }

    /// `d u` (holomorphic derivative).
    pub fn dz(&self, u: &ScalarField) -> ScalarField {
        match &self.inner.grid {
            Grid::Torus(g) => g.dz(u),
            Grid::Sphere(g) => g.d_dt_unchecked(u),
        }
    }

    /// `dbar u`.
    pub fn dzbar(&self, u: &ScalarField) -> ScalarField {
        match &self.inner.grid {
            Grid::Torus(g) => g.dzbar(u),
            Grid::Sphere(g) => g.d_dt_unchecked(u),
        }
    }

    /// `g0^{-1} d u`.
    pub fn dz_over_g0(&self, u: &ScalarField) -> ScalarField {
        match &self.inner.grid {
            Grid::Torus(g) => g.dz(u).scale(2.0),
            Grid::Sphere(g) => g.dmu(u),
        }
    }

    /// `g0^{-1} dbar u`.
    pub fn dzbar_over_g0(&self, u: &ScalarField) -> ScalarField {
        match &self.inner.grid {
            Grid::Torus(g) => g.dzbar(u).scale(2.0),
            Grid::Sphere(g) => g.dmu(u),
        }
    }

    /// `g0^{-1} d(g0 w)`, the holomorphic divergence on the base metric.
    pub fn div0(&self, w: &ScalarField) -> ScalarField {
        match &self.inner.grid {
            Grid::Torus(g) => g.dz(w),
            Grid::Sphere(g) => g.div0(w),
        }
    }

    /// `g0^{-1} dbar(g0 w)`.
    pub fn div0_bar(&self, w: &ScalarField) -> ScalarField {
        match &self.inner.grid {
            Grid::Torus(g) => g.dzbar(w),
            Grid::Sphere(g) => g.div0(w),
        }
    }

    /// `g0^{-1} d dbar u`.
    pub fn base_laplacian(&self, u: &ScalarField) -> ScalarField {
        match &self.inner.grid {
            Grid::Torus(g) => g.base_laplacian(u),
            Grid::Sphere(g) => g.base_laplacian(u),
        }
    }

    /// `d log g0`.
    pub fn base_christoffel(&self) -> &ScalarField {
        &self.inner.base_christoffel
    }

    /// Component `R_{1 1bar} = -d dbar log g0` of `Ric(omega_0)`, evaluated
    /// from the Christoffel symbol.
    pub fn base_ricci_form(&self) -> ScalarField {
        let christoffel_bar = self.base_christoffel().conj();
        let out = self.dz(&christoffel_bar).scale(-1.0);
        out.real_part()
    }

    /// Sup norm of `lambda g0 - Ric(omega_0) - d dbar f0`.
    pub fn einstein_residual(&self) -> f64 {
        let f0 = self.base_ricci_potential();
        let ddbar_f0 = self.base_metric() * &self.base_laplacian(f0);
        let lhs = &self.base_metric().scale(self.lambda()) - &self.base_ricci_form();
        lhs.distance(&ddbar_f0)
    }

    /// `sum_k w_k F_k`, i.e. `int F omega_0`.
    pub fn integrate_base(&self, u: &ScalarField) -> Complex64 {
        u.values()
            .iter()
            .zip(self.weights())
            .map(|(v, w)| v * w)
            .sum()
    }

    /// Solves `(1 - dt * base_laplacian) v = rhs`.
    pub fn solve_implicit(&self, rhs: &ScalarField, dt: f64) -> ScalarField {
        match &self.inner.grid {
            Grid::Torus(g) => g.solve_implicit(rhs, dt),
            Grid::Sphere(g) => g.solve_implicit(rhs, dt),
        }
    }

    /// Upper bound on the spectral radius of the base Laplacian.
    pub fn laplacian_radius(&self) -> f64 {
        match &self.inner.grid {
            Grid::Torus(g) => g.laplacian_radius(),
            Grid::Sphere(g) => g.laplacian_radius(),
        }
    }

    /// A random smooth potential: band-limited Fourier series with modes
    /// `<= N/8` on the torus, Legendre series of degree `<= 6` on the sphere,
    /// scaled so that the minimum density ratio equals `min_density`.
    pub fn random_potential(&self, seed: u64, min_density: f64) -> ScalarField {
        self.random_potential_band(seed, self.default_band(), min_density)
    }

    /// Same as [`Self::random_potential`] with an explicit band limit (Fourier
    /// mode on the torus, Legendre degree on the sphere).
    pub fn random_potential_band(&self, seed: u64, band: usize, min_density: f64) -> ScalarField {
        self.scale_to_min_density(&self.random_direction_band(seed, band), min_density)
    }

    /// Scales `phi` so that `min(1 + base_laplacian(phi)) = min_density`.
    pub fn scale_to_min_density(&self, phi: &ScalarField, min_density: f64) -> ScalarField {
        let lap = self.base_laplacian(phi);
        let (most_negative, _) = lap.min_re();
        if most_negative >= 0.0 {
            return phi.clone();
        }
        phi.scale((1.0 - min_density) / -most_negative)
    }

    /// A random smooth test direction with the default band limit.
    pub fn random_direction(&self, seed: u64) -> ScalarField {
        self.random_direction_band(seed, self.default_band())
    }

    pub fn random_direction_band(&self, seed: u64, band: usize) -> ScalarField {
        match &self.inner.grid {
            Grid::Torus(g) => g.random_band_limited(seed, band.max(1)),
            Grid::Sphere(g) => g.random_invariant(seed, band.max(1)),
        }
    }

    /// Random direction scaled so that `max |base_laplacian(psi)| = 1`; a
    /// step `h` along it perturbs the density ratio by at most `h`.
    pub fn random_unit_direction(&self, seed: u64, band: usize) -> ScalarField {
        let psi = self.random_direction_band(seed, band);
        let peak = self.base_laplacian(&psi).sup_norm();
        if peak > 0.0 {
            psi.scale(1.0 / peak)
        } else {
            psi
        }
    }

    fn default_band(&self) -> usize {
        match &self.inner.grid {
            Grid::Torus(g) => (g.n() / 8).max(1),
            Grid::Sphere(_) => 6,
        }
    }
}

/// A potential together with its metric, Ricci potential and weighted
/// volume element. Immutable after construction.
#[derive(Debug, Clone)]
pub struct KahlerState {
    geometry: BackendGeometry,
    potential: ScalarField,
    density_ratio: ScalarField,
    metric_density: ScalarField,
    metric: ScalarField,
    ricci_potential: ScalarField,
    weight: ScalarField,
    weighted_volume_element: ScalarField,
}

/// Which measure an integral is taken against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    /// `omega_phi`.
    Plain,
    /// `e^{-f} omega_phi`, optionally divided by the total volume.
    Weighted { normalized: bool },
}

/// Assembles `omega_phi = omega_0 + i d dbar phi` and the Ricci potential
///
/// `f = f0 + log(omega_phi / omega_0) + lambda phi + log(V^{-1} int e^{-f0 - lambda phi} omega_0)`.
pub fn make_state(geometry: &BackendGeometry, phi: &ScalarField) -> Result<KahlerState> {
    geometry.check(phi)?;
    let phi = phi.real_part();
    let rho = geometry.base_laplacian(&phi).add_scalar(1.0);
    let (min, node) = rho.min_re();
    if !(min > 0.0) {
        return Err(LabError::NonKahler { min, node });
    }
    let lambda = geometry.lambda();
    let volume = geometry.total_volume();
    let f0 = geometry.base_ricci_potential();

    let exponent = f0 + &phi.scale(lambda);
    let normalizer = geometry.integrate_base(&exponent.scale(-1.0).exp()).re / volume;
    let f = &(&(f0 + &rho.map_real(f64::ln)) + &phi.scale(lambda)).add_scalar(normalizer.ln());

    let metric = geometry.base_metric() * &rho;
    let metric_density = geometry.base_density() * &rho;
    let weight = f.scale(-1.0).exp();
    let weighted_volume_element = &weight * &metric_density;

    let state = KahlerState {
        geometry: geometry.clone(),
        potential: phi,
        density_ratio: rho,
        metric_density,
        metric,
        ricci_potential: f.real_part(),
        weight,
        weighted_volume_element,
    };

    let plain = state.integrate(&ScalarField::constant(geometry.tag(), 1.0), Measure::Plain)?;
    let drift = (plain.re - volume).abs() / volume;
    if drift > VOLUME_TOLERANCE {
        return Err(LabError::QuadratureDrift {
            quantity: "volume",
            relative: drift,
            tolerance: VOLUME_TOLERANCE,
        });
    }
    let weighted = state.integrate(
        &ScalarField::constant(geometry.tag(), 1.0),
        Measure::Weighted { normalized: false },
    )?;
    let drift = (weighted.re - volume).abs() / volume;
    if drift > VOLUME_TOLERANCE {
        return Err(LabError::QuadratureDrift {
            quantity: "ricci potential normalization",
            relative: drift,
            tolerance: VOLUME_TOLERANCE,
        });
    }
    Ok(state)
}

impl KahlerState {
    pub fn geometry(&self) -> &BackendGeometry {
        &self.geometry
    }

    pub fn tag(&self) -> BackendTag {
        self.geometry.tag()
    }

    pub fn lambda(&self) -> f64 {
        self.geometry.lambda()
    }

    pub fn total_volume(&self) -> f64 {
        self.geometry.total_volume()
    }

    pub fn potential(&self) -> &ScalarField {
        &self.potential
    }

    /// `omega_phi / omega_0`.
    pub fn density_ratio(&self) -> &ScalarField {
        &self.density_ratio
    }

    /// Density of `omega_phi` in backend coordinates.
    pub fn metric_density(&self) -> &ScalarField {
        &self.metric_density
    }

    /// Metric coefficient `g = g_{1 1bar}` of `omega_phi`.
    pub fn metric(&self) -> &ScalarField {
        &self.metric
    }

    pub fn ricci_potential(&self) -> &ScalarField {
        &self.ricci_potential
    }

    /// `e^{-f}`.
    pub fn weight(&self) -> &ScalarField {
        &self.weight
    }

    /// `e^{-f}` times the metric density.
    pub fn weighted_volume_element(&self) -> &ScalarField {
        &self.weighted_volume_element
    }

    pub fn check(&self, u: &ScalarField) -> Result<()> {
        self.geometry.check(u)
    }

    pub fn integrate(&self, u: &ScalarField, measure: Measure) -> Result<Complex64> {
        self.check(u)?;
        Ok(self.integrate_unchecked(u, measure))
    }

    pub(crate) fn integrate_unchecked(&self, u: &ScalarField, measure: Measure) -> Complex64 {
        let w = self.geometry.weights();
        let rho = self.density_ratio.values();
        match measure {
            Measure::Plain => u
                .values()
                .iter()
                .zip(w)
                .zip(rho)
                .map(|((v, q), r)| v * q * r.re)
                .sum(),
            Measure::Weighted { normalized } => {
                let e = self.weight.values();
                let s: Complex64 = u
                    .values()
                    .iter()
                    .zip(w)
                    .zip(rho)
                    .zip(e)
                    .map(|(((v, q), r), e)| v * q * r.re * e.re)
                    .sum();
                if normalized {
                    s / self.total_volume()
                } else {
                    s
                }
            }
        }
    }

    /// `V^{-1} int u e^{-f} omega_phi`.
    pub fn weighted_mean(&self, u: &ScalarField) -> Complex64 {
        self.integrate_unchecked(u, Measure::Weighted { normalized: true })
    }

    /// Weighted inner product `(a, b)_f = V^{-1} int a conj(b) e^{-f} omega_phi`.
    pub fn inner(&self, a: &ScalarField, b: &ScalarField) -> Complex64 {
        self.weighted_mean(&a.zip_map(b, |x, y| x * y.conj()))
    }

    pub fn weighted_norm(&self, a: &ScalarField) -> f64 {
        self.inner(a, a).re.max(0.0).sqrt()
    }

    /// `u - (u, 1)_f`.
    pub fn remove_weighted_mean(&self, u: &ScalarField) -> ScalarField {
        let m = self.weighted_mean(u);
        if u.is_real() {
            u.add_scalar(-m.re)
        } else {
            u.map(|z| z - m)
        }
    }

    /// Kähler scalar curvature `R = g^{-1} R_{1 1bar}` computed from the
    /// metric: `R_{1 1bar} = Ric0_{1 1bar} - d dbar log rho`.
    pub fn scalar_curvature(&self) -> ScalarField {
        let geometry = &self.geometry;
        let log_rho = self.density_ratio.map_real(f64::ln);
        let base = geometry.base_ricci_form().div(geometry.base_metric());
        let r = &base - &geometry.base_laplacian(&log_rho);
        r.div(&self.density_ratio).real_part()
    }
}

/// `Delta u = g^{-1} d dbar u`.
pub fn laplacian(u: &ScalarField, state: &KahlerState) -> Result<ScalarField> {
    state.check(u)?;
    Ok(laplacian_unchecked(u, state))
}

pub(crate) fn laplacian_unchecked(u: &ScalarField, state: &KahlerState) -> ScalarField {
    let out = state
        .geometry
        .base_laplacian(u)
        .div(state.density_ratio());
    if u.is_real() {
        out.real_part()
    } else {
        out
    }
}

/// Pointwise `<grad a, grad b> = (2g)^{-1}(da dbar b + dbar a db)`.
pub fn gradient_pairing(a: &ScalarField, b: &ScalarField, state: &KahlerState) -> Result<ScalarField> {
    state.check(a)?;
    state.check(b)?;
    Ok(gradient_pairing_unchecked(a, b, state))
}

pub(crate) fn gradient_pairing_unchecked(
    a: &ScalarField,
    b: &ScalarField,
    state: &KahlerState,
) -> ScalarField {
    let geometry = &state.geometry;
    let da = geometry.dz(a);
    let dbara = geometry.dzbar(a);
    let db = geometry.dz(b);
    let dbarb = geometry.dzbar(b);
    let sum = &(&da * &dbarb) + &(&dbara * &db);
    let out = sum.div(&state.metric.scale(2.0));
    if a.is_real() && b.is_real() {
        out.real_part()
    } else {
        out
    }
}

/// `|grad u|^2 = g^{-1} |d u|^2`, valid for complex `u`.
pub(crate) fn gradient_norm_sq(u: &ScalarField, state: &KahlerState) -> ScalarField {
    let du = state.geometry.dz(u);
    du.map(|z| Complex64::new(z.norm_sqr(), 0.0))
        .div(state.metric())
        .real_part()
}

/// Mixed Hessian `psi_{1 1bar} = d dbar psi`.
pub fn hessian11(u: &ScalarField, state: &KahlerState) -> Result<TensorField11> {
    state.check(u)?;
    Ok(hessian11_unchecked(u, state))
}

pub(crate) fn hessian11_unchecked(u: &ScalarField, state: &KahlerState) -> TensorField11 {
    let geometry = &state.geometry;
    let c = geometry.base_metric() * &geometry.base_laplacian(u);
    TensorField11 {
        component: if u.is_real() { c.real_part() } else { c },
    }
}

/// Covariant (2,0) Hessian `d d psi - (d log g) d psi`.
pub fn hessian20(u: &ScalarField, state: &KahlerState) -> Result<TensorField20> {
    state.check(u)?;
    Ok(hessian20_unchecked(u, state))
}

pub(crate) fn hessian20_unchecked(u: &ScalarField, state: &KahlerState) -> TensorField20 {
    let geometry = &state.geometry;
    let rho = state.density_ratio();
    // g0 d(g0^{-1} d u) = d d u - (d log g0) d u
    let base = geometry.base_metric() * &geometry.dz(&geometry.dz_over_g0(u));
    let christoffel = geometry.dz(rho).div(rho);
    TensorField20 {
        component: &base - &(&christoffel * &geometry.dz(u)),
    }
}

/// Covariant (0,2) Hessian `dbar dbar psi - (dbar log g) dbar psi`.
pub fn hessian02(u: &ScalarField, state: &KahlerState) -> Result<TensorField20> {
    state.check(u)?;
    let geometry = &state.geometry;
    let rho = state.density_ratio();
    let base = geometry.base_metric() * &geometry.dzbar(&geometry.dzbar_over_g0(u));
    let christoffel = geometry.dzbar(rho).div(rho);
    Ok(TensorField20 {
        component: &base - &(&christoffel * &geometry.dzbar(u)),
    })
}

/// `int field` against `measure` on the state's metric.
pub fn integrate(u: &ScalarField, state: &KahlerState, measure: Measure) -> Result<Complex64> {
    state.integrate(u, measure)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::legendre;
    use std::f64::consts::PI;

    #[test]
    fn torus_base_state() {
        let geom = torus_base(64).unwrap();
        let state = make_state(&geom, &ScalarField::zeros(geom.tag())).unwrap();
        assert!(state.ricci_potential().sup_norm() < 1e-15);
        assert!(state.metric_density().distance(geom.base_density()) < 1e-15);
        let one = ScalarField::constant(geom.tag(), 1.0);
        assert!((state.integrate(&one, Measure::Plain).unwrap().re - 1.0).abs() < 1e-14);
        assert_eq!(geom.einstein_residual(), 0.0);
    }

    #[test]
    fn sphere_base_is_einstein() {
        let geom = sphere_base(256).unwrap();
        assert!(geom.einstein_residual() < 1e-10);
        let state = make_state(&geom, &ScalarField::zeros(geom.tag())).unwrap();
        assert!(state.ricci_potential().sup_norm() < 1e-15);
        let one = ScalarField::constant(geom.tag(), 1.0);
        let v = state.integrate(&one, Measure::Weighted { normalized: true }).unwrap();
        assert!((v.re - 1.0).abs() < 1e-14);
        // Moment range of the round potential.
        let grid = geom.as_sphere().unwrap();
        let x: Vec<f64> = grid.nodes().iter().map(|m| 1.0 + m).collect();
        assert!(x.iter().all(|&v| v > 0.0 && v < 2.0));
    }

    #[test]
    fn constant_potential_acts_trivially() {
        for geom in [torus_base(32).unwrap(), sphere_base(32).unwrap()] {
            let zero = make_state(&geom, &ScalarField::zeros(geom.tag())).unwrap();
            let shifted = make_state(&geom, &ScalarField::constant(geom.tag(), 0.73)).unwrap();
            assert!(zero.ricci_potential().distance(shifted.ricci_potential()) < 1e-12);
            assert!(zero.metric_density().distance(shifted.metric_density()) < 1e-12);
        }
    }

    #[test]
    fn non_kahler_potential_is_rejected() {
        let geom = torus_base(16).unwrap();
        let raw = geom.random_direction(1);
        let phi = geom.scale_to_min_density(&raw, -0.5);
        match make_state(&geom, &phi) {
            Err(LabError::NonKahler { min, .. }) => assert!((min + 0.5).abs() < 1e-12),
            other => panic!("expected NonKahler, got {other:?}"),
        }
    }

    #[test]
    fn torus_ricci_potential_is_log_density() {
        let geom = torus_base(64).unwrap();
        let grid = geom.as_torus().unwrap();
        let phi = ScalarField::from_real(
            geom.tag(),
            grid.coords()
                .iter()
                .map(|&(x, y)| 0.005 * (2.0 * PI * x).cos() * (2.0 * PI * y).cos())
                .collect(),
        );
        let state = make_state(&geom, &phi).unwrap();
        // Direct evaluation: Delta_eucl phi = -8 pi^2 phi, rho = 1 + Delta_eucl phi / 2.
        let rho: Vec<f64> = phi.re().iter().map(|p| 1.0 - 4.0 * PI * PI * p).collect();
        let f_direct: Vec<f64> = rho.iter().map(|r| r.ln()).collect();
        let f = state.ricci_potential().re();
        let shift = f[0] - f_direct[0];
        let worst = f
            .iter()
            .zip(&f_direct)
            .fold(0.0f64, |m, (a, b)| m.max((a - b - shift).abs()));
        assert!(worst < 1e-12);
        // With lambda = 0 the normalization constant is log(1) = 0.
        assert!(shift.abs() < 1e-12);
    }

    #[test]
    fn torus_laplacian_symbol() {
        // Complex Laplacian is half the Riemannian one: Delta cos(2 pi x) = -2 pi^2 cos(2 pi x).
        let geom = torus_base(32).unwrap();
        let grid = geom.as_torus().unwrap();
        let psi = ScalarField::from_real(
            geom.tag(),
            grid.coords().iter().map(|&(x, _)| (2.0 * PI * x).cos()).collect(),
        );
        let state = make_state(&geom, &ScalarField::zeros(geom.tag())).unwrap();
        let lap = laplacian(&psi, &state).unwrap();
        assert!(lap.distance(&psi.scale(-2.0 * PI * PI)) < 1e-10);
        let c = ScalarField::constant(geom.tag(), 4.0);
        assert!(laplacian(&c, &state).unwrap().sup_norm() < 1e-12);
    }

    #[test]
    fn round_sphere_first_mode() {
        let geom = sphere_base(48).unwrap();
        let state = make_state(&geom, &ScalarField::zeros(geom.tag())).unwrap();
        let grid = geom.as_sphere().unwrap();
        for (l, ev) in [(1usize, 1.0), (2, 3.0), (3, 6.0)] {
            let p = grid.field(|m| legendre(l, m));
            let lap = laplacian(&p, &state).unwrap();
            assert!(lap.distance(&p.scale(-ev)) < 1e-11, "l = {l}");
        }
    }

    #[test]
    fn integration_by_parts_torus() {
        let geom = torus_base(64).unwrap();
        let phi = geom.random_potential(7, 0.5);
        let state = make_state(&geom, &phi).unwrap();
        let a = geom.random_direction(101);
        let b = geom.random_direction(102);
        let lap_a = laplacian(&a, &state).unwrap();
        let lhs = state.integrate(&(&lap_a * &b), Measure::Plain).unwrap().re;
        let grad = gradient_pairing(&a, &b, &state).unwrap();
        let rhs = state.integrate(&grad, Measure::Plain).unwrap().re;
        assert!((lhs + rhs).abs() < 1e-10, "residual {}", lhs + rhs);
    }

    #[test]
    fn gradient_pairing_is_nonnegative_on_diagonal() {
        let geom = sphere_base(32).unwrap();
        let phi = geom.random_potential(3, 0.4);
        let state = make_state(&geom, &phi).unwrap();
        let u = geom.random_direction(4);
        let sq = gradient_pairing(&u, &u, &state).unwrap();
        assert!(sq.min_re().0 >= 0.0);
        let c = ScalarField::constant(geom.tag(), 1.0);
        assert!(gradient_pairing(&c, &u, &state).unwrap().sup_norm() < 1e-12);
    }

    #[test]
    fn hessians_of_model_functions() {
        // Round sphere: mu has holomorphic gradient.
        let geom = sphere_base(64).unwrap();
        let state = make_state(&geom, &ScalarField::zeros(geom.tag())).unwrap();
        let mu = geom.as_sphere().unwrap().field(|m| m);
        assert!(hessian20(&mu, &state).unwrap().component.sup_norm() < 1e-10);

        // Flat torus: the covariant Hessian is the plain second derivative.
        let geom = torus_base(32).unwrap();
        let state = make_state(&geom, &ScalarField::zeros(geom.tag())).unwrap();
        let grid = geom.as_torus().unwrap();
        let psi = ScalarField::from_real(
            geom.tag(),
            grid.coords().iter().map(|&(x, _)| (2.0 * PI * x).cos()).collect(),
        );
        let h = hessian20(&psi, &state).unwrap().component;
        let plain = grid.dz(&grid.dz(&psi));
        assert!(h.distance(&plain) < 1e-10);
        assert!(h.distance(&psi.scale(-PI * PI)) < 1e-10);
        let c = ScalarField::constant(geom.tag(), 2.0);
        assert!(hessian20(&c, &state).unwrap().component.sup_norm() < 1e-12);
        assert!(hessian11(&c, &state).unwrap().component.sup_norm() < 1e-12);
    }

    #[test]
    fn hessian02_is_conjugate_of_hessian20() {
        let geom = torus_base(32).unwrap();
        let state = make_state(&geom, &geom.random_potential(2, 0.5)).unwrap();
        let u = geom.random_direction(8);
        let h20 = hessian20(&u, &state).unwrap().component;
        let h02 = hessian02(&u.conj(), &state).unwrap().component;
        assert!(h02.distance(&h20.conj()) < 1e-10);
    }

    #[test]
    fn backend_mismatch_is_an_error() {
        let torus = torus_base(16).unwrap();
        let sphere = sphere_base(16).unwrap();
        let state = make_state(&torus, &ScalarField::zeros(torus.tag())).unwrap();
        let u = ScalarField::zeros(sphere.tag());
        assert!(matches!(
            laplacian(&u, &state),
            Err(LabError::BackendMismatch { .. })
        ));
        assert!(make_state(&torus, &u).is_err());
    }

    #[test]
    fn scalar_curvature_matches_ricci_potential() {
        // R = lambda - Delta f for the Ricci potential.
        let geom = sphere_base(64).unwrap();
        let state = make_state(&geom, &geom.random_potential(5, 0.5)).unwrap();
        let r = state.scalar_curvature();
        let lap_f = laplacian(state.ricci_potential(), &state).unwrap();
        let expected = lap_f.scale(-1.0).add_scalar(geom.lambda());
        assert!(r.distance(&expected) < 1e-9);
    }
}
