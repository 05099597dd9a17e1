//! Flat unit-square torus with Fourier collocation.
//!
//! Samples live on the uniform `N x N` grid `(i/N, j/N)`, stored row-major
//! with `y` as the slow index. The complex coordinate is `z = x + i y` and the
//! flat base metric has `g_{1 1bar} = 1/2`, so that `omega_0 = dx ^ dy` has
//! unit area.
//!
//! First derivatives drop the Nyquist wavenumber. This keeps the discrete
//! `d/dx`, `d/dy` real and antisymmetric, which is what makes every weighted
//! operator built from them exactly self-adjoint on the grid.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{Fft, FftPlanner};

use crate::error::{LabError, Result};
use crate::field::{BackendKind, BackendTag, ScalarField};

pub const MIN_TORUS_RESOLUTION: usize = 16;
pub const MAX_TORUS_RESOLUTION: usize = 256;

#[derive(Clone)]
pub struct TorusGrid {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for TorusGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TorusGrid").field("n", &self.n).finish()
    }
}

impl TorusGrid {
    pub fn new(n: usize) -> Result<Self> {
        if !n.is_power_of_two() {
            return Err(LabError::InvalidResolution {
                backend: "torus",
                resolution: n,
                reason: "nodes per side must be a power of two",
            });
        }
        if !(MIN_TORUS_RESOLUTION..=MAX_TORUS_RESOLUTION).contains(&n) {
            return Err(LabError::InvalidResolution {
                backend: "torus",
                resolution: n,
                reason: "nodes per side must lie in 16..=256",
            });
        }
        let mut planner = FftPlanner::new();
        Ok(TorusGrid {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn tag(&self) -> BackendTag {
        BackendTag {
            kind: BackendKind::Torus,
            resolution: self.n,
        }
    }

    /// Node coordinates `(x, y)` in storage order.
    pub fn coords(&self) -> Vec<(f64, f64)> {
        let n = self.n;
        let h = 1.0 / n as f64;
        (0..n * n)
            .map(|idx| ((idx % n) as f64 * h, (idx / n) as f64 * h))
            .collect()
    }

    /// Signed wavenumber of FFT index `m`.
    pub fn wavenumber(&self, m: usize) -> i64 {
        let n = self.n as i64;
        let m = m as i64;
        if m <= n / 2 {
            m
        } else {
            m - n
        }
    }

    /// Wavenumber used by first derivatives (Nyquist mapped to zero).
    fn derivative_wavenumber(&self, m: usize) -> f64 {
        if m == self.n / 2 {
            0.0
        } else {
            self.wavenumber(m) as f64
        }
    }

    fn fft2(&self, data: &mut [Complex64], inverse: bool) {
        let n = self.n;
        let plan = if inverse { &self.inverse } else { &self.forward };
        for row in data.chunks_mut(n) {
            plan.process(row);
        }
        let mut column = vec![Complex64::new(0.0, 0.0); n];
        for i in 0..n {
            for j in 0..n {
                column[j] = data[j * n + i];
            }
            plan.process(&mut column);
            for j in 0..n {
                data[j * n + i] = column[j];
            }
        }
        if inverse {
            let s = 1.0 / (n * n) as f64;
            for v in data.iter_mut() {
                *v *= s;
            }
        }
    }

    pub fn forward(&self, values: &[Complex64]) -> Vec<Complex64> {
        let mut data = values.to_vec();
        self.fft2(&mut data, false);
        data
    }

    pub fn inverse(&self, spectrum: &[Complex64]) -> Vec<Complex64> {
        let mut data = spectrum.to_vec();
        self.fft2(&mut data, true);
        data
    }

    /// Multiplies the spectrum by `symbol(kx, ky)` evaluated at derivative
    /// wavenumbers.
    fn apply_symbol(
        &self,
        u: &ScalarField,
        symbol: impl Fn(f64, f64) -> Complex64,
    ) -> ScalarField {
        let n = self.n;
        let mut spec = self.forward(u.values());
        for (idx, c) in spec.iter_mut().enumerate() {
            let kx = self.derivative_wavenumber(idx % n);
            let ky = self.derivative_wavenumber(idx / n);
            *c *= symbol(kx, ky);
        }
        ScalarField::from_complex(u.tag(), self.inverse(&spec))
    }

    /// `d/dz = (d/dx - i d/dy) / 2`.
    pub fn dz(&self, u: &ScalarField) -> ScalarField {
        self.apply_symbol(u, |kx, ky| Complex64::new(PI * ky, PI * kx))
    }

    /// `d/dzbar = (d/dx + i d/dy) / 2`.
    pub fn dzbar(&self, u: &ScalarField) -> ScalarField {
        self.apply_symbol(u, |kx, ky| Complex64::new(-PI * ky, PI * kx))
    }

    pub fn dx(&self, u: &ScalarField) -> ScalarField {
        self.apply_symbol(u, |kx, _| Complex64::new(0.0, 2.0 * PI * kx))
    }

    pub fn dy(&self, u: &ScalarField) -> ScalarField {
        self.apply_symbol(u, |_, ky| Complex64::new(0.0, 2.0 * PI * ky))
    }

    /// Symbol of the base Laplacian `g0^{-1} d dbar` (composition of the two
    /// first derivatives, so the Nyquist lines follow the same rule).
    pub fn laplacian_symbol(kx: f64, ky: f64) -> f64 {
        -2.0 * PI * PI * (kx * kx + ky * ky)
    }

    pub fn base_laplacian(&self, u: &ScalarField) -> ScalarField {
        let out = self.apply_symbol(u, |kx, ky| Complex64::new(Self::laplacian_symbol(kx, ky), 0.0));
        if u.is_real() {
            out.real_part()
        } else {
            out
        }
    }

    /// Solves `(1 - dt * base_laplacian) v = rhs`.
    pub fn solve_implicit(&self, rhs: &ScalarField, dt: f64) -> ScalarField {
        let out = self.apply_symbol(rhs, |kx, ky| {
            Complex64::new(1.0 / (1.0 - dt * Self::laplacian_symbol(kx, ky)), 0.0)
        });
        if rhs.is_real() {
            out.real_part()
        } else {
            out
        }
    }

    /// Largest eigenvalue magnitude of the base Laplacian on this grid.
    pub fn laplacian_radius(&self) -> f64 {
        let k = (self.n / 2 - 1) as f64;
        2.0 * PI * PI * 2.0 * k * k
    }

    /// 2/3-rule truncation: keeps `|kx|, |ky| <= N/3`.
    pub fn dealias(&self, u: &ScalarField) -> ScalarField {
        let n = self.n;
        let cut = (n / 3) as i64;
        let mut spec = self.forward(u.values());
        for (idx, c) in spec.iter_mut().enumerate() {
            let kx = self.wavenumber(idx % n);
            let ky = self.wavenumber(idx / n);
            let nyquist = idx % n == n / 2 || idx / n == n / 2;
            if kx.abs() > cut || ky.abs() > cut || nyquist {
                *c = Complex64::new(0.0, 0.0);
            }
        }
        let out = ScalarField::from_complex(u.tag(), self.inverse(&spec));
        if u.is_real() {
            out.real_part()
        } else {
            out
        }
    }

    /// Largest `|kx|` or `|ky|` carrying a coefficient above `threshold`
    /// relative to the largest coefficient.
    pub fn bandwidth(&self, u: &ScalarField, threshold: f64) -> i64 {
        let n = self.n;
        let spec = self.forward(u.values());
        let peak = spec.iter().fold(0.0f64, |m, c| m.max(c.norm()));
        spec.iter()
            .enumerate()
            .filter(|(_, c)| c.norm() > threshold * peak)
            .map(|(idx, _)| {
                self.wavenumber(idx % n)
                    .abs()
                    .max(self.wavenumber(idx / n).abs())
            })
            .max()
            .unwrap_or(0)
    }

    /// Zero-mean real trigonometric polynomial with modes `|kx|, |ky| <= max_mode`
    /// and coefficients decaying like `1 / (1 + |k|^2)`. Deterministic in `seed`.
    pub fn random_band_limited(&self, seed: u64, max_mode: usize) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = max_mode as i64;
        let coords = self.coords();
        let mut values = vec![0.0; coords.len()];
        for kx in 0..=k {
            for ky in -k..=k {
                if kx == 0 && ky <= 0 {
                    continue;
                }
                let decay = 1.0 / (1.0 + (kx * kx + ky * ky) as f64);
                let a: f64 = rng.gen_range(-1.0..1.0) * decay;
                let b: f64 = rng.gen_range(-1.0..1.0) * decay;
                for (v, &(x, y)) in values.iter_mut().zip(&coords) {
                    let arg = 2.0 * PI * (kx as f64 * x + ky as f64 * y);
                    *v += a * arg.cos() + b * arg.sin();
                }
            }
        }
        ScalarField::from_real(self.tag(), values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> TorusGrid {
        TorusGrid::new(n).unwrap()
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(TorusGrid::new(24).is_err());
        assert!(TorusGrid::new(8).is_err());
        assert!(TorusGrid::new(512).is_err());
    }

    #[test]
    fn derivative_of_constant_vanishes() {
        let g = grid(16);
        let c = ScalarField::constant(g.tag(), 3.5);
        assert!(g.dz(&c).sup_norm() < 1e-13);
        assert!(g.dzbar(&c).sup_norm() < 1e-13);
    }

    #[test]
    fn fourier_mode_derivatives() {
        // psi = exp(2 pi i x): d/dz psi = d/dzbar psi = pi i psi.
        let g = grid(32);
        let psi = ScalarField::from_complex(
            g.tag(),
            g.coords()
                .iter()
                .map(|&(x, _)| Complex64::new(0.0, 2.0 * PI * x).exp())
                .collect(),
        );
        let expected = psi.scale_complex(Complex64::new(0.0, PI));
        assert!(g.dz(&psi).distance(&expected) < 1e-12);
        assert!(g.dzbar(&psi).distance(&expected) < 1e-12);
    }

    #[test]
    fn conjugation_symmetry_for_real_fields() {
        let g = grid(32);
        let psi = g.random_band_limited(3, 4);
        let lhs = g.dzbar(&psi);
        let rhs = g.dz(&psi).conj();
        assert!(lhs.distance(&rhs) < 1e-13);
    }

    #[test]
    fn dealiased_product_derivative_is_exact() {
        // Modes <= N/8 multiply into modes <= N/4 < N/3: truncation is a no-op
        // and the spectral derivative matches the product rule.
        let g = grid(64);
        let a = g.random_band_limited(11, 8);
        let b = g.random_band_limited(12, 8);
        let prod = g.dealias(&(&a * &b));
        let lhs = g.dx(&prod);
        let rhs = &(&g.dx(&a) * &b) + &(&a * &g.dx(&b));
        assert!(lhs.distance(&rhs) < 1e-12 * rhs.sup_norm().max(1.0));
    }

    #[test]
    fn random_fields_are_band_limited_and_seeded() {
        let g = grid(32);
        let a = g.random_band_limited(5, 4);
        let b = g.random_band_limited(5, 4);
        assert_eq!(a, b);
        assert!(g.bandwidth(&a, 1e-12) <= 4);
        let mean: f64 = a.re().iter().sum::<f64>() / a.len() as f64;
        assert!(mean.abs() < 1e-14);
    }

    #[test]
    fn implicit_solve_inverts_operator() {
        let g = grid(32);
        let v = g.random_band_limited(9, 5);
        let dt = 1e-2;
        let rhs = &v - &g.base_laplacian(&v).scale(dt);
        assert!(g.solve_implicit(&rhs, dt).distance(&v) < 1e-12);
    }
}
