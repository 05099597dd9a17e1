//! Rotationally invariant metrics on the sphere, reduced to the moment
//! coordinate `mu` in `(-1, 1)`.
//!
//! In the cylinder coordinate `t = 2 atanh(mu)` the round potential has
//! moment map `x(t) = 1 + tanh(t/2) = 1 + mu` and `x'(t) = (1 - mu^2) / 2`.
//! An invariant field is a polynomial in `mu` of degree `< N`, sampled at the
//! Gauss-Legendre nodes, so the poles are never evaluated.
//!
//! Reduction rules used throughout:
//!   d/dt             = a(mu) d/dmu,     a = (1 - mu^2) / 2
//!   g0 = x'(t)       = a
//!   d log g0 / dt    = a'(mu) = -mu
//!   (1/g0) d(g0 w)   = (a w)_mu = a w_mu - mu w
//!
//! The last form is exact on polynomials and is the discrete negative
//! transpose of `d/dt` under Gauss-Legendre quadrature.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{LabError, Result};
use crate::field::{BackendKind, BackendTag, ScalarField};

pub const MIN_SPHERE_RESOLUTION: usize = 8;
pub const MAX_SPHERE_RESOLUTION: usize = 512;

#[derive(Debug, Clone)]
pub struct MomentGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// Row-major collocation differentiation matrix in `mu`.
    diff: Vec<f64>,
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
pub fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let dp = nf * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

pub fn legendre(n: usize, x: f64) -> f64 {
    legendre_with_derivative(n, x).0
}

/// Gauss-Legendre nodes (ascending) and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for k in 0..n {
        // Tricomi initial guess, refined by Newton.
        let mut x = -(PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, x);
            let step = p / dp;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        nodes[k] = x;
        weights[k] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

impl MomentGrid {
    pub fn new(n: usize) -> Result<Self> {
        if !(MIN_SPHERE_RESOLUTION..=MAX_SPHERE_RESOLUTION).contains(&n) {
            return Err(LabError::InvalidResolution {
                backend: "sphere",
                resolution: n,
                reason: "node count must lie in 8..=512",
            });
        }
        let (nodes, weights) = gauss_legendre(n);
        // Barycentric weights of the Gauss-Legendre nodes.
        let bary: Vec<f64> = (0..n)
            .map(|j| {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                sign * ((1.0 - nodes[j] * nodes[j]) * weights[j]).sqrt()
            })
            .collect();
        let mut diff = vec![0.0; n * n];
        for i in 0..n {
            let mut diag = 0.0;
            for j in 0..n {
                if i != j {
                    let d = (bary[j] / bary[i]) / (nodes[i] - nodes[j]);
                    diff[i * n + j] = d;
                    diag -= d;
                }
            }
            diff[i * n + i] = diag;
        }
        Ok(MomentGrid {
            nodes,
            weights,
            diff,
        })
    }

    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn tag(&self) -> BackendTag {
        BackendTag {
            kind: BackendKind::Sphere,
            resolution: self.n(),
        }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Gauss-Legendre weights, summing to 2.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `a(mu) = dmu/dt = (1 - mu^2) / 2` at the nodes.
    pub fn a(&self) -> Vec<f64> {
        self.nodes.iter().map(|m| 0.5 * (1.0 - m * m)).collect()
    }

    /// Cylinder coordinate `t = 2 atanh(mu)` at the nodes.
    pub fn cylinder_coordinate(&self) -> Vec<f64> {
        self.nodes.iter().map(|m| 2.0 * m.atanh()).collect()
    }

    pub fn field(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField::from_real(self.tag(), self.nodes.iter().map(|&m| f(m)).collect())
    }

    fn check(&self, u: &ScalarField) -> Result<()> {
        if u.len() != self.n() || u.tag().kind != BackendKind::Sphere {
            return Err(LabError::NonInvariantInput {
                expected: self.n(),
                found: u.len(),
            });
        }
        Ok(())
    }

    /// Collocation derivative `d/dmu`.
    pub fn dmu(&self, u: &ScalarField) -> ScalarField {
        let n = self.n();
        let vals = u.values();
        let out: Vec<Complex64> = (0..n)
            .map(|i| {
                let row = &self.diff[i * n..(i + 1) * n];
                row.iter().zip(vals).map(|(d, v)| v * d).sum()
            })
            .collect();
        let out = ScalarField::from_complex(u.tag(), out);
        if u.is_real() {
            out.real_part()
        } else {
            out
        }
    }

    /// `d/dt = a(mu) d/dmu`. This is the reduction of both `d/dzeta` and
    /// `d/dzetabar` on invariant fields.
    pub fn d_dt(&self, u: &ScalarField) -> Result<ScalarField> {
        self.check(u)?;
        Ok(self.d_dt_unchecked(u))
    }

    pub(crate) fn d_dt_unchecked(&self, u: &ScalarField) -> ScalarField {
        let du = self.dmu(u);
        let a = self.field(|m| 0.5 * (1.0 - m * m));
        &a * &du
    }

    /// `(a w)_mu = a w_mu - mu w`.
    pub fn div0(&self, w: &ScalarField) -> ScalarField {
        let dw = self.dmu(w);
        let a = self.field(|m| 0.5 * (1.0 - m * m));
        let mu = self.field(|m| m);
        &(&a * &dw) - &(&mu * w)
    }

    /// Round Laplacian `((1 - mu^2)/2 u_mu)_mu`: `-l(l+1)/2` on `P_l`.
    pub fn base_laplacian(&self, u: &ScalarField) -> ScalarField {
        self.div0(&self.dmu(u))
    }

    /// Legendre coefficients `c_l` with `u = sum c_l P_l`, exact for
    /// polynomials of degree `< N`.
    pub fn legendre_coefficients(&self, u: &ScalarField) -> Vec<f64> {
        let vals = u.re();
        (0..self.n())
            .map(|l| {
                let s: f64 = self
                    .nodes
                    .iter()
                    .zip(&self.weights)
                    .zip(&vals)
                    .map(|((&m, &w), &v)| w * v * legendre(l, m))
                    .sum();
                s * (2.0 * l as f64 + 1.0) / 2.0
            })
            .collect()
    }

    /// Ratio of the largest coefficient in the top quarter of the spectrum to
    /// the largest overall. Small values mean the field is resolved.
    pub fn spectral_tail(&self, u: &ScalarField) -> f64 {
        let c = self.legendre_coefficients(u);
        let peak = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak == 0.0 {
            return 0.0;
        }
        let start = 3 * c.len() / 4;
        c[start..].iter().fold(0.0f64, |m, v| m.max(v.abs())) / peak
    }

    /// Dense matrix of `base_laplacian` on nodal values.
    pub fn laplacian_matrix(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut m = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let col = self.base_laplacian(&ScalarField::from_real(self.tag(), e));
            for (i, v) in col.re().into_iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// Solves `(1 - dt * base_laplacian) v = rhs`.
    pub fn solve_implicit(&self, rhs: &ScalarField, dt: f64) -> ScalarField {
        let n = self.n();
        let system = DMatrix::identity(n, n) - self.laplacian_matrix() * dt;
        let lu = system.lu();
        let b = nalgebra::DVector::from_vec(rhs.re());
        let x = lu.solve(&b).expect("1 - dt * Laplacian is invertible for dt > 0");
        ScalarField::from_real(self.tag(), x.iter().copied().collect())
    }

    /// Largest eigenvalue magnitude of the base Laplacian, `N (N - 1) / 2`.
    pub fn laplacian_radius(&self) -> f64 {
        let n = self.n() as f64;
        n * (n - 1.0) / 2.0
    }

    /// Random invariant potential `sum_{l=1..=max_degree} c_l P_l(mu)` with
    /// coefficients decaying like `1 / l^2`. Deterministic in `seed`.
    pub fn random_invariant(&self, seed: u64, max_degree: usize) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs: Vec<f64> = (1..=max_degree)
            .map(|l| rng.gen_range(-1.0..1.0) / (l * l) as f64)
            .collect();
        self.field(|m| {
            coeffs
                .iter()
                .enumerate()
                .map(|(k, c)| c * legendre(k + 1, m))
                .sum()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrature_weights_and_nodes() {
        let g = MomentGrid::new(32).unwrap();
        let total: f64 = g.weights().iter().sum();
        assert!((total - 2.0).abs() < 1e-14);
        assert!(g.nodes().iter().all(|m| m.abs() < 1.0));
        assert!(g.nodes().windows(2).all(|w| w[0] < w[1]));
        // Exact for degree 2N - 1.
        let s: f64 = g
            .nodes()
            .iter()
            .zip(g.weights())
            .map(|(m, w)| w * m.powi(62))
            .sum();
        assert!((s - 2.0 / 63.0).abs() < 1e-14);
    }

    #[test]
    fn differentiation_is_exact_on_polynomials() {
        let g = MomentGrid::new(24).unwrap();
        let u = g.field(|m| m.powi(7) - 3.0 * m * m);
        let du = g.dmu(&u);
        let expected = g.field(|m| 7.0 * m.powi(6) - 6.0 * m);
        assert!(du.distance(&expected) < 1e-11);
    }

    #[test]
    fn d_dt_of_mu() {
        let g = MomentGrid::new(16).unwrap();
        let mu = g.field(|m| m);
        let expected = g.field(|m| 0.5 * (1.0 - m * m));
        assert!(g.d_dt(&mu).unwrap().distance(&expected) < 1e-13);
        let c = ScalarField::constant(g.tag(), 2.0);
        assert!(g.d_dt(&c).unwrap().sup_norm() < 1e-12);
    }

    #[test]
    fn legendre_modes_are_eigenfunctions() {
        let g = MomentGrid::new(32).unwrap();
        for l in 1..6 {
            let p = g.field(|m| legendre(l, m));
            let lap = g.base_laplacian(&p);
            let expected = p.scale(-((l * (l + 1)) as f64) / 2.0);
            assert!(lap.distance(&expected) < 1e-11, "l = {l}");
        }
    }

    #[test]
    fn divergence_is_negative_transpose_of_d_dt() {
        let g = MomentGrid::new(20).unwrap();
        let w = g.field(|m| (2.0 * m).sin() + m.powi(5));
        let v = g.field(|m| (m + 0.3).exp());
        let lhs: f64 = g
            .div0(&w)
            .re()
            .iter()
            .zip(v.re())
            .zip(g.weights())
            .map(|((a, b), q)| a * b * q)
            .sum();
        let rhs: f64 = w
            .re()
            .iter()
            .zip(g.d_dt(&v).unwrap().re())
            .zip(g.weights())
            .map(|((a, b), q)| a * b * q)
            .sum();
        assert!((lhs + rhs).abs() < 1e-13);
    }

    #[test]
    fn rejects_wrong_length() {
        let g = MomentGrid::new(16).unwrap();
        let other = MomentGrid::new(20).unwrap();
        let u = other.field(|m| m);
        assert!(matches!(
            g.d_dt(&u),
            Err(LabError::NonInvariantInput { .. })
        ));
    }

    #[test]
    fn implicit_solve_inverts_operator() {
        let g = MomentGrid::new(24).unwrap();
        let v = g.random_invariant(3, 6);
        let rhs = &v - &g.base_laplacian(&v).scale(0.05);
        assert!(g.solve_implicit(&rhs, 0.05).distance(&v) < 1e-12);
    }
}
