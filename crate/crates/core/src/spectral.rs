//! Spectrum of `-L_f` away from the discrete constants, the Bochner-type
//! identity for its eigenpairs, and holomorphy residuals.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::field::{BackendKind, ScalarField};
use crate::geometry::{gradient_norm_sq, hessian20_unchecked, KahlerState};
use crate::operators::{delta_f, lf, OperatorMatrix};

/// Relative asymmetry above which the weighted operator is not trusted to be
/// self-adjoint and the solve is refused.
const ASYMMETRY_LIMIT: f64 = 1e-6;

/// Holomorphy flag threshold, relative to the field's H1 norm.
pub const HOLOMORPHY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct SpectralReport {
    pub backend: BackendKind,
    pub resolution: usize,
    pub lambda: f64,
    /// Dimension of the deflated space.
    pub dim: usize,
    /// Number of discrete kernel directions removed before solving.
    pub deflated: usize,
    pub eigenvalues: Vec<f64>,
    #[serde(skip)]
    pub eigenfields: Vec<ScalarField>,
    /// `|int |hess20 psi|^2 - (mu - lambda) int |grad psi|^2| / (mu int |grad psi|^2)`.
    pub poincare_residuals: Vec<f64>,
    pub holomorphy_residuals: Vec<f64>,
    pub holomorphy_flags: Vec<bool>,
    pub min_eigenvalue: f64,
    pub asymmetry: f64,
}

/// Space removed before eigen-solving: the constants and, on the torus, every
/// Fourier mode on a Nyquist line. First derivatives zero the Nyquist
/// wavenumber, so those modes are not resolved by the operators and would
/// otherwise show up as spurious low eigenvalues.
pub fn deflation_space(state: &KahlerState) -> Vec<ScalarField> {
    let tag = state.tag();
    let mut out = vec![ScalarField::constant(tag, 1.0)];
    if let Some(grid) = state.geometry().as_torus() {
        let n = grid.n();
        let coords = grid.coords();
        let half = (n / 2) as f64;
        let mode = |kx: f64, ky: f64| {
            ScalarField::from_complex(
                tag,
                coords
                    .iter()
                    .map(|&(x, y)| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * (kx * x + ky * y)))
                    .collect(),
            )
        };
        for m in 0..n {
            let k = grid.wavenumber(m) as f64;
            out.push(mode(half, k));
            if m != n / 2 {
                out.push(mode(k, half));
            }
        }
    }
    out
}

/// Eigenpairs of a self-adjoint weighted operator restricted to the
/// weighted-orthogonal complement of `kernel`, ascending.
pub(crate) fn deflated_eigen(
    op: &OperatorMatrix,
    kernel: &[ScalarField],
) -> Result<(Vec<f64>, Vec<Vec<Complex64>>, f64)> {
    let n = op.dim();
    let asymmetry = op.asymmetry();
    if !(asymmetry < ASYMMETRY_LIMIT) {
        return Err(LabError::EigensolveFailure {
            dim: n,
            asymmetry,
            reason: "operator is not self-adjoint under the weighted measure".into(),
        });
    }
    let sqrt_m: Vec<f64> = op.measure.iter().map(|m| m.sqrt()).collect();
    let a = op.symmetric_form();
    let a = (&a + a.adjoint()).scale(0.5);

    // Orthonormal basis of the kernel in the symmetrized coordinates.
    let r = kernel.len();
    let k = DMatrix::from_fn(n, r, |i, j| kernel[j].values()[i] * sqrt_m[i]);
    let q = k.qr().q();

    // Push the kernel to the top of the spectrum, far from everything else.
    let spread = a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let shift = 10.0 * spread + 1.0;
    let p = DMatrix::<Complex64>::identity(n, n) - &q * q.adjoint();
    let b = &p * &a * &p + (&q * q.adjoint()).scale(shift);
    let b = (&b + b.adjoint()).scale(0.5);

    let eig = SymmetricEigen::new(b);
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(LabError::EigensolveFailure {
            dim: n,
            asymmetry,
            reason: "non-finite eigenvalue".into(),
        });
    }
    let mut order: Vec<usize> = (0..n)
        .filter(|&j| eig.eigenvalues[j] < 0.5 * shift)
        .collect();
    if order.len() != n - r {
        return Err(LabError::EigensolveFailure {
            dim: n,
            asymmetry,
            reason: format!("expected {} deflated eigenvalues, found {}", n - r, order.len()),
        });
    }
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&j| eig.eigenvalues[j]).collect();
    let vectors = order
        .iter()
        .map(|&j| {
            let v = eig.eigenvectors.column(j);
            (0..n).map(|i| v[i] / sqrt_m[i]).collect()
        })
        .collect();
    Ok((values, vectors, asymmetry))
}

/// Normalizes in the weighted norm and rotates the phase so the largest
/// sample is real and positive.
pub(crate) fn normalize(state: &KahlerState, raw: Vec<Complex64>, real: bool) -> ScalarField {
    let peak = raw
        .iter()
        .copied()
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))
        .unwrap_or(Complex64::new(1.0, 0.0));
    let phase = if peak.norm() > 0.0 { peak.conj() / peak.norm() } else { Complex64::new(1.0, 0.0) };
    let u = ScalarField::from_complex(state.tag(), raw.into_iter().map(|z| z * phase).collect());
    let u = if real { u.real_part() } else { u };
    let norm = state.weighted_norm(&u);
    u.scale(1.0 / norm)
}

/// `V^{-1} int g^{-1} |d psi|^2 e^{-f} omega_phi`.
pub fn gradient_energy(psi: &ScalarField, state: &KahlerState) -> f64 {
    state.weighted_mean(&gradient_norm_sq(psi, state)).re
}

/// `V^{-1} int g^{-2} |hess20 psi|^2 e^{-f} omega_phi`.
pub fn hessian20_energy(psi: &ScalarField, state: &KahlerState) -> f64 {
    let h = hessian20_unchecked(psi, state).component;
    let g = state.metric();
    let pointwise = h
        .map(|z| Complex64::new(z.norm_sqr(), 0.0))
        .div(&(g * g));
    state.weighted_mean(&pointwise).re
}

/// Weighted L2 norm of the (2,0)-Hessian; vanishes exactly when
/// `grad^{1,0} conj(psi)` is holomorphic.
pub fn holomorphy_residual(psi: &ScalarField, state: &KahlerState) -> Result<f64> {
    state.check(psi)?;
    Ok(hessian20_energy(psi, state).max(0.0).sqrt())
}

/// `sqrt(|psi|_f^2 + |grad psi|_f^2)`.
pub fn h1_norm(psi: &ScalarField, state: &KahlerState) -> f64 {
    (state.inner(psi, psi).re + gradient_energy(psi, state)).sqrt()
}

/// Relative mismatch in `int |hess20 psi|^2 = (mu - lambda) int |grad psi|^2`.
pub fn poincare_residual(psi: &ScalarField, mu: f64, state: &KahlerState) -> f64 {
    let grad = gradient_energy(psi, state);
    let lhs = hessian20_energy(psi, state);
    let rhs = (mu - state.lambda()) * grad;
    (lhs - rhs).abs() / (mu.abs() * grad).max(f64::MIN_POSITIVE)
}

/// Lowest `k` eigenpairs of `-L_f` on the weighted complement of the
/// discrete kernel of `d`.
pub fn eigensolve_drift_laplacian(state: &KahlerState, k: usize) -> Result<SpectralReport> {
    let op = OperatorMatrix::assemble("-L_f", state, |u| lf(u, state).scale(-1.0));
    let kernel = deflation_space(state);
    let dim = op.dim() - kernel.len();
    if k == 0 || k >= dim {
        return Err(LabError::InvalidArgument(format!(
            "requested {k} eigenpairs from a {dim}-dimensional space"
        )));
    }
    let (values, vectors, asymmetry) = deflated_eigen(&op, &kernel)?;
    let real = state.tag().kind == BackendKind::Sphere;
    let mut report = SpectralReport {
        backend: state.tag().kind,
        resolution: state.tag().resolution,
        lambda: state.lambda(),
        dim,
        deflated: kernel.len(),
        eigenvalues: Vec::with_capacity(k),
        eigenfields: Vec::with_capacity(k),
        poincare_residuals: Vec::with_capacity(k),
        holomorphy_residuals: Vec::with_capacity(k),
        holomorphy_flags: Vec::with_capacity(k),
        min_eigenvalue: values[0],
        asymmetry,
    };
    for (mu, raw) in values.into_iter().zip(vectors).take(k) {
        let psi = normalize(state, raw, real);
        let hol = holomorphy_residual(&psi, state)?;
        report.poincare_residuals.push(poincare_residual(&psi, mu, state));
        report
            .holomorphy_flags
            .push(hol < HOLOMORPHY_TOLERANCE * h1_norm(&psi, state));
        report.holomorphy_residuals.push(hol);
        report.eigenvalues.push(mu);
        report.eigenfields.push(psi);
    }
    Ok(report)
}

/// `((psi, -Delta_f psi)_f, lambda (psi, psi)_f)` for `psi` with its
/// weighted mean removed.
pub fn drift_quadratic_form(psi: &ScalarField, state: &KahlerState) -> Result<(f64, f64)> {
    state.check(psi)?;
    let u = state.remove_weighted_mean(psi);
    let lhs = -state.inner(&delta_f(&u, state), &u).re;
    Ok((lhs, state.lambda() * state.inner(&u, &u).re))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_state, sphere_base, torus_base};
    use std::f64::consts::PI;

    #[test]
    fn flat_torus_fundamental_eigenvalue() {
        let geom = torus_base(16).unwrap();
        let state = make_state(&geom, &ScalarField::zeros(geom.tag())).unwrap();
        let r = eigensolve_drift_laplacian(&state, 5).unwrap();
        assert_eq!(r.deflated, 32);
        assert!(r.eigenvalues.iter().all(|&v| v > 0.0));
        // Four-fold fundamental mode (+-1, 0), (0, +-1) with eigenvalue 2 pi^2.
        for v in &r.eigenvalues[..4] {
            assert!((v - 2.0 * PI * PI).abs() < 1e-9);
        }
        assert!(r.eigenvalues[4] > 2.0 * PI * PI + 1.0);
        assert!(r.holomorphy_flags.iter().all(|f| !f));
    }

    #[test]
    fn round_sphere_equality_case() {
        let geom = sphere_base(48).unwrap();
        let state = make_state(&geom, &ScalarField::zeros(geom.tag())).unwrap();
        let r = eigensolve_drift_laplacian(&state, 3).unwrap();
        assert!((r.eigenvalues[0] - 1.0).abs() < 1e-10);
        assert!((r.eigenvalues[1] - 3.0).abs() < 1e-9);
        assert!((r.eigenvalues[2] - 6.0).abs() < 1e-9);
        assert!(r.holomorphy_flags[0]);
        assert!(!r.holomorphy_flags[1]);
        // Eigenfield is proportional to mu.
        let mu = geom.as_sphere().unwrap().field(|m| m);
        let psi = &r.eigenfields[0];
        let c = state.inner(psi, &mu).re / state.inner(&mu, &mu).re;
        assert!(psi.distance(&mu.scale(c)) < 1e-10);
    }

    #[test]
    fn holomorphy_of_model_functions() {
        let geom = torus_base(32).unwrap();
        let state = make_state(&geom, &ScalarField::zeros(geom.tag())).unwrap();
        let grid = geom.as_torus().unwrap();
        let psi = ScalarField::from_real(
            geom.tag(),
            grid.coords().iter().map(|&(x, _)| (2.0 * PI * x).cos()).collect(),
        );
        assert!(holomorphy_residual(&psi, &state).unwrap() > 1.0);
        let c = ScalarField::constant(geom.tag(), 1.0);
        assert!(holomorphy_residual(&c, &state).unwrap() < 1e-12);
    }

    #[test]
    fn quadratic_form_bound_on_random_sphere_state() {
        let geom = sphere_base(48).unwrap();
        let state = make_state(&geom, &geom.random_potential(12, 0.5)).unwrap();
        for seed in 0..5 {
            let (lhs, rhs) = drift_quadratic_form(&geom.random_direction(seed), &state).unwrap();
            assert!(lhs >= rhs - 1e-10 * rhs.abs());
        }
    }

    #[test]
    fn request_out_of_range_is_rejected() {
        let geom = sphere_base(8).unwrap();
        let state = make_state(&geom, &ScalarField::zeros(geom.tag())).unwrap();
        assert!(eigensolve_drift_laplacian(&state, 7).is_err());
        assert!(eigensolve_drift_laplacian(&state, 0).is_err());
    }
}
