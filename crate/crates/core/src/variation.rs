//! Second variation of the entropy, the stability verdict at critical
//! states, and the W-functional barrier on positively curved backends.

use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::entropy::{entropy_h, grad_dh};
use crate::error::{LabError, Result};
use crate::fd::{mixed_central, stencil_derivative};
use crate::field::{BackendKind, ScalarField};
use crate::geometry::{gradient_norm_sq, make_state, KahlerState, Measure};
use crate::io::write_table_csv;
use crate::operators::{factored_stability_matrix, stability, stability_matrix};
use crate::spectral::{deflated_eigen, deflation_space, h1_norm, holomorphy_residual, normalize};

/// Weighted norm of DH below which a state counts as critical.
pub const CRITICALITY_THRESHOLD: f64 = 1e-8;
/// Stability eigenvalues below this are counted as kernel.
pub const KERNEL_TOLERANCE: f64 = 1e-6;
/// Default step for the two-parameter difference quotient.
pub const FD_STEP: f64 = 1e-3;

/// Derivative of DH along `phi + t psi`:
/// `-S_f psi + lambda (psi, DH)_f`.
pub fn d_dh_dt(psi: &ScalarField, state: &KahlerState) -> Result<ScalarField> {
    state.check(psi)?;
    let s = stability(psi, state);
    let coupling = state.lambda() * state.inner(psi, &grad_dh(state)).re;
    Ok(s.scale(-1.0).add_scalar(coupling))
}

/// Mixed second derivative of H along the linear family
/// `phi + s chi + t psi`:
/// `-lambda ((chi - mean chi)(psi - mean psi), DH)_f - (psi, S_f chi)_f`.
pub fn second_variation(psi: &ScalarField, chi: &ScalarField, state: &KahlerState) -> Result<f64> {
    state.check(psi)?;
    state.check(chi)?;
    let lambda = state.lambda();
    let mut value = -state.inner(psi, &stability(chi, state)).re;
    if lambda != 0.0 {
        let pc = &state.remove_weighted_mean(psi) * &state.remove_weighted_mean(chi);
        value -= lambda * state.inner(&pc, &grad_dh(state)).re;
    }
    Ok(value)
}

/// `(H(+h,+h) - H(+h,-h) - H(-h,+h) + H(-h,-h)) / 4h^2` along `phi + s chi + t psi`.
pub fn second_variation_fd(
    psi: &ScalarField,
    chi: &ScalarField,
    state: &KahlerState,
    h: f64,
) -> Result<f64> {
    state.check(psi)?;
    state.check(chi)?;
    let geometry = state.geometry();
    let phi = state.potential();
    let at = |s: f64, t: f64| -> Result<f64> {
        let p = &(phi + &chi.scale(s)) + &psi.scale(t);
        Ok(entropy_h(&make_state(geometry, &p.real_part())?))
    };
    Ok(mixed_central(at(h, h)?, at(h, -h)?, at(-h, h)?, at(-h, -h)?, h))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Stable,
    IndefiniteNoncritical,
}

#[derive(Debug, Clone, Serialize)]
pub struct SecondVariationReport {
    /// Analytic second variation along the probe direction.
    pub analytic_value: f64,
    /// Two-parameter difference quotient along the same direction.
    pub fd_value: f64,
    pub fd_step: f64,
    pub kernel_dimension: usize,
    #[serde(rename = "min_S_eigenvalue")]
    pub min_s_eigenvalue: f64,
    /// Lowest eigenvalues of the stability matrix on the deflated space.
    pub eigenvalues: Vec<f64>,
    pub kernel_holomorphy_residuals: Vec<f64>,
    pub kernel_holomorphic: Vec<bool>,
    /// Relative distance between the direct and factored assemblies.
    pub factored_mismatch: f64,
    pub asymmetry: f64,
    pub dh_norm: f64,
    pub critical: bool,
    pub verdict: Verdict,
}

/// Eigen-decomposes the stability matrix and evaluates the second variation
/// along `psi`. With `strict`, a non-critical state is an error.
pub fn stability_verdict(
    state: &KahlerState,
    psi: &ScalarField,
    strict: bool,
) -> Result<SecondVariationReport> {
    state.check(psi)?;
    let dh_norm = state.weighted_norm(&grad_dh(state));
    let critical = dh_norm < CRITICALITY_THRESHOLD;
    if strict && !critical {
        return Err(LabError::NotCritical {
            dh_norm,
            threshold: CRITICALITY_THRESHOLD,
        });
    }
    let direct = stability_matrix(state);
    let factored = factored_stability_matrix(state);
    let kernel = deflation_space(state);
    let (values, vectors, asymmetry) = deflated_eigen(&direct, &kernel)?;
    let real = state.tag().kind == BackendKind::Sphere;

    let mut kernel_holomorphy_residuals = Vec::new();
    let mut kernel_holomorphic = Vec::new();
    for (value, raw) in values.iter().zip(vectors) {
        if value.abs() >= KERNEL_TOLERANCE {
            continue;
        }
        let field = normalize(state, raw, real);
        let residual = holomorphy_residual(&field, state)?;
        kernel_holomorphic.push(residual < KERNEL_TOLERANCE * h1_norm(&field, state));
        kernel_holomorphy_residuals.push(residual);
    }

    let analytic_value = second_variation(psi, psi, state)?;
    let fd_value = second_variation_fd(psi, psi, state, FD_STEP)?;
    Ok(SecondVariationReport {
        analytic_value,
        fd_value,
        fd_step: FD_STEP,
        kernel_dimension: kernel_holomorphic.len(),
        min_s_eigenvalue: values[0],
        eigenvalues: values.iter().take(8).copied().collect(),
        kernel_holomorphy_residuals,
        kernel_holomorphic,
        factored_mismatch: direct.relative_distance(&factored),
        asymmetry,
        dh_norm,
        critical,
        verdict: if critical { Verdict::Stable } else { Verdict::IndefiniteNoncritical },
    })
}

/// Scale and coupling of the W-functional.
#[derive(Debug, Clone, Serialize)]
pub struct PerelmanParams {
    /// From `(4 pi tau0)^n = V`; this is the value used.
    pub tau0: f64,
    pub lambda: f64,
    /// `1 / (2 lambda)`, the soliton-scale requirement.
    pub tau0_from_lambda: f64,
    pub consistent: bool,
    pub note: Option<String>,
}

impl PerelmanParams {
    pub fn for_state(state: &KahlerState) -> Result<Self> {
        let lambda = state.lambda();
        if !(lambda > 0.0) {
            return Err(LabError::WrongSign(lambda));
        }
        let tau0 = state.total_volume() / (4.0 * PI);
        let tau0_from_lambda = 1.0 / (2.0 * lambda);
        let consistent = (tau0 - tau0_from_lambda).abs() <= 1e-12 * tau0;
        let note = (!consistent).then(|| {
            format!(
                "volume gives tau0 = {tau0}, 1/(2 lambda) gives {tau0_from_lambda}; using the volume value"
            )
        });
        Ok(PerelmanParams {
            tau0,
            lambda,
            tau0_from_lambda,
            consistent,
            note,
        })
    }

    /// `2 n (tau0 - 1)` with `n = 1`.
    pub fn expected_gap(&self) -> f64 {
        2.0 * (self.tau0 - 1.0)
    }
}

/// `W = (4 pi tau0)^{-1} int [2 tau0 (R + |grad f|^2) + f - 2] e^{-f} omega`
/// with `f` the Ricci potential of the state.
pub fn perelman_w(state: &KahlerState, params: &PerelmanParams) -> Result<f64> {
    if !(state.lambda() > 0.0) {
        return Err(LabError::WrongSign(state.lambda()));
    }
    let tau = params.tau0;
    let f = state.ricci_potential();
    let r = state.scalar_curvature();
    let integrand = (&r + &gradient_norm_sq(f, state))
        .scale(2.0 * tau)
        .add_scalar(-2.0);
    let integrand = &integrand + f;
    let total = state.integrate(&integrand, Measure::Weighted { normalized: false })?;
    Ok(total.re / (4.0 * PI * tau))
}

#[derive(Debug, Clone, Serialize)]
pub struct BarrierReport {
    pub params: PerelmanParams,
    pub t: Vec<f64>,
    /// `H(phi + t psi) + 2n (tau0 - 1)`.
    pub h_barrier: Vec<f64>,
    #[serde(rename = "W")]
    pub w: Vec<f64>,
    /// Largest `|W - H_barrier|` over the samples.
    pub max_curve_gap: f64,
    /// Second derivative of the barrier curve at `t = 0` from all samples.
    pub second_difference: f64,
    /// `-(psi, S_f psi)_f` at the base state.
    pub quadratic_form: f64,
}

impl BarrierReport {
    /// Writes `t, H_barrier, W`.
    pub fn write_csv(&self, path: &Path, comments: &[String]) -> Result<()> {
        let rows: Vec<Vec<f64>> = (0..self.t.len())
            .map(|i| vec![self.t[i], self.h_barrier[i], self.w[i]])
            .collect();
        write_table_csv(path, comments, &["t", "H_barrier", "W"], &rows)
    }
}

/// Evaluates the barrier curve and W along `phi + t psi`. `t_samples` must
/// contain 0 and at least two other points.
pub fn barrier_audit(state: &KahlerState, psi: &ScalarField, t_samples: &[f64]) -> Result<BarrierReport> {
    let params = PerelmanParams::for_state(state)?;
    state.check(psi)?;
    if t_samples.len() < 3 || !t_samples.contains(&0.0) {
        return Err(LabError::InvalidArgument(
            "barrier samples need t = 0 and at least two other points".into(),
        ));
    }
    let dh_norm = state.weighted_norm(&grad_dh(state));
    if dh_norm >= CRITICALITY_THRESHOLD {
        return Err(LabError::NotCritical {
            dh_norm,
            threshold: CRITICALITY_THRESHOLD,
        });
    }
    let geometry = state.geometry();
    let phi = state.potential();
    let gap = params.expected_gap();
    let curves: Vec<(f64, f64)> = t_samples
        .par_iter()
        .map(|&t| {
            let s = make_state(geometry, &(phi + &psi.scale(t)).real_part())?;
            Ok((entropy_h(&s) + gap, perelman_w(&s, &params)?))
        })
        .collect::<Result<_>>()?;
    let (h_barrier, w): (Vec<f64>, Vec<f64>) = curves.into_iter().unzip();
    let max_curve_gap = h_barrier
        .iter()
        .zip(&w)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(BarrierReport {
        second_difference: stencil_derivative(0.0, t_samples, &h_barrier, 2),
        quadratic_form: -state.inner(psi, &stability(psi, state)).re,
        params,
        t: t_samples.to_vec(),
        h_barrier,
        w,
        max_curve_gap,
    })
}

/// Symmetric samples `-k h, ..., 0, ..., k h`.
pub fn symmetric_samples(h: f64, k: usize) -> Vec<f64> {
    let k = k as i64;
    (-k..=k).map(|i| i as f64 * h).collect()
}
