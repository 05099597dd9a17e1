//! Weighted drift operators, weighted divergences and the stability operator.
//!
//! With `rho = omega_phi / omega_0` and `w = e^{-f}`:
//!
//! ```text
//! L_f u    = e^f div0bar(w g0^{-1} d u) / rho      = Delta u - g^{-1} dbar f  d u
//! Lbar_f u = e^f div0(w g0^{-1} dbar u) / rho      = Delta u - g^{-1} d f  dbar u
//! Delta_f  = (L_f + Lbar_f) / 2
//! ```
//!
//! Each is a weighted divergence of a weighted gradient, so the assembled
//! matrices are self-adjoint under `(a, b)_f` up to round-off.

use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::field::{ScalarField, TensorField11, TensorField20};
use crate::geometry::{
    gradient_norm_sq, gradient_pairing_unchecked, hessian11_unchecked, hessian20_unchecked,
    laplacian_unchecked, KahlerState,
};
use crate::io::{Snapshot, SnapshotKind};

fn keep_real(out: ScalarField, input: &ScalarField) -> ScalarField {
    if input.is_real() {
        out.real_part()
    } else {
        out
    }
}

pub fn apply_lf(psi: &ScalarField, state: &KahlerState) -> Result<ScalarField> {
    state.check(psi)?;
    Ok(lf(psi, state))
}

pub fn apply_bar_lf(psi: &ScalarField, state: &KahlerState) -> Result<ScalarField> {
    state.check(psi)?;
    Ok(bar_lf(psi, state))
}

pub fn apply_delta_f(psi: &ScalarField, state: &KahlerState) -> Result<ScalarField> {
    state.check(psi)?;
    Ok(delta_f(psi, state))
}

pub(crate) fn lf(psi: &ScalarField, state: &KahlerState) -> ScalarField {
    let geometry = state.geometry();
    let flux = state.weight() * &geometry.dz_over_g0(psi);
    let w_inv = state.weight().recip();
    (&w_inv * &geometry.div0_bar(&flux)).div(state.density_ratio())
}

pub(crate) fn bar_lf(psi: &ScalarField, state: &KahlerState) -> ScalarField {
    let geometry = state.geometry();
    let flux = state.weight() * &geometry.dzbar_over_g0(psi);
    let w_inv = state.weight().recip();
    (&w_inv * &geometry.div0(&flux)).div(state.density_ratio())
}

pub(crate) fn delta_f(psi: &ScalarField, state: &KahlerState) -> ScalarField {
    let out = (&lf(psi, state) + &bar_lf(psi, state)).scale(0.5);
    keep_real(out, psi)
}

/// Vector field `X = X^1 d/dz + X^1bar d/dzbar`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub holo: ScalarField,
    pub antiholo: ScalarField,
}

/// One-form `alpha = alpha_1 dz + alpha_1bar dzbar`.
#[derive(Debug, Clone, PartialEq)]
pub struct OneForm {
    pub dz: ScalarField,
    pub dzbar: ScalarField,
}

#[derive(Debug, Clone)]
pub enum DivergenceInput {
    Vector(VectorField),
    OneForm(OneForm),
    Tensor11(TensorField11),
    Tensor20(TensorField20),
    Scalar(ScalarField),
}

#[derive(Debug, Clone)]
pub enum DivergenceOutput {
    Scalar(ScalarField),
    OneForm(OneForm),
}

impl DivergenceOutput {
    pub fn into_scalar(self) -> Option<ScalarField> {
        match self {
            DivergenceOutput::Scalar(s) => Some(s),
            DivergenceOutput::OneForm(_) => None,
        }
    }

    pub fn into_one_form(self) -> Option<OneForm> {
        match self {
            DivergenceOutput::OneForm(a) => Some(a),
            DivergenceOutput::Scalar(_) => None,
        }
    }
}

/// Gradient `grad u = (g^{-1} dbar u) d/dz + (g^{-1} d u) d/dzbar`.
pub fn gradient(u: &ScalarField, state: &KahlerState) -> Result<VectorField> {
    state.check(u)?;
    let geometry = state.geometry();
    Ok(VectorField {
        holo: geometry.dzbar(u).div(state.metric()),
        antiholo: geometry.dz(u).div(state.metric()),
    })
}

/// Weighted divergence with respect to `e^{-f} omega_phi`.
///
/// Vector fields and one-forms map to functions, symmetric (1,1)-tensors to
/// one-forms. The normalization is fixed by `div_f grad u = Delta_f u`.
pub fn div_f(input: &DivergenceInput, state: &KahlerState) -> Result<DivergenceOutput> {
    let geometry = state.geometry();
    let w = state.weight();
    let w_inv = w.recip();
    let rho = state.density_ratio();
    match input {
        DivergenceInput::Vector(x) => {
            state.check(&x.holo)?;
            state.check(&x.antiholo)?;
            let a = geometry.div0(&(&(rho * w) * &x.holo));
            let b = geometry.div0_bar(&(&(rho * w) * &x.antiholo));
            let out = (&w_inv * &(&a + &b)).div(rho).scale(0.5);
            Ok(DivergenceOutput::Scalar(out))
        }
        DivergenceInput::OneForm(alpha) => Ok(DivergenceOutput::Scalar(one_form_divergence(
            alpha, state,
        )?)),
        DivergenceInput::Tensor11(h) => {
            state.check(&h.component)?;
            Ok(DivergenceOutput::OneForm(tensor_divergence(&h.component, state)))
        }
        DivergenceInput::Tensor20(_) => Err(LabError::RankUnsupported("a (2,0)-tensor")),
        DivergenceInput::Scalar(_) => Err(LabError::RankUnsupported("a scalar field")),
    }
}

fn one_form_divergence(alpha: &OneForm, state: &KahlerState) -> Result<ScalarField> {
    state.check(&alpha.dz)?;
    state.check(&alpha.dzbar)?;
    let geometry = state.geometry();
    let w = state.weight();
    let g0 = geometry.base_metric();
    let a = geometry.div0_bar(&(w * &alpha.dz).div(g0));
    let b = geometry.div0(&(w * &alpha.dzbar).div(g0));
    Ok((&w.recip() * &(&a + &b))
        .div(state.density_ratio())
        .scale(0.5))
}

fn tensor_divergence(h: &ScalarField, state: &KahlerState) -> OneForm {
    let geometry = state.geometry();
    let w = state.weight();
    let w_inv = w.recip();
    let inner = (w * h).div(state.metric());
    OneForm {
        dz: (&w_inv * &geometry.dz(&inner)).scale(0.5),
        dzbar: (&w_inv * &geometry.dzbar(&inner)).scale(0.5),
    }
}

/// `2 div_f div_f eta` for a (1,1)-tensor component `eta`.
pub(crate) fn double_divergence(eta: &ScalarField, state: &KahlerState) -> ScalarField {
    let beta = tensor_divergence(eta, state);
    let out = one_form_divergence(&beta, state)
        .expect("one-form built on the state's grid")
        .scale(2.0);
    keep_real(out, eta)
}

/// Expanded form `Delta Delta psi - 2 <grad f, grad Delta psi> + Delta psi (|grad f|^2 - Delta f)`.
pub(crate) fn divdiv_expanded(psi: &ScalarField, state: &KahlerState) -> ScalarField {
    let f = state.ricci_potential();
    let lap = laplacian_unchecked(psi, state);
    let lap_lap = laplacian_unchecked(&lap, state);
    let cross = gradient_pairing_unchecked(f, &lap, state);
    let grad_f_sq = gradient_norm_sq(f, state);
    let lap_f = laplacian_unchecked(f, state);
    let potential = &grad_f_sq - &lap_f;
    let out = &(&lap_lap - &cross.scale(2.0)) + &(&lap * &potential);
    keep_real(out, psi)
}

#[derive(Debug, Clone)]
pub struct DivDivReport {
    /// Nested weighted divergences of the mixed Hessian.
    pub value: ScalarField,
    /// The expanded right-hand side.
    pub expanded: ScalarField,
    /// Sup norm of the difference.
    pub residual: f64,
}

pub fn divdiv_hessian(psi: &ScalarField, state: &KahlerState) -> Result<DivDivReport> {
    state.check(psi)?;
    let h = hessian11_unchecked(psi, state);
    let value = double_divergence(&h.component, state);
    let expanded = divdiv_expanded(psi, state);
    let residual = value.distance(&expanded);
    Ok(DivDivReport {
        value,
        expanded,
        residual,
    })
}

/// Hermitian pairing of (1,1)-tensors, `V^{-1} int g^{-2} eta conj(zeta) e^{-f} omega_phi`.
pub fn tensor_inner(eta: &TensorField11, zeta: &TensorField11, state: &KahlerState) -> Complex64 {
    let g = state.metric();
    let g2 = g * g;
    let pointwise = eta.component.zip_map(&zeta.component, |a, b| a * b.conj()).div(&g2);
    state.weighted_mean(&pointwise)
}

/// `|(2 div_f div_f eta, psi)_f - (eta, hess11 psi)_f|`.
pub fn adjointness_check(eta: &TensorField11, psi: &ScalarField, state: &KahlerState) -> Result<f64> {
    state.check(&eta.component)?;
    state.check(psi)?;
    let lhs = state.inner(&double_divergence(&eta.component, state), psi);
    let rhs = tensor_inner(eta, &hessian11_unchecked(psi, state), state);
    Ok((lhs - rhs).norm())
}

#[derive(Debug, Clone)]
pub struct CommutatorReport {
    /// `Lbar_f L_f psi` by composition.
    pub lbar_l: ScalarField,
    /// `L_f Lbar_f psi` by composition.
    pub l_lbar: ScalarField,
    /// Correction term of the `Lbar_f L_f` ordering (built from the (0,2)-Hessian of f).
    pub extra_bar: ScalarField,
    /// Correction term of the `L_f Lbar_f` ordering (built from the (2,0)-Hessian of f).
    pub extra: ScalarField,
    /// Expanded `2 div_f div_f hess11 psi` shared by both orderings.
    pub shared: ScalarField,
    /// `|Lbar_f L_f psi - (shared - extra_bar)|`.
    pub residual_lbar_l: f64,
    /// `|L_f Lbar_f psi - (shared - extra)|`.
    pub residual_l_lbar: f64,
    /// `|Lbar_f L_f psi - (2 div_f div_f hess11 psi - extra_bar)|` with the
    /// double divergence taken by nesting.
    pub residual_nested: f64,
    /// `|[Lbar_f, L_f] psi - (extra - extra_bar)|`.
    pub residual_commutator: f64,
    /// Sup norm of `[Lbar_f, L_f] psi`.
    pub commutator_norm: f64,
}

pub fn commutator_decomposition(psi: &ScalarField, state: &KahlerState) -> Result<CommutatorReport> {
    state.check(psi)?;
    let geometry = state.geometry();
    let f = state.ricci_potential();
    let w = state.weight();
    let w_inv = w.recip();
    let rho = state.density_ratio();
    let g0 = geometry.base_metric();

    let lbar_l = bar_lf(&lf(psi, state), state);
    let l_lbar = lf(&bar_lf(psi, state), state);

    let h20 = hessian20_unchecked(f, state).component;
    let h02 = h20.conj();
    let scale = rho * g0;
    let flux_bar = (&(w * &h02) * &geometry.dz_over_g0(psi)).div(&scale);
    let extra_bar = (&w_inv * &geometry.div0(&flux_bar)).div(rho);
    let flux = (&(w * &h20) * &geometry.dzbar_over_g0(psi)).div(&scale);
    let extra = (&w_inv * &geometry.div0_bar(&flux)).div(rho);

    let shared = divdiv_expanded(psi, state);
    let nested = double_divergence(&hessian11_unchecked(psi, state).component, state);

    let commutator = &lbar_l - &l_lbar;
    Ok(CommutatorReport {
        residual_lbar_l: lbar_l.distance(&(&shared - &extra_bar)),
        residual_l_lbar: l_lbar.distance(&(&shared - &extra)),
        residual_nested: lbar_l.distance(&(&nested - &extra_bar)),
        residual_commutator: commutator.distance(&(&extra - &extra_bar)),
        commutator_norm: commutator.sup_norm(),
        lbar_l,
        l_lbar,
        extra_bar,
        extra,
        shared,
    })
}

/// `S_f psi = 2 div_f div_f hess11 psi + 2 lambda Delta_f psi + lambda^2 (psi - mean_f psi)`.
pub fn stability_apply(psi: &ScalarField, state: &KahlerState) -> Result<ScalarField> {
    state.check(psi)?;
    Ok(stability(psi, state))
}

pub(crate) fn stability(psi: &ScalarField, state: &KahlerState) -> ScalarField {
    let lambda = state.lambda();
    let h = hessian11_unchecked(psi, state);
    let mut out = double_divergence(&h.component, state);
    if lambda != 0.0 {
        let centered = state.remove_weighted_mean(psi);
        out = &(&out + &delta_f(psi, state).scale(2.0 * lambda)) + &centered.scale(lambda * lambda);
    }
    keep_real(out, psi)
}

/// `(Lbar_f + lambda)(L_f + lambda)(psi - mean_f psi)`.
pub fn factored_stability_apply(psi: &ScalarField, state: &KahlerState) -> Result<ScalarField> {
    state.check(psi)?;
    let lambda = state.lambda();
    let centered = state.remove_weighted_mean(psi);
    let inner = &lf(&centered, state) + &centered.scale(lambda);
    let out = &bar_lf(&inner, state) + &inner.scale(lambda);
    Ok(keep_real(out, psi))
}

/// Dense matrix of a linear operator on nodal values, with the weights of
/// `(a, b)_f = sum_k m_k a_k conj(b_k)` attached.
#[derive(Debug, Clone)]
pub struct OperatorMatrix {
    pub label: String,
    pub lambda: f64,
    pub matrix: DMatrix<Complex64>,
    /// Normalized weighted quadrature `w_k rho_k e^{-f_k} / V`.
    pub measure: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OperatorMatrixMeta {
    pub label: String,
    pub lambda: f64,
    pub dim: usize,
    pub measure_checksum: f64,
    pub asymmetry: f64,
}

impl OperatorMatrix {
    /// Applies `op` to every nodal basis vector, columns in parallel.
    pub fn assemble<F>(label: &str, state: &KahlerState, op: F) -> Self
    where
        F: Fn(&ScalarField) -> ScalarField + Sync,
    {
        let tag = state.tag();
        let n = tag.len();
        let columns: Vec<Vec<Complex64>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                op(&ScalarField::from_real(tag, e)).into_values()
            })
            .collect();
        let matrix = DMatrix::from_fn(n, n, |i, j| columns[j][i]);
        OperatorMatrix {
            label: label.to_string(),
            lambda: state.lambda(),
            matrix,
            measure: measure_of(state),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `D^{1/2} M D^{-1/2}`, Hermitian exactly when `M` is self-adjoint
    /// under the weighted inner product.
    pub fn symmetric_form(&self) -> DMatrix<Complex64> {
        let s: Vec<f64> = self.measure.iter().map(|m| m.sqrt()).collect();
        DMatrix::from_fn(self.dim(), self.dim(), |i, j| self.matrix[(i, j)] * (s[i] / s[j]))
    }

    /// `max |A - A^H| / max |A|` for the symmetric form `A`.
    pub fn asymmetry(&self) -> f64 {
        let a = self.symmetric_form();
        let n = self.dim();
        let mut worst = 0.0f64;
        let mut peak = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                peak = peak.max(a[(i, j)].norm());
                worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
            }
        }
        if peak == 0.0 {
            0.0
        } else {
            worst / peak
        }
    }

    /// `max |self - other| / max |other|`.
    pub fn relative_distance(&self, other: &OperatorMatrix) -> f64 {
        let peak = other.matrix.iter().fold(0.0f64, |m, z| m.max(z.norm()));
        let diff = (&self.matrix - &other.matrix)
            .iter()
            .fold(0.0f64, |m, z| m.max(z.norm()));
        if peak == 0.0 {
            diff
        } else {
            diff / peak
        }
    }

    pub fn apply(&self, u: &ScalarField) -> ScalarField {
        let v = nalgebra::DVector::from_column_slice(u.values());
        let out = &self.matrix * v;
        ScalarField::from_complex(u.tag(), out.iter().copied().collect())
    }

    pub fn meta(&self) -> OperatorMatrixMeta {
        OperatorMatrixMeta {
            label: self.label.clone(),
            lambda: self.lambda,
            dim: self.dim(),
            measure_checksum: self.measure.iter().sum(),
            asymmetry: self.asymmetry(),
        }
    }

    /// Writes `<stem>.slab` (row-major matrix) and `<stem>.json` metadata.
    pub fn export(&self, dir: &Path, stem: &str) -> Result<()> {
        let n = self.dim();
        let complex = self.matrix.iter().any(|z| z.im != 0.0);
        let values = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| self.matrix[(i, j)])
            .collect();
        Snapshot {
            kind: SnapshotKind::Matrix,
            dims: vec![n, n],
            complex,
            values,
        }
        .write(&dir.join(format!("{stem}.slab")))?;
        let json = serde_json::to_string_pretty(&self.meta())?;
        std::fs::write(dir.join(format!("{stem}.json")), json)?;
        Ok(())
    }
}

pub(crate) fn measure_of(state: &KahlerState) -> Vec<f64> {
    let v = state.total_volume();
    state
        .geometry()
        .weights()
        .iter()
        .zip(state.density_ratio().values())
        .zip(state.weight().values())
        .map(|((q, r), e)| q * r.re * e.re / v)
        .collect()
}

pub fn lf_matrix(state: &KahlerState) -> OperatorMatrix {
    OperatorMatrix::assemble("L_f", state, |u| lf(u, state))
}

pub fn bar_lf_matrix(state: &KahlerState) -> OperatorMatrix {
    OperatorMatrix::assemble("Lbar_f", state, |u| bar_lf(u, state))
}

pub fn delta_f_matrix(state: &KahlerState) -> OperatorMatrix {
    OperatorMatrix::assemble("Delta_f", state, |u| delta_f(u, state))
}

pub fn stability_matrix(state: &KahlerState) -> OperatorMatrix {
    OperatorMatrix::assemble("S_f", state, |u| stability(u, state))
}

pub fn factored_stability_matrix(state: &KahlerState) -> OperatorMatrix {
    OperatorMatrix::assemble("(Lbar_f + lambda)(L_f + lambda)", state, |u| {
        factored_stability_apply(u, state).expect("basis vector on the state's grid")
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_state, sphere_base, torus_base};
    use std::f64::consts::PI;

    fn torus_state(n: usize, seed: u64) -> KahlerState {
        let geom = torus_base(n).unwrap();
        let phi = geom.random_potential_band(seed, 2, 0.7);
        make_state(&geom, &phi).unwrap()
    }

    #[test]
    fn constants_are_annihilated() {
        let state = torus_state(32, 1);
        let c = ScalarField::constant(state.tag(), 3.0);
        for out in [
            apply_lf(&c, &state).unwrap(),
            apply_bar_lf(&c, &state).unwrap(),
            apply_delta_f(&c, &state).unwrap(),
            stability_apply(&c, &state).unwrap(),
        ] {
            assert!(out.sup_norm() < 1e-9);
        }
    }

    #[test]
    fn conjugation_law() {
        let state = torus_state(32, 2);
        let geom = state.geometry();
        let u = &geom.random_direction(5) + &geom.random_direction(6).scale_complex(Complex64::i());
        let lhs = apply_lf(&u, &state).unwrap().conj();
        let rhs = apply_bar_lf(&u.conj(), &state).unwrap();
        assert!(lhs.distance(&rhs) < 1e-9 * lhs.sup_norm());
        let real = geom.random_direction(9);
        let d = apply_delta_f(&real, &state).unwrap();
        assert!(d.is_real());
    }

    #[test]
    fn operators_agree_on_ricci_potential() {
        let state = torus_state(64, 3);
        let f = state.ricci_potential();
        let a = apply_lf(f, &state).unwrap();
        let b = apply_bar_lf(f, &state).unwrap();
        let c = apply_delta_f(f, &state).unwrap();
        let scale = a.sup_norm();
        assert!(a.distance(&b) < 1e-10 * scale);
        assert!(a.distance(&c) < 1e-10 * scale);
    }

    #[test]
    fn flat_state_reduces_to_laplacian() {
        let geom = torus_base(16).unwrap();
        let state = make_state(&geom, &ScalarField::zeros(geom.tag())).unwrap();
        let u = geom.random_direction(4);
        let lap = crate::geometry::laplacian(&u, &state).unwrap();
        assert!(apply_lf(&u, &state).unwrap().distance(&lap) < 1e-9);
        let dd = divdiv_hessian(&u, &state).unwrap();
        let lap2 = crate::geometry::laplacian(&lap, &state).unwrap();
        assert!(dd.value.distance(&lap2) < 1e-9 * lap2.sup_norm());
    }

    #[test]
    fn divergence_of_gradient_is_drift_laplacian() {
        let state = torus_state(32, 4);
        let u = state.geometry().random_direction(11);
        let grad = gradient(&u, &state).unwrap();
        let div = div_f(&DivergenceInput::Vector(grad), &state)
            .unwrap()
            .into_scalar()
            .unwrap();
        let expected = apply_delta_f(&u, &state).unwrap();
        assert!(div.distance(&expected) < 1e-9 * expected.sup_norm());
    }

    #[test]
    fn unsupported_ranks() {
        let state = torus_state(16, 1);
        let z = ScalarField::zeros(state.tag());
        assert!(matches!(
            div_f(&DivergenceInput::Scalar(z.clone()), &state),
            Err(LabError::RankUnsupported(_))
        ));
        assert!(matches!(
            div_f(&DivergenceInput::Tensor20(TensorField20 { component: z }), &state),
            Err(LabError::RankUnsupported(_))
        ));
    }

    #[test]
    fn flat_stability_spectrum_is_squared_laplacian() {
        let geom = torus_base(16).unwrap();
        let state = make_state(&geom, &ScalarField::zeros(geom.tag())).unwrap();
        let grid = geom.as_torus().unwrap();
        let psi = ScalarField::from_real(
            geom.tag(),
            grid.coords().iter().map(|&(x, y)| (2.0 * PI * (x + 2.0 * y)).cos()).collect(),
        );
        let s = stability_apply(&psi, &state).unwrap();
        let ev = 2.0 * PI * PI * 5.0;
        assert!(s.distance(&psi.scale(ev * ev)) < 1e-8 * ev * ev);
    }

    #[test]
    fn sphere_matrices_are_self_adjoint() {
        let geom = sphere_base(32).unwrap();
        let state = make_state(&geom, &geom.random_potential(3, 0.5)).unwrap();
        for m in [lf_matrix(&state), delta_f_matrix(&state), stability_matrix(&state)] {
            assert!(m.asymmetry() < 1e-10, "{} asymmetry {}", m.label, m.asymmetry());
        }
        // Invariant sector: L_f = Lbar_f.
        assert!(lf_matrix(&state).relative_distance(&bar_lf_matrix(&state)) < 1e-14);
    }

    #[test]
    fn matrix_export_roundtrip() {
        let geom = sphere_base(8).unwrap();
        let state = make_state(&geom, &ScalarField::zeros(geom.tag())).unwrap();
        let m = delta_f_matrix(&state);
        let dir = tempfile::tempdir().unwrap();
        m.export(dir.path(), "delta").unwrap();
        let snap = Snapshot::read(&dir.path().join("delta.slab")).unwrap();
        assert_eq!(snap.dims, vec![8, 8]);
        assert_eq!(snap.values[1], m.matrix[(0, 1)]);
        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("delta.json")).unwrap())
                .unwrap();
        assert_eq!(meta["label"], "Delta_f");
        assert!((meta["measure_checksum"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    }
}
