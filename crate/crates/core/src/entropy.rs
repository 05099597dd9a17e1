//! The entropy functional, its gradient and the Ricci-potential evolution.

use serde::Serialize;

use crate::error::Result;
use crate::field::ScalarField;
use crate::geometry::{gradient_norm_sq, laplacian_unchecked, KahlerState};
use crate::operators::{bar_lf, delta_f, lf};

/// `H = V^{-1} int f e^{-f} omega_phi`.
pub fn entropy_h(state: &KahlerState) -> f64 {
    state.weighted_mean(state.ricci_potential()).re
}

/// Linearization of the Ricci potential along `psi`:
/// `Delta psi + lambda (psi - mean_f psi)`.
pub fn df_dt(psi: &ScalarField, state: &KahlerState) -> Result<ScalarField> {
    state.check(psi)?;
    let mut out = laplacian_unchecked(psi, state);
    let lambda = state.lambda();
    if lambda != 0.0 {
        out = &out + &state.remove_weighted_mean(psi).scale(lambda);
    }
    Ok(out)
}

/// L2 gradient `DH = -(Delta f - |grad f|^2 + lambda (f - H))`.
///
/// Evaluated as `e^f Delta e^{-f} - lambda (f - H)`, the same field in the
/// continuum. On the grid this is the exact gradient of the discrete `H`, and
/// its weighted mean vanishes to round-off.
pub fn grad_dh(state: &KahlerState) -> ScalarField {
    let f = state.ricci_potential();
    let h = entropy_h(state);
    let w = state.weight();
    let drift = &w.recip() * &laplacian_unchecked(w, state);
    &drift - &f.add_scalar(-h).scale(state.lambda())
}

/// `DH` from the expanded pointwise formula.
pub fn grad_dh_pointwise(state: &KahlerState) -> ScalarField {
    let f = state.ricci_potential();
    let h = entropy_h(state);
    let lap = laplacian_unchecked(f, state);
    let grad_sq = gradient_norm_sq(f, state);
    let centered = f.add_scalar(-h).scale(state.lambda());
    (&(&lap - &grad_sq) + &centered).scale(-1.0)
}

/// `(psi, DH)_f`.
pub fn first_variation(psi: &ScalarField, state: &KahlerState) -> Result<f64> {
    state.check(psi)?;
    Ok(state.inner(psi, &grad_dh(state)).re)
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientForms {
    /// `|-(Delta_f + lambda)(f - H) - (-(L_f + lambda)(f - H))|`.
    pub delta_vs_l: f64,
    pub delta_vs_lbar: f64,
    pub l_vs_lbar: f64,
    /// Distance of the `Delta_f` form to the expanded pointwise formula.
    pub delta_vs_pointwise: f64,
    /// Distance of the `Delta_f` form to [`grad_dh`].
    pub delta_vs_gradient: f64,
    /// Sup norm of the pointwise gradient, for scale.
    pub scale: f64,
}

/// Compares the three drift-operator forms of the gradient with each other
/// and with [`grad_dh`].
pub fn equivalent_gradient_forms(state: &KahlerState) -> GradientForms {
    let lambda = state.lambda();
    let u = state.ricci_potential().add_scalar(-entropy_h(state));
    let form = |applied: ScalarField| (&applied + &u.scale(lambda)).scale(-1.0);
    let by_delta = form(delta_f(&u, state));
    let by_l = form(lf(&u, state));
    let by_lbar = form(bar_lf(&u, state));
    let pointwise = grad_dh_pointwise(state);
    let gradient = grad_dh(state);
    GradientForms {
        delta_vs_gradient: by_delta.distance(&gradient),
        delta_vs_l: by_delta.distance(&by_l),
        delta_vs_lbar: by_delta.distance(&by_lbar),
        l_vs_lbar: by_l.distance(&by_lbar),
        delta_vs_pointwise: by_delta.distance(&pointwise),
        scale: pointwise.sup_norm(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EntropyReport {
    #[serde(rename = "H")]
    pub h: f64,
    #[serde(skip)]
    pub dh_field: ScalarField,
    pub dh_norm: f64,
    pub f_min: f64,
    pub f_max: f64,
}

pub fn entropy_report(state: &KahlerState) -> EntropyReport {
    let dh = grad_dh(state);
    let f = state.ricci_potential();
    EntropyReport {
        h: entropy_h(state),
        dh_norm: state.weighted_norm(&dh),
        dh_field: dh,
        f_min: f.min_re().0,
        f_max: f.max_re(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fd::central;
    use crate::geometry::{make_state, sphere_base, torus_base};

    #[test]
    fn base_states_are_critical() {
        for geom in [torus_base(32).unwrap(), sphere_base(32).unwrap()] {
            let state = make_state(&geom, &ScalarField::zeros(geom.tag())).unwrap();
            assert!(entropy_h(&state).abs() < 1e-15);
            assert!(grad_dh(&state).sup_norm() < 1e-12);
        }
    }

    #[test]
    fn gradient_is_weighted_mean_free() {
        let geom = torus_base(32).unwrap();
        let state = make_state(&geom, &geom.random_potential_band(4, 2, 0.6)).unwrap();
        let dh = grad_dh(&state);
        assert!(state.weighted_mean(&dh).norm() < 1e-10 * dh.sup_norm());
        let c = ScalarField::constant(geom.tag(), 1.0);
        assert!(first_variation(&c, &state).unwrap().abs() < 1e-10);
    }

    #[test]
    fn entropy_is_nonpositive_on_torus() {
        // With lambda = 0, -H is a relative entropy of two probability measures.
        let geom = torus_base(32).unwrap();
        for seed in 0..5 {
            let state = make_state(&geom, &geom.random_potential_band(seed, 2, 0.4)).unwrap();
            assert!(entropy_h(&state) < 0.0);
        }
    }

    #[test]
    fn gauge_invariance() {
        let geom = sphere_base(48).unwrap();
        let phi = geom.random_potential(8, 0.5);
        let a = make_state(&geom, &phi).unwrap();
        let b = make_state(&geom, &phi.add_scalar(2.5)).unwrap();
        assert!((entropy_h(&a) - entropy_h(&b)).abs() < 1e-12);
        let dh = grad_dh(&a);
        assert!(dh.distance(&grad_dh(&b)) < 1e-10 * dh.sup_norm());
    }

    #[test]
    fn df_dt_matches_difference_quotient_on_sphere() {
        let geom = sphere_base(48).unwrap();
        let phi = geom.random_potential(1, 0.5);
        let psi = geom.random_direction(2);
        let state = make_state(&geom, &phi).unwrap();
        let analytic = df_dt(&psi, &state).unwrap();
        let h = 1e-4;
        let plus = make_state(&geom, &(&phi + &psi.scale(h))).unwrap();
        let minus = make_state(&geom, &(&phi - &psi.scale(h))).unwrap();
        let fd = (plus.ricci_potential() - minus.ricci_potential()).scale(0.5 / h);
        assert!(fd.distance(&analytic) < 1e-6 * analytic.sup_norm());
        let fv = first_variation(&psi, &state).unwrap();
        let fd_h = central(entropy_h(&plus), entropy_h(&minus), h);
        assert!((fv - fd_h).abs() < 1e-6 * fv.abs());
    }

    #[test]
    fn three_gradient_forms_agree() {
        let geom = torus_base(64).unwrap();
        let state = make_state(&geom, &geom.random_potential_band(6, 2, 0.7)).unwrap();
        let r = equivalent_gradient_forms(&state);
        assert!(r.delta_vs_l < 1e-10 * r.scale);
        assert!(r.l_vs_lbar < 1e-10 * r.scale);
        assert!(r.delta_vs_pointwise < 1e-10 * r.scale);
        assert!(r.delta_vs_gradient < 1e-10 * r.scale);
    }

    #[test]
    fn report_json_keys() {
        let geom = sphere_base(16).unwrap();
        let state = make_state(&geom, &geom.random_potential(3, 0.7)).unwrap();
        let json = serde_json::to_value(entropy_report(&state)).unwrap();
        for key in ["H", "dh_norm", "f_min", "f_max"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        assert!(json.get("dh_field").is_none());
    }
}
