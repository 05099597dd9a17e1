//! Experiment drivers shared by the command-line tool and the integration
//! tests. Each returns a list of named checks against a [`Tolerances`] set.

use rayon::prelude::*;
use serde::Serialize;

use crate::entropy::{df_dt, entropy_h, equivalent_gradient_forms, first_variation};
use crate::error::{LabError, Result};
use crate::fd::{refinement, Refinement};
use crate::field::{BackendKind, ScalarField, TensorField11};
use crate::flow::{flow_run, monotonicity_audit, FlowConfig, FlowTrace, MonotonicityReport, Stepper};
use crate::geometry::{hessian11, make_state, BackendGeometry, KahlerState, Measure};
use crate::operators::{
    adjointness_check, bar_lf_matrix, commutator_decomposition, delta_f_matrix, divdiv_hessian,
    lf_matrix, stability_matrix,
};
use crate::spectral::{eigensolve_drift_laplacian, SpectralReport};
use crate::tolerances::Tolerances;
use crate::variation::{
    barrier_audit, perelman_w, second_variation, second_variation_fd, stability_verdict,
    symmetric_samples, BarrierReport, PerelmanParams, SecondVariationReport, FD_STEP,
};

/// Largest torus resolution for dense-matrix experiments.
pub const TORUS_MATRIX_CAP: usize = 32;
/// Largest sphere resolution for dense-matrix experiments.
pub const SPHERE_MATRIX_CAP: usize = 512;
/// Step for first-variation difference quotients.
pub const FIRST_VARIATION_STEP: f64 = 1e-4;
const REFINEMENT_STEPS: [f64; 4] = [1e-2, 5e-3, 2.5e-3, 1.25e-3];
/// Two-parameter step on the sphere, where degree-6 directions need a
/// smaller step than the torus default [`FD_STEP`] to stay below 1e-5.
pub const SPHERE_FD_STEP: f64 = 2.5e-4;
/// Step of the barrier curve samples.
pub const BARRIER_STEP: f64 = 1e-2;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    /// `"<="` or `">="`.
    pub relation: &'static str,
    pub pass: bool,
}

impl Check {
    pub fn below(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            value,
            tolerance,
            relation: "<=",
            pass: value <= tolerance,
        }
    }

    pub fn above(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Check {
            name: name.into(),
            value,
            tolerance: bound,
            relation: ">=",
            pass: value >= bound,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub experiment: String,
    pub backend: BackendKind,
    pub resolution: usize,
    pub seed: u64,
    pub checks: Vec<Check>,
    pub pass: bool,
}

impl SuiteReport {
    fn new(experiment: &str, geometry: &BackendGeometry, seed: u64) -> Self {
        SuiteReport {
            experiment: experiment.into(),
            backend: geometry.kind(),
            resolution: geometry.resolution(),
            seed,
            checks: Vec::new(),
            pass: true,
        }
    }

    pub fn push(&mut self, check: Check) {
        self.pass &= check.pass;
        self.checks.push(check);
    }

    /// Keeps the worst value per name: the largest for `<=` checks, the
    /// smallest for `>=`.
    fn push_worst(&mut self, check: Check) {
        if let Some(existing) = self.checks.iter_mut().find(|c| c.name == check.name) {
            let worse = match check.relation {
                ">=" => check.value < existing.value,
                _ => check.value > existing.value || check.value.is_nan(),
            };
            if worse {
                *existing = check;
            }
            self.pass = self.checks.iter().all(|c| c.pass);
        } else {
            self.push(check);
        }
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }
}

/// Random test potential: band 2 on the torus (min density 0.7), degree 6 on
/// the sphere (min density 0.5).
pub fn random_state(geometry: &BackendGeometry, seed: u64) -> Result<KahlerState> {
    let phi = match geometry.kind() {
        BackendKind::Torus => geometry.random_potential_band(seed, 2, 0.7),
        BackendKind::Sphere => geometry.random_potential(seed, 0.5),
    };
    make_state(geometry, &phi)
}

/// Random direction normalized by its base Laplacian.
pub fn test_direction(geometry: &BackendGeometry, seed: u64) -> ScalarField {
    let band = match geometry.kind() {
        BackendKind::Torus => 2,
        BackendKind::Sphere => 6,
    };
    geometry.random_unit_direction(seed, band)
}

/// The base state, critical on both backends.
pub fn critical_state(geometry: &BackendGeometry) -> Result<KahlerState> {
    make_state(geometry, &ScalarField::zeros(geometry.tag()))
}

fn direction_seed(seed: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9).wrapping_add(1_000_003)
}

fn floor_for(scale: f64) -> impl Fn(f64) -> f64 {
    move |h| 8.0 * f64::EPSILON * scale.max(1.0) / h
}

/// First-variation study of H along `psi`: relative error at
/// [`FIRST_VARIATION_STEP`] and the refinement order.
pub fn entropy_refinement(state: &KahlerState, psi: &ScalarField) -> Result<(f64, Refinement)> {
    let analytic = first_variation(psi, state)?;
    let geometry = state.geometry();
    let phi = state.potential();
    let quotient = |h: f64| -> Result<f64> {
        let plus = entropy_h(&make_state(geometry, &(phi + &psi.scale(h)))?);
        let minus = entropy_h(&make_state(geometry, &(phi - &psi.scale(h)))?);
        Ok((plus - minus) / (2.0 * h))
    };
    let denom = analytic.abs().max(f64::MIN_POSITIVE);
    let at_step = (quotient(FIRST_VARIATION_STEP)? - analytic).abs() / denom;
    let errors = REFINEMENT_STEPS
        .iter()
        .map(|&h| Ok((quotient(h)? - analytic).abs() / denom))
        .collect::<Result<Vec<_>>>()?;
    let scale = entropy_h(state).abs() / denom;
    Ok((at_step, refinement(&REFINEMENT_STEPS, &errors, floor_for(scale))))
}

/// Same study for the Ricci potential, in the sup norm.
pub fn ricci_potential_refinement(state: &KahlerState, psi: &ScalarField) -> Result<(f64, Refinement)> {
    let analytic = df_dt(psi, state)?;
    let geometry = state.geometry();
    let phi = state.potential();
    let quotient = |h: f64| -> Result<ScalarField> {
        let plus = make_state(geometry, &(phi + &psi.scale(h)))?;
        let minus = make_state(geometry, &(phi - &psi.scale(h)))?;
        Ok((plus.ricci_potential() - minus.ricci_potential()).scale(0.5 / h))
    };
    let denom = analytic.sup_norm().max(f64::MIN_POSITIVE);
    let at_step = quotient(FIRST_VARIATION_STEP)?.distance(&analytic) / denom;
    let errors = REFINEMENT_STEPS
        .iter()
        .map(|&h| Ok(quotient(h)?.distance(&analytic) / denom))
        .collect::<Result<Vec<_>>>()?;
    let scale = state.ricci_potential().sup_norm() / denom;
    Ok((at_step, refinement(&REFINEMENT_STEPS, &errors, floor_for(scale))))
}

/// Normalization, gauge, first variations and operator identities on
/// `states` random states; the first-variation and identity checks use the
/// first `min(states, 3)` of them.
pub fn identity_suite(
    geometry: &BackendGeometry,
    seed: u64,
    states: usize,
    tol: &Tolerances,
) -> Result<SuiteReport> {
    let mut report = SuiteReport::new("identities", geometry, seed);
    let volume = geometry.total_volume();
    for i in 0..states as u64 {
        let state = random_state(geometry, seed + i)?;
        let mass = state.integrate(&ScalarField::constant(state.tag(), 1.0), Measure::Weighted { normalized: false })?;
        report.push_worst(Check::below("normalization", (mass.re - volume).abs() / volume, tol.normalization));
        let shifted = make_state(geometry, &state.potential().add_scalar(1.75))?;
        let h = entropy_h(&state);
        report.push_worst(Check::below(
            "gauge",
            (entropy_h(&shifted) - h).abs() / h.abs().max(1.0),
            tol.normalization,
        ));
    }
    for i in 0..states.min(3) as u64 {
        let state = random_state(geometry, seed + i)?;
        let psi = test_direction(geometry, direction_seed(seed + i));
        let (err, study) = entropy_refinement(&state, &psi)?;
        report.push_worst(Check::below("first_variation", err, tol.first_variation));
        report.push_worst(Check::above("first_variation_order", study.order.unwrap_or(f64::NAN), tol.fd_order));
        let (err, study) = ricci_potential_refinement(&state, &psi)?;
        report.push_worst(Check::below("ricci_potential_variation", err, tol.first_variation));
        report.push_worst(Check::above(
            "ricci_potential_variation_order",
            study.order.unwrap_or(f64::NAN),
            tol.fd_order,
        ));

        let dd = divdiv_hessian(&psi, &state)?;
        report.push_worst(Check::below("divdiv_expansion", dd.residual / dd.expanded.sup_norm(), tol.identity));

        let eta = TensorField11 {
            component: test_direction(geometry, direction_seed(seed + i + 100)).add_scalar(0.3),
        };
        let lhs_scale = {
            let h = hessian11(&psi, &state)?;
            crate::operators::tensor_inner(&eta, &h, &state).norm().max(
                crate::operators::tensor_inner(&eta, &eta, &state).norm().sqrt()
                    * crate::operators::tensor_inner(&h, &h, &state).norm().sqrt(),
            )
        };
        report.push_worst(Check::below(
            "divdiv_adjoint",
            adjointness_check(&eta, &psi, &state)? / lhs_scale,
            tol.identity,
        ));

        let c = commutator_decomposition(&psi, &state)?;
        let scale = c.lbar_l.sup_norm().max(c.l_lbar.sup_norm());
        report.push_worst(Check::below("lbar_l_decomposition", c.residual_lbar_l / scale, tol.identity));
        report.push_worst(Check::below("l_lbar_decomposition", c.residual_l_lbar / scale, tol.identity));
        report.push_worst(Check::below("nested_divdiv", c.residual_nested / scale, tol.identity));
        report.push_worst(Check::below("commutator", c.residual_commutator / scale, tol.identity));

        let forms = equivalent_gradient_forms(&state);
        let worst = forms
            .delta_vs_l
            .max(forms.delta_vs_lbar)
            .max(forms.delta_vs_pointwise)
            .max(forms.delta_vs_gradient);
        report.push_worst(Check::below("gradient_forms", worst / forms.scale, tol.identity));
    }
    // Vanishing (2,0)-Hessian of f: the two orderings commute.
    let base = critical_state(geometry)?;
    let psi = test_direction(geometry, direction_seed(seed));
    let c = commutator_decomposition(&psi, &base)?;
    report.push(Check::below(
        "critical_commutator",
        c.commutator_norm / c.lbar_l.sup_norm(),
        tol.identity,
    ));
    Ok(report)
}

pub fn check_matrix_resolution(geometry: &BackendGeometry) -> Result<()> {
    let (cap, name) = match geometry.kind() {
        BackendKind::Torus => (TORUS_MATRIX_CAP, "torus"),
        BackendKind::Sphere => (SPHERE_MATRIX_CAP, "sphere"),
    };
    if geometry.resolution() > cap {
        return Err(LabError::InvalidArgument(format!(
            "dense-matrix experiments need {name} resolution <= {cap}, got {}",
            geometry.resolution()
        )));
    }
    Ok(())
}

/// Self-adjointness of the assembled operators and the drift-Laplacian
/// spectrum on the base state and `states` random states.
pub fn spectrum_suite(
    geometry: &BackendGeometry,
    seed: u64,
    states: usize,
    k: usize,
    tol: &Tolerances,
) -> Result<(SuiteReport, Vec<SpectralReport>)> {
    check_matrix_resolution(geometry)?;
    let mut report = SuiteReport::new("spectrum", geometry, seed);
    let lambda = geometry.lambda();
    let mut spectra = Vec::new();
    let mut list = vec![critical_state(geometry)?];
    for i in 0..states as u64 {
        list.push(random_state(geometry, seed + i)?);
    }
    for (idx, state) in list.iter().enumerate() {
        if idx > 0 {
            for m in [lf_matrix(state), bar_lf_matrix(state), delta_f_matrix(state), stability_matrix(state)] {
                report.push_worst(Check::below(format!("asymmetry_{}", m.label), m.asymmetry(), tol.asymmetry));
            }
        }
        let s = eigensolve_drift_laplacian(state, k)?;
        report.push_worst(Check::above("min_eigenvalue_minus_lambda", s.min_eigenvalue - lambda, -tol.eigen_bound));
        let worst = s.poincare_residuals.iter().copied().fold(0.0, f64::max);
        report.push_worst(Check::below("poincare", worst, tol.poincare));
        if idx == 0 && geometry.kind() == BackendKind::Sphere {
            report.push(Check::below(
                "base_min_eigenvalue_minus_lambda",
                (s.min_eigenvalue - lambda).abs(),
                tol.sphere_eigenvalue,
            ));
            report.push(Check::below(
                "base_first_holomorphy",
                s.holomorphy_residuals[0] / crate::spectral::h1_norm(&s.eigenfields[0], state),
                tol.holomorphy,
            ));
        }
        spectra.push(s);
    }
    Ok((report, spectra))
}

/// Default flow settings for a backend.
pub fn default_flow_config(geometry: &BackendGeometry) -> FlowConfig {
    match geometry.kind() {
        BackendKind::Torus => FlowConfig {
            dt_initial: 1e-4,
            dt_max: 1e-4,
            t_end: 1.0,
            stepper: Stepper::ExplicitRk,
            ..FlowConfig::default()
        },
        BackendKind::Sphere => FlowConfig {
            dt_initial: 1e-3,
            dt_max: 1e-3,
            t_end: 10.0,
            stepper: Stepper::SemiImplicitSpectral,
            monitor_stride: 10,
            dh_target: 1e-7,
            ..FlowConfig::default()
        },
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FlowRun {
    pub seed: u64,
    pub audit: MonotonicityReport,
    pub terminal_f_sup: f64,
    pub terminal_dh_norm: f64,
    #[serde(skip)]
    pub trace: FlowTrace,
}

/// Flows `runs` random states and audits monotonicity. On the torus the
/// Ricci potential must also decay below the terminal tolerance.
pub fn flow_suite(
    geometry: &BackendGeometry,
    seed: u64,
    runs: usize,
    config: &FlowConfig,
    tol: &Tolerances,
) -> Result<(SuiteReport, Vec<FlowRun>)> {
    let mut report = SuiteReport::new("flow", geometry, seed);
    let out: Vec<FlowRun> = (0..runs as u64)
        .into_par_iter()
        .map(|i| {
            let state = random_state(geometry, seed + i)?;
            let trace = flow_run(&state, config)?;
            let audit = monotonicity_audit(&trace)?;
            let terminal = trace.terminal_state().expect("flow_run sets the terminal state");
            Ok(FlowRun {
                seed: seed + i,
                audit,
                terminal_f_sup: terminal.ricci_potential().sup_norm(),
                terminal_dh_norm: *trace.dh_norms.last().unwrap(),
                trace,
            })
        })
        .collect::<Result<_>>()?;
    for run in &out {
        let audit = &run.audit;
        report.push_worst(Check::above("min_delta_h", audit.min_delta_h, -tol.monotone));
        report.push_worst(Check::above("min_quadratic_form", audit.min_quadratic_form, -tol.monotone));
        // The semi-implicit stepper is first order, so its trace only
        // matches the rate to O(dt); the mismatch is still reported in the audit.
        if config.stepper == Stepper::ExplicitRk {
            report.push_worst(Check::below("rate_mismatch", audit.max_rate_mismatch, tol.flow_rate));
        }
        match geometry.kind() {
            BackendKind::Torus => report.push_worst(Check::below("terminal_f_sup", run.terminal_f_sup, tol.terminal)),
            BackendKind::Sphere => report.push_worst(Check::below("terminal_dh_norm", run.terminal_dh_norm, tol.terminal)),
        }
    }
    Ok((report, out))
}

#[derive(Debug, Clone, Serialize)]
pub struct OffCriticalSample {
    pub seed: u64,
    pub analytic: f64,
    pub fd: f64,
    pub step: f64,
    pub swapped: f64,
}

/// Stability verdict at the base state plus the two-parameter check of the
/// second-variation formula on `states` random states.
pub fn second_variation_suite(
    geometry: &BackendGeometry,
    seed: u64,
    states: usize,
    tol: &Tolerances,
) -> Result<(SuiteReport, SecondVariationReport, Vec<OffCriticalSample>)> {
    check_matrix_resolution(geometry)?;
    let mut report = SuiteReport::new("second-variation", geometry, seed);
    let base = critical_state(geometry)?;
    let verdict = stability_verdict(&base, &test_direction(geometry, direction_seed(seed)), true)?;
    report.push(Check::below("max_second_variation_eigenvalue", -verdict.min_s_eigenvalue, tol.stability));
    report.push(Check::below("factored_mismatch", verdict.factored_mismatch, tol.factored));
    report.push(Check::below("stability_asymmetry", verdict.asymmetry, tol.asymmetry));
    let unflagged = verdict.kernel_holomorphic.iter().filter(|f| !**f).count();
    report.push(Check::below("non_holomorphic_kernel_vectors", unflagged as f64, 0.0));

    let h = match geometry.kind() {
        BackendKind::Torus => FD_STEP,
        BackendKind::Sphere => SPHERE_FD_STEP,
    };
    let mut samples = Vec::new();
    for i in 0..states as u64 {
        let state = random_state(geometry, seed + i)?;
        let psi = test_direction(geometry, direction_seed(seed + i));
        let chi = test_direction(geometry, direction_seed(seed + i + 500));
        let analytic = second_variation(&psi, &chi, &state)?;
        let swapped = second_variation(&chi, &psi, &state)?;
        let fd = second_variation_fd(&psi, &chi, &state, h)?;
        let scale = analytic.abs().max(f64::MIN_POSITIVE);
        report.push_worst(Check::below("second_variation_fd", (analytic - fd).abs() / scale, tol.second_variation));
        report.push_worst(Check::below("second_variation_symmetry", (analytic - swapped).abs() / scale, tol.symmetry));
        samples.push(OffCriticalSample {
            seed: seed + i,
            analytic,
            fd,
            step: h,
            swapped,
        });
    }
    Ok((report, verdict, samples))
}

#[derive(Debug, Clone, Serialize)]
pub struct BarrierOutcome {
    pub params: PerelmanParams,
    /// `W - H` on each random state.
    pub gaps: Vec<f64>,
    pub kernel: BarrierReport,
    pub quadrupole: BarrierReport,
}

/// `P_2(mu) = (3 mu^2 - 1) / 2` on the sphere grid.
pub fn quadrupole_direction(geometry: &BackendGeometry) -> Result<ScalarField> {
    let grid = geometry
        .as_sphere()
        .ok_or_else(|| LabError::InvalidArgument("barrier experiments need the sphere backend".into()))?;
    Ok(grid.field(|m| 0.5 * (3.0 * m * m - 1.0)))
}

/// The moment coordinate `mu`, whose gradient is holomorphic at the base state.
pub fn moment_direction(geometry: &BackendGeometry) -> Result<ScalarField> {
    let grid = geometry
        .as_sphere()
        .ok_or_else(|| LabError::InvalidArgument("barrier experiments need the sphere backend".into()))?;
    Ok(grid.field(|m| m))
}

/// W - H constancy over `states` random states and the barrier curves at
/// the base state along `mu` and `P_2(mu)`.
pub fn barrier_suite(
    geometry: &BackendGeometry,
    seed: u64,
    states: usize,
    tol: &Tolerances,
) -> Result<(SuiteReport, BarrierOutcome)> {
    let base = critical_state(geometry)?;
    let params = PerelmanParams::for_state(&base)?;
    let mu = moment_direction(geometry)?;
    let p2 = quadrupole_direction(geometry)?;
    let mut report = SuiteReport::new("barrier", geometry, seed);
    let mut gaps = Vec::new();
    for i in 0..states as u64 {
        let state = random_state(geometry, seed + i)?;
        gaps.push(perelman_w(&state, &params)? - entropy_h(&state));
    }
    let hi = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    report.push(Check::below("gap_spread", if gaps.is_empty() { 0.0 } else { hi - lo }, tol.barrier_spread));
    let samples = symmetric_samples(BARRIER_STEP, 2);
    let kernel = barrier_audit(&base, &mu, &samples)?;
    let quadrupole = barrier_audit(&base, &p2, &samples)?;
    report.push(Check::below("kernel_second_difference", kernel.second_difference.abs(), tol.barrier_kernel));
    report.push(Check::below(
        "quadrupole_vs_quadratic_form",
        (quadrupole.second_difference - quadrupole.quadratic_form).abs() / quadrupole.quadratic_form.abs(),
        tol.barrier_oracle,
    ));
    report.push(Check::below("quadrupole_second_difference", quadrupole.second_difference, 0.0));
    report.push(Check::below(
        "curve_gap",
        kernel.max_curve_gap.max(quadrupole.max_curve_gap),
        tol.barrier_spread,
    ));
    Ok((
        report,
        BarrierOutcome {
            params,
            gaps,
            kernel,
            quadrupole,
        },
    ))
}
