//! One pass/fail line per acceptance criterion. Run with `--nocapture` to
//! see the lines; the test fails if any criterion fails.

use std::f64::consts::PI;

use solitonlab::operators::commutator_decomposition;
use solitonlab::spectral::hessian20_energy;
use solitonlab::suite::{
    critical_state, flow_suite, default_flow_config, identity_suite, random_state,
    second_variation_suite, spectrum_suite, barrier_suite, test_direction, Check, SuiteReport,
};
use solitonlab::{sphere_base, torus_base, Tolerances};

const SEED: u64 = 7;

struct Line {
    pass: bool,
    details: Vec<String>,
}

impl Line {
    fn new() -> Self {
        Line {
            pass: true,
            details: Vec::new(),
        }
    }

    fn check(&mut self, label: &str, c: &Check) {
        self.pass &= c.pass;
        self.details.push(format!("{label} {:.2e} {} {:.0e}", c.value, c.relation, c.tolerance));
    }

    fn from_report(&mut self, prefix: &str, report: &SuiteReport, names: &[&str]) {
        for name in names {
            match report.get(name) {
                Some(c) => self.check(&format!("{prefix}{name}"), c),
                None => {
                    self.pass = false;
                    self.details.push(format!("{prefix}{name} missing"));
                }
            }
        }
    }

    fn below(&mut self, label: &str, value: f64, tolerance: f64) {
        self.check(label, &Check::below(label, value, tolerance));
    }

    fn above(&mut self, label: &str, value: f64, bound: f64) {
        self.check(label, &Check::above(label, value, bound));
    }
}

/// Legendre norm `int_{-1}^{1} P_l^2 = 2 / (2l + 1)`.
fn legendre_norm_sq(l: usize) -> f64 {
    2.0 / (2 * l + 1) as f64
}

/// Round-sphere eigenvalue of `-Delta` on `P_l(mu)` in the complex convention.
fn sphere_laplace_eigenvalue(l: usize) -> f64 {
    (l * (l + 1)) as f64 / 2.0
}

#[test]
fn acceptance() {
    let tol = Tolerances::default();
    let torus64 = torus_base(64).unwrap();
    let torus16 = torus_base(16).unwrap();
    let sphere128 = sphere_base(128).unwrap();
    let sphere64 = sphere_base(64).unwrap();
    let mut lines: Vec<(usize, &str, Line)> = Vec::new();

    let id_torus = identity_suite(&torus64, SEED, 20, &tol).unwrap();
    let id_sphere = identity_suite(&sphere128, SEED, 20, &tol).unwrap();

    // 1. Normalization and gauge, 20 states per backend.
    let mut l = Line::new();
    l.from_report("torus ", &id_torus, &["normalization", "gauge"]);
    l.from_report("sphere ", &id_sphere, &["normalization", "gauge"]);
    lines.push((1, "normalization and gauge", l));

    // 2. First variations of H and of the Ricci potential.
    let mut l = Line::new();
    let names = [
        "first_variation",
        "first_variation_order",
        "ricci_potential_variation",
        "ricci_potential_variation_order",
    ];
    l.from_report("torus ", &id_torus, &names);
    l.from_report("sphere ", &id_sphere, &names);
    lines.push((2, "first variation", l));

    // 3. Operator identities on band-limited torus states at N = 64.
    let mut l = Line::new();
    l.from_report(
        "",
        &id_torus,
        &[
            "divdiv_expansion",
            "divdiv_adjoint",
            "lbar_l_decomposition",
            "l_lbar_decomposition",
            "nested_divdiv",
            "commutator",
            "critical_commutator",
        ],
    );
    let flat = critical_state(&torus64).unwrap();
    l.below(
        "flat hess20(f)",
        hessian20_energy(flat.ricci_potential(), &flat).sqrt(),
        tol.identity,
    );
    // Away from criticality the orderings do not commute.
    let state = random_state(&torus64, SEED).unwrap();
    let c = commutator_decomposition(&test_direction(&torus64, SEED), &state).unwrap();
    l.above("random-state commutator", c.commutator_norm / c.lbar_l.sup_norm(), 1e-4);
    lines.push((3, "operator identities", l));

    // 4 and 5 share the spectral runs.
    let (spec_torus, torus_spectra) = spectrum_suite(&torus16, SEED, 3, 6, &tol).unwrap();
    let (spec_sphere, sphere_spectra) = spectrum_suite(&sphere64, SEED, 5, 4, &tol).unwrap();
    let asym = ["asymmetry_L_f", "asymmetry_Lbar_f", "asymmetry_Delta_f", "asymmetry_S_f"];
    let mut l = Line::new();
    l.from_report("torus ", &spec_torus, &asym);
    l.from_report("sphere ", &spec_sphere, &asym);
    lines.push((4, "self-adjointness", l));

    let mut l = Line::new();
    l.from_report("torus ", &spec_torus, &["min_eigenvalue_minus_lambda", "poincare"]);
    l.from_report(
        "sphere ",
        &spec_sphere,
        &["min_eigenvalue_minus_lambda", "poincare", "base_first_holomorphy"],
    );
    // Round sphere: lowest eigenvalue is lambda = 1.
    l.below("round-sphere |mu_1 - 1|", (sphere_spectra[0].eigenvalues[0] - 1.0).abs(), tol.sphere_eigenvalue);
    // Flat torus: 2 pi^2 with multiplicity four.
    let fundamental = 2.0 * PI * PI;
    let worst = torus_spectra[0].eigenvalues[..4]
        .iter()
        .map(|v| (v - fundamental).abs() / fundamental)
        .fold(0.0, f64::max);
    l.below("flat-torus 2pi^2 rel", worst, tol.sphere_eigenvalue);
    lines.push((5, "eigenvalue bound", l));

    // 6. Flow monotonicity on the torus, 5 seeds.
    let torus32 = torus_base(32).unwrap();
    let (flow, _) = flow_suite(&torus32, SEED, 5, &default_flow_config(&torus32), &tol).unwrap();
    let mut l = Line::new();
    l.from_report("", &flow, &["min_delta_h", "min_quadratic_form", "rate_mismatch", "terminal_f_sup"]);
    lines.push((6, "flow monotonicity", l));

    // 7. Stability at the critical states.
    let (sv_torus, verdict_torus, off_critical) = second_variation_suite(&torus16, SEED, 5, &tol).unwrap();
    let (sv_sphere, verdict_sphere, _) = second_variation_suite(&sphere64, SEED, 0, &tol).unwrap();
    let mut l = Line::new();
    let names = ["max_second_variation_eigenvalue", "factored_mismatch", "non_holomorphic_kernel_vectors"];
    l.from_report("torus ", &sv_torus, &names);
    l.from_report("sphere ", &sv_sphere, &names);
    // Flat torus: S = Delta^2, lowest (2 pi^2)^2.
    l.below(
        "flat-torus S_1 rel",
        (verdict_torus.eigenvalues[0] - fundamental * fundamental).abs() / (fundamental * fundamental),
        tol.spectrum,
    );
    for ell in 1..=3 {
        let oracle = (sphere_laplace_eigenvalue(ell) - 1.0).powi(2);
        let got = verdict_sphere.eigenvalues[ell - 1];
        l.below(&format!("sphere S_l{ell} err"), (got - oracle).abs() / oracle.max(1.0), tol.spectrum);
    }
    l.below("sphere kernel dim - 1", (verdict_sphere.kernel_dimension as f64 - 1.0).abs(), 0.0);
    l.below(
        "sphere kernel flagged",
        if verdict_sphere.kernel_holomorphic.first() == Some(&true) { 0.0 } else { 1.0 },
        0.0,
    );
    lines.push((7, "stability at critical states", l));

    // 8. Off-critical second variation on 5 torus states.
    let mut l = Line::new();
    l.from_report("", &sv_torus, &["second_variation_fd", "second_variation_symmetry"]);
    l.above("samples", off_critical.len() as f64, 5.0);
    lines.push((8, "second variation off criticality", l));

    // 9. Barrier on the sphere.
    let (barrier, outcome) = barrier_suite(&sphere64, SEED, 10, &tol).unwrap();
    let mut l = Line::new();
    l.from_report("", &barrier, &["gap_spread", "kernel_second_difference", "curve_gap"]);
    // -(P2, S P2)_f at the round state: -(mu_2 - lambda)^2 times the weighted
    // norm (2 pi / 4 pi) int P2^2.
    let oracle = -(sphere_laplace_eigenvalue(2) - 1.0).powi(2) * 0.5 * legendre_norm_sq(2);
    l.below(
        "P2 second difference vs Legendre rel",
        (outcome.quadrupole.second_difference - oracle).abs() / oracle.abs(),
        tol.barrier_oracle,
    );
    l.below("P2 second difference", outcome.quadrupole.second_difference, 0.0);
    lines.push((9, "entropy barrier", l));

    let mut failed = Vec::new();
    println!();
    for (id, name, line) in &lines {
        let status = if line.pass { "PASS" } else { "FAIL" };
        println!("criterion {id} [{name}]: {status} ({})", line.details.join("; "));
        if !line.pass {
            failed.push(*id);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
