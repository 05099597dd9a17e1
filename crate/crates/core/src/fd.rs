//! Finite-difference helpers used by the oracle checks.

/// `(plus - minus) / (2h)`.
pub fn central(plus: f64, minus: f64, h: f64) -> f64 {
    (plus - minus) / (2.0 * h)
}

/// Mixed second difference
/// `(F(h,h) - F(h,-h) - F(-h,h) + F(-h,-h)) / (4h^2)`.
pub fn mixed_central(pp: f64, pm: f64, mp: f64, mm: f64, h: f64) -> f64 {
    (pp - pm - mp + mm) / (4.0 * h * h)
}

/// `(F(h) - 2F(0) + F(-h)) / h^2`.
pub fn second_central(plus: f64, center: f64, minus: f64, h: f64) -> f64 {
    (plus - 2.0 * center + minus) / (h * h)
}

/// Result of a step-size refinement study.
#[derive(Debug, Clone, serde::Serialize)]
pub struct Refinement {
    pub steps: Vec<f64>,
    pub errors: Vec<f64>,
    /// Observed order for each consecutive pair of steps.
    pub pair_orders: Vec<f64>,
    /// Order from the coarsest pair whose finer error stays above the
    /// round-off floor, if any.
    pub order: Option<f64>,
}

/// Estimates the convergence order from `errors[i]` observed at `steps[i]`
/// (descending steps). `floor(h)` is the expected round-off error at step
/// `h`; pairs whose finer error is below ten times that floor are skipped.
pub fn refinement(steps: &[f64], errors: &[f64], floor: impl Fn(f64) -> f64) -> Refinement {
    assert_eq!(steps.len(), errors.len());
    let pair_orders: Vec<f64> = steps
        .windows(2)
        .zip(errors.windows(2))
        .map(|(h, e)| (e[0] / e[1]).ln() / (h[0] / h[1]).ln())
        .collect();
    let order = (0..pair_orders.len())
        .find(|&i| errors[i + 1] > 10.0 * floor(steps[i + 1]))
        .map(|i| pair_orders[i]);
    Refinement {
        steps: steps.to_vec(),
        errors: errors.to_vec(),
        pair_orders,
        order,
    }
}

/// Finite-difference weights for the `m`-th derivative at `x0` on the
/// (possibly nonuniform) stencil `xs`.
pub fn fornberg_weights(x0: f64, xs: &[f64], m: usize) -> Vec<f64> {
    let n = xs.len();
    assert!(n > m, "stencil too small for derivative order {m}");
    // c[j][k]: weight of node j for derivative k.
    let mut c = vec![vec![0.0; m + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[m]).collect()
}

/// Derivative of sampled values at `x0` from the stencil `xs`.
pub fn stencil_derivative(x0: f64, xs: &[f64], ys: &[f64], m: usize) -> f64 {
    fornberg_weights(x0, xs, m)
        .iter()
        .zip(ys)
        .map(|(w, y)| w * y)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_differences_of_polynomials() {
        let f = |x: f64| 3.0 * x * x + 2.0 * x - 1.0;
        assert!((central(f(0.5 + 1e-3), f(0.5 - 1e-3), 1e-3) - 5.0).abs() < 1e-10);
        assert!((second_central(f(1.1), f(1.0), f(0.9), 0.1) - 6.0).abs() < 1e-10);
        let g = |s: f64, t: f64| s * t + s * s;
        let h = 0.2;
        let mixed = mixed_central(g(h, h), g(h, -h), g(-h, h), g(-h, -h), h);
        assert!((mixed - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fornberg_matches_textbook_weights() {
        let w = fornberg_weights(0.0, &[-2.0, -1.0, 0.0, 1.0, 2.0], 1);
        let expected = [1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0];
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-14);
        }
        let w2 = fornberg_weights(0.0, &[-1.0, 0.0, 1.0], 2);
        assert!((w2[0] - 1.0).abs() < 1e-14 && (w2[1] + 2.0).abs() < 1e-14);
    }

    #[test]
    fn nonuniform_stencil_is_exact_on_quartics() {
        let xs = [0.0, 0.1, 0.25, 0.5, 0.6];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| x.powi(4) - x).collect();
        let d = stencil_derivative(0.3, &xs, &ys, 1);
        assert!((d - (4.0 * 0.3f64.powi(3) - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn refinement_skips_noisy_pairs() {
        let steps = [1e-3, 1e-4, 1e-5];
        let errors = [1e-8, 1e-10, 5e-11];
        let r = refinement(&steps, &errors, |h| 1e-16 / h);
        assert!((r.pair_orders[0] - 2.0).abs() < 1e-12);
        assert_eq!(r.order, Some(r.pair_orders[0]));
        let r = refinement(&steps, &errors, |_| 1.0);
        assert_eq!(r.order, None);
    }
}
