//! Pass/fail thresholds shared by the test suites and the command-line runs.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Volume normalization and gauge invariance, relative.
    pub normalization: f64,
    /// Difference quotient vs analytic first variation, relative.
    pub first_variation: f64,
    /// Smallest accepted convergence order of that mismatch.
    pub fd_order: f64,
    /// Operator identity residuals, relative to the field scale.
    pub identity: f64,
    /// Relative asymmetry of assembled operators.
    pub asymmetry: f64,
    /// Slack in the drift-Laplacian eigenvalue bound.
    pub eigen_bound: f64,
    /// Equality-case eigenvalue on the round sphere.
    pub sphere_eigenvalue: f64,
    /// Holomorphy residual relative to the H1 norm.
    pub holomorphy: f64,
    /// Bochner-type identity for eigenpairs, relative.
    pub poincare: f64,
    /// Largest accepted decrease of H along the flow.
    pub monotone: f64,
    /// Terminal sup norm of the Ricci potential on the torus.
    pub terminal: f64,
    /// Trace difference quotient vs the quadratic form, relative.
    pub flow_rate: f64,
    /// Largest accepted second-variation eigenvalue at critical states.
    pub stability: f64,
    /// Stability spectrum vs closed form, relative.
    pub spectrum: f64,
    /// Factored vs direct stability assembly.
    pub factored: f64,
    /// Second-variation formula vs difference quotient, relative.
    pub second_variation: f64,
    /// Symmetry of the second-variation form, relative.
    pub symmetry: f64,
    /// Spread of W - H over random states, absolute.
    pub barrier_spread: f64,
    /// Barrier second difference along a kernel direction, absolute.
    pub barrier_kernel: f64,
    /// Barrier second difference vs closed form, relative.
    pub barrier_oracle: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            normalization: 1e-10,
            first_variation: 1e-6,
            fd_order: 1.9,
            identity: 1e-8,
            asymmetry: 1e-8,
            eigen_bound: 1e-8,
            sphere_eigenvalue: 1e-6,
            holomorphy: 1e-6,
            poincare: 1e-7,
            monotone: 1e-9,
            terminal: 1e-6,
            flow_rate: 1e-5,
            stability: 1e-8,
            spectrum: 1e-4,
            factored: 1e-8,
            second_variation: 1e-5,
            symmetry: 1e-8,
            barrier_spread: 1e-8,
            barrier_kernel: 1e-6,
            barrier_oracle: 1e-4,
        }
    }
}

impl Tolerances {
    /// Sets one threshold by its field name.
    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        if !(value.is_finite() && value >= 0.0) {
            return Err(LabError::InvalidArgument(format!("tolerance {key} = {value} must be finite and non-negative")));
        }
        let mut json = serde_json::to_value(&*self)?;
        match json.get_mut(key) {
            Some(slot) => *slot = serde_json::json!(value),
            None => return Err(LabError::InvalidArgument(format!("unknown tolerance `{key}`"))),
        }
        *self = serde_json::from_value(json)?;
        Ok(())
    }

    pub fn keys() -> Vec<String> {
        match serde_json::to_value(Tolerances::default()) {
            Ok(serde_json::Value::Object(map)) => map.keys().cloned().collect(),
            _ => Vec::new(),
        }
    }
}
