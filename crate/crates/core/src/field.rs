//! Sampled fields on a backend grid.
//!
//! Every field carries the tag of the grid it was sampled on so that mixing
//! torus and sphere data, or two resolutions, is caught at the first
//! operation instead of producing silently wrong numbers.

use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Torus,
    Sphere,
}

impl BackendKind {
    pub fn name(self) -> &'static str {
        match self {
            BackendKind::Torus => "torus",
            BackendKind::Sphere => "sphere",
        }
    }
}

/// Identifies the discrete function space a field belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BackendTag {
    pub kind: BackendKind,
    /// Nodes per side on the torus, Gauss-Legendre nodes on the sphere.
    pub resolution: usize,
}

impl BackendTag {
    pub fn len(&self) -> usize {
        match self.kind {
            BackendKind::Torus => self.resolution * self.resolution,
            BackendKind::Sphere => self.resolution,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ensure(&self, other: &BackendTag) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(LabError::BackendMismatch {
                expected: *self,
                found: *other,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Real,
    Complex,
}

impl FieldKind {
    fn join(self, other: FieldKind) -> FieldKind {
        if self == FieldKind::Real && other == FieldKind::Real {
            FieldKind::Real
        } else {
            FieldKind::Complex
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    tag: BackendTag,
    kind: FieldKind,
    values: Vec<Complex64>,
}

impl ScalarField {
    pub fn from_real(tag: BackendTag, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), tag.len(), "sample count does not match grid");
        ScalarField {
            tag,
            kind: FieldKind::Real,
            values: values.into_iter().map(|v| Complex64::new(v, 0.0)).collect(),
        }
    }

    pub fn from_complex(tag: BackendTag, values: Vec<Complex64>) -> Self {
        assert_eq!(values.len(), tag.len(), "sample count does not match grid");
        ScalarField {
            tag,
            kind: FieldKind::Complex,
            values,
        }
    }

    pub fn constant(tag: BackendTag, value: f64) -> Self {
        Self::from_real(tag, vec![value; tag.len()])
    }

    pub fn zeros(tag: BackendTag) -> Self {
        Self::constant(tag, 0.0)
    }

    pub fn tag(&self) -> BackendTag {
        self.tag
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn is_real(&self) -> bool {
        self.kind == FieldKind::Real
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn re(&self) -> Vec<f64> {
        self.values.iter().map(|z| z.re).collect()
    }

    pub fn im(&self) -> Vec<f64> {
        self.values.iter().map(|z| z.im).collect()
    }

    /// Keeps the real part and tags the result real.
    pub fn real_part(&self) -> ScalarField {
        ScalarField::from_real(self.tag, self.re())
    }

    /// Largest imaginary part; zero for a genuinely real field.
    pub fn imag_sup(&self) -> f64 {
        self.values.iter().fold(0.0, |m, z| m.max(z.im.abs()))
    }

    pub fn conj(&self) -> ScalarField {
        ScalarField {
            tag: self.tag,
            kind: self.kind,
            values: self.values.iter().map(|z| z.conj()).collect(),
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    pub fn min_re(&self) -> (f64, usize) {
        self.values
            .iter()
            .enumerate()
            .fold((f64::INFINITY, 0), |(m, at), (i, z)| {
                if z.re < m {
                    (z.re, i)
                } else {
                    (m, at)
                }
            })
    }

    pub fn max_re(&self) -> f64 {
        self.values.iter().fold(f64::NEG_INFINITY, |m, z| m.max(z.re))
    }

    /// Applies `op` to every sample. The result is tagged complex unless the
    /// caller knows better and calls [`ScalarField::real_part`].
    pub fn map(&self, op: impl Fn(Complex64) -> Complex64) -> ScalarField {
        ScalarField {
            tag: self.tag,
            kind: FieldKind::Complex,
            values: self.values.iter().map(|&z| op(z)).collect(),
        }
    }

    /// Real-to-real pointwise map on the real part.
    pub fn map_real(&self, op: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField::from_real(self.tag, self.values.iter().map(|z| op(z.re)).collect())
    }

    pub fn zip_map(
        &self,
        other: &ScalarField,
        op: impl Fn(Complex64, Complex64) -> Complex64,
    ) -> ScalarField {
        assert_eq!(self.tag, other.tag, "fields live on different grids");
        ScalarField {
            tag: self.tag,
            kind: self.kind.join(other.kind),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| op(a, b))
                .collect(),
        }
    }

    pub fn scale(&self, s: f64) -> ScalarField {
        ScalarField {
            tag: self.tag,
            kind: self.kind,
            values: self.values.iter().map(|z| z * s).collect(),
        }
    }

    pub fn scale_complex(&self, s: Complex64) -> ScalarField {
        ScalarField {
            tag: self.tag,
            kind: FieldKind::Complex,
            values: self.values.iter().map(|z| z * s).collect(),
        }
    }

    pub fn add_scalar(&self, s: f64) -> ScalarField {
        ScalarField {
            tag: self.tag,
            kind: self.kind,
            values: self.values.iter().map(|z| z + s).collect(),
        }
    }

    pub fn exp(&self) -> ScalarField {
        let out = self.map(|z| z.exp());
        if self.is_real() {
            out.real_part()
        } else {
            out
        }
    }

    pub fn recip(&self) -> ScalarField {
        let out = self.map(|z| z.inv());
        if self.is_real() {
            out.real_part()
        } else {
            out
        }
    }

    pub fn div(&self, other: &ScalarField) -> ScalarField {
        self.zip_map(other, |a, b| a / b)
    }

    /// Sup norm of the difference.
    pub fn distance(&self, other: &ScalarField) -> f64 {
        assert_eq!(self.tag, other.tag, "fields live on different grids");
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).norm()))
    }
}

impl Add for &ScalarField {
    type Output = ScalarField;
    fn add(self, rhs: &ScalarField) -> ScalarField {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &ScalarField {
    type Output = ScalarField;
    fn sub(self, rhs: &ScalarField) -> ScalarField {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Mul for &ScalarField {
    type Output = ScalarField;
    fn mul(self, rhs: &ScalarField) -> ScalarField {
        self.zip_map(rhs, |a, b| a * b)
    }
}

impl Neg for &ScalarField {
    type Output = ScalarField;
    fn neg(self) -> ScalarField {
        self.scale(-1.0)
    }
}

/// The single component `psi_{1 1bar}` of a mixed Hessian, or of any
/// symmetric real (1,1) tensor `eta`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField11 {
    pub component: ScalarField,
}

/// The single component `psi_{11}` of a (2,0) covariant Hessian.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField20 {
    pub component: ScalarField,
}
