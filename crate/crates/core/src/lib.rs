//! Numerical laboratory for the weighted Ricci-potential entropy on Kähler
//! surfaces of complex dimension one.
//!
//! Two backends share one operator layer: a pseudo-spectral flat torus and a
//! rotationally invariant round sphere in moment-map coordinates.

pub mod entropy;
pub mod error;
pub mod fd;
pub mod field;
pub mod flow;
pub mod geometry;
pub mod io;
pub mod operators;
pub mod spectral;
pub mod sphere;
pub mod suite;
pub mod tolerances;
pub mod torus;
pub mod variation;

pub use error::{LabError, Result};
pub use field::{BackendKind, BackendTag, FieldKind, ScalarField, TensorField11, TensorField20};
pub use geometry::{make_state, sphere_base, torus_base, BackendGeometry, KahlerState, Measure};
pub use tolerances::Tolerances;
