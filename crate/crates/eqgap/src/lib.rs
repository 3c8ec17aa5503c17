//! Identification of hyperelastic constitutive models from full-field
//! displacement data and net reaction forces, without stress measurements.
//!
//! The library covers the full loop:
//!
//! * [`kinematics`]: meshes, displacement datasets, quadrature and
//!   deformation gradients.
//! * [`invariants`]: the polyconvexity-compatible invariant set
//!   (I1, I2, J, -J) and its derivatives.
//! * [`icnn`]: input-convex neural networks with analytic input gradients
//!   and parameter gradients.
//! * [`material`]: constitutive models mapping F to energy and first
//!   Piola-Kirchhoff stress, with stress normalization at the undeformed
//!   state. A physics-augmented ICNN energy and a Neo-Hookean baseline.
//! * [`equilibrium`]: nodal force assembly and the equilibrium-gap loss that
//!   scores a model against measured fields, plus its parameter gradient.
//! * [`training`]: dataset splitting, Adam training, architecture sweeps,
//!   evaluation and the loading-path continuity scan.
//! * [`datagen`]: synthetic experiments via a total-Lagrangian Newton
//!   solver, for closed-loop validation.
//!
//! Units are mm, N and MPa throughout.

pub mod cli;
pub mod datagen;
pub mod equilibrium;
pub mod error;
pub mod icnn;
pub mod invariants;
pub mod kinematics;
pub mod material;
pub mod training;

pub use error::{Error, Result};
