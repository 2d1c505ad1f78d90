//! Semantic robustness assessment for classifiers over a latent space.
//!
//! Perturbations live in the span of a small set of unit-norm attribute
//! directions (a [`SemanticBasis`]) and are bounded by an axis-aligned
//! ellipsoid `‖δ‖_{M,2} ≤ 1` described by a [`BudgetMatrix`]. On top of that
//! geometry the crate provides:
//!
//! * constrained-perturbation PGD and minimum-perturbation FAB attacks
//!   ([`attacks`]),
//! * an attribute ranking built from the energy adversarial perturbations
//!   spend per attribute, validated with Friedman and Wilcoxon tests
//!   ([`ranking`], [`stats`]),
//! * isotropic and anisotropic randomized-smoothing certification
//!   ([`certify`]),
//! * synthetic classifier oracles with closed-form decision geometry
//!   ([`oracle`]) and the file formats shared with the CLI ([`formats`]).

pub mod attacks;
pub mod certify;
mod error;
pub mod formats;
pub mod linalg;
pub mod oracle;
pub mod ranking;
pub mod rng;
pub mod semgeo;
pub mod stats;

pub use error::{Error, Result};
pub use oracle::{ClassifierOracle, LinearOracle, LossKind, PrototypeOracle, SyntheticPopulation};
pub use semgeo::{BudgetMatrix, BudgetSpec, LatentCode, Perturbation, SemanticBasis};
