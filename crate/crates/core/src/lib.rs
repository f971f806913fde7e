//! Exact symbolic engine for linear systems of ordinary and partial
//! differential equations with rational-function coefficients.
//!
//! The crate is organized around the ring `D = K[d_1, ..., d_n]` of linear
//! differential operators over a computable differential field
//! `K = Q(x_1, ..., x_n; parameter jets)`:
//!
//! - [`field`] — exact arithmetic in `K` (multivariate rational functions
//!   with `n` commuting derivations and truncated parameter jets).
//! - [`weyl`] — scalar operators and operator matrices over `D`, operator
//!   composition, the formal adjoint and Green-type divergence identities.
//! - [`involutive`] — Janet involutive completion of row modules over `D`,
//!   normal forms, membership, syzygies, compatibility conditions and free
//!   resolutions.
//! - [`jetspencer`] — jet-level view: prolongation, projection, symbols,
//!   the Spencer operator, the delta map and its cohomology, involutivity
//!   classes and Janet/Spencer bundle dimension tables.
//! - [`duality`] — the double-duality test: torsion, parametrizations,
//!   controllability.
//! - [`geometry`] — builders for the classical geometric operators
//!   (exterior calculus, Killing, conformal Killing, Einstein, Medolaghi
//!   systems, structure constants and their Jacobi conditions).
//!
//! All arithmetic is exact over the rationals; there is no floating point
//! anywhere in the crate.

pub mod field;
pub mod linalg;
pub mod weyl;
pub mod involutive;
pub mod jetspencer;
pub mod geometry;
pub mod duality;
pub mod sample;

pub use field::{Context, FieldError, ParameterSpec, Scalar};
pub use weyl::{MultiIndex, OperatorMatrix, ScalarOperator};
