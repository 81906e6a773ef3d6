//! Representability analysis for positive-definite integral quadratic forms.
//!
//! Given a target set `S` of positive integers (all of them, the odd ones, the
//! ones coprime to 3, or a custom union of residue classes), this crate
//! decides and certifies whether forms represent every element of `S`:
//!
//! - exact lattice-point enumeration (theta coefficients, representation
//!   witnesses, shells of fixed norm) in [`enumerate`];
//! - escalation lattices — the bounded search tree whose leaves witness the
//!   finite test set for `S`-universality — in [`escalate`];
//! - reduction, canonical class representatives, and isometry testing in
//!   [`reduce`];
//! - local (p-adic) solubility, representation densities, and the derived
//!   lower-bound constants in [`padic`];
//! - regularity-based certification of quaternary forms that split off a
//!   regular ternary section in [`regular`];
//! - the analytic tail bound: the growth function `F₄`, its finite exception
//!   candidate enumeration, and Petersson-norm based cusp constants in
//!   [`analytic`] and [`bessel`];
//! - the end-to-end census pipeline with persistence and verification in
//!   [`census`].

pub mod analytic;
pub mod arith;
pub mod bessel;
pub mod bitset;
pub mod enumerate;
pub mod escalate;
pub mod error;
pub mod form;
pub mod mat;
pub mod padic;
pub mod reduce;
pub mod regular;
pub mod target;

pub use enumerate::EnumLimits;
pub use error::{Error, Result};
pub use form::{FormRecord, GramForm};
