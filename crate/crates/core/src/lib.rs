//! Korn-constant scaling for thin elliptic shells with flat points.
//!
//! The crate discretizes a shell `{x + t n(x) : x in S, |t| < h/2}` over a
//! mid-surface given in principal coordinates, assembles the quadratic forms
//! `|e(u)|^2`, `|grad u|^2` and component masses on trilinear hexahedra, and
//! minimizes their Rayleigh quotients. Around it sit the localized Kirchhoff
//! trial field, log-log scaling fits, an audit of exact integral identities
//! and a linearized buckling quotient.

pub mod analysis;
pub mod ansatz;
pub mod buckling;
pub mod error;
pub mod mesh;
pub mod operators;
pub mod quadrature;
pub mod solver;
pub mod surface;

pub use error::{Error, Result};

/// Crate version, stamped into output headers.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
