//! Material distributions, grades of uniformity and homogeneity tests for
//! simple material bodies described by a constitutive response `W(X, F)`.
//!
//! The crate is organised bottom-up:
//!
//! - [`numkit`]: SVD null spaces, central differences, RK4.
//! - [`response`]: the constitutive-model contract, built-in models and the
//!   `.mdl` expression language.
//! - [`distribution`]: admissibility systems, material-distribution fibres,
//!   grades and symmetry algebras.
//! - [`foliation`]: leaf tracing and grade maps.
//! - [`homogeneity`]: chart-based homogeneity tests.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod distribution;
pub mod error;
pub mod foliation;
pub mod homogeneity;
pub mod jet;
pub mod numkit;
pub mod output;
pub mod response;

pub use error::{Error, Result};
pub use numkit::{Mat, Tolerances};
