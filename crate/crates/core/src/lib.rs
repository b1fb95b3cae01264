//! Embedding of European value surfaces into American and game stopping
//! problems, with the engines that produce the surfaces and independent
//! stopping oracles to check them against.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bs;
pub mod chain;
pub mod csv;
pub mod embedding;
pub mod error;
pub mod grid;
pub mod oracle;
pub mod payoff;
pub mod quadrature;
pub mod surfaces;
pub mod tridiag;
pub mod uvol;

pub use error::{Error, Result};
