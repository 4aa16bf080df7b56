//! Spectral quasi-Newton solver and a-posteriori certifier for quasi-periodic
//! hull functions of chains with long-range interactions.

// `!(x < y)` comparisons also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fourier;
pub mod small_divisors;
pub mod model;
pub mod solver;
pub mod certifier;
pub mod io;
