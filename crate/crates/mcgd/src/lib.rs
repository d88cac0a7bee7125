// `!(x > 0.0)` style guards are intentional: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod builders;
pub mod data;
pub mod error;
pub mod experiments;
pub mod markov;
pub mod mixing;
pub mod objectives;
pub mod rng;
pub mod solver;

pub use error::{Error, Result};
