//! Two-stage adaptive two one-sided tests for average bioequivalence.

pub mod combination;
pub mod error;
pub mod multi;
pub mod sim;
pub mod ssr;
pub mod tost;
pub mod stats;

pub use error::{Error, Result};
