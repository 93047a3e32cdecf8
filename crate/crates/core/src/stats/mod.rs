//! Probability and numerics primitives.

pub mod bvn;
pub mod dist;
pub mod linalg;
pub mod numeric;
pub mod rng;
pub mod sampling;

pub use bvn::bvn_cdf;
pub use dist::{norm_cdf, norm_quantile, phi, phi_inv, t_cdf, RefDist};
pub use linalg::{chol, chol_psd, LowerTriangular, SymMatrix};
pub use numeric::{bisect_predicate, find_root, integrate};
pub use rng::RngStream;
pub use sampling::{mvn_sample, wishart_sample, MvnSampler, WishartSampler};
