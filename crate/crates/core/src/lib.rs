//! Numerical laboratory for curvature masses of graphic submanifolds.
//!
//! Given a map f: R^n -> R^m presented in a small expression language, this
//! crate computes the induced geometry of the graph {(x, f(x))}, certifies
//! the divergence identities behind the Gauss-Bonnet-Chern and
//! Einstein-Gauss-Bonnet masses, evaluates those masses both as
//! extrapolated surface fluxes and as bulk integrals, and checks the
//! Alexandrov-Fenchel / Penrose-type boundary inequalities for star-shaped
//! hypersurfaces.
//!
//! Modules, bottom up:
//! - [`expr`] / [`jet`]: expression parsing and exact order-3 derivative jets;
//! - [`geometry`]: pointwise metric, curvature, P-tensors and flux vectors;
//! - [`divergence`]: finite-difference certification of the flux identities;
//! - [`quad`]: sphere and radial quadrature plus power-law extrapolation;
//! - [`mass`]: surface-flux and bulk-integral mass reports;
//! - [`horizon`]: star-shaped hypersurface geometry and inequality checks.

pub mod consts;
pub mod divergence;
pub mod error;
pub mod expr;
pub mod geometry;
pub mod horizon;
pub mod jet;
pub mod mass;
pub mod quad;
pub mod sums;
pub mod tensor;

pub use error::{Error, Result};
pub use expr::{parse_map, Expr, MapSpec};
pub use geometry::{CurvatureData, FirstOrderData, PointData};
pub use jet::{eval_jet3, MapJet3};
