//! Symbol calculus for pseudodifferential operators on periodic model
//! manifolds carrying a linear connection.
//!
//! The crate is organized in layers:
//!
//! * [`multiindex`] and [`jet`] provide truncated Taylor (jet) arithmetic,
//!   the exact-derivative engine used everywhere else.
//! * [`geometry`] solves geodesic and parallel-transport problems for a
//!   [`geometry::ManifoldModel`] and extracts jets of the resulting two-point
//!   maps at the diagonal.
//! * [`symbols`] defines [`symbols::Symbol`] (a function on the cotangent
//!   bundle with exact mixed derivatives) and [`symbols::Expansion`]
//!   (order-tagged asymptotic series).
//! * [`calculus`] implements the quantization maps: local and
//!   connection-aware symbol composition, adjoints, and parameter changes
//!   between left, Weyl and dual symbols.
//! * [`laplacian`] builds the Laplace operator on κ-densities for a metric
//!   model, its square root, and expansions of functions of that operator.
//! * [`spectral`] constructs scale-adapted smooth cutoffs and runs the
//!   two-metric spectral-projection experiment.
//! * [`oracle`] holds the independent numerical routes (FFT application,
//!   dense discretization, eigen-calculus, decay fitting) used to verify the
//!   symbolic ones.

pub mod calculus;
pub mod config;
pub mod coordfn;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod jet;
pub mod laplacian;
pub mod multiindex;
pub mod oracle;
pub mod spectral;
pub mod symbols;
pub mod xipoly;

pub use error::CalcError;

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex<f64>;
