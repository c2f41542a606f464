//! Adaptive conforming triangulation of the complement of a compact planar
//! set, with per-triangle quasiconformal dilatation certificates and a
//! discrete conformal-modulus toolkit.
//!
//! The crate is organized around an exact dyadic geometry kernel
//! ([`dyadic`], [`exact`]), a half-edge mesh ([`mesh`], [`subdivision`]),
//! the contour machinery around a compact set ([`whitney`]), a guaranteed-
//! angle strip mesher ([`strip`]), a discrete conformal annulus mesher
//! ([`annulus`]), dilatation certificates ([`dilatation`]), a grid extremal-
//! length estimator ([`modulus`]), and the staged builder that ties them
//! together ([`pipeline`]).

pub mod annulus;
pub mod dilatation;
pub mod dyadic;
pub mod exact;
pub mod io;
pub mod lattice;
pub mod mesh;
pub mod modulus;
pub mod pipeline;
pub mod sizing;
pub mod strip;
pub mod subdivision;
pub mod whitney;

pub use dyadic::{DPoint, Dyadic, DyadicSquare};
pub use mesh::HalfEdgeMesh;
pub use sizing::SizingFn;
