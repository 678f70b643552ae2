//! Shape derivatives of polygonal conductivity inclusions.
//!
//! The crate solves the two-dimensional conductivity problem
//! `div(sigma grad u) = 0` with `sigma = 1 + (k - 1) * chi_T` for a convex
//! polygonal inclusion `T`, and provides the derivative of boundary
//! functionals with respect to vertex motions of `T`, together with the
//! numerical experiments that check it and a misfit-driven reconstruction.
//!
//! Module map:
//! - [`geometry`]: polygons, velocities, admissibility.
//! - [`predicates`]: exact orientation and incircle tests.
//! - [`mesh`]: conforming graded triangulations and mesh morphing.
//! - [`linalg`]: sparse matrices, Jacobi-preconditioned CG, small dense algebra.
//! - [`fem`]: P1 assembly, Dirichlet/Neumann solves, traces and norms.
//! - [`maps`]: Dirichlet-to-Neumann and Neumann-to-Dirichlet matrices.
//! - [`shapecalc`]: the boundary-integral shape derivative and gradients.
//! - [`verify`]: rate studies, finite-difference oracles, singular exponents.
//! - [`reconstruct`]: synthetic data and gradient-descent reconstruction.

pub mod fem;
pub mod geometry;
pub mod linalg;
pub mod maps;
pub mod mesh;
pub mod predicates;
pub mod reconstruct;
pub mod shapecalc;
pub mod verify;
