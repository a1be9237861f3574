//! Solver library for an elliptic distributed optimal control problem with
//! pointwise state constraints.
//!
//! The state equation -Δy = u with y = 0 on the boundary is eliminated, leaving
//! a fourth-order obstacle problem for the state alone: minimize
//! ½a(v,v) - (f,v) over {v ≤ ψ at the interpolation nodes}, where
//! a(w,v) = β∫ΔwΔv + ∫wv. The discretization is a flat-top partition of unity
//! method whose basis functions are C¹, piecewise polynomial, and satisfy the
//! Kronecker delta property, so coefficients are nodal values and the constraint
//! is a componentwise bound.
//!
//! Module map:
//! * [`pum`] - patch grid, partition of unity, biquadratic basis, interpolation
//! * [`assembly`] - quadrature, stiffness/load/obstacle assembly, objective
//! * [`sparse`] - symmetric CSR matrices
//! * [`skyline`] - envelope Cholesky for subdomain and coarse solves
//! * [`krylov`] - (preconditioned) conjugate gradients, Lanczos condition estimate
//! * [`pdas`] - primal-dual active set outer loop
//! * [`schwarz`] - one- and two-level additive Schwarz preconditioners
//! * [`expr`] - arithmetic expression grammar for config-file source terms
//! * [`experiment`] - level/subdomain sweeps, continuation, table emission

pub mod assembly;
pub mod experiment;
pub mod expr;
pub mod krylov;
pub mod pdas;
pub mod pum;
pub mod schwarz;
pub mod skyline;
pub mod sparse;

mod error;

pub use error::Error;

pub type Result<T> = std::result::Result<T, Error>;
