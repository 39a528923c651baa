//! Numerical core for the two-species degenerate cross-diffusion system
//!
//! ```text
//!   ∂t ρ¹ − ∂x((∂x p + ∂x Φ₁) ρ¹) = 0
//!   ∂t ρ² − ∂x((∂x p + ∂x Φ₂) ρ²) = 0,      p = m/(m−1) (ρ¹ + ρ²)^(m−1)
//! ```
//!
//! on a bounded interval with no-flux boundaries, and its incompressible
//! limit `m = ∞` where `ρ¹ + ρ² ≤ 1` and the pressure is the multiplier of
//! that constraint.
//!
//! Time stepping is the minimizing-movement (JKO) scheme in the product
//! Wasserstein space: each step minimizes
//! `F_m(ρ) + G(ρ) + Σᵢ W₂²(ρⁱ, ρⁱ_prev) / (2τκᵢ)` over pairs of fixed masses.
//! Transport in 1D is exact (quantile functions of piecewise-constant
//! densities), so the only discretization is the cell-averaged density.
//!
//! Modules:
//!
//! | module | contents |
//! |---|---|
//! | [`measure`] | grids, densities, CDF/quantile, W₂, monotone maps, Kantorovich potentials, pushforward |
//! | [`energy`] | potentials, free energies, pressure law, equilibrium solver |
//! | [`jko`] | the implicit step for finite and infinite `m`, explicit predictor, trajectories |
//! | [`interp`] | McCann and piecewise-constant interpolation, velocities, momenta, action |
//! | [`diagnostics`] | segregation/ordering, a-priori bounds, complementarity, weak form, patch and interface laws, refinement studies |
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod diagnostics;
pub mod energy;
mod error;
pub mod interp;
pub mod jko;
mod linalg;
pub(crate) mod math;
pub mod measure;

pub use error::{Error, Result};
