//! Fourier representation of fields on the unit torus 𝕋^d (d ∈ {1, 2}),
//! the ordered Laplacian eigenbasis and the Sobolev scales 𝒟^s built on it.
//!
//! Fields live in two coordinate systems: complex Fourier coefficients on a
//! wavenumber box ([`FourierCoeffs`]) and real coordinates in the ordered,
//! L²-orthonormal eigenbasis of an [`EigenSystem`] (plain `[f64]` slices).

mod coeffs;
mod eigen;
mod fft;

pub use coeffs::FourierCoeffs;
pub use eigen::{EigenSystem, Mode, ModeKind, Subspace};
pub use fft::{dealiased_product, padded_points, GridFft, TorusGrid};

use crate::error::Result;

/// Builds the eigensystem for wavenumbers |k_i| ≤ `kmax`.
pub fn build_eigensystem(dim: usize, kmax: usize, subspace: Subspace) -> Result<EigenSystem> {
    EigenSystem::build(dim, kmax, subspace)
}

/// L² pairing of two fields through Parseval.
pub fn pairing(u: &FourierCoeffs, v: &FourierCoeffs) -> Result<f64> {
    u.pairing(v)
}
