use num_complex::Complex64;

use crate::error::{Error, Result};

/// Truncated complex Fourier coefficients `û_c(k)`, |k_i| ≤ kmax, of a
/// p-component field on 𝕋^d, normalised so that u(x) = Σ_k û(k) e^{2πik·x}.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierCoeffs {
    dim: usize,
    kmax: usize,
    components: usize,
    data: Vec<Complex64>,
}

impl FourierCoeffs {
    pub fn zeros(dim: usize, kmax: usize, components: usize) -> Self {
        let n = Self::box_len(dim, kmax) * components;
        Self { dim, kmax, components, data: vec![Complex64::new(0.0, 0.0); n] }
    }

    pub(crate) fn from_raw(dim: usize, kmax: usize, components: usize, data: Vec<Complex64>) -> Self {
        debug_assert_eq!(data.len(), Self::box_len(dim, kmax) * components);
        Self { dim, kmax, components, data }
    }

    pub fn box_len(dim: usize, kmax: usize) -> usize {
        (2 * kmax + 1).pow(dim as u32)
    }

    pub fn box_index(dim: usize, kmax: usize, k: [i32; 2]) -> usize {
        let side = 2 * kmax as i32 + 1;
        let km = kmax as i32;
        if dim == 1 {
            (k[0] + km) as usize
        } else {
            ((k[0] + km) * side + (k[1] + km)) as usize
        }
    }

    /// Wavevector at a box index.
    pub fn box_wavevector(dim: usize, kmax: usize, idx: usize) -> [i32; 2] {
        let side = 2 * kmax + 1;
        let km = kmax as i32;
        if dim == 1 {
            [idx as i32 - km, 0]
        } else {
            [(idx / side) as i32 - km, (idx % side) as i32 - km]
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kmax(&self) -> usize {
        self.kmax
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn get(&self, comp: usize, k: [i32; 2]) -> Complex64 {
        let km = self.kmax as i32;
        if k[0].abs() > km || k[1].abs() > km || (self.dim == 1 && k[1] != 0) {
            return Complex64::new(0.0, 0.0);
        }
        self.data[comp * Self::box_len(self.dim, self.kmax) + Self::box_index(self.dim, self.kmax, k)]
    }

    pub fn set(&mut self, comp: usize, k: [i32; 2], v: Complex64) {
        let i = comp * Self::box_len(self.dim, self.kmax) + Self::box_index(self.dim, self.kmax, k);
        self.data[i] = v;
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Checks û(-k) = conj(û(k)) componentwise.
    pub fn is_hermitian(&self, tol: f64) -> bool {
        let nk = Self::box_len(self.dim, self.kmax);
        (0..self.components).all(|c| {
            (0..nk).all(|i| {
                let k = Self::box_wavevector(self.dim, self.kmax, i);
                let j = Self::box_index(self.dim, self.kmax, [-k[0], -k[1]]);
                (self.data[c * nk + i] - self.data[c * nk + j].conj()).norm() <= tol
            })
        })
    }

    /// Copy on a different wavenumber box (zero-padding or truncation).
    pub fn resized(&self, kmax: usize) -> Self {
        let mut out = Self::zeros(self.dim, kmax, self.components);
        let nk_out = Self::box_len(self.dim, kmax);
        let nk = Self::box_len(self.dim, self.kmax);
        let lim = kmax.min(self.kmax) as i32;
        for c in 0..self.components {
            for i in 0..nk {
                let k = Self::box_wavevector(self.dim, self.kmax, i);
                if k[0].abs() <= lim && k[1].abs() <= lim {
                    out.data[c * nk_out + Self::box_index(self.dim, kmax, k)] = self.data[c * nk + i];
                }
            }
        }
        out
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim || self.kmax != other.kmax || self.components != other.components {
            return Err(Error::GridMismatch(format!(
                "(d={}, K={}, p={}) vs (d={}, K={}, p={})",
                self.dim, self.kmax, self.components, other.dim, other.kmax, other.components
            )));
        }
        Ok(())
    }

    /// L² inner product ∫ u·v dx through Parseval.
    pub fn pairing(&self, other: &Self) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| (a * b.conj()).re).sum())
    }

    /// Exact product coefficients Σ_{k'} û(k') v̂(k - k') restricted to the box
    /// (scalar fields); a direct O(K^{2d}) convolution.
    pub fn convolve_truncated(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        let nk = Self::box_len(self.dim, self.kmax);
        let km = self.kmax as i32;
        let mut out = Self::zeros(self.dim, self.kmax, self.components);
        for c in 0..self.components {
            for i in 0..nk {
                let k = Self::box_wavevector(self.dim, self.kmax, i);
                let mut acc = Complex64::new(0.0, 0.0);
                for j in 0..nk {
                    let a = Self::box_wavevector(self.dim, self.kmax, j);
                    let b = [k[0] - a[0], k[1] - a[1]];
                    if b[0].abs() <= km && b[1].abs() <= km {
                        acc += self.data[c * nk + j]
                            * other.data[c * nk + Self::box_index(self.dim, self.kmax, b)];
                    }
                }
                out.data[c * nk + i] = acc;
            }
        }
        Ok(out)
    }
}
