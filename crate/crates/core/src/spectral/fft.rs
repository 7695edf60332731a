use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::FourierCoeffs;
use crate::error::{invalid, Error, Result};

/// Uniform grid of n^d points with period 1 per axis, carrying p-component
/// real fields stored component-major and row-major (x₁ slowest).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TorusGrid {
    dim: usize,
    n: usize,
    components: usize,
}

impl TorusGrid {
    pub fn new(dim: usize, n: usize, components: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return invalid(format!("dimension {dim} not in {{1, 2}}"));
        }
        if n < 8 || !n.is_multiple_of(2) {
            return invalid(format!("points per axis must be even and ≥ 8, got {n}"));
        }
        if components == 0 {
            return invalid("component count must be ≥ 1");
        }
        Ok(Self { dim, n, components })
    }

    /// Smallest admissible grid resolving wavenumbers up to `kmax` without aliasing.
    pub fn for_kmax(dim: usize, kmax: usize, components: usize) -> Result<Self> {
        Self::new(dim, (2 * kmax + 2).max(8), components)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn components(&self) -> usize {
        self.components
    }

    /// Number of points per component.
    pub fn points(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn point(&self, idx: usize) -> [f64; 2] {
        let h = 1.0 / self.n as f64;
        if self.dim == 1 {
            [idx as f64 * h, 0.0]
        } else {
            [(idx / self.n) as f64 * h, (idx % self.n) as f64 * h]
        }
    }

    fn check_kmax(&self, kmax: usize) -> Result<()> {
        if self.n < 2 * kmax + 2 {
            return Err(Error::GridMismatch(format!(
                "{} points per axis cannot resolve wavenumber {kmax}",
                self.n
            )));
        }
        Ok(())
    }

    /// Grid values → Fourier coefficients truncated to |k_i| ≤ kmax.
    pub fn forward(&self, values: &[f64], kmax: usize) -> Result<FourierCoeffs> {
        self.check_kmax(kmax)?;
        if values.len() != self.points() * self.components {
            return Err(Error::GridMismatch(format!(
                "expected {} values, got {}",
                self.points() * self.components,
                values.len()
            )));
        }
        let fft = GridFft::new(self.dim, self.n);
        let nk = FourierCoeffs::box_len(self.dim, kmax);
        let mut data = vec![Complex64::new(0.0, 0.0); nk * self.components];
        for c in 0..self.components {
            let comp = &values[c * self.points()..(c + 1) * self.points()];
            fft.grid_to_box(comp, kmax, &mut data[c * nk..(c + 1) * nk]);
        }
        Ok(FourierCoeffs::from_raw(self.dim, kmax, self.components, data))
    }

    /// Fourier coefficients → real grid values.
    pub fn inverse(&self, coeffs: &FourierCoeffs) -> Result<Vec<f64>> {
        if coeffs.dim() != self.dim || coeffs.components() != self.components {
            return Err(Error::GridMismatch("coefficient/grid shape mismatch".into()));
        }
        self.check_kmax(coeffs.kmax())?;
        let fft = GridFft::new(self.dim, self.n);
        let nk = FourierCoeffs::box_len(self.dim, coeffs.kmax());
        let mut out = vec![0.0; self.points() * self.components];
        for c in 0..self.components {
            fft.box_to_grid(
                &coeffs.data()[c * nk..(c + 1) * nk],
                coeffs.kmax(),
                &mut out[c * self.points()..(c + 1) * self.points()],
            );
        }
        Ok(out)
    }

    /// Grid quadrature of ∫ u·v dx (exact for band-limited products the grid resolves).
    pub fn quadrature(&self, u: &[f64], v: &[f64]) -> f64 {
        u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / self.points() as f64
    }
}

/// Points per axis of the zero-padded grid on which products of two fields
/// truncated at `kmax` are alias-free on the retained box (3/2 rule).
pub fn padded_points(kmax: usize) -> usize {
    let n = 3 * kmax + 2;
    (n + n % 2).max(8)
}

/// Product of two scalar band-limited fields, evaluated on a 3/2 zero-padded
/// grid and truncated back to the common box.
pub fn dealiased_product(a: &FourierCoeffs, b: &FourierCoeffs) -> Result<FourierCoeffs> {
    if a.dim() != b.dim() || a.kmax() != b.kmax() || a.components() != 1 || b.components() != 1 {
        return Err(Error::GridMismatch("dealiased product needs matching scalar fields".into()));
    }
    let grid = TorusGrid::new(a.dim(), padded_points(a.kmax()), 1)?;
    let ua = grid.inverse(a)?;
    let ub = grid.inverse(b)?;
    let prod: Vec<f64> = ua.iter().zip(&ub).map(|(x, y)| x * y).collect();
    grid.forward(&prod, a.kmax())
}

/// Planned complex FFTs for an n^d grid.
#[derive(Clone)]
pub struct GridFft {
    dim: usize,
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for GridFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GridFft").field("dim", &self.dim).field("n", &self.n).finish()
    }
}

impl GridFft {
    pub fn new(dim: usize, n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self { dim, n, fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n) }
    }

    pub fn points(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn slot(&self, k: [i32; 2]) -> usize {
        let n = self.n as i32;
        let a = k[0].rem_euclid(n) as usize;
        if self.dim == 1 {
            a
        } else {
            a * self.n + k[1].rem_euclid(n) as usize
        }
    }

    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        let plan = if inverse { &self.inv } else { &self.fwd };
        plan.process(buf);
        if self.dim == 2 {
            transpose(buf, self.n);
            plan.process(buf);
            transpose(buf, self.n);
        }
    }

    /// Box coefficients (one component) → real grid values.
    pub fn box_to_grid(&self, coeffs: &[Complex64], kmax: usize, out: &mut [f64]) {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.points()];
        for (i, c) in coeffs.iter().enumerate() {
            if *c != Complex64::new(0.0, 0.0) {
                let k = FourierCoeffs::box_wavevector(self.dim, kmax, i);
                buf[self.slot(k)] += *c;
            }
        }
        self.transform(&mut buf, true);
        for (o, b) in out.iter_mut().zip(&buf) {
            *o = b.re;
        }
    }

    /// Real grid values (one component) → box coefficients |k_i| ≤ kmax.
    pub fn grid_to_box(&self, values: &[f64], kmax: usize, out: &mut [Complex64]) {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, false);
        let scale = 1.0 / self.points() as f64;
        for (i, o) in out.iter_mut().enumerate() {
            let k = FourierCoeffs::box_wavevector(self.dim, kmax, i);
            *o = buf[self.slot(k)] * scale;
        }
    }
}

fn transpose(buf: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in i + 1..n {
            buf.swap(i * n + j, j * n + i);
        }
    }
}
