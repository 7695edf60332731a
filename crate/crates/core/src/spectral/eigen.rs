use std::collections::HashMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::FourierCoeffs;
use crate::error::{invalid, Error, Result};

/// Subspace of L²(𝕋^d)^p carrying the eigenbasis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subspace {
    /// Scalar fields, constant mode included, weights τ = 1 + λ.
    Full,
    /// Scalar fields without the constant mode, weights τ = λ.
    MeanZero,
    /// Planar divergence-free mean-zero vector fields, weights τ = λ.
    DivergenceFree,
}

impl Subspace {
    pub fn components(self) -> usize {
        match self {
            Subspace::DivergenceFree => 2,
            _ => 1,
        }
    }
}

/// Which real function a wavevector's mode is.
///
/// Every retained wavevector owns exactly one real mode: the constant for
/// k = 0, `√2 cos(2π k·x)` when the first nonzero entry of k is positive and
/// `√2 sin(2π k'·x)` with k' = -k otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeKind {
    Constant,
    Cosine,
    Sine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mode {
    /// Wavevector owning the mode (second entry zero when d = 1).
    pub wavevector: [i32; 2],
    /// Positive-type representative of ±wavevector.
    pub representative: [i32; 2],
    pub kind: ModeKind,
    /// Laplacian eigenvalue 4π²|k|².
    pub eigenvalue: f64,
    /// Scale weight τ.
    pub weight: f64,
    /// Unit vector multiplying the scalar mode; `[1, 0]` for scalar fields.
    pub direction: [f64; 2],
}

impl Mode {
    /// Complex Fourier weight of the mode at `representative`; the weight at
    /// `-representative` is its conjugate.
    pub(crate) fn fourier_weight(&self) -> Complex64 {
        match self.kind {
            ModeKind::Constant => Complex64::new(1.0, 0.0),
            ModeKind::Cosine => Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0),
            ModeKind::Sine => Complex64::new(0.0, -std::f64::consts::FRAC_1_SQRT_2),
        }
    }

    /// Value of the scalar part at x.
    pub fn scalar_at(&self, x: &[f64]) -> f64 {
        let phase = 2.0
            * PI
            * (self.representative[0] as f64 * x[0]
                + if x.len() > 1 { self.representative[1] as f64 * x[1] } else { 0.0 });
        match self.kind {
            ModeKind::Constant => 1.0,
            ModeKind::Cosine => std::f64::consts::SQRT_2 * phase.cos(),
            ModeKind::Sine => std::f64::consts::SQRT_2 * phase.sin(),
        }
    }
}

pub(crate) fn is_positive_type(k: [i32; 2]) -> bool {
    k[0] > 0 || (k[0] == 0 && k[1] > 0)
}

/// Ordered real orthonormal eigenbasis of the periodic Laplacian on a
/// square wavenumber box |k_i| ≤ kmax.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSystem {
    dim: usize,
    kmax: usize,
    subspace: Subspace,
    modes: Vec<Mode>,
    lookup: HashMap<[i32; 2], usize>,
}

impl EigenSystem {
    /// Builds the basis; ties in the eigenvalue are broken lexicographically
    /// on the wavevector.
    pub fn build(dim: usize, kmax: usize, subspace: Subspace) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return invalid(format!("dimension {dim} not in {{1, 2}}"));
        }
        if kmax < 1 {
            return invalid("kmax must be at least 1");
        }
        if subspace == Subspace::DivergenceFree && dim != 2 {
            return invalid("divergence-free subspace requires d = 2");
        }
        let km = kmax as i32;
        let mut waves: Vec<[i32; 2]> = Vec::new();
        if dim == 1 {
            for k in -km..=km {
                waves.push([k, 0]);
            }
        } else {
            for k1 in -km..=km {
                for k2 in -km..=km {
                    waves.push([k1, k2]);
                }
            }
        }
        if subspace != Subspace::Full {
            waves.retain(|k| *k != [0, 0]);
        }
        let norm2 = |k: &[i32; 2]| (k[0] * k[0] + k[1] * k[1]) as i64;
        waves.sort_by(|a, b| norm2(a).cmp(&norm2(b)).then(a.cmp(b)));
        let modes: Vec<Mode> = waves
            .into_iter()
            .map(|k| {
                let (kind, rep) = if k == [0, 0] {
                    (ModeKind::Constant, k)
                } else if is_positive_type(k) {
                    (ModeKind::Cosine, k)
                } else {
                    (ModeKind::Sine, [-k[0], -k[1]])
                };
                let eigenvalue = 4.0 * PI * PI * norm2(&k) as f64;
                let weight = match subspace {
                    Subspace::Full => 1.0 + eigenvalue,
                    _ => eigenvalue,
                };
                let direction = match subspace {
                    Subspace::DivergenceFree => {
                        let r = ((rep[0] * rep[0] + rep[1] * rep[1]) as f64).sqrt();
                        [-rep[1] as f64 / r, rep[0] as f64 / r]
                    }
                    _ => [1.0, 0.0],
                };
                Mode { wavevector: k, representative: rep, kind, eigenvalue, weight, direction }
            })
            .collect();
        let lookup = modes.iter().enumerate().map(|(j, m)| (m.wavevector, j)).collect();
        Ok(Self { dim, kmax, subspace, modes, lookup })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kmax(&self) -> usize {
        self.kmax
    }

    pub fn subspace(&self) -> Subspace {
        self.subspace
    }

    pub fn components(&self) -> usize {
        self.subspace.components()
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn mode(&self, j: usize) -> &Mode {
        &self.modes[j]
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.eigenvalue).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.weight).collect()
    }

    /// Index of the mode owned by wavevector `k` (pad with zero for d = 1).
    pub fn index_of(&self, k: [i32; 2]) -> Option<usize> {
        self.lookup.get(&k).copied()
    }

    /// Scalar parts φ_m(x) of all modes at one point, from a table of powers
    /// of e^{2πi x_i} instead of one trigonometric call per mode.
    pub fn mode_values(&self, x: &[f64], out: &mut [f64]) {
        let km = self.kmax;
        let powers = |xi: f64| {
            let z = Complex64::from_polar(1.0, 2.0 * PI * xi);
            let mut p = Vec::with_capacity(km + 1);
            let mut acc = Complex64::new(1.0, 0.0);
            for _ in 0..=km {
                p.push(acc);
                acc *= z;
            }
            p
        };
        let p1 = powers(x[0]);
        let p2 = if self.dim == 2 { powers(x[1]) } else { vec![Complex64::new(1.0, 0.0)] };
        for (o, m) in out.iter_mut().zip(&self.modes) {
            let [k1, k2] = m.representative;
            let b = if k2 >= 0 { p2[k2 as usize] } else { p2[(-k2) as usize].conj() };
            let e = p1[k1 as usize] * b;
            *o = match m.kind {
                ModeKind::Constant => 1.0,
                ModeKind::Cosine => std::f64::consts::SQRT_2 * e.re,
                ModeKind::Sine => std::f64::consts::SQRT_2 * e.im,
            };
        }
    }

    /// Unit coordinate vector e_j.
    pub fn unit(&self, j: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.len()];
        v[j] = 1.0;
        v
    }

    /// ‖u‖_{𝒟^s} = (Σ_j τ_j^s u_j²)^{1/2} for eigen coordinates `u`.
    pub fn sobolev_norm(&self, u: &[f64], s: f64) -> f64 {
        self.modes
            .iter()
            .zip(u)
            .map(|(m, &c)| m.weight.powf(s) * c * c)
            .sum::<f64>()
            .sqrt()
    }

    /// Same as [`sobolev_norm`](Self::sobolev_norm) for a Fourier representation.
    pub fn sobolev_norm_of(&self, u: &FourierCoeffs, s: f64) -> Result<f64> {
        Ok(self.sobolev_norm(&self.project(u)?, s))
    }

    /// Complex Fourier coefficients on the wavenumber box of the system.
    pub fn to_fourier(&self, u: &[f64]) -> FourierCoeffs {
        let mut out = FourierCoeffs::zeros(self.dim, self.kmax, self.components());
        self.scatter(u, out.data_mut());
        out
    }

    /// Adds the modes' contributions to component-major box storage.
    pub(crate) fn scatter(&self, u: &[f64], data: &mut [Complex64]) {
        let nk = FourierCoeffs::box_len(self.dim, self.kmax);
        let p = self.components();
        for (m, &c) in self.modes.iter().zip(u) {
            if c == 0.0 {
                continue;
            }
            let w = m.fourier_weight() * c;
            let ip = FourierCoeffs::box_index(self.dim, self.kmax, m.representative);
            if m.kind == ModeKind::Constant {
                for comp in 0..p {
                    data[comp * nk + ip] += w * m.direction[comp];
                }
                continue;
            }
            let im = FourierCoeffs::box_index(
                self.dim,
                self.kmax,
                [-m.representative[0], -m.representative[1]],
            );
            for comp in 0..p {
                data[comp * nk + ip] += w * m.direction[comp];
                data[comp * nk + im] += w.conj() * m.direction[comp];
            }
        }
    }

    /// Eigen coordinates from box storage, assuming Hermitian data inside the
    /// subspace (no residual check).
    pub(crate) fn gather(&self, data: &[Complex64]) -> Vec<f64> {
        let nk = FourierCoeffs::box_len(self.dim, self.kmax);
        let p = self.components();
        self.modes
            .iter()
            .map(|m| {
                let ip = FourierCoeffs::box_index(self.dim, self.kmax, m.representative);
                let mut acc = Complex64::new(0.0, 0.0);
                for comp in 0..p {
                    acc += data[comp * nk + ip] * m.direction[comp];
                }
                if m.kind == ModeKind::Constant {
                    acc.re
                } else {
                    2.0 * (m.fourier_weight().conj() * acc).re
                }
            })
            .collect()
    }

    /// Eigen coordinates of `u`; fails when `u` has components outside the
    /// subspace (mean, divergence, or modes beyond the box).
    pub fn project(&self, u: &FourierCoeffs) -> Result<Vec<f64>> {
        if u.dim() != self.dim || u.components() != self.components() {
            return Err(Error::GridMismatch(format!(
                "coefficients are (d={}, p={}), eigensystem is (d={}, p={})",
                u.dim(),
                u.components(),
                self.dim,
                self.components()
            )));
        }
        let resized;
        let u = if u.kmax() == self.kmax {
            u
        } else {
            resized = u.resized(self.kmax);
            let lost = u.norm_sq() - resized.norm_sq();
            if lost > 1e-24 * u.norm_sq().max(1.0) {
                return Err(Error::OutsideSubspace { residual: lost.max(0.0).sqrt() });
            }
            &resized
        };
        let coords = self.gather(u.data());
        let back = self.to_fourier(&coords);
        let residual = u
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        let scale = u.norm_sq().sqrt().max(1.0);
        if residual > 1e-10 * scale {
            return Err(Error::OutsideSubspace { residual });
        }
        Ok(coords)
    }
}
