//! Error densities q_ε with √q_ε ∈ H¹(ℝ^p): evaluation, the score vector,
//! seeded sampling and the Fisher information matrix
//! 𝓘_ε = 4 ∫ ∇√q (∇√q)ᵀ dy computed by panel quadrature.

mod sampler;

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Error, Result};
use crate::quadrature::gl20;
use crate::rng::Rng;
pub use sampler::{InverseCdf, TABLE_KNOTS};

/// Shipped density families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NoiseFamily {
    Gaussian { variance: f64 },
    BivariateGaussian { covariance: [[f64; 2]; 2] },
    Laplace { scale: f64 },
    Logistic { scale: f64 },
    /// q(y) = cos²(πy/2) on [-1, 1].
    CosineBump,
    /// Uniform on [lower, upper]; its square root is not in H¹, kept as the
    /// canonical rejected model.
    Uniform { lower: f64, upper: f64 },
}

/// Where the density is positive.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Support {
    AllSpace,
    /// Product of intervals, one per axis.
    Intervals(Vec<(f64, f64)>),
}

#[derive(Debug, Clone)]
enum Sampler {
    Table(InverseCdf),
    Cholesky([[f64; 2]; 2]),
}

#[derive(Debug, Clone)]
pub struct NoiseModel {
    family: NoiseFamily,
    sampler: Sampler,
}

/// 𝓘_ε with its symmetric square root and inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherMatrix {
    pub matrix: DMatrix<f64>,
    pub sqrt: DMatrix<f64>,
    pub inverse: DMatrix<f64>,
    pub min_eigenvalue: f64,
}

impl FisherMatrix {
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        let sym = (&matrix + matrix.transpose()) * 0.5;
        let eig = sym.clone().symmetric_eigen();
        let min = eig.eigenvalues.min();
        let max = eig.eigenvalues.max();
        if !(min > 1e-12 * max.abs().max(1e-300)) || !min.is_finite() {
            return Err(Error::Singular(format!(
                "Fisher matrix eigenvalues in [{min:.3e}, {max:.3e}]"
            )));
        }
        let v = &eig.eigenvectors;
        let sqrt = v * DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt)) * v.transpose();
        let inverse = v * DMatrix::from_diagonal(&eig.eigenvalues.map(|x| 1.0 / x)) * v.transpose();
        Ok(Self { matrix: sym, sqrt, inverse, min_eigenvalue: min })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// aᵀ 𝓘 b for short vectors.
    pub fn form(&self, a: &[f64], b: &[f64]) -> f64 {
        let p = self.dim();
        let mut s = 0.0;
        for i in 0..p {
            for j in 0..p {
                s += a[i] * self.matrix[(i, j)] * b[j];
            }
        }
        s
    }
}

/// Energy of the finite-difference gradient of √q at one grid spacing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdLevel {
    pub spacing: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct H1Report {
    /// ∫ |∇√q|² from the supplied gradient.
    pub h1_energy: f64,
    /// Difference-quotient energies of √q on refining grids.
    pub fd_energy: Vec<FdLevel>,
    /// max |∇√q| over probe points where q = 0.
    pub zero_set_consistency: f64,
    pub rejected: bool,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantReport {
    pub mass: f64,
    pub mean: Vec<f64>,
    pub ok: bool,
}

impl NoiseModel {
    pub fn new(family: NoiseFamily) -> Result<Self> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                invalid(format!("{name} must be positive and finite, got {v}"))
            }
        };
        match &family {
            NoiseFamily::Gaussian { variance } => positive("variance", *variance)?,
            NoiseFamily::Laplace { scale } | NoiseFamily::Logistic { scale } => positive("scale", *scale)?,
            NoiseFamily::BivariateGaussian { covariance: c } => {
                if (c[0][1] - c[1][0]).abs() > 1e-12 * (c[0][1].abs() + 1.0) {
                    return invalid("covariance must be symmetric");
                }
                positive("covariance diagonal", c[0][0])?;
                positive("covariance determinant", c[0][0] * c[1][1] - c[0][1] * c[1][0])?;
            }
            NoiseFamily::CosineBump => {}
            NoiseFamily::Uniform { lower, upper } => {
                if !(upper > lower) {
                    return invalid("uniform needs lower < upper");
                }
            }
        }
        let sampler = match &family {
            NoiseFamily::BivariateGaussian { covariance: c } => {
                let l00 = c[0][0].sqrt();
                let l10 = c[1][0] / l00;
                let l11 = (c[1][1] - l10 * l10).sqrt();
                Sampler::Cholesky([[l00, 0.0], [l10, l11]])
            }
            _ => {
                let (lo, hi) = Self::domain_of(&family)[0];
                let f = family.clone();
                Sampler::Table(InverseCdf::new(lo, hi, move |y| cdf1(&f, y)))
            }
        };
        Ok(Self { family, sampler })
    }

    pub fn gaussian(variance: f64) -> Result<Self> {
        Self::new(NoiseFamily::Gaussian { variance })
    }

    pub fn family(&self) -> &NoiseFamily {
        &self.family
    }

    pub fn dim(&self) -> usize {
        match self.family {
            NoiseFamily::BivariateGaussian { .. } => 2,
            _ => 1,
        }
    }

    pub fn support(&self) -> Support {
        match self.family {
            NoiseFamily::CosineBump => Support::Intervals(vec![(-1.0, 1.0)]),
            NoiseFamily::Uniform { lower, upper } => Support::Intervals(vec![(lower, upper)]),
            _ => Support::AllSpace,
        }
    }

    /// Integration box per axis; tails beyond it carry mass below 1e-16.
    fn domain_of(family: &NoiseFamily) -> Vec<(f64, f64)> {
        match *family {
            NoiseFamily::Gaussian { variance } => {
                let r = 12.0 * variance.sqrt();
                vec![(-r, r)]
            }
            NoiseFamily::BivariateGaussian { covariance: c } => {
                let (r0, r1) = (12.0 * c[0][0].sqrt(), 12.0 * c[1][1].sqrt());
                vec![(-r0, r0), (-r1, r1)]
            }
            NoiseFamily::Laplace { scale } | NoiseFamily::Logistic { scale } => {
                vec![(-40.0 * scale, 40.0 * scale)]
            }
            NoiseFamily::CosineBump => vec![(-1.0, 1.0)],
            NoiseFamily::Uniform { lower, upper } => vec![(lower, upper)],
        }
    }

    pub fn domain(&self) -> Vec<(f64, f64)> {
        Self::domain_of(&self.family)
    }

    /// Interior points where √q is not smooth; quadrature panels end there.
    fn breakpoints(&self) -> Vec<f64> {
        match self.family {
            NoiseFamily::Laplace { .. } => vec![0.0],
            _ => vec![],
        }
    }

    pub fn density(&self, y: &[f64]) -> f64 {
        match self.family {
            NoiseFamily::BivariateGaussian { covariance: c } => {
                let (p, det) = precision(c);
                let m = quad2(&p, y);
                (-0.5 * m).exp() / (2.0 * PI * det.sqrt())
            }
            _ => density1(&self.family, y[0]),
        }
    }

    /// log q(y); -∞ off the support.
    pub fn log_density(&self, y: &[f64]) -> f64 {
        match self.family {
            NoiseFamily::Gaussian { variance } => -0.5 * y[0] * y[0] / variance - 0.5 * (2.0 * PI * variance).ln(),
            NoiseFamily::BivariateGaussian { covariance: c } => {
                let (p, det) = precision(c);
                -0.5 * quad2(&p, y) - (2.0 * PI).ln() - 0.5 * det.ln()
            }
            NoiseFamily::Laplace { scale } => -y[0].abs() / scale - (2.0 * scale).ln(),
            NoiseFamily::Logistic { scale } => {
                let a = y[0].abs() / scale;
                -a - 2.0 * (-a).exp().ln_1p() - scale.ln()
            }
            NoiseFamily::CosineBump | NoiseFamily::Uniform { .. } => density1(&self.family, y[0]).ln(),
        }
    }

    /// The version of ∇√q used throughout; zero wherever q = 0.
    pub fn sqrt_grad(&self, y: &[f64]) -> [f64; 2] {
        match self.family {
            NoiseFamily::BivariateGaussian { covariance: c } => {
                let (p, _) = precision(c);
                let s = self.density(y).sqrt();
                [
                    -0.5 * (p[0][0] * y[0] + p[0][1] * y[1]) * s,
                    -0.5 * (p[1][0] * y[0] + p[1][1] * y[1]) * s,
                ]
            }
            _ => [sqrt_grad1(&self.family, y[0]), 0.0],
        }
    }

    /// −2 (∇√q/√q)(y) 1[q(y) > 0], evaluated in closed form.
    pub fn score(&self, y: &[f64]) -> [f64; 2] {
        match self.family {
            NoiseFamily::Gaussian { variance } => [y[0] / variance, 0.0],
            NoiseFamily::BivariateGaussian { covariance: c } => {
                let (p, _) = precision(c);
                [p[0][0] * y[0] + p[0][1] * y[1], p[1][0] * y[0] + p[1][1] * y[1]]
            }
            NoiseFamily::Laplace { scale } => {
                let s = if y[0] > 0.0 {
                    1.0
                } else if y[0] < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                [s / scale, 0.0]
            }
            NoiseFamily::Logistic { scale } => [(y[0] / (2.0 * scale)).tanh() / scale, 0.0],
            NoiseFamily::CosineBump => {
                if y[0].abs() < 1.0 {
                    [PI * (0.5 * PI * y[0]).tan(), 0.0]
                } else {
                    [0.0, 0.0]
                }
            }
            NoiseFamily::Uniform { .. } => [0.0, 0.0],
        }
    }

    /// 𝓘_ε in closed form, where the family has one.
    pub fn analytic_fisher(&self) -> Option<DMatrix<f64>> {
        let s = |v: f64| Some(DMatrix::from_element(1, 1, v));
        match self.family {
            NoiseFamily::Gaussian { variance } => s(1.0 / variance),
            NoiseFamily::Laplace { scale } => s(1.0 / (scale * scale)),
            NoiseFamily::Logistic { scale } => s(1.0 / (3.0 * scale * scale)),
            NoiseFamily::CosineBump => s(PI * PI),
            NoiseFamily::BivariateGaussian { covariance: c } => {
                let (p, _) = precision(c);
                Some(DMatrix::from_row_slice(2, 2, &[p[0][0], p[0][1], p[1][0], p[1][1]]))
            }
            NoiseFamily::Uniform { .. } => None,
        }
    }

    /// Variance of each coordinate, in closed form.
    pub fn marginal_variance(&self) -> Vec<f64> {
        match self.family {
            NoiseFamily::Gaussian { variance } => vec![variance],
            NoiseFamily::BivariateGaussian { covariance: c } => vec![c[0][0], c[1][1]],
            NoiseFamily::Laplace { scale } => vec![2.0 * scale * scale],
            NoiseFamily::Logistic { scale } => vec![PI * PI * scale * scale / 3.0],
            NoiseFamily::CosineBump => vec![1.0 / 3.0 - 2.0 / (PI * PI)],
            NoiseFamily::Uniform { lower, upper } => vec![(upper - lower).powi(2) / 12.0],
        }
    }

    /// Integrates `f` against dy over the quadrature domain, doubling panels
    /// until successive values agree to `rtol`.
    fn integrate<const N: usize>(&self, rtol: f64, f: impl Fn(&[f64]) -> [f64; N]) -> Result<[f64; N]> {
        let domain = self.domain();
        let mut prev: Option<[f64; N]> = None;
        let (start, stop) = if self.dim() == 1 { (8, 4096) } else { (8, 256) };
        let mut panels = start;
        while panels <= stop {
            let cur = if self.dim() == 1 {
                let mut cuts = vec![domain[0].0];
                cuts.extend(self.breakpoints().into_iter().filter(|b| *b > domain[0].0 && *b < domain[0].1));
                cuts.push(domain[0].1);
                let mut acc = [0.0; N];
                for w in cuts.windows(2) {
                    let h = (w[1] - w[0]) / panels as f64;
                    for p in 0..panels {
                        let lo = w[0] + p as f64 * h;
                        for (x, wt) in gl20().mapped(lo, lo + h) {
                            let v = f(&[x]);
                            for i in 0..N {
                                acc[i] += wt * v[i];
                            }
                        }
                    }
                }
                acc
            } else {
                let (a0, a1) = (domain[0], domain[1]);
                let h0 = (a0.1 - a0.0) / panels as f64;
                let h1 = (a1.1 - a1.0) / panels as f64;
                let mut acc = [0.0; N];
                for p in 0..panels {
                    let lo0 = a0.0 + p as f64 * h0;
                    for (x0, w0) in gl20().mapped(lo0, lo0 + h0) {
                        for q in 0..panels {
                            let lo1 = a1.0 + q as f64 * h1;
                            for (x1, w1) in gl20().mapped(lo1, lo1 + h1) {
                                let v = f(&[x0, x1]);
                                for i in 0..N {
                                    acc[i] += w0 * w1 * v[i];
                                }
                            }
                        }
                    }
                }
                acc
            };
            if let Some(p) = prev {
                let scale = cur.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
                let diff = cur.iter().zip(&p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                if diff <= rtol * scale || scale == 1e-300 {
                    return Ok(cur);
                }
            }
            prev = Some(cur);
            panels *= 2;
        }
        Err(Error::Quadrature(format!("{:?}: no agreement to {rtol:e} after refinement", self.family)))
    }

    /// Mass and mean of q by quadrature.
    pub fn check_invariants(&self) -> Result<InvariantReport> {
        let v = self.integrate(1e-12, |y| {
            let q = self.density(y);
            [q, y[0] * q, if y.len() > 1 { y[1] * q } else { 0.0 }]
        })?;
        let mean: Vec<f64> = v[1..1 + self.dim()].to_vec();
        let ok = (v[0] - 1.0).abs() < 1e-8 && mean.iter().all(|m| m.abs() < 1e-8);
        Ok(InvariantReport { mass: v[0], mean, ok })
    }

    /// 𝓘_ε = 4 ∫ ∇√q (∇√q)ᵀ dy.
    pub fn fisher_matrix(&self) -> Result<FisherMatrix> {
        let v = self.integrate(1e-13, |y| {
            let g = self.sqrt_grad(y);
            [4.0 * g[0] * g[0], 4.0 * g[0] * g[1], 4.0 * g[1] * g[1]]
        })?;
        let m = if self.dim() == 1 {
            DMatrix::from_element(1, 1, v[0])
        } else {
            DMatrix::from_row_slice(2, 2, &[v[0], v[1], v[1], v[2]])
        };
        FisherMatrix::from_matrix(m)
    }

    /// Monte Carlo estimate of 𝔼[score scoreᵀ] with entrywise standard errors.
    pub fn fisher_monte_carlo(&self, rng: &mut Rng, n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let p = self.dim();
        let ys = self.sample(rng, n);
        let mut sum = DMatrix::<f64>::zeros(p, p);
        let mut sum2 = DMatrix::<f64>::zeros(p, p);
        for y in ys.chunks(p) {
            let s = self.score(y);
            for i in 0..p {
                for j in 0..p {
                    let v = s[i] * s[j];
                    sum[(i, j)] += v;
                    sum2[(i, j)] += v * v;
                }
            }
        }
        let nf = n as f64;
        let mean: DMatrix<f64> = &sum / nf;
        let se = DMatrix::from_fn(p, p, |i, j| -> f64 { ((sum2[(i, j)] / nf - mean[(i, j)].powi(2)) / nf).max(0.0).sqrt() });
        (mean, se)
    }

    /// `n` i.i.d. draws, flattened row-major (n × p).
    pub fn sample(&self, rng: &mut Rng, n: usize) -> Vec<f64> {
        match &self.sampler {
            Sampler::Table(t) => (0..n).map(|_| t.quantile(rng.random::<f64>())).collect(),
            Sampler::Cholesky(l) => {
                let mut out = Vec::with_capacity(2 * n);
                for _ in 0..n {
                    let z0: f64 = rng.sample(StandardNormal);
                    let z1: f64 = rng.sample(StandardNormal);
                    out.push(l[0][0] * z0);
                    out.push(l[1][0] * z0 + l[1][1] * z1);
                }
                out
            }
        }
    }

    /// Checks that √q ∈ H¹: difference quotients of √q must stay bounded
    /// under refinement and agree with the supplied gradient.
    pub fn sqrt_density_h1_check(&self) -> Result<H1Report> {
        let h1_energy = self.integrate(1e-12, |y| {
            let g = self.sqrt_grad(y);
            [g[0] * g[0] + g[1] * g[1]]
        })?[0];
        let domain = self.domain();
        let ext: Vec<(f64, f64)> = domain
            .iter()
            .map(|&(a, b)| {
                let m = 0.0625 * (b - a);
                (a - m, b + m)
            })
            .collect();
        let levels: Vec<usize> = if self.dim() == 1 { (10..=14).collect() } else { (6..=8).collect() };
        let mut fd_energy = Vec::new();
        for lv in levels {
            let n = 1usize << lv;
            let energy = if self.dim() == 1 {
                let (a, b) = ext[0];
                let h = (b - a) / n as f64;
                // odd offset keeps grid points off symmetric kinks
                let s: Vec<f64> =
                    (0..=n).map(|i| self.density(&[a + (i as f64 + 0.1) * h]).sqrt()).collect();
                s.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() / h
            } else {
                let (h0, h1) = ((ext[0].1 - ext[0].0) / n as f64, (ext[1].1 - ext[1].0) / n as f64);
                let at = |i: usize, j: usize| {
                    self.density(&[ext[0].0 + (i as f64 + 0.1) * h0, ext[1].0 + (j as f64 + 0.1) * h1]).sqrt()
                };
                let mut e = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        let c = at(i, j);
                        e += (at(i + 1, j) - c).powi(2) * h1 / h0 + (at(i, j + 1) - c).powi(2) * h0 / h1;
                    }
                }
                e
            };
            fd_energy.push(FdLevel { spacing: (ext[0].1 - ext[0].0) / n as f64, energy });
        }
        // probe the zero set
        let mut zero_set: f64 = 0.0;
        let probes = if self.dim() == 1 { 4097 } else { 129 };
        let pt = |i: usize, ax: usize| ext[ax].0 + (ext[ax].1 - ext[ax].0) * i as f64 / (probes - 1) as f64;
        if self.dim() == 1 {
            for i in 0..probes {
                let y = [pt(i, 0)];
                if self.density(&y) == 0.0 {
                    zero_set = zero_set.max(self.sqrt_grad(&y)[0].abs());
                }
            }
        } else {
            for i in 0..probes {
                for j in 0..probes {
                    let y = [pt(i, 0), pt(j, 1)];
                    if self.density(&y) == 0.0 {
                        let g = self.sqrt_grad(&y);
                        zero_set = zero_set.max(g[0].hypot(g[1]));
                    }
                }
            }
        }
        let last = fd_energy.last().unwrap().energy;
        let prev = fd_energy[fd_energy.len() - 2].energy;
        let mut reason = None;
        if !h1_energy.is_finite() || !last.is_finite() {
            reason = Some("infinite H¹ energy".to_string());
        } else if last > 1.5 * prev {
            reason = Some(format!(
                "difference-quotient energy grows under refinement ({prev:.4e} → {last:.4e}): √q has a jump"
            ));
        } else if (last - h1_energy).abs() > 1e-2 * h1_energy.max(1e-300) {
            reason = Some(format!(
                "supplied gradient energy {h1_energy:.6e} disagrees with difference quotients {last:.6e}"
            ));
        } else if zero_set > 0.0 {
            reason = Some(format!("gradient nonzero on the zero set ({zero_set:.3e})"));
        }
        Ok(H1Report { h1_energy, fd_energy, zero_set_consistency: zero_set, rejected: reason.is_some(), reason })
    }
}

fn precision(c: [[f64; 2]; 2]) -> ([[f64; 2]; 2], f64) {
    let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
    ([[c[1][1] / det, -c[0][1] / det], [-c[1][0] / det, c[0][0] / det]], det)
}

fn quad2(p: &[[f64; 2]; 2], y: &[f64]) -> f64 {
    y[0] * (p[0][0] * y[0] + p[0][1] * y[1]) + y[1] * (p[1][0] * y[0] + p[1][1] * y[1])
}

fn density1(f: &NoiseFamily, y: f64) -> f64 {
    match *f {
        NoiseFamily::Gaussian { variance } => (-0.5 * y * y / variance).exp() / (2.0 * PI * variance).sqrt(),
        NoiseFamily::Laplace { scale } => (-y.abs() / scale).exp() / (2.0 * scale),
        NoiseFamily::Logistic { scale } => {
            let z = (-y.abs() / scale).exp();
            z / (scale * (1.0 + z).powi(2))
        }
        NoiseFamily::CosineBump => {
            if y.abs() <= 1.0 {
                (0.5 * PI * y).cos().powi(2)
            } else {
                0.0
            }
        }
        NoiseFamily::Uniform { lower, upper } => {
            if (lower..=upper).contains(&y) {
                1.0 / (upper - lower)
            } else {
                0.0
            }
        }
        NoiseFamily::BivariateGaussian { .. } => unreachable!("scalar density of a bivariate family"),
    }
}

fn sqrt_grad1(f: &NoiseFamily, y: f64) -> f64 {
    match *f {
        NoiseFamily::Gaussian { variance } => -0.5 * y / variance * density1(f, y).sqrt(),
        NoiseFamily::Laplace { scale } => {
            if y == 0.0 {
                0.0
            } else {
                -0.5 * y.signum() / scale * density1(f, y).sqrt()
            }
        }
        NoiseFamily::Logistic { scale } => -0.5 * (y / (2.0 * scale)).tanh() / scale * density1(f, y).sqrt(),
        NoiseFamily::CosineBump => {
            if y.abs() < 1.0 {
                -0.5 * PI * (0.5 * PI * y).sin()
            } else {
                0.0
            }
        }
        NoiseFamily::Uniform { .. } => 0.0,
        NoiseFamily::BivariateGaussian { .. } => unreachable!(),
    }
}

fn cdf1(f: &NoiseFamily, y: f64) -> f64 {
    match *f {
        NoiseFamily::Gaussian { variance } => Normal::new(0.0, variance.sqrt()).unwrap().cdf(y),
        NoiseFamily::Laplace { scale } => {
            if y < 0.0 {
                0.5 * (y / scale).exp()
            } else {
                1.0 - 0.5 * (-y / scale).exp()
            }
        }
        NoiseFamily::Logistic { scale } => 1.0 / (1.0 + (-y / scale).exp()),
        NoiseFamily::CosineBump => {
            let y = y.clamp(-1.0, 1.0);
            0.5 * (y + 1.0) + (PI * y).sin() / (2.0 * PI)
        }
        NoiseFamily::Uniform { lower, upper } => ((y - lower) / (upper - lower)).clamp(0.0, 1.0),
        NoiseFamily::BivariateGaussian { .. } => unreachable!(),
    }
}
