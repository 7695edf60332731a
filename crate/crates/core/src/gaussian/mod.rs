//! The efficient limiting Gaussian G ~ N(0, M⁻¹) in eigen coordinates,
//! 𝒟^{−β} support diagnostics, and Monte Carlo pushforwards through the
//! trajectory and Navier-Stokes nonlinearity derivatives.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::forward::{space_time_gram, ModelKind, SpaceTimeField};
use crate::infoop::{Assembly, InformationMatrix};
use crate::rng;
use crate::spectral::{EigenSystem, FourierCoeffs, TorusGrid};
use crate::stats::{ls_slope, mean_var};

/// Relative increment below which a moment trace counts as a plateau.
pub const PLATEAU_TOL: f64 = 0.02;

/// (κ, α) of the shipped models: κ = 1 throughout, α = d/2 on the full
/// scale and α = 1 on the divergence-free scale.
pub fn scale_exponents(kind: ModelKind, dim: usize) -> (f64, f64) {
    match kind {
        ModelKind::Ns => (1.0, 1.0),
        ModelKind::Heat | ModelKind::Rd => (1.0, dim as f64 / 2.0),
    }
}

/// m draws of G in the first K eigenvectors; sample i comes from stream i of
/// the seed, so the batch does not depend on the worker count.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSampleBatch {
    pub k: usize,
    pub m: usize,
    pub seed: u64,
    pub samples: Vec<Vec<f64>>,
}

impl GaussianSampleBatch {
    pub fn empirical_covariance(&self) -> DMatrix<f64> {
        let mut c = DMatrix::zeros(self.k, self.k);
        for s in &self.samples {
            let v = DVector::from_column_slice(s);
            c += &v * v.transpose();
        }
        c / self.m as f64
    }

    /// m × K row-major matrix.
    pub fn to_row_major(&self) -> Vec<f64> {
        self.samples.iter().flatten().copied().collect()
    }
}

/// G = L⁻ᵀz with L Lᵀ = M and z standard normal.
pub fn sample_efficient_gaussian(info: &InformationMatrix, m: usize, seed: u64) -> Result<GaussianSampleBatch> {
    if m == 0 {
        return invalid("need at least one sample");
    }
    let k = info.dim();
    let l = info.cholesky_factor();
    let samples = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, i as u64);
            let z = DVector::from_fn(k, |_, _| StandardNormal.sample(&mut r));
            let g = l.tr_solve_lower_triangular(&z).expect("Cholesky factor has a positive diagonal");
            g.iter().copied().collect()
        })
        .collect();
    Ok(GaussianSampleBatch { k, m, seed, samples })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentLevel {
    #[serde(rename = "K")]
    pub k: usize,
    /// E‖G_K‖²_{𝒟^{−β}} = Σ_{j<K} τ_j^{−β} (M_K⁻¹)_jj
    pub moment: f64,
    /// Relative change from the previous K of the grid.
    pub increment: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentCheck {
    #[serde(rename = "K")]
    pub k: usize,
    pub m: usize,
    pub seed: u64,
    pub mean: f64,
    pub stderr: f64,
    pub exact: f64,
    /// exact(K_max) − exact(K): truncation bias of the MC figure.
    pub tail_estimate: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupportEntry {
    pub beta: f64,
    /// β > κ + α
    pub predicted_convergent: bool,
    pub levels: Vec<MomentLevel>,
    /// Log-log slope of the moment trace against K.
    pub growth_exponent: f64,
    /// (κ + α − β)/α when β < κ + α.
    pub predicted_exponent: Option<f64>,
    /// Last relative increment below [`PLATEAU_TOL`].
    pub plateau: bool,
    pub mc: Option<MomentCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupportReport {
    pub kappa: f64,
    pub alpha: f64,
    pub threshold: f64,
    pub entries: Vec<SupportEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSpec {
    #[serde(rename = "K")]
    pub k: usize,
    pub m: usize,
    pub seed: u64,
}

/// Second moments of G_K in 𝒟^{−β} along `k_grid`, read off the leading
/// blocks of one factorization at the largest K.
pub fn support_diagnostic(
    info: &InformationMatrix,
    es: &EigenSystem,
    betas: &[f64],
    k_grid: &[usize],
    kappa: f64,
    alpha: f64,
    mc: Option<McSpec>,
) -> Result<SupportReport> {
    if betas.is_empty() || k_grid.is_empty() {
        return invalid("β list and K grid must be nonempty");
    }
    if k_grid.windows(2).any(|w| w[1] <= w[0]) || k_grid[0] == 0 {
        return invalid("K grid must be strictly increasing and positive");
    }
    let kmax = *k_grid.last().unwrap();
    if kmax > info.dim() || kmax > es.len() {
        return invalid(format!("K grid reaches {kmax}, the information matrix has {}", info.dim()));
    }
    if let Some(spec) = mc {
        if spec.k == 0 || spec.k > kmax || spec.m < 2 {
            return invalid("MC check needs 0 < K ≤ max grid K and m ≥ 2");
        }
    }
    let linv = info.inverse_factor();
    let diags: Vec<Vec<f64>> = k_grid.iter().map(|&k| InformationMatrix::inverse_diagonal_with(&linv, k)).collect();
    let tau = es.weights();
    let moment = |diag: &[f64], beta: f64| -> f64 { diag.iter().zip(&tau).map(|(d, t)| t.powf(-beta) * d).sum() };
    let batch = match mc {
        Some(spec) => Some(sample_efficient_gaussian(&info.leading(spec.k)?, spec.m, spec.seed)?),
        None => None,
    };
    let threshold = kappa + alpha;
    let entries = betas
        .iter()
        .map(|&beta| {
            let mut levels: Vec<MomentLevel> = Vec::with_capacity(k_grid.len());
            for (&k, d) in k_grid.iter().zip(&diags) {
                let v = moment(d, beta);
                let increment = levels.last().map(|p| (v - p.moment) / p.moment);
                levels.push(MomentLevel { k, moment: v, increment });
            }
            let pts: Vec<(f64, f64)> = levels.iter().map(|l| ((l.k as f64).ln(), l.moment.ln())).collect();
            let growth_exponent = if pts.len() >= 2 { ls_slope(&pts) } else { 0.0 };
            let plateau = levels.last().and_then(|l| l.increment).is_some_and(|i| i.abs() < PLATEAU_TOL);
            let mc = match (&batch, mc) {
                (Some(b), Some(spec)) => {
                    let vals: Vec<f64> = b
                        .samples
                        .iter()
                        .map(|g| g.iter().zip(&tau).map(|(x, t)| t.powf(-beta) * x * x).sum())
                        .collect();
                    let (mean, var) = mean_var(&vals);
                    let stderr = (var / vals.len() as f64).sqrt();
                    let exact = moment(&InformationMatrix::inverse_diagonal_with(&linv, spec.k), beta);
                    let tail_estimate = levels.last().unwrap().moment - exact;
                    Some(MomentCheck {
                        k: spec.k,
                        m: spec.m,
                        seed: spec.seed,
                        mean,
                        stderr,
                        exact,
                        tail_estimate,
                        pass: (mean - exact).abs() <= 3.0 * stderr,
                    })
                }
                _ => None,
            };
            SupportEntry {
                beta,
                predicted_convergent: beta > threshold,
                levels,
                growth_exponent,
                predicted_exponent: (beta < threshold).then(|| (threshold - beta) / alpha),
                plateau,
                mc,
            }
        })
        .collect();
    Ok(SupportReport { kappa, alpha, threshold, entries })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Functional {
    /// Ḟ[h] = 𝕀_{θ₀}[h] on [t0, t1]
    PositiveTimeTrajectory,
    /// Ḟ[h] = (U·∇)u_{θ₀} + (u_{θ₀}·∇)U with U = 𝕀_{θ₀}[h]
    NsNonlinearity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossNorm {
    /// sup over [t0, t1] × 𝕋^d of the Euclidean norm
    Sup,
    /// L²([t0, t1] × 𝕋^d)
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Loss {
    pub norm: LossNorm,
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PushforwardReport {
    pub functional: Functional,
    pub loss: Loss,
    pub t0: f64,
    pub t1: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub m: usize,
    /// MC mean of ‖Ḟ[G]‖^s
    pub estimate: f64,
    pub stderr: f64,
    /// E‖Ḟ[G]‖² = tr(M⁻¹Q) for the squared L² loss.
    pub exact: Option<f64>,
}

/// 𝔼‖Ḟ[G]‖^s by Monte Carlo. Ḟ is linear, so Ḟ[g] = Σ_j g_j Ḟ[e_j] and
/// the L² loss is (gᵀQg)^{s/2} with Q the Gram matrix of the Ḟ[e_j].
pub fn functional_pushforward_bound(
    assembly: &Assembly,
    batch: &GaussianSampleBatch,
    functional: Functional,
    loss: Loss,
    t0: f64,
    t1: f64,
) -> Result<PushforwardReport> {
    let horizon = assembly.linearization.model().horizon();
    if !(t0 > 0.0) {
        return invalid("pushforward functionals are defined at strictly positive times (t0 > 0)");
    }
    if !(t0 < t1 && t1 <= horizon) {
        return invalid(format!("window [{t0}, {t1}] not inside (0, {horizon}]"));
    }
    if !(loss.power >= 0.0 && loss.power.is_finite()) {
        return invalid(format!("loss power {} must be finite and nonnegative", loss.power));
    }
    let k = batch.k;
    if k > assembly.k() {
        return invalid(format!("samples have {k} coordinates, the assembly {}", assembly.k()));
    }
    if functional == Functional::NsNonlinearity && assembly.linearization.model().kind() != ModelKind::Ns {
        return invalid("the nonlinearity functional needs a Navier-Stokes model");
    }
    let cols: Vec<&SpaceTimeField> = assembly.columns[..k].iter().collect();
    let q = match (functional, loss.norm) {
        (Functional::PositiveTimeTrajectory, LossNorm::L2) => Some(space_time_gram(&cols, &vec![1.0; cols[0].eigensystem().len()], t0, t1)?),
        (_, LossNorm::L2) => Some(PointValues::new(assembly, &cols, functional, t0, t1)?.gram()),
        _ => None,
    };
    let values: Vec<f64> = if loss.power == 0.0 {
        vec![1.0; batch.m]
    } else if let Some(q) = &q {
        batch
            .samples
            .iter()
            .map(|g| {
                let v = DVector::from_column_slice(g);
                v.dot(&(q * &v)).max(0.0).powf(loss.power / 2.0)
            })
            .collect()
    } else {
        let pv = PointValues::new(assembly, &cols, functional, t0, t1)?;
        batch.samples.par_iter().map(|g| pv.sup(g).powf(loss.power)).collect()
    };
    let (estimate, var) = mean_var(&values);
    let exact = match (&q, loss.power == 2.0) {
        (Some(q), true) => {
            let minv = assembly.info.leading(k)?.inverse();
            Some(minv.component_mul(q).sum())
        }
        _ => None,
    };
    Ok(PushforwardReport {
        functional,
        loss,
        t0,
        t1,
        k,
        m: batch.m,
        estimate,
        stderr: (var / batch.m as f64).sqrt(),
        exact,
    })
}

/// Ḟ[e_j] on a space-time point set: Simpson nodes in time (two panels per
/// solver step) times a grid resolving the product band in space.
struct PointValues {
    /// one (points·p) × K block per time node
    blocks: Vec<DMatrix<f64>>,
    weights: Vec<f64>,
    points: usize,
    components: usize,
}

impl PointValues {
    fn new(
        assembly: &Assembly,
        cols: &[&SpaceTimeField],
        functional: Functional,
        t0: f64,
        t1: f64,
    ) -> Result<Self> {
        let es = cols[0].eigensystem().clone();
        let h = cols[0].dt();
        let panels = 2 * ((t1 - t0) / h).ceil().max(1.0) as usize;
        let dt = (t1 - t0) / panels as f64;
        let times: Vec<f64> = (0..=panels).map(|i| t0 + i as f64 * dt).collect();
        let weights: Vec<f64> = (0..=panels)
            .map(|i| {
                let c = if i == 0 || i == panels { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                c * dt / 3.0
            })
            .collect();
        let p = es.components();
        let grid = TorusGrid::new(es.dim(), 4 * es.kmax() + 4, p)?;
        let base = assembly.linearization.base();
        let blocks = times
            .par_iter()
            .map(|&t| -> Result<DMatrix<f64>> {
                let base_grad = match functional {
                    Functional::NsNonlinearity => Some(values_and_gradient(&es, &grid, &base.coords_at(t)?)?),
                    Functional::PositiveTimeTrajectory => None,
                };
                let mut block = DMatrix::zeros(grid.points() * p, cols.len());
                for (j, f) in cols.iter().enumerate() {
                    let c = f.coords_at(t)?;
                    let col = match &base_grad {
                        None => grid.inverse(&es.to_fourier(&c))?,
                        Some(b) => advective_derivative(b, &values_and_gradient(&es, &grid, &c)?, grid.points()),
                    };
                    block.set_column(j, &DVector::from_vec(col));
                }
                Ok(block)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { blocks, weights, points: grid.points(), components: p })
    }

    fn gram(&self) -> DMatrix<f64> {
        let k = self.blocks[0].ncols();
        let mut g = DMatrix::zeros(k, k);
        for (b, w) in self.blocks.iter().zip(&self.weights) {
            g += b.transpose() * b * (w / self.points as f64);
        }
        g
    }

    fn sup(&self, coeffs: &[f64]) -> f64 {
        let v = DVector::from_column_slice(coeffs);
        let mut best = 0.0f64;
        for b in &self.blocks {
            let vals = b * &v;
            for i in 0..self.points {
                let s: f64 = (0..self.components).map(|c| vals[c * self.points + i].powi(2)).sum();
                best = best.max(s.sqrt());
            }
        }
        best
    }
}

/// Grid values of a velocity field and its two partial derivatives,
/// component-major.
fn values_and_gradient(es: &EigenSystem, grid: &TorusGrid, coords: &[f64]) -> Result<[Vec<f64>; 3]> {
    let f = es.to_fourier(coords);
    let u = grid.inverse(&f)?;
    let nk = FourierCoeffs::box_len(es.dim(), es.kmax());
    let deriv = |axis: usize| -> Result<Vec<f64>> {
        let mut d = f.clone();
        for (i, c) in d.data_mut().iter_mut().enumerate() {
            let k = FourierCoeffs::box_wavevector(es.dim(), es.kmax(), i % nk);
            *c *= Complex64::new(0.0, 2.0 * PI * k[axis] as f64);
        }
        grid.inverse(&d)
    };
    Ok([u, deriv(0)?, deriv(1)?])
}

/// (U·∇)u + (u·∇)U on the grid.
fn advective_derivative(base: &[Vec<f64>; 3], tangent: &[Vec<f64>; 3], n: usize) -> Vec<f64> {
    let [u, ux, uy] = base;
    let [v, vx, vy] = tangent;
    let mut out = vec![0.0; 2 * n];
    for c in 0..2 {
        for i in 0..n {
            let (a, b) = (c * n + i, i);
            out[a] = v[b] * ux[a] + v[n + b] * uy[a] + u[b] * vx[a] + u[n + b] * vy[a];
        }
    }
    out
}
