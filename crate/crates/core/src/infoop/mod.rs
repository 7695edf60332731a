//! Galerkin realization of the information operator 𝕀*𝓘_ε𝕀 in the first K
//! eigenvectors: L²_λ Gram matrices, the LAN and 𝕊 norms, H-orthonormal
//! bases and the two-sided norm-equivalence diagnostic.

mod design;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::forward::{ForwardModel, Linearization, SpaceTimeField};
use crate::noise::FisherMatrix;
use crate::rng;
use crate::spectral::EigenSystem;
pub use design::DesignMeasure;

/// Refuse factorizations beyond this condition estimate.
pub const CONDITION_LIMIT: f64 = 1e12;

/// G_ij = ⟨F_i, 𝓘 F_j⟩_{L²_λ} restricted to [t0, t1] (𝓘 = identity when
/// `fisher` is `None`).
pub fn l2lambda_gram_window(
    fields: &[&SpaceTimeField],
    design: &DesignMeasure,
    fisher: Option<&FisherMatrix>,
    t0: f64,
    t1: f64,
) -> Result<DMatrix<f64>> {
    let Some(first) = fields.first() else {
        return Ok(DMatrix::zeros(0, 0));
    };
    let p = first.eigensystem().components();
    let metric = match fisher {
        None => DMatrix::identity(p, p),
        Some(f) if f.dim() == p => f.matrix.clone(),
        Some(f) => return invalid(format!("noise has dimension {}, the field has {p} components", f.dim())),
    };
    design.gram(fields, &metric, t0, t1)
}

pub fn l2lambda_gram(fields: &[&SpaceTimeField], design: &DesignMeasure, fisher: Option<&FisherMatrix>) -> Result<DMatrix<f64>> {
    match fields.first() {
        None => Ok(DMatrix::zeros(0, 0)),
        Some(f) => l2lambda_gram_window(fields, design, fisher, 0.0, f.horizon()),
    }
}

/// (∫∫ |F|² λ dt dx)^{1/2}.
pub fn l2lambda_norm(field: &SpaceTimeField, design: &DesignMeasure) -> Result<f64> {
    Ok(l2lambda_gram(&[field], design, None)?[(0, 0)].max(0.0).sqrt())
}

/// K×K Galerkin matrix of 𝕀*𝓘_ε𝕀 with its Cholesky factor.
#[derive(Debug, Clone)]
pub struct InformationMatrix {
    matrix: DMatrix<f64>,
    chol: DMatrix<f64>,
    condition: f64,
}

impl InformationMatrix {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let k = matrix.nrows();
        if k == 0 || matrix.ncols() != k {
            return invalid("information matrix must be square and nonempty");
        }
        let scale = matrix.abs().max();
        let asym = (&matrix - matrix.transpose()).abs().max();
        if asym > 1e-10 * scale {
            return Err(Error::Singular(format!("matrix not symmetric (defect {asym:.3e})")));
        }
        let sym = (&matrix + matrix.transpose()) * 0.5;
        let eig = sym.clone().symmetric_eigen();
        let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
        let chol = sym.clone().cholesky().ok_or_else(|| {
            Error::Singular(format!(
                "Cholesky failed at K = {k} (eigenvalues in [{lo:.3e}, {hi:.3e}]): the linearization is not injective at this truncation"
            ))
        })?;
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if condition > CONDITION_LIMIT {
            return Err(Error::IllConditioned { cond: condition, limit: CONDITION_LIMIT });
        }
        Ok(Self { matrix: sym, chol: chol.l(), condition })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Lower-triangular L with L Lᵀ = M.
    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// The leading k×k block (the information matrix at truncation k).
    pub fn leading(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.dim() {
            return invalid(format!("leading block {k} outside 1..={}", self.dim()));
        }
        Self::new(self.matrix.view((0, 0), (k, k)).into_owned())
    }

    fn padded(&self, v: &[f64], what: &str) -> Result<DVector<f64>> {
        let k = self.dim();
        if v.len() > k && v[k..].iter().any(|x| *x != 0.0) {
            return invalid(format!("{what} has components beyond the first {k} basis vectors"));
        }
        let mut out = DVector::zeros(k);
        for (o, x) in out.iter_mut().zip(v) {
            *o = *x;
        }
        Ok(out)
    }

    /// y = L⁻¹ v.
    fn forward_solve(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol.solve_lower_triangular(v).expect("Cholesky factor has a positive diagonal")
    }

    /// M⁻¹ ψ.
    pub fn solve(&self, psi: &[f64]) -> Result<Vec<f64>> {
        let v = self.padded(psi, "target")?;
        let y = self.forward_solve(&v);
        let x = self.chol.tr_solve_lower_triangular(&y).expect("Cholesky factor has a positive diagonal");
        Ok(x.iter().copied().collect())
    }

    /// ‖h‖_LAN = (hᵀ M h)^{1/2}.
    pub fn lan_norm(&self, h: &[f64]) -> Result<f64> {
        let v = self.padded(h, "direction")?;
        Ok(v.dot(&(&self.matrix * &v)).max(0.0).sqrt())
    }

    /// ψᵀ M⁻¹ ψ.
    pub fn s_norm_sq(&self, psi: &[f64]) -> Result<f64> {
        Ok(*self.s_norm_trace(psi)?.last().unwrap())
    }

    /// ψ_{K′}ᵀ M_{K′}⁻¹ ψ_{K′} for K′ = 1..=K. Leading blocks of L factor
    /// the leading blocks of M, so these are partial sums of |L⁻¹ψ|² and
    /// the trace is nondecreasing by construction.
    pub fn s_norm_trace(&self, psi: &[f64]) -> Result<Vec<f64>> {
        let y = self.forward_solve(&self.padded(psi, "target")?);
        let mut acc = 0.0;
        Ok(y.iter().map(|v| {
            acc += v * v;
            acc
        })
        .collect())
    }

    /// L⁻¹, from which every leading-block inverse can be read off.
    pub fn inverse_factor(&self) -> DMatrix<f64> {
        self.chol
            .solve_lower_triangular(&DMatrix::identity(self.dim(), self.dim()))
            .expect("Cholesky factor has a positive diagonal")
    }

    /// diag(M_k⁻¹) for the leading k×k block, using a precomputed L⁻¹.
    pub fn inverse_diagonal_with(linv: &DMatrix<f64>, k: usize) -> Vec<f64> {
        (0..k).map(|j| (j..k).map(|i| linv[(i, j)].powi(2)).sum()).collect()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let linv = self.inverse_factor();
        linv.transpose() * linv
    }
}

/// Information matrix together with the linearized basis flows it came from.
#[derive(Debug, Clone)]
pub struct Assembly {
    pub info: InformationMatrix,
    pub linearization: Linearization,
    /// 𝕀_{θ₀}[e_j], j < K
    pub columns: Vec<SpaceTimeField>,
    pub fisher: FisherMatrix,
    pub design: DesignMeasure,
}

impl Assembly {
    pub fn k(&self) -> usize {
        self.columns.len()
    }

    pub fn eigensystem(&self) -> &EigenSystem {
        self.linearization.model().eigensystem()
    }

    /// 𝕀_{θ₀}[h] for h in the span of the basis, by superposition.
    pub fn tangent(&self, h: &[f64]) -> Result<SpaceTimeField> {
        if h.len() > self.k() && h[self.k()..].iter().any(|v| *v != 0.0) {
            return invalid("direction outside the span of the basis");
        }
        let terms: Vec<(f64, &SpaceTimeField)> = h.iter().zip(&self.columns).map(|(c, f)| (*c, f)).collect();
        if terms.is_empty() {
            return invalid("empty direction");
        }
        SpaceTimeField::linear_combination(&terms)
    }
}

/// Smallest solver box whose first `k` modes are exactly the first `k`
/// eigenvectors of the infinite basis.
pub fn check_basis_resolved(es: &EigenSystem, k: usize) -> Result<()> {
    if k == 0 || k > es.len() {
        return invalid(format!("basis size {k} outside 1..={}", es.len()));
    }
    let w = es.mode(k - 1).wavevector;
    let r2 = (w[0] * w[0] + w[1] * w[1]) as usize;
    let km = es.kmax();
    if r2 > km * km {
        return invalid(format!(
            "first {k} eigenvectors need a wavenumber box of at least {} (have {km})",
            (r2 as f64).sqrt().ceil()
        ));
    }
    Ok(())
}

/// M_ij = ⟨𝕀e_i, 𝓘_ε 𝕀e_j⟩_{L²_λ}, one linearized solve per basis vector.
pub fn assemble_information_matrix(
    model: &ForwardModel,
    theta0: &[f64],
    fisher: &FisherMatrix,
    design: &DesignMeasure,
    k: usize,
) -> Result<Assembly> {
    let es = model.eigensystem();
    check_basis_resolved(es, k)?;
    design.validate(es.dim())?;
    let linearization = model.linearize(theta0)?;
    let columns = linearization.basis_columns(k)?;
    let refs: Vec<&SpaceTimeField> = columns.iter().collect();
    let m = l2lambda_gram(&refs, design, Some(fisher))?;
    let info = InformationMatrix::new(m)?;
    Ok(Assembly { info, linearization, columns, fisher: fisher.clone(), design: design.clone() })
}

/// Columns h_j (in the e-basis) with h_iᵀ M h_j = δ_ij.
#[derive(Debug, Clone)]
pub struct HOrthonormalBasis {
    pub coefficients: DMatrix<f64>,
    /// ‖HᵀMH − I‖_max
    pub residual: f64,
}

/// Modified Gram-Schmidt in the M inner product, with one
/// re-orthogonalization pass.
pub fn orthonormalize_h(m: &InformationMatrix) -> Result<HOrthonormalBasis> {
    let k = m.dim();
    let a = m.matrix();
    let mut h = DMatrix::<f64>::zeros(k, k);
    for j in 0..k {
        let mut v = DVector::<f64>::zeros(k);
        v[j] = 1.0;
        let start = a[(j, j)].sqrt();
        for _ in 0..2 {
            for i in 0..j {
                let hi = h.column(i).into_owned();
                let c = hi.dot(&(a * &v));
                v -= hi * c;
            }
        }
        let nrm = v.dot(&(a * &v)).max(0.0).sqrt();
        if !(nrm > 1e-12 * start) {
            return Err(Error::Singular(format!("rank lost at basis vector {j}")));
        }
        h.set_column(j, &(v / nrm));
    }
    let g = h.transpose() * a * &h;
    let residual = (g - DMatrix::identity(k, k)).abs().max();
    Ok(HOrthonormalBasis { coefficients: h, residual })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormEquivalenceLevel {
    #[serde(rename = "K")]
    pub k: usize,
    pub ratio_min: f64,
    pub ratio_max: f64,
    /// Extremal generalized eigenvalues of (G, 𝒟^{−κ}), square-rooted.
    pub bound_min: f64,
    pub bound_max: f64,
    pub cond: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormEquivalenceReport {
    pub kappa: f64,
    pub trials: usize,
    pub levels: Vec<NormEquivalenceLevel>,
}

/// Ratios ‖𝕀[h]‖_{L²_λ} / ‖h‖_{𝒟^{−κ}} over random directions in the first
/// K eigenvectors, for each K in `k_grid`.
pub fn norm_equivalence_diagnostic(
    columns: &[SpaceTimeField],
    design: &DesignMeasure,
    k_grid: &[usize],
    trials: usize,
    kappa: f64,
    seed: u64,
) -> Result<NormEquivalenceReport> {
    if trials < 10 {
        return invalid("need at least 10 trials");
    }
    let kmax = *k_grid.iter().max().ok_or_else(|| Error::InvalidArgument("empty K grid".into()))?;
    if kmax > columns.len() || k_grid.contains(&0) {
        return invalid(format!("K grid exceeds the {} assembled columns", columns.len()));
    }
    let es = columns[0].eigensystem().clone();
    let refs: Vec<&SpaceTimeField> = columns[..kmax].iter().collect();
    let g = l2lambda_gram(&refs, design, None)?;
    let tau = es.weights();
    let levels = k_grid
        .iter()
        .map(|&k| {
            let gk = g.view((0, 0), (k, k));
            let s = DVector::from_iterator(k, tau[..k].iter().map(|t| t.powf(kappa / 2.0)));
            let scaled = DMatrix::from_fn(k, k, |i, j| s[i] * gk[(i, j)] * s[j]);
            let ev = scaled.symmetric_eigen().eigenvalues;
            let (lo, hi) = (ev.min(), ev.max());
            let mut r = rng::stream(seed, k as u64);
            let mut ratios = Vec::with_capacity(trials);
            for _ in 0..trials {
                let z: DVector<f64> = DVector::from_fn(k, |_, _| r.sample(StandardNormal));
                let h = z.component_mul(&s) / z.norm();
                ratios.push(h.dot(&(gk * &h)).max(0.0).sqrt());
            }
            NormEquivalenceLevel {
                k,
                ratio_min: ratios.iter().copied().fold(f64::INFINITY, f64::min),
                ratio_max: ratios.iter().copied().fold(0.0, f64::max),
                bound_min: lo.max(0.0).sqrt(),
                bound_max: hi.max(0.0).sqrt(),
                cond: if lo > 0.0 { hi / lo } else { f64::INFINITY },
            }
        })
        .collect();
    Ok(NormEquivalenceReport { kappa, trials, levels })
}

#[cfg(test)]
mod tests;
