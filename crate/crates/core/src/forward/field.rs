use std::sync::Arc;

use nalgebra::{DMatrix, Matrix4};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::phi::phi0123;
use crate::quadrature::gl16;
use crate::spectral::{EigenSystem, FourierCoeffs};

/// Dense-output basis on one step: a(s) = Σ_p α_p B_p(s) with
/// B = (e^{−μs}, s φ1(−μs), s² φ2(−μs), 2 s³ φ3(−μs)).
pub fn dense_basis(mu: f64, s: f64) -> [f64; 4] {
    let p = phi0123(-mu * s);
    [p[0], s * p[1], s * s * p[2], 2.0 * s * s * s * p[3]]
}

/// W_pq = ∫_{s0}^{s1} B_p B_q ds / h^{p+q}, the scaled Gram matrix of the
/// dense-output basis; panels resolve the e^{−μs} layer.
pub fn time_gram(mu: f64, h: f64, s0: f64, s1: f64) -> Matrix4<f64> {
    let mut cuts = vec![s0];
    if mu * (s1 - s0) > 1.0 && mu > 0.0 {
        for k in 1..=30 {
            let c = k as f64 / mu;
            if c > s0 && c < s1 {
                cuts.push(c);
            }
        }
    }
    cuts.push(s1);
    let scale = [1.0, 1.0 / h, 1.0 / (h * h), 1.0 / (h * h * h)];
    let mut w = Matrix4::zeros();
    for pair in cuts.windows(2) {
        for (s, wt) in gl16().mapped(pair[0], pair[1]) {
            let b = dense_basis(mu, s);
            let b: [f64; 4] = std::array::from_fn(|i| b[i] * scale[i]);
            for p in 0..4 {
                for q in p..4 {
                    w[(p, q)] += wt * b[p] * b[q];
                }
            }
        }
    }
    for p in 0..4 {
        for q in 0..p {
            w[(p, q)] = w[(q, p)];
        }
    }
    w
}

/// R with RᵀR = W, from the symmetric eigendecomposition.
fn gram_root(w: &Matrix4<f64>) -> Matrix4<f64> {
    let eig = w.symmetric_eigen();
    let mut r = eig.eigenvectors.transpose();
    for i in 0..4 {
        let s = eig.eigenvalues[i].max(0.0).sqrt();
        for j in 0..4 {
            r[(i, j)] *= s;
        }
    }
    r
}

/// Time-indexed field on a uniform grid 0 = t_0 < … < t_M = T, stored in
/// eigen coordinates as the integrator's dense output on every step.
///
/// Only modes in `support` are stored; the rest are identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    es: Arc<EigenSystem>,
    rates: Arc<Vec<f64>>,
    horizon: f64,
    steps: usize,
    support: Vec<usize>,
    /// steps × support × [a_n, c0, c1, c2]
    poly: Vec<[f64; 4]>,
    last: Vec<f64>,
}

impl SpaceTimeField {
    pub(crate) fn from_dense(
        es: Arc<EigenSystem>,
        rates: Arc<Vec<f64>>,
        horizon: f64,
        steps: usize,
        poly: Vec<[f64; 4]>,
        last: Vec<f64>,
    ) -> Self {
        let n = es.len();
        debug_assert_eq!(poly.len(), steps * n);
        let support: Vec<usize> = (0..n)
            .filter(|&m| last[m] != 0.0 || (0..steps).any(|s| poly[s * n + m] != [0.0; 4]))
            .collect();
        let poly = if support.len() == n {
            poly
        } else {
            (0..steps).flat_map(|s| support.iter().map(move |&m| (s, m))).map(|(s, m)| poly[s * n + m]).collect()
        };
        let last = support.iter().map(|&m| last[m]).collect();
        Self { es, rates, horizon, steps, support, poly, last }
    }

    /// Rebuilds a field from dumped parts.
    pub fn from_parts(
        es: Arc<EigenSystem>,
        rates: Vec<f64>,
        horizon: f64,
        steps: usize,
        poly: Vec<[f64; 4]>,
        last: Vec<f64>,
    ) -> Result<Self> {
        if rates.len() != es.len() || poly.len() != steps * es.len() || last.len() != es.len() {
            return invalid("field parts have inconsistent lengths");
        }
        Ok(Self::from_dense(es, Arc::new(rates), horizon, steps, poly, last))
    }

    pub fn eigensystem(&self) -> &Arc<EigenSystem> {
        &self.es
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|i| i as f64 * self.dt()).collect()
    }

    /// Modes that are not identically zero.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    /// Dense-output coefficients of every mode on every step (zeros filled in).
    pub fn dense_poly(&self) -> Vec<[f64; 4]> {
        let n = self.es.len();
        let mut out = vec![[0.0; 4]; self.steps * n];
        let ns = self.support.len();
        for s in 0..self.steps {
            for (i, &m) in self.support.iter().enumerate() {
                out[s * n + m] = self.poly[s * ns + i];
            }
        }
        out
    }

    /// Eigen coordinates at time node `i`.
    pub fn node(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.es.len()];
        let ns = self.support.len();
        for (j, &m) in self.support.iter().enumerate() {
            out[m] = if i < self.steps { self.poly[i * ns + j][0] } else { self.last[j] };
        }
        out
    }

    pub fn snapshot(&self, i: usize) -> FourierCoeffs {
        self.es.to_fourier(&self.node(i))
    }

    fn locate(&self, t: f64) -> Result<(usize, f64)> {
        if !(0.0..=self.horizon * (1.0 + 1e-14)).contains(&t) {
            return invalid(format!("time {t} outside [0, {}]", self.horizon));
        }
        let h = self.dt();
        let n = ((t / h).floor() as usize).min(self.steps - 1);
        Ok((n, (t - n as f64 * h).max(0.0)))
    }

    /// Eigen coordinates at time t from the dense output; exact at nodes.
    pub fn coords_at(&self, t: f64) -> Result<Vec<f64>> {
        let (n, s) = self.locate(t)?;
        let mut out = vec![0.0; self.es.len()];
        if t >= self.horizon {
            return Ok(self.node(self.steps));
        }
        let ns = self.support.len();
        for (j, &m) in self.support.iter().enumerate() {
            let a = &self.poly[n * ns + j];
            if s == 0.0 {
                out[m] = a[0];
                continue;
            }
            let b = dense_basis(self.rates[m], s);
            out[m] = a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3];
        }
        Ok(out)
    }

    /// Field value at (t, x); one entry per component.
    pub fn evaluate(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.es.dim() {
            return invalid(format!("point has {} coordinates, torus has {}", x.len(), self.es.dim()));
        }
        let c = self.coords_at(t)?;
        let mut phi = vec![0.0; self.es.len()];
        self.es.mode_values(x, &mut phi);
        Ok(combine_modes(&self.es, &c, &phi))
    }

    /// Σ_i w_i F_i over fields sharing grid and rates.
    pub fn linear_combination(terms: &[(f64, &SpaceTimeField)]) -> Result<SpaceTimeField> {
        let first = terms.first().ok_or_else(|| Error::InvalidArgument("empty combination".into()))?.1;
        for (_, f) in terms {
            if f.es.len() != first.es.len()
                || f.steps != first.steps
                || f.horizon != first.horizon
                || f.rates != first.rates
            {
                return Err(Error::GridMismatch("fields live on different grids".into()));
            }
        }
        let n = first.es.len();
        let mut poly = vec![[0.0; 4]; first.steps * n];
        let mut last = vec![0.0; n];
        for (w, f) in terms {
            let ns = f.support.len();
            for s in 0..f.steps {
                for (j, &m) in f.support.iter().enumerate() {
                    let src = f.poly[s * ns + j];
                    let dst = &mut poly[s * n + m];
                    for p in 0..4 {
                        dst[p] += w * src[p];
                    }
                }
            }
            for (j, &m) in f.support.iter().enumerate() {
                last[m] += w * f.last[j];
            }
        }
        Ok(Self::from_dense(first.es.clone(), first.rates.clone(), first.horizon, first.steps, poly, last))
    }

    /// ∫_{t0}^{t1} ∫_Ω |F|² dx dt.
    pub fn norm_sq_window(&self, t0: f64, t1: f64) -> Result<f64> {
        let w = vec![1.0; self.es.len()];
        Ok(space_time_gram(&[self], &w, t0, t1)?[(0, 0)])
    }

    /// ∫_0^T ∫_Ω |F|² dx dt.
    pub fn norm_sq(&self) -> f64 {
        self.norm_sq_window(0.0, self.horizon).expect("full window is valid")
    }

    /// ∫_0^T ∫_Ω ⟨F, G⟩ dx dt.
    pub fn inner(&self, other: &SpaceTimeField) -> Result<f64> {
        let w = vec![1.0; self.es.len()];
        Ok(space_time_gram(&[self, other], &w, 0.0, self.horizon)?[(0, 1)])
    }
}

/// Σ_m c_m φ_m(x) n_m.
pub(crate) fn combine_modes(es: &EigenSystem, coords: &[f64], phi: &[f64]) -> Vec<f64> {
    let p = es.components();
    let mut out = vec![0.0; p];
    for ((m, c), f) in es.modes().iter().zip(coords).zip(phi) {
        let v = c * f;
        for (comp, o) in out.iter_mut().enumerate() {
            *o += v * m.direction[comp];
        }
    }
    out
}

/// G_ij = ∫_{t0}^{t1} Σ_m w_m F_i,m(t) F_j,m(t) dt, exact for the dense
/// output. `weights` holds one spatial weight per mode.
pub fn space_time_gram(fields: &[&SpaceTimeField], weights: &[f64], t0: f64, t1: f64) -> Result<DMatrix<f64>> {
    let k = fields.len();
    if k == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let f0 = fields[0];
    let n = f0.es.len();
    for f in fields {
        if f.es.len() != n || f.steps != f0.steps || f.horizon != f0.horizon || f.rates != f0.rates {
            return Err(Error::GridMismatch("fields live on different grids".into()));
        }
    }
    if !(0.0 <= t0 && t0 <= t1 && t1 <= f0.horizon * (1.0 + 1e-14)) {
        return invalid(format!("window [{t0}, {t1}] not inside [0, {}]", f0.horizon));
    }
    let h = f0.dt();
    let steps = f0.steps;
    let scale = [1.0, h, h * h, h * h * h];

    // fields owning each mode, with their position in that field's support
    let mut owners: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (i, f) in fields.iter().enumerate() {
        for (j, &m) in f.support.iter().enumerate() {
            owners[m].push((i, j));
        }
    }
    let roots = |s0: f64, s1: f64| -> Vec<Option<Matrix4<f64>>> {
        (0..n)
            .map(|m| {
                if owners[m].is_empty() || weights[m] == 0.0 {
                    None
                } else {
                    Some(gram_root(&time_gram(f0.rates[m], h, s0, s1)) * weights[m].abs().sqrt())
                }
            })
            .collect()
    };
    let signs: Vec<f64> = weights.iter().map(|w| w.signum()).collect();
    let full = roots(0.0, h);

    let first = ((t0 / h).floor() as usize).min(steps.saturating_sub(1));
    let end = ((t1 / h).ceil() as usize).clamp(first + 1, steps);
    let partial: Vec<(usize, Vec<Option<Matrix4<f64>>>)> = (first..end)
        .filter_map(|s| {
            let a = (t0 - s as f64 * h).max(0.0);
            let b = (t1 - s as f64 * h).min(h);
            if a <= 0.0 && b >= h * (1.0 - 1e-14) {
                None
            } else if b <= a {
                Some((s, vec![None; n]))
            } else {
                Some((s, roots(a, b)))
            }
        })
        .collect();

    let chunk = 16;
    let blocks: Vec<DMatrix<f64>> = (first..end)
        .collect::<Vec<_>>()
        .par_chunks(chunk)
        .map(|steps_chunk| {
            let mut g = DMatrix::zeros(k, k);
            let mut beta: Vec<[f64; 4]> = Vec::new();
            for &s in steps_chunk {
                let rs = partial.iter().find(|(ps, _)| *ps == s).map(|(_, r)| r).unwrap_or(&full);
                for m in 0..n {
                    let Some(r) = &rs[m] else { continue };
                    beta.clear();
                    for &(i, j) in &owners[m] {
                        let f = fields[i];
                        let a = f.poly[s * f.support.len() + j];
                        let a: [f64; 4] = std::array::from_fn(|p| a[p] * scale[p]);
                        beta.push(std::array::from_fn(|p| {
                            r[(p, 0)] * a[0] + r[(p, 1)] * a[1] + r[(p, 2)] * a[2] + r[(p, 3)] * a[3]
                        }));
                    }
                    for (x, &(i, _)) in owners[m].iter().enumerate() {
                        for (y, &(j, _)) in owners[m].iter().enumerate().skip(x) {
                            let bi = &beta[x];
                            let bj = &beta[y];
                            let v = signs[m] * (bi[0] * bj[0] + bi[1] * bj[1] + bi[2] * bj[2] + bi[3] * bj[3]);
                            g[(i, j)] += v;
                            if i != j {
                                g[(j, i)] += v;
                            }
                        }
                    }
                }
            }
            g
        })
        .collect();
    let mut g = DMatrix::zeros(k, k);
    for b in blocks {
        g += b;
    }
    Ok(g)
}
