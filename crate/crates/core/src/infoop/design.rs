use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::forward::{space_time_gram, SpaceTimeField};
use crate::quadrature::gl16;
use crate::rng::Rng;
use crate::spectral::TorusGrid;

/// Law of the sampling locations (t, x) on [0, T] × 𝕋^d.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
#[derive(Default)]
pub enum DesignMeasure {
    /// λ ≡ 1/T.
    #[default]
    Uniform,
    /// λ(t, x) = (1 + a cos 2π k·x)/T with |a| < 1.
    SpaceCosine { amplitude: f64, wavevector: [i32; 2] },
}


impl DesignMeasure {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if let DesignMeasure::SpaceCosine { amplitude, wavevector } = self {
            if !(amplitude.abs() < 1.0) {
                return invalid(format!("design amplitude {amplitude} must satisfy |a| < 1"));
            }
            if dim == 1 && wavevector[1] != 0 {
                return invalid("one-dimensional design needs a wavevector with zero second entry");
            }
        }
        Ok(())
    }

    /// (λ_min, λ_max) as multiples of 1/T.
    pub fn bounds(&self) -> (f64, f64) {
        match self {
            DesignMeasure::Uniform => (1.0, 1.0),
            DesignMeasure::SpaceCosine { amplitude, .. } => (1.0 - amplitude.abs(), 1.0 + amplitude.abs()),
        }
    }

    fn spatial(&self, x: &[f64]) -> f64 {
        match self {
            DesignMeasure::Uniform => 1.0,
            DesignMeasure::SpaceCosine { amplitude, wavevector } => {
                let ph = wavevector[0] as f64 * x[0] + if x.len() > 1 { wavevector[1] as f64 * x[1] } else { 0.0 };
                1.0 + amplitude * (2.0 * PI * ph).cos()
            }
        }
    }

    /// λ(t, x).
    pub fn density(&self, _t: f64, x: &[f64], horizon: f64) -> f64 {
        self.spatial(x) / horizon
    }

    /// One draw (t, x); x padded to two entries.
    pub fn sample(&self, rng: &mut Rng, horizon: f64, dim: usize) -> (f64, [f64; 2]) {
        let t = rng.random::<f64>() * horizon;
        let (_, top) = self.bounds();
        loop {
            let mut x = [0.0; 2];
            for xi in x.iter_mut().take(dim) {
                *xi = rng.random::<f64>();
            }
            if matches!(self, DesignMeasure::Uniform) || rng.random::<f64>() * top <= self.spatial(&x[..dim]) {
                return (t, x);
            }
        }
    }

    /// Weighted Gram ∫∫ Σ_m w_m F_i,m F_j,m λ over [t0, t1] for uniform
    /// designs; non-uniform designs couple modes through the spatial density.
    /// `metric` is the p×p matrix applied to field values (𝓘_ε or identity).
    pub(super) fn gram(&self, fields: &[&SpaceTimeField], metric: &DMatrix<f64>, t0: f64, t1: f64) -> Result<DMatrix<f64>> {
        let horizon = fields[0].horizon();
        match self {
            DesignMeasure::Uniform => {
                let es = fields[0].eigensystem();
                let w: Vec<f64> =
                    es.modes().iter().map(|m| form(metric, &m.direction, &m.direction) / horizon).collect();
                space_time_gram(fields, &w, t0, t1)
            }
            DesignMeasure::SpaceCosine { .. } => self.coupled_gram(fields, metric, t0, t1),
        }
    }

    fn coupled_gram(&self, fields: &[&SpaceTimeField], metric: &DMatrix<f64>, t0: f64, t1: f64) -> Result<DMatrix<f64>> {
        let f0 = fields[0];
        let es = f0.eigensystem();
        let horizon = f0.horizon();
        if !(0.0 <= t0 && t0 <= t1 && t1 <= horizon) {
            return invalid(format!("window [{t0}, {t1}] not inside [0, {horizon}]"));
        }
        let n = es.len();
        let DesignMeasure::SpaceCosine { wavevector, .. } = self else { unreachable!() };
        let kw = wavevector[0].unsigned_abs().max(wavevector[1].unsigned_abs()) as usize;
        // products of two retained modes with the cosine are band-limited
        let pts = 2 * (2 * es.kmax() + kw) + 2;
        let grid = TorusGrid::new(es.dim(), pts.max(8), 1)?;
        let mut phi = DMatrix::<f64>::zeros(grid.points(), n);
        let mut row = vec![0.0; n];
        let mut rho = vec![0.0; grid.points()];
        for i in 0..grid.points() {
            let x = grid.point(i);
            es.mode_values(&x[..es.dim()], &mut row);
            for m in 0..n {
                phi[(i, m)] = row[m];
            }
            rho[i] = self.spatial(&x[..es.dim()]) / (grid.points() as f64 * horizon);
        }
        // C_mm′ = ∫ φ_m φ_m′ ρ dx · n_mᵀ A n_m′
        let mut coupling = phi.transpose() * DMatrix::from_fn(grid.points(), n, |i, m| rho[i] * phi[(i, m)]);
        for a in 0..n {
            for b in 0..n {
                coupling[(a, b)] *= form(metric, &es.mode(a).direction, &es.mode(b).direction);
            }
        }
        let h = f0.dt();
        let mu_max = f0.rates().iter().copied().fold(0.0, f64::max);
        let panels = ((mu_max * h / 2.0).ceil() as usize).clamp(1, 256);
        let k = fields.len();
        let mut g = DMatrix::zeros(k, k);
        let first = ((t0 / h).floor() as usize).min(f0.steps() - 1);
        let end = ((t1 / h).ceil() as usize).clamp(first + 1, f0.steps());
        for s in first..end {
            let a = (s as f64 * h).max(t0);
            let b = ((s + 1) as f64 * h).min(t1);
            if b <= a {
                continue;
            }
            let width = (b - a) / panels as f64;
            for q in 0..panels {
                let lo = a + q as f64 * width;
                for (t, wt) in gl16().mapped(lo, lo + width) {
                    let mut c = DMatrix::<f64>::zeros(n, k);
                    for (j, f) in fields.iter().enumerate() {
                        let v = f.coords_at(t)?;
                        for m in 0..n {
                            c[(m, j)] = v[m];
                        }
                    }
                    g += (c.transpose() * &coupling * &c) * wt;
                }
            }
        }
        Ok(g)
    }
}

fn form(a: &DMatrix<f64>, u: &[f64; 2], v: &[f64; 2]) -> f64 {
    let p = a.nrows();
    let mut s = 0.0;
    for i in 0..p {
        for j in 0..p {
            s += u[i] * a[(i, j)] * v[j];
        }
    }
    s
}
