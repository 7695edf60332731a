//! Forward maps θ ↦ u_θ on [0, T] × 𝕋^d and their linearizations: the heat
//! flow (closed form), reaction-diffusion ∂u − Δu = f(u), and 2D
//! incompressible Navier-Stokes in vorticity form.
//!
//! All solvers run in eigen coordinates with the exponential integrator
//! ETDRK4 (the diffusion is integrated exactly) and pseudo-spectral products
//! on a 3/2-padded grid. Linearizations are the exact tangent of the discrete
//! scheme, so Taylor remainders behave as O(s²) down to roundoff.

mod field;

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::phi::phi0123;
use crate::quadrature::gl16;
use crate::spectral::{padded_points, EigenSystem, FourierCoeffs, GridFft, Subspace};
use crate::stats::ls_slope;
pub use field::{dense_basis, space_time_gram, time_gram, SpaceTimeField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Heat,
    Rd,
    Ns,
}

/// f(u) = A u (1 − u²) χ(u/R) with the bump χ(r) = exp(1 − 1/(1 − r²)) on
/// |r| < 1 and 0 elsewhere, so f ∈ C_c^∞ with support [−R, R].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reaction {
    #[serde(default = "Reaction::default_amplitude")]
    pub amplitude: f64,
    #[serde(default = "Reaction::default_radius")]
    pub radius: f64,
}

impl Default for Reaction {
    fn default() -> Self {
        Self { amplitude: 1.0, radius: 2.0 }
    }
}

impl Reaction {
    fn default_amplitude() -> f64 {
        1.0
    }

    fn default_radius() -> f64 {
        2.0
    }

    /// (f, f′, f″) at u.
    pub fn eval(&self, u: f64) -> [f64; 3] {
        let r2 = self.radius * self.radius;
        let q = 1.0 - u * u / r2;
        if q <= 0.0 || 1.0 / q > 700.0 {
            return [0.0; 3];
        }
        let g = 1.0 - 1.0 / q;
        let dq = -2.0 * u / r2;
        let ddq = -2.0 / r2;
        let dg = dq / (q * q);
        let ddg = ddq / (q * q) - 2.0 * dq * dq / (q * q * q);
        let chi = g.exp();
        let dchi = chi * dg;
        let ddchi = chi * (ddg + dg * dg);
        let a = self.amplitude;
        let p = a * (u - u * u * u);
        let dp = a * (1.0 - 3.0 * u * u);
        let ddp = -6.0 * a * u;
        [p * chi, dp * chi + p * dchi, ddp * chi + 2.0 * dp * dchi + p * ddchi]
    }

    pub fn support(&self) -> (f64, f64) {
        (-self.radius, self.radius)
    }
}

#[derive(Debug, Clone)]
enum Dynamics {
    Linear,
    Reaction { reaction: Reaction, fft: GridFft },
    Advection { viscosity: f64, forcing: Vec<f64>, fft: GridFft },
}

/// Base-state data reused by the tangent of one stage evaluation.
#[derive(Debug, Clone)]
enum StageCache {
    None,
    /// f′(u) on the padded grid.
    Reaction(Vec<f64>),
    /// u₁, u₂, ∂₁ω, ∂₂ω on the padded grid.
    Advection(Box<[Vec<f64>; 4]>),
}

#[derive(Debug, Clone)]
struct StepConstants {
    e: Vec<f64>,
    e2: Vec<f64>,
    q: Vec<f64>,
    p: Vec<[f64; 3]>,
}

/// One of the shipped forward models with its discretization.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    kind: ModelKind,
    es: Arc<EigenSystem>,
    horizon: f64,
    steps: usize,
    rates: Arc<Vec<f64>>,
    dynamics: Dynamics,
    consts: Arc<StepConstants>,
}

impl ForwardModel {
    fn build(kind: ModelKind, es: EigenSystem, horizon: f64, steps: usize, rates: Vec<f64>, dynamics: Dynamics) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return invalid(format!("horizon must be positive, got {horizon}"));
        }
        if steps == 0 {
            return invalid("need at least one time step");
        }
        let h = horizon / steps as f64;
        let mut c = StepConstants { e: vec![], e2: vec![], q: vec![], p: vec![] };
        for &mu in &rates {
            let full = phi0123(-mu * h);
            let half = phi0123(-mu * h / 2.0);
            c.e.push(full[0]);
            c.e2.push(half[0]);
            c.q.push(0.5 * h * half[1]);
            c.p.push([h * full[1], h * h * full[2], 2.0 * h * h * h * full[3]]);
        }
        Ok(Self { kind, es: Arc::new(es), horizon, steps, rates: Arc::new(rates), dynamics, consts: Arc::new(c) })
    }

    /// Heat flow ∂u = Δu on the full scalar scale.
    pub fn heat(dim: usize, kmax: usize, horizon: f64, steps: usize) -> Result<Self> {
        let es = EigenSystem::build(dim, kmax, Subspace::Full)?;
        let rates = es.eigenvalues();
        Self::build(ModelKind::Heat, es, horizon, steps, rates, Dynamics::Linear)
    }

    /// ∂u − Δu = f(u) on 𝕋^d, d ∈ {1, 2}.
    pub fn reaction_diffusion(dim: usize, kmax: usize, horizon: f64, steps: usize, reaction: Reaction) -> Result<Self> {
        if !(reaction.radius > 0.0) || !reaction.amplitude.is_finite() {
            return invalid("reaction needs a positive radius and finite amplitude");
        }
        let es = EigenSystem::build(dim, kmax, Subspace::Full)?;
        let rates = es.eigenvalues();
        let fft = GridFft::new(dim, padded_points(kmax));
        Self::build(ModelKind::Rd, es, horizon, steps, rates, Dynamics::Reaction { reaction, fft })
    }

    /// ∂u − νΔu + (u·∇)u + ∇p = f, ∇·u = 0 on 𝕋², with a time-independent
    /// divergence-free forcing given in eigen coordinates (zero-padded).
    pub fn navier_stokes(kmax: usize, horizon: f64, steps: usize, viscosity: f64, forcing: &[f64]) -> Result<Self> {
        if !(viscosity > 0.0 && viscosity.is_finite()) {
            return invalid(format!("viscosity must be positive, got {viscosity}"));
        }
        let es = EigenSystem::build(2, kmax, Subspace::DivergenceFree)?;
        if forcing.len() > es.len() {
            return invalid("forcing has more coordinates than the basis");
        }
        let mut f = forcing.to_vec();
        f.resize(es.len(), 0.0);
        let rates = es.eigenvalues().iter().map(|l| viscosity * l).collect();
        let fft = GridFft::new(2, padded_points(kmax));
        Self::build(ModelKind::Ns, es, horizon, steps, rates, Dynamics::Advection { viscosity, forcing: f, fft })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn eigensystem(&self) -> &Arc<EigenSystem> {
        &self.es
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn viscosity(&self) -> Option<f64> {
        match &self.dynamics {
            Dynamics::Advection { viscosity, .. } => Some(*viscosity),
            _ => None,
        }
    }

    /// Zero-padded copy of `theta` with the basis length.
    pub fn coordinates(&self, theta: &[f64]) -> Result<Vec<f64>> {
        if theta.len() > self.es.len() {
            return invalid(format!("{} coordinates given, basis has {}", theta.len(), self.es.len()));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return invalid("non-finite coordinate");
        }
        let mut v = theta.to_vec();
        v.resize(self.es.len(), 0.0);
        Ok(v)
    }

    fn box_len(&self) -> usize {
        FourierCoeffs::box_len(self.es.dim(), self.es.kmax())
    }

    fn scalar_grid(&self, fft: &GridFft, a: &[f64]) -> Vec<f64> {
        let mut bx = vec![Complex64::new(0.0, 0.0); self.box_len()];
        self.es.scatter(a, &mut bx);
        let mut g = vec![0.0; fft.points()];
        fft.box_to_grid(&bx, self.es.kmax(), &mut g);
        g
    }

    fn scalar_coords(&self, fft: &GridFft, g: &[f64]) -> Vec<f64> {
        let mut bx = vec![Complex64::new(0.0, 0.0); self.box_len()];
        fft.grid_to_box(g, self.es.kmax(), &mut bx);
        self.es.gather(&bx)
    }

    /// u₁, u₂, ∂₁ω, ∂₂ω on the padded grid.
    fn velocity_grids(&self, fft: &GridFft, a: &[f64]) -> [Vec<f64>; 4] {
        let nk = self.box_len();
        let km = self.es.kmax();
        let mut bx = vec![Complex64::new(0.0, 0.0); 2 * nk];
        self.es.scatter(a, &mut bx);
        let mut wx = vec![Complex64::new(0.0, 0.0); nk];
        let mut wy = vec![Complex64::new(0.0, 0.0); nk];
        let tpi = Complex64::new(0.0, 2.0 * PI);
        for i in 0..nk {
            let k = FourierCoeffs::box_wavevector(2, km, i);
            let w = tpi * (k[0] as f64 * bx[nk + i] - k[1] as f64 * bx[i]);
            wx[i] = tpi * k[0] as f64 * w;
            wy[i] = tpi * k[1] as f64 * w;
        }
        let grid = |b: &[Complex64]| {
            let mut g = vec![0.0; fft.points()];
            fft.box_to_grid(b, km, &mut g);
            g
        };
        [grid(&bx[..nk]), grid(&bx[nk..]), grid(&wx), grid(&wy)]
    }

    /// Velocity coordinates of the field whose vorticity is −J.
    fn advection_coords(&self, fft: &GridFft, j: &[f64]) -> Vec<f64> {
        let km = self.es.kmax();
        let mut jb = vec![Complex64::new(0.0, 0.0); self.box_len()];
        fft.grid_to_box(j, km, &mut jb);
        self.es
            .modes()
            .iter()
            .map(|m| {
                let r = m.representative;
                let g = -jb[FourierCoeffs::box_index(2, km, r)];
                let kk = ((r[0] * r[0] + r[1] * r[1]) as f64).sqrt();
                2.0 * (m.fourier_weight().conj() * g / Complex64::new(0.0, 2.0 * PI * kk)).re
            })
            .collect()
    }

    fn nonlinear(&self, a: &[f64], keep: bool) -> (Vec<f64>, StageCache) {
        match &self.dynamics {
            Dynamics::Linear => (vec![0.0; a.len()], StageCache::None),
            Dynamics::Reaction { reaction, fft } => {
                let u = self.scalar_grid(fft, a);
                let mut fv = Vec::with_capacity(u.len());
                let mut dv = if keep { Vec::with_capacity(u.len()) } else { Vec::new() };
                for &x in &u {
                    let r = reaction.eval(x);
                    fv.push(r[0]);
                    if keep {
                        dv.push(r[1]);
                    }
                }
                let cache = if keep { StageCache::Reaction(dv) } else { StageCache::None };
                (self.scalar_coords(fft, &fv), cache)
            }
            Dynamics::Advection { forcing, fft, .. } => {
                let g = self.velocity_grids(fft, a);
                let j: Vec<f64> = (0..g[0].len()).map(|i| g[0][i] * g[2][i] + g[1][i] * g[3][i]).collect();
                let mut out = self.advection_coords(fft, &j);
                for (o, f) in out.iter_mut().zip(forcing) {
                    *o += f;
                }
                let cache = if keep { StageCache::Advection(Box::new(g)) } else { StageCache::None };
                (out, cache)
            }
        }
    }

    fn tangent(&self, cache: &StageCache, da: &[f64]) -> Vec<f64> {
        match (&self.dynamics, cache) {
            (Dynamics::Reaction { fft, .. }, StageCache::Reaction(fp)) => {
                let mut v = self.scalar_grid(fft, da);
                for (x, d) in v.iter_mut().zip(fp) {
                    *x *= d;
                }
                self.scalar_coords(fft, &v)
            }
            (Dynamics::Advection { fft, .. }, StageCache::Advection(g)) => {
                let d = self.velocity_grids(fft, da);
                let j: Vec<f64> = (0..d[0].len())
                    .map(|i| g[0][i] * d[2][i] + g[1][i] * d[3][i] + d[0][i] * g[2][i] + d[1][i] * g[3][i])
                    .collect();
                self.advection_coords(fft, &j)
            }
            _ => vec![0.0; da.len()],
        }
    }

    /// Runs ETDRK4; `rhs(stage_state, step, stage)` returns N at the state.
    fn integrate<F>(&self, init: &[f64], mut rhs: F) -> Result<SpaceTimeField>
    where
        F: FnMut(&[f64], usize, usize) -> Vec<f64>,
    {
        let n = self.es.len();
        let h = self.horizon / self.steps as f64;
        let c = &self.consts;
        let mut u = init.to_vec();
        let mut poly = Vec::with_capacity(self.steps * n);
        let (mut a, mut b, mut cc) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for step in 0..self.steps {
            let nu = rhs(&u, step, 0);
            for m in 0..n {
                a[m] = c.e2[m] * u[m] + c.q[m] * nu[m];
            }
            let na = rhs(&a, step, 1);
            for m in 0..n {
                b[m] = c.e2[m] * u[m] + c.q[m] * na[m];
            }
            let nb = rhs(&b, step, 2);
            for m in 0..n {
                cc[m] = c.e2[m] * a[m] + c.q[m] * (2.0 * nb[m] - nu[m]);
            }
            let nc = rhs(&cc, step, 3);
            for m in 0..n {
                let nm = 0.5 * (na[m] + nb[m]);
                let c0 = nu[m];
                let c1 = (-3.0 * nu[m] + 4.0 * nm - nc[m]) / h;
                let c2 = (2.0 * nu[m] - 4.0 * nm + 2.0 * nc[m]) / (h * h);
                poly.push([u[m], c0, c1, c2]);
                u[m] = c.e[m] * u[m] + c.p[m][0] * c0 + c.p[m][1] * c1 + c.p[m][2] * c2;
            }
            let peak = u.iter().fold(0.0f64, |s, v| s.max(v.abs()));
            if !peak.is_finite() || peak > 1e12 {
                return Err(Error::Solver {
                    time: (step + 1) as f64 * h,
                    reason: format!("solution blew up (max coordinate {peak:.3e})"),
                });
            }
        }
        Ok(SpaceTimeField::from_dense(self.es.clone(), self.rates.clone(), self.horizon, self.steps, poly, u))
    }

    /// Exact heat semigroup at the nodes.
    fn heat_exact(&self, theta: &[f64]) -> SpaceTimeField {
        let n = self.es.len();
        let h = self.horizon / self.steps as f64;
        let mut poly = Vec::with_capacity(self.steps * n);
        for step in 0..self.steps {
            let t = step as f64 * h;
            for m in 0..n {
                poly.push([(-self.rates[m] * t).exp() * theta[m], 0.0, 0.0, 0.0]);
            }
        }
        let last = (0..n).map(|m| (-self.rates[m] * self.horizon).exp() * theta[m]).collect();
        SpaceTimeField::from_dense(self.es.clone(), self.rates.clone(), self.horizon, self.steps, poly, last)
    }

    /// u_θ on the model's time grid.
    pub fn solve(&self, theta: &[f64]) -> Result<SpaceTimeField> {
        let theta = self.coordinates(theta)?;
        if let Dynamics::Linear = self.dynamics {
            return Ok(self.heat_exact(&theta));
        }
        self.integrate(&theta, |a, _, _| self.nonlinear(a, false).0)
    }

    /// Solves at θ₀ and keeps what the tangent flow needs.
    pub fn linearize(&self, theta0: &[f64]) -> Result<Linearization> {
        let theta0 = self.coordinates(theta0)?;
        if let Dynamics::Linear = self.dynamics {
            return Ok(Linearization { model: self.clone(), base: self.heat_exact(&theta0), stages: Vec::new() });
        }
        let mut stages: Vec<[StageCache; 4]> = Vec::with_capacity(self.steps);
        let mut current: [StageCache; 4] = std::array::from_fn(|_| StageCache::None);
        let base = self.integrate(&theta0, |a, _, stage| {
            let (v, c) = self.nonlinear(a, true);
            current[stage] = c;
            if stage == 3 {
                stages.push(std::mem::replace(&mut current, std::array::from_fn(|_| StageCache::None)));
            }
            v
        })?;
        Ok(Linearization { model: self.clone(), base, stages })
    }
}

/// Tangent flow h ↦ 𝕀_{θ₀}[h] of the discrete solver around a stored base
/// trajectory.
#[derive(Debug, Clone)]
pub struct Linearization {
    model: ForwardModel,
    base: SpaceTimeField,
    stages: Vec<[StageCache; 4]>,
}

impl Linearization {
    pub fn base(&self) -> &SpaceTimeField {
        &self.base
    }

    pub fn model(&self) -> &ForwardModel {
        &self.model
    }

    /// 𝕀_{θ₀}[h].
    pub fn apply(&self, h: &[f64]) -> Result<SpaceTimeField> {
        let h = self.model.coordinates(h)?;
        if let Dynamics::Linear = self.model.dynamics {
            return Ok(self.model.heat_exact(&h));
        }
        self.model.integrate(&h, |a, step, stage| self.model.tangent(&self.stages[step][stage], a))
    }

    /// 𝕀_{θ₀}[h] for many directions, in parallel, results in input order.
    pub fn apply_many(&self, hs: &[Vec<f64>]) -> Result<Vec<SpaceTimeField>> {
        hs.par_iter().map(|h| self.apply(h)).collect()
    }

    /// 𝕀_{θ₀}[e_j] for the first `k` basis vectors.
    pub fn basis_columns(&self, k: usize) -> Result<Vec<SpaceTimeField>> {
        let n = self.model.es.len();
        if k > n {
            return invalid(format!("basis size {k} exceeds the {n} solver modes"));
        }
        let hs: Vec<Vec<f64>> = (0..k).map(|j| self.model.es.unit(j)).collect();
        self.apply_many(&hs)
    }
}

/// u(t) = e^{tΔ}θ sampled on `steps` uniform steps of [0, T].
pub fn solve_heat_exact(dim: usize, kmax: usize, theta: &[f64], horizon: f64, steps: usize) -> Result<SpaceTimeField> {
    ForwardModel::heat(dim, kmax, horizon, steps)?.solve(theta)
}

pub fn solve_rd(model: &ForwardModel, theta: &[f64]) -> Result<SpaceTimeField> {
    expect_kind(model, ModelKind::Rd)?;
    model.solve(theta)
}

pub fn linearize_rd(model: &ForwardModel, theta0: &[f64], h: &[f64]) -> Result<SpaceTimeField> {
    expect_kind(model, ModelKind::Rd)?;
    model.linearize(theta0)?.apply(h)
}

pub fn solve_ns(model: &ForwardModel, theta: &[f64]) -> Result<SpaceTimeField> {
    expect_kind(model, ModelKind::Ns)?;
    model.solve(theta)
}

pub fn linearize_ns(model: &ForwardModel, theta0: &[f64], h: &[f64]) -> Result<SpaceTimeField> {
    expect_kind(model, ModelKind::Ns)?;
    model.linearize(theta0)?.apply(h)
}

pub fn evaluate_field(field: &SpaceTimeField, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    field.evaluate(t, x)
}

fn expect_kind(model: &ForwardModel, kind: ModelKind) -> Result<()> {
    if model.kind != kind {
        return invalid(format!("expected a {kind:?} model, got {:?}", model.kind));
    }
    Ok(())
}

/// Taylor remainders ρ(s) = ‖𝒢(θ₀+sh) − 𝒢(θ₀) − s𝕀[h]‖_{L²([0,T]×Ω)}.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QmdReport {
    pub s: Vec<f64>,
    pub remainders: Vec<f64>,
    /// ρ(s)/s
    pub ratios: Vec<f64>,
    /// Least-squares slope of log ρ against log s; `None` when ρ vanishes
    /// to roundoff (linear model).
    pub slope: Option<f64>,
    /// ‖𝕀[h]‖ for scale.
    pub tangent_norm: f64,
}

pub fn qmd_remainder_slope(model: &ForwardModel, theta0: &[f64], h: &[f64], s_grid: &[f64]) -> Result<QmdReport> {
    if s_grid.len() < 4 || s_grid.iter().any(|s| !(*s > 0.0)) {
        return invalid("need at least four positive step sizes");
    }
    let theta0 = model.coordinates(theta0)?;
    let h = model.coordinates(h)?;
    let lin = model.linearize(&theta0)?;
    let tangent = lin.apply(&h)?;
    let tangent_norm = tangent.norm_sq().sqrt();
    let remainders = s_grid
        .par_iter()
        .map(|&s| {
            let shifted: Vec<f64> = theta0.iter().zip(&h).map(|(a, b)| a + s * b).collect();
            let g = model.solve(&shifted)?;
            let r = SpaceTimeField::linear_combination(&[(1.0, &g), (-1.0, lin.base()), (-s, &tangent)])?;
            Ok(r.norm_sq().max(0.0).sqrt())
        })
        .collect::<Result<Vec<f64>>>()?;
    let ratios: Vec<f64> = remainders.iter().zip(s_grid).map(|(r, s)| r / s).collect();
    let floor = 1e-13 * (tangent_norm + lin.base().norm_sq().sqrt()).max(1e-300);
    let pts: Vec<(f64, f64)> =
        s_grid.iter().zip(&remainders).filter(|(_, r)| **r > floor).map(|(s, r)| (s.ln(), r.ln())).collect();
    let slope = if pts.len() == s_grid.len() { Some(ls_slope(&pts)) } else { None };
    Ok(QmdReport { s: s_grid.to_vec(), remainders, ratios, slope, tangent_norm })
}

/// Largest |k·û(k)| over all coefficients and time nodes.
pub fn divergence_max(field: &SpaceTimeField) -> f64 {
    let es = field.eigensystem();
    if es.components() != 2 {
        return 0.0;
    }
    let mut worst: f64 = 0.0;
    for i in 0..=field.steps() {
        let c = field.snapshot(i);
        let km = c.kmax() as i32;
        for k1 in -km..=km {
            for k2 in -km..=km {
                let d = c.get(0, [k1, k2]) * k1 as f64 + c.get(1, [k1, k2]) * k2 as f64;
                worst = worst.max(d.norm());
            }
        }
    }
    worst
}

/// Energy balance of a Navier-Stokes trajectory:
/// |½‖u(T)‖² − ½‖u(0)‖² + ν∫‖∇u‖² − ∫⟨f,u⟩| / T.
pub fn ns_energy_residual(model: &ForwardModel, field: &SpaceTimeField) -> Result<f64> {
    let Dynamics::Advection { viscosity, forcing, .. } = &model.dynamics else {
        return invalid("energy balance applies to Navier-Stokes models");
    };
    let es = field.eigensystem();
    let lam = es.eigenvalues();
    let e = |c: &[f64]| 0.5 * c.iter().map(|v| v * v).sum::<f64>();
    let dissipation = space_time_gram(&[field], &lam, 0.0, field.horizon())?[(0, 0)];
    let mut work = 0.0;
    if forcing.iter().any(|f| *f != 0.0) {
        let h = field.dt();
        for s in 0..field.steps() {
            let t0 = s as f64 * h;
            for (t, w) in gl16().mapped(t0, t0 + h) {
                let c = field.coords_at(t)?;
                work += w * c.iter().zip(forcing).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
    let balance = e(&field.node(field.steps())) - e(&field.node(0)) + viscosity * dissipation - work;
    Ok(balance.abs() / field.horizon())
}

#[cfg(test)]
mod tests;
