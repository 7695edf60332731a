//! Data under P^N_θ, log-likelihood ratios, Monte Carlo checks of the LAN
//! expansion, the efficient influence-function estimator and efficiency
//! reports against ψᵀM⁻¹ψ.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::forward::{ForwardModel, SpaceTimeField};
use crate::infoop::{l2lambda_gram, Assembly, DesignMeasure};
use crate::noise::NoiseModel;
use crate::rng::{self, Rng};
use crate::stats::{ks_normal, mean_var, variance_stderr};

/// Observations (t_i, x_i, Y_i), i < N.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub t: Vec<f64>,
    /// x padded to two entries
    pub x: Vec<[f64; 2]>,
    /// N × p, row-major
    pub y: Vec<f64>,
    pub p: usize,
    pub dim: usize,
    pub seed: u64,
    pub label: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn response(&self, i: usize) -> &[f64] {
        &self.y[i * self.p..(i + 1) * self.p]
    }
}

/// One solve of 𝒢(θ), then N draws of the design and the noise.
pub fn simulate_dataset(
    model: &ForwardModel,
    theta: &[f64],
    design: &DesignMeasure,
    noise: &NoiseModel,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    let field = model.solve(theta)?;
    let mut r = rng::rng(seed);
    let mut data = simulate_from_field(&field, design, noise, n, &mut r)?;
    data.seed = seed;
    data.label = format!("{:?}", model.kind()).to_lowercase();
    Ok(data)
}

/// Y_i = field(t_i, x_i) + ε_i with (t_i, x_i) from the design.
pub fn simulate_from_field(
    field: &SpaceTimeField,
    design: &DesignMeasure,
    noise: &NoiseModel,
    n: usize,
    rng: &mut Rng,
) -> Result<Dataset> {
    if n == 0 {
        return invalid("need at least one observation");
    }
    let es = field.eigensystem();
    let (dim, p) = (es.dim(), es.components());
    if noise.dim() != p {
        return invalid(format!("noise has dimension {}, the field has {p} components", noise.dim()));
    }
    design.validate(dim)?;
    let mut t = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    for _ in 0..n {
        let (ti, xi) = design.sample(rng, field.horizon(), dim);
        t.push(ti);
        x.push(xi);
    }
    let eps = noise.sample(rng, n);
    let mut y = Vec::with_capacity(n * p);
    for i in 0..n {
        let g = field.evaluate(t[i], &x[i][..dim])?;
        y.extend(g.iter().zip(&eps[i * p..(i + 1) * p]).map(|(a, b)| a + b));
    }
    Ok(Dataset { t, x, y, p, dim, seed: 0, label: String::new() })
}

/// Σ_i log q(Y_i − alt(X_i)) − log q(Y_i − base(X_i)). Returns −∞ when some
/// numerator density vanishes, and fails when both do.
pub fn llr_fields(data: &Dataset, base: &SpaceTimeField, alt: &SpaceTimeField, noise: &NoiseModel) -> Result<f64> {
    let mut total = 0.0;
    let mut escaped = false;
    let mut res = vec![0.0; data.p];
    for i in 0..data.len() {
        let x = &data.x[i][..data.dim];
        let g0 = base.evaluate(data.t[i], x)?;
        let g1 = alt.evaluate(data.t[i], x)?;
        let y = data.response(i);
        for c in 0..data.p {
            res[c] = y[c] - g1[c];
        }
        let l1 = noise.log_density(&res);
        for c in 0..data.p {
            res[c] = y[c] - g0[c];
        }
        let l0 = noise.log_density(&res);
        match (l1 == f64::NEG_INFINITY, l0 == f64::NEG_INFINITY) {
            (true, true) => return Err(Error::DegenerateDatum { index: i }),
            (true, false) => escaped = true,
            (false, true) => return Ok(f64::INFINITY),
            (false, false) => total += l1 - l0,
        }
    }
    Ok(if escaped { f64::NEG_INFINITY } else { total })
}

/// log dP^N_{θ₀+h/√N} / dP^N_{θ₀} with N the size of `data`.
pub fn log_likelihood_ratio(
    model: &ForwardModel,
    data: &Dataset,
    theta0: &[f64],
    h: &[f64],
    noise: &NoiseModel,
) -> Result<f64> {
    let base = model.solve(theta0)?;
    let alt = model.solve(&local_alternative(model, theta0, h, data.len())?)?;
    llr_fields(data, &base, &alt, noise)
}

/// θ₀ + h/√N in the model's coordinates.
pub fn local_alternative(model: &ForwardModel, theta0: &[f64], h: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut t = model.coordinates(theta0)?;
    let h = model.coordinates(h)?;
    let s = (n as f64).sqrt();
    for (a, b) in t.iter_mut().zip(&h) {
        *a += b / s;
    }
    Ok(t)
}

/// ‖h‖_LAN = ‖𝓘_ε^{1/2}𝕀_{θ₀}[h]‖_{L²_λ} from one linearized solve.
pub fn lan_norm_direct(
    model: &ForwardModel,
    theta0: &[f64],
    h: &[f64],
    noise: &NoiseModel,
    design: &DesignMeasure,
) -> Result<f64> {
    let tangent = model.linearize(theta0)?.apply(h)?;
    let fisher = noise.fisher_matrix()?;
    Ok(l2lambda_gram(&[&tangent], design, Some(&fisher))?[(0, 0)].max(0.0).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Hypothesis {
    Null,
    Alternative,
}

/// A reported number with its tolerance and verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub target: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    pub fn abs(name: &str, value: f64, target: f64, tolerance: f64) -> Self {
        Self { name: name.into(), value, target, tolerance, pass: (value - target).abs() <= tolerance }
    }

    pub fn rel(name: &str, value: f64, target: f64, tolerance: f64) -> Self {
        Self::abs(name, value, target, tolerance * target.abs())
    }

    /// value > threshold
    pub fn above(name: &str, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value, target: threshold, tolerance: 0.0, pass: value > threshold }
    }

    /// value < threshold
    pub fn below(name: &str, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value, target: threshold, tolerance: 0.0, pass: value < threshold }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LanReport {
    pub h: Vec<f64>,
    pub lan_norm_sq: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub replicates: usize,
    pub seed: u64,
    pub under: Hypothesis,
    /// Per-replicate log-likelihood ratios, −∞ included.
    pub values: Vec<f64>,
    pub support_escapes: usize,
    pub mean: f64,
    pub mean_stderr: f64,
    pub variance: f64,
    pub variance_stderr: f64,
    pub ks_statistic: f64,
    pub ks_p_value: f64,
    pub checks: Vec<Check>,
}

impl LanReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LanTolerances {
    /// |mean − target| ≤ this many standard errors
    pub mean_sigmas: f64,
    /// relative tolerance on the variance
    pub variance_rel: f64,
    pub ks_p_min: f64,
}

impl Default for LanTolerances {
    fn default() -> Self {
        Self { mean_sigmas: 3.0, variance_rel: 0.15, ks_p_min: 0.01 }
    }
}

/// Replicated log-likelihood ratios at θ₀ + h/√N against θ₀, compared with
/// N(∓½‖h‖², ‖h‖²). Replicate r draws from stream r of `seed`.
#[allow(clippy::too_many_arguments)]
pub fn lan_montecarlo(
    model: &ForwardModel,
    theta0: &[f64],
    h: &[f64],
    noise: &NoiseModel,
    design: &DesignMeasure,
    n: usize,
    replicates: usize,
    under: Hypothesis,
    seed: u64,
    tol: LanTolerances,
) -> Result<LanReport> {
    if replicates < 2 {
        return invalid("need at least two replicates");
    }
    let lan_norm_sq = lan_norm_direct(model, theta0, h, noise, design)?.powi(2);
    let base = model.solve(theta0)?;
    let alt = model.solve(&local_alternative(model, theta0, h, n)?)?;
    let truth = match under {
        Hypothesis::Null => &base,
        Hypothesis::Alternative => &alt,
    };
    let values = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut g = rng::stream(seed, r as u64);
            let data = simulate_from_field(truth, design, noise, n, &mut g)?;
            llr_fields(&data, &base, &alt, noise)
        })
        .collect::<Result<Vec<f64>>>()?;
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let support_escapes = values.len() - finite.len();
    if finite.len() < 2 {
        return Err(Error::ModelRejected("fewer than two finite log-likelihood ratios".into()));
    }
    let (mean, variance) = mean_var(&finite);
    let mean_stderr = (variance / finite.len() as f64).sqrt();
    let target_mean = match under {
        Hypothesis::Null => -0.5 * lan_norm_sq,
        Hypothesis::Alternative => 0.5 * lan_norm_sq,
    };
    let ks = ks_normal(&finite, target_mean, lan_norm_sq);
    let checks = vec![
        Check::abs("mean", mean, target_mean, tol.mean_sigmas * mean_stderr),
        Check::rel("variance", variance, lan_norm_sq, tol.variance_rel),
        Check::above("ks_p_value", ks.p_value, tol.ks_p_min),
    ];
    Ok(LanReport {
        h: h.to_vec(),
        lan_norm_sq,
        n,
        replicates,
        seed,
        under,
        values,
        support_escapes,
        mean,
        mean_stderr,
        variance,
        variance_stderr: variance_stderr(&finite),
        ks_statistic: ks.statistic,
        ks_p_value: ks.p_value,
        checks,
    })
}

/// χ(x, y) = ⟨score(y − 𝒢(θ₀)(x)), 𝕀_{θ₀}[M⁻¹ψ](x)⟩ together with the
/// offset ⟨ψ, θ₀⟩.
#[derive(Debug, Clone)]
pub struct InfluenceFunction {
    pub offset: f64,
    pub base: SpaceTimeField,
    pub tangent: SpaceTimeField,
    pub noise: NoiseModel,
}

impl InfluenceFunction {
    pub fn new(assembly: &Assembly, noise: &NoiseModel, psi: &[f64]) -> Result<Self> {
        let k = assembly.k();
        if psi.len() > k && psi[k..].iter().any(|v| *v != 0.0) {
            return invalid(format!("target has components beyond the first {k} basis vectors"));
        }
        let psi = &psi[..psi.len().min(k)];
        let base = assembly.linearization.base().clone();
        let theta0 = base.node(0);
        let offset = psi.iter().zip(&theta0).map(|(a, b)| a * b).sum();
        let psi_bar = assembly.info.solve(psi)?;
        let tangent = assembly.tangent(&psi_bar)?;
        Ok(Self { offset, base, tangent, noise: noise.clone() })
    }

    pub fn chi(&self, t: f64, x: &[f64], y: &[f64]) -> Result<f64> {
        let g0 = self.base.evaluate(t, x)?;
        let v = self.tangent.evaluate(t, x)?;
        let res: Vec<f64> = y.iter().zip(&g0).map(|(a, b)| a - b).collect();
        let s = self.noise.score(&res);
        Ok(v.iter().zip(&s).map(|(a, b)| a * b).sum())
    }

    /// ⟨ψ, θ₀⟩ + (1/N) Σ_i χ(X_i, Y_i)
    pub fn estimate(&self, data: &Dataset) -> Result<f64> {
        let mut acc = 0.0;
        for i in 0..data.len() {
            acc += self.chi(data.t[i], &data.x[i][..data.dim], data.response(i))?;
        }
        Ok(self.offset + acc / data.len() as f64)
    }
}

pub fn efficient_influence_estimate(assembly: &Assembly, noise: &NoiseModel, psi: &[f64], data: &Dataset) -> Result<f64> {
    InfluenceFunction::new(assembly, noise, psi)?.estimate(data)
}

/// Octave increments of a truncation trace: trace(2k) − trace(k) for
/// k = start, 2·start, … while 2k ≤ len.
pub fn octave_increments(trace: &[f64], start: usize) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    let mut k = start.max(1);
    while 2 * k <= trace.len() {
        out.push((k, trace[2 * k - 1] - trace[k - 1]));
        k *= 2;
    }
    out
}

/// Consecutive octave increments that stop shrinking mean the truncated
/// bound does not converge: a summable tail would at least halve them.
pub const DIVERGENCE_RATIO: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EfficiencySpec {
    pub psi: Vec<f64>,
    #[serde(rename = "N")]
    pub n: usize,
    pub replicates: usize,
    /// Data drawn under θ₀ + h/√N when given.
    #[serde(default)]
    pub local_shift: Option<Vec<f64>>,
    #[serde(default = "default_octave_start")]
    pub octave_start: usize,
}

fn default_octave_start() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EfficiencyReport {
    pub psi: Vec<f64>,
    #[serde(rename = "K")]
    pub k: usize,
    /// ψ_{K′}ᵀ M_{K′}⁻¹ ψ_{K′}, K′ = 1..=K
    pub trace: Vec<f64>,
    pub bound: f64,
    pub octave_increments: Vec<(usize, f64)>,
    /// max/min − 1 over the octave increments
    pub increment_spread: f64,
    pub divergent: bool,
    #[serde(rename = "N")]
    pub n: usize,
    pub replicates: usize,
    pub seed: u64,
    /// mean of the estimates minus ⟨ψ, θ⟩ under the sampling law
    pub bias: f64,
    pub bias_stderr: f64,
    /// N · Var(estimate)
    pub mc_variance: f64,
    pub mc_variance_stderr: f64,
    /// mc_variance / bound
    pub ratio: f64,
    pub ratio_stderr: f64,
    pub estimates: Vec<f64>,
}

/// Truncated bound, its octave behaviour, and the Monte Carlo variance of
/// the influence estimator over independent datasets.
pub fn efficiency_report(
    assembly: &Assembly,
    noise: &NoiseModel,
    spec: &EfficiencySpec,
    seed: u64,
) -> Result<EfficiencyReport> {
    if spec.n == 0 || spec.replicates < 2 {
        return invalid("need N ≥ 1 and at least two replicates");
    }
    let k = assembly.k();
    let trace = assembly.info.s_norm_trace(&spec.psi)?;
    let bound = *trace.last().unwrap();
    let octaves = octave_increments(&trace, spec.octave_start);
    let incs: Vec<f64> = octaves.iter().map(|o| o.1).collect();
    let (lo, hi) = incs.iter().fold((f64::INFINITY, 0.0f64), |(l, h), v| (l.min(*v), h.max(*v)));
    let increment_spread = if incs.is_empty() || lo <= 0.0 { f64::INFINITY } else { hi / lo - 1.0 };
    let divergent = incs.len() >= 3 && incs.windows(2).rev().take(2).all(|w| w[1] >= DIVERGENCE_RATIO * w[0]) && incs[incs.len() - 1] > 0.0;

    let influence = InfluenceFunction::new(assembly, noise, &spec.psi)?;
    let model = assembly.linearization.model();
    let theta0 = influence.base.node(0);
    let (truth, theta) = match &spec.local_shift {
        None => (influence.base.clone(), theta0.clone()),
        Some(h) => {
            let th = local_alternative(model, &theta0, h, spec.n)?;
            (model.solve(&th)?, th)
        }
    };
    let target: f64 = spec.psi.iter().zip(&theta).map(|(a, b)| a * b).sum();
    let estimates = (0..spec.replicates)
        .into_par_iter()
        .map(|r| {
            let mut g = rng::stream(seed, r as u64);
            let data = simulate_from_field(&truth, &assembly.design, noise, spec.n, &mut g)?;
            influence.estimate(&data)
        })
        .collect::<Result<Vec<f64>>>()?;
    let (mean, var) = mean_var(&estimates);
    let nf = spec.n as f64;
    let mc_variance = nf * var;
    let mc_variance_stderr = nf * variance_stderr(&estimates);
    Ok(EfficiencyReport {
        psi: spec.psi.clone(),
        k,
        trace,
        bound,
        octave_increments: octaves,
        increment_spread,
        divergent,
        n: spec.n,
        replicates: spec.replicates,
        seed,
        bias: mean - target,
        bias_stderr: (var / spec.replicates as f64).sqrt(),
        mc_variance,
        mc_variance_stderr,
        ratio: mc_variance / bound,
        ratio_stderr: mc_variance_stderr / bound,
        estimates,
    })
}

#[cfg(test)]
mod tests;
