use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{ForwardModel, ModelKind, Reaction};
use crate::gaussian::{Functional, Loss, LossNorm, McSpec};
use crate::inference::{Hypothesis, LanTolerances};
use crate::infoop::{check_basis_resolved, DesignMeasure};
use crate::noise::NoiseFamily;
use crate::spectral::{EigenSystem, Subspace};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; available parallelism when absent.
    #[serde(default)]
    pub workers: Option<usize>,
    pub model: ModelConfig,
    pub noise: NoiseFamily,
    #[serde(default)]
    pub design: DesignMeasure,
    #[serde(default)]
    pub numerics: Numerics,
    pub task: Task,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    Heat {
        #[serde(default = "one")]
        d: usize,
        #[serde(rename = "T", default = "unit_horizon")]
        horizon: f64,
        #[serde(default)]
        theta0: Option<Vec<f64>>,
    },
    Rd {
        #[serde(default = "one")]
        d: usize,
        #[serde(rename = "T", default = "unit_horizon")]
        horizon: f64,
        #[serde(default)]
        reaction: Reaction,
        #[serde(default)]
        theta0: Option<Vec<f64>>,
    },
    Ns {
        #[serde(rename = "T", default = "unit_horizon")]
        horizon: f64,
        viscosity: f64,
        #[serde(default)]
        forcing: Vec<f64>,
        #[serde(default)]
        theta0: Option<Vec<f64>>,
    },
}

fn one() -> usize {
    1
}

fn unit_horizon() -> f64 {
    1.0
}

impl ModelConfig {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::Heat { .. } => ModelKind::Heat,
            ModelConfig::Rd { .. } => ModelKind::Rd,
            ModelConfig::Ns { .. } => ModelKind::Ns,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ModelConfig::Heat { d, .. } | ModelConfig::Rd { d, .. } => *d,
            ModelConfig::Ns { .. } => 2,
        }
    }

    pub fn horizon(&self) -> f64 {
        match self {
            ModelConfig::Heat { horizon, .. } | ModelConfig::Rd { horizon, .. } | ModelConfig::Ns { horizon, .. } => *horizon,
        }
    }

    fn subspace(&self) -> Subspace {
        match self {
            ModelConfig::Ns { .. } => Subspace::DivergenceFree,
            _ => Subspace::Full,
        }
    }

    /// θ₀ as configured, or a smooth few-mode default.
    pub fn theta0(&self) -> Vec<f64> {
        match self {
            ModelConfig::Heat { theta0, .. } => theta0.clone().unwrap_or_default(),
            ModelConfig::Rd { theta0, .. } => theta0.clone().unwrap_or_else(|| vec![0.5, 0.4, -0.3, 0.0, 0.1]),
            ModelConfig::Ns { theta0, .. } => theta0.clone().unwrap_or_else(|| {
                let mut t = vec![0.0; 10];
                t[0] = 0.5;
                t[5] = 0.3;
                t[9] = -0.2;
                t
            }),
        }
    }

    pub fn build(&self, kmax: usize, steps: usize) -> Result<ForwardModel> {
        match self {
            ModelConfig::Heat { d, horizon, .. } => ForwardModel::heat(*d, kmax, *horizon, steps),
            ModelConfig::Rd { d, horizon, reaction, .. } => ForwardModel::reaction_diffusion(*d, kmax, *horizon, steps, *reaction),
            ModelConfig::Ns { horizon, viscosity, forcing, .. } => ForwardModel::navier_stokes(kmax, *horizon, steps, *viscosity, forcing),
        }
    }

    /// Smallest wavenumber box holding the first `k` eigenvectors exactly.
    pub fn box_for(&self, k: usize) -> Result<usize> {
        for kmax in 1..=4096 {
            let es = EigenSystem::build(self.dim(), kmax, self.subspace())?;
            if es.len() >= k && check_basis_resolved(&es, k).is_ok() {
                return Ok(kmax);
            }
        }
        Err(Error::Config(format!("no wavenumber box up to 4096 resolves K = {k}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Numerics {
    /// Basis size: the first K eigenvectors.
    #[serde(rename = "K")]
    pub k: usize,
    /// Per-axis wavenumber box of the solver; the smallest box resolving
    /// the basis when absent.
    #[serde(default)]
    pub kmax: Option<usize>,
    /// Uniform time steps on [0, T].
    #[serde(default = "default_steps")]
    pub steps: usize,
}

fn default_steps() -> usize {
    64
}

impl Default for Numerics {
    fn default() -> Self {
        Self { k: 9, kmax: None, steps: default_steps() }
    }
}

/// A coefficient target ψ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Target {
    /// e_j
    Unit { index: usize },
    Vector { values: Vec<f64> },
    /// ψ_j = (1 + λ_j)^{−1/2} (j + 1)^{−1/2}, in L² but not H¹
    L2NotH1,
}

impl Target {
    pub fn resolve(&self, es: &EigenSystem, k: usize) -> Result<Vec<f64>> {
        let lam = es.eigenvalues();
        let v = match self {
            Target::Unit { index } if *index < k => {
                let mut v = vec![0.0; k];
                v[*index] = 1.0;
                v
            }
            Target::Unit { index } => return Err(Error::Config(format!("target index {index} outside the basis of {k}"))),
            Target::Vector { values } if values.len() <= k => {
                let mut v = values.clone();
                v.resize(k, 0.0);
                v
            }
            Target::Vector { values } => {
                return Err(Error::Config(format!("target has {} entries, basis has {k}", values.len())))
            }
            Target::L2NotH1 => (0..k).map(|j| ((1.0 + lam[j]) * (j + 1) as f64).powf(-0.5)).collect(),
        };
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Task {
    Fisher {
        #[serde(default = "default_fisher_mc")]
        mc_samples: usize,
    },
    QmdCheck {
        #[serde(default)]
        h: Option<Vec<f64>>,
        #[serde(default = "default_s_grid")]
        s_grid: Vec<f64>,
        #[serde(default)]
        slope_tolerance: Option<f64>,
    },
    NormEquiv {
        #[serde(rename = "K_grid")]
        k_grid: Vec<usize>,
        #[serde(default = "default_trials")]
        trials: usize,
        #[serde(default = "unit_f")]
        kappa: f64,
        #[serde(default = "default_band")]
        band_max: f64,
        #[serde(default = "default_growth")]
        growth_max: f64,
    },
    InfoMatrix {},
    Snorm {
        psi: Target,
        #[serde(default)]
        expect: Option<f64>,
        #[serde(default = "default_snorm_tol")]
        tolerance: f64,
        #[serde(default = "default_octave_start")]
        octave_start: usize,
        /// Random ψ whose truncation traces must be nondecreasing.
        #[serde(default = "default_random_targets")]
        random_targets: usize,
    },
    Lan {
        #[serde(default)]
        h: Option<Vec<f64>>,
        #[serde(default = "unit_f")]
        lan_norm: f64,
        #[serde(rename = "N", default = "default_lan_n")]
        n: usize,
        #[serde(default = "default_lan_reps")]
        replicates: usize,
        #[serde(default = "default_under")]
        under: Hypothesis,
        #[serde(default)]
        tolerances: LanTolerances,
    },
    GaussianSupport {
        #[serde(default = "default_betas")]
        betas: Vec<f64>,
        #[serde(rename = "K_grid")]
        k_grid: Vec<usize>,
        #[serde(default)]
        mc: Option<McSpec>,
        #[serde(default)]
        kappa: Option<f64>,
        #[serde(default)]
        alpha: Option<f64>,
        #[serde(default = "default_growth_min")]
        growth_min: f64,
    },
    PushforwardBound {
        #[serde(default = "default_functional")]
        functional: Functional,
        #[serde(default = "default_loss")]
        loss: Loss,
        #[serde(default = "default_t0")]
        t0: f64,
        #[serde(default)]
        t1: Option<f64>,
        #[serde(default = "default_pushforward_m")]
        m: usize,
        #[serde(rename = "K_grid")]
        k_grid: Vec<usize>,
        #[serde(default = "default_stability")]
        stability_tolerance: f64,
    },
    Efficiency {
        psi: Target,
        #[serde(rename = "N", default = "default_eff_n")]
        n: usize,
        #[serde(default = "default_eff_reps")]
        replicates: usize,
        #[serde(default)]
        local_shift: Option<Vec<f64>>,
        #[serde(default = "default_octave_start")]
        octave_start: usize,
        #[serde(default = "default_ratio_band")]
        ratio_band: [f64; 2],
        #[serde(default)]
        expect_divergent: Option<bool>,
        #[serde(default = "default_spread")]
        spread_max: f64,
    },
    NsDiagnostics {
        #[serde(default = "default_s_grid")]
        s_grid: Vec<f64>,
    },
}

fn default_fisher_mc() -> usize {
    100_000
}
fn default_s_grid() -> Vec<f64> {
    vec![1e-1, 10f64.powf(-1.5), 1e-2, 10f64.powf(-2.5), 1e-3]
}
fn default_trials() -> usize {
    200
}
fn unit_f() -> f64 {
    1.0
}
fn default_band() -> f64 {
    20.0
}
fn default_growth() -> f64 {
    0.10
}
fn default_snorm_tol() -> f64 {
    1e-8
}
fn default_octave_start() -> usize {
    8
}
fn default_random_targets() -> usize {
    20
}
fn default_spread() -> f64 {
    0.30
}
fn default_lan_n() -> usize {
    5000
}
fn default_lan_reps() -> usize {
    400
}
fn default_under() -> Hypothesis {
    Hypothesis::Null
}
fn default_betas() -> Vec<f64> {
    vec![1.0, 2.0]
}
fn default_growth_min() -> f64 {
    0.25
}
fn default_functional() -> Functional {
    Functional::PositiveTimeTrajectory
}
fn default_loss() -> Loss {
    Loss { norm: LossNorm::L2, power: 2.0 }
}
fn default_t0() -> f64 {
    0.1
}
fn default_pushforward_m() -> usize {
    2000
}
fn default_stability() -> f64 {
    0.05
}
fn default_eff_n() -> usize {
    2000
}
fn default_eff_reps() -> usize {
    2000
}
fn default_ratio_band() -> [f64; 2] {
    [0.9, 1.15]
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Fisher { .. } => "fisher",
            Task::QmdCheck { .. } => "qmd-check",
            Task::NormEquiv { .. } => "norm-equiv",
            Task::InfoMatrix {} => "info-matrix",
            Task::Snorm { .. } => "snorm",
            Task::Lan { .. } => "lan",
            Task::GaussianSupport { .. } => "gaussian-support",
            Task::PushforwardBound { .. } => "pushforward-bound",
            Task::Efficiency { .. } => "efficiency",
            Task::NsDiagnostics { .. } => "ns-diagnostics",
        }
    }
}

/// Parses TOML, or JSON when the file name ends in `.json`.
pub fn parse_config(text: &str, json: bool) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = if json {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?
    } else {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    parse_config(&text, json)
}

impl ExperimentConfig {
    /// Applies PDEINFO_SEED and PDEINFO_WORKERS.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(s) = std::env::var("PDEINFO_SEED") {
            self.seed = s.trim().parse().map_err(|_| Error::Config(format!("PDEINFO_SEED={s} is not an integer")))?;
        }
        if let Ok(w) = std::env::var("PDEINFO_WORKERS") {
            let n: usize = w.trim().parse().map_err(|_| Error::Config(format!("PDEINFO_WORKERS={w} is not an integer")))?;
            self.workers = Some(n);
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let d = self.model.dim();
        if !(1..=2).contains(&d) {
            return bad(format!("model dimension {d} not in {{1, 2}}"));
        }
        if !(self.model.horizon() > 0.0 && self.model.horizon().is_finite()) {
            return bad("horizon T must be positive".into());
        }
        if self.numerics.k == 0 || self.numerics.steps == 0 {
            return bad("numerics.K and numerics.steps must be positive".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be positive".into());
        }
        let p = if self.model.kind() == ModelKind::Ns { 2 } else { 1 };
        let q = if matches!(self.noise, NoiseFamily::BivariateGaussian { .. }) { 2 } else { 1 };
        if p != q && !matches!(self.task, Task::Fisher { .. }) {
            return bad(format!("{p}-component data need {p}-dimensional noise"));
        }
        self.design.validate(d).map_err(|e| Error::Config(e.to_string()))?;
        let grid_ok = |g: &[usize]| !g.is_empty() && g.iter().all(|k| *k >= 1 && *k <= self.numerics.k);
        match &self.task {
            Task::NormEquiv { k_grid, .. } | Task::GaussianSupport { k_grid, .. } | Task::PushforwardBound { k_grid, .. }
                if !grid_ok(k_grid) =>
            {
                bad(format!("K_grid entries must lie in 1..={}", self.numerics.k))
            }
            Task::NsDiagnostics { .. } if self.model.kind() != ModelKind::Ns => {
                bad("ns-diagnostics needs an ns model".into())
            }
            _ => Ok(()),
        }
    }

    pub fn kmax(&self) -> Result<usize> {
        match self.numerics.kmax {
            Some(k) => Ok(k),
            None => self.model.box_for(self.numerics.k),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 3
[model]
kind = "heat"
[noise]
family = "gaussian"
variance = 0.25
[task]
name = "fisher"
"#;

    #[test]
    fn minimal_config_and_defaults() {
        let c = parse_config(MINIMAL, false).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.design, DesignMeasure::Uniform);
        assert_eq!(c.numerics.k, 9);
        assert_eq!(c.kmax().unwrap(), 4);
        assert_eq!(c.task, Task::Fisher { mc_samples: 100_000 });
        // JSON is the same schema
        let j = serde_json::to_string(&c).unwrap();
        assert_eq!(parse_config(&j, true).unwrap(), c);
    }

    #[test]
    fn schema_violations() {
        assert!(parse_config(&MINIMAL.replace("[noise]\nfamily = \"gaussian\"\nvariance = 0.25\n", ""), false).is_err());
        assert!(parse_config(&MINIMAL.replace("seed = 3", "seed = 3\ncolour = 1"), false).is_err());
        assert!(parse_config(&MINIMAL.replace("variance = 0.25", "variance = 0.25\nsigma = 1"), false).is_err());
        assert!(parse_config(&MINIMAL.replace("\"fisher\"", "\"nope\""), false).is_err());
        let ns = MINIMAL.replace("kind = \"heat\"", "kind = \"ns\"\nviscosity = 0.1");
        // scalar noise is fine for the noise-only fisher task, not for the others
        assert!(parse_config(&ns, false).is_ok());
        let ns = ns.replace("name = \"fisher\"", "name = \"info-matrix\"");
        assert!(matches!(parse_config(&ns, false), Err(Error::Config(_))));
    }

    #[test]
    fn basis_boxes() {
        let m = ModelConfig::Heat { d: 1, horizon: 1.0, theta0: None };
        assert_eq!(m.box_for(9).unwrap(), 4);
        assert_eq!(m.box_for(10).unwrap(), 5);
        let ns = ModelConfig::Ns { horizon: 1.0, viscosity: 0.1, forcing: vec![], theta0: None };
        // |k|² ≤ 1 holds 4 modes, |k|² ≤ 2 holds 8
        assert_eq!(ns.box_for(8).unwrap(), 2);
    }

    #[test]
    fn targets() {
        let es = EigenSystem::build(1, 4, Subspace::Full).unwrap();
        assert_eq!(Target::Unit { index: 2 }.resolve(&es, 5).unwrap(), vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        assert!(Target::Unit { index: 5 }.resolve(&es, 5).is_err());
        let l = Target::L2NotH1.resolve(&es, 9).unwrap();
        assert_eq!(l[0], 1.0);
    }
}
