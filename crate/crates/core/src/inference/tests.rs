use std::f64::consts::PI;

use super::*;
use crate::forward::Reaction;
use crate::infoop::assemble_information_matrix;
use crate::noise::NoiseFamily;

fn heat() -> ForwardModel {
    ForwardModel::heat(1, 4, 1.0, 20).unwrap()
}

fn e(j: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[j] = 1.0;
    v
}

fn heat_assembly(var: f64) -> (Assembly, NoiseModel) {
    let noise = NoiseModel::gaussian(var).unwrap();
    let a = assemble_information_matrix(&heat(), &[], &noise.fisher_matrix().unwrap(), &DesignMeasure::Uniform, 9).unwrap();
    (a, noise)
}

#[test]
fn simulation_laws() {
    let m = heat();
    let noise = NoiseModel::gaussian(1e-12).unwrap();
    let theta = [0.3, 0.5, -0.2];
    let d = simulate_dataset(&m, &theta, &DesignMeasure::Uniform, &noise, 2000, 1).unwrap();
    let field = m.solve(&theta).unwrap();
    let res: Vec<f64> = (0..d.len()).map(|i| d.y[i] - field.evaluate(d.t[i], &d.x[i][..1]).unwrap()[0]).collect();
    assert!(mean_var(&res).1.sqrt() < 1e-5);
    let (mt, _) = mean_var(&d.t);
    assert!((mt - 0.5).abs() < 3.0 * (1.0f64 / 12.0).sqrt() / (2000f64).sqrt());
    assert_eq!(d, simulate_dataset(&m, &theta, &DesignMeasure::Uniform, &noise, 2000, 1).unwrap());
    assert!(simulate_dataset(&m, &theta, &DesignMeasure::Uniform, &noise, 0, 1).is_err());
}

#[test]
fn regression_recovers_the_heat_coefficient() {
    let m = heat();
    let j = m.eigensystem().index_of([1, 0]).unwrap();
    let noise = NoiseModel::gaussian(0.01).unwrap();
    let d = simulate_dataset(&m, &e(j, 9), &DesignMeasure::Uniform, &noise, 10000, 2).unwrap();
    let lam = 4.0 * PI * PI;
    let z: Vec<f64> = (0..d.len()).map(|i| 2f64.sqrt() * (2.0 * PI * d.x[i][0]).cos() * (-lam * d.t[i]).exp()).collect();
    let szz: f64 = z.iter().map(|v| v * v).sum();
    let beta = z.iter().zip(&d.y).map(|(a, b)| a * b).sum::<f64>() / szz;
    let se = (0.01 / szz).sqrt();
    assert!((beta - 1.0).abs() < 3.0 * se, "{beta} {se}");
}

#[test]
fn llr_zero_direction_and_gaussian_algebra() {
    let m = heat();
    let noise = NoiseModel::gaussian(0.5).unwrap();
    let theta0 = [0.2, 0.3, 0.0, -0.1];
    let d = simulate_dataset(&m, &theta0, &DesignMeasure::Uniform, &noise, 500, 3).unwrap();
    assert_eq!(log_likelihood_ratio(&m, &d, &theta0, &[0.0; 9], &noise).unwrap(), 0.0);
    let h = [0.0, 1.0, -0.5, 0.3, 0.0, 0.2];
    let llr = log_likelihood_ratio(&m, &d, &theta0, &h, &noise).unwrap();
    // Gaussian: Σ δ_i (2r_i − δ_i) / (2σ²) with δ = 𝕀[h]/√N, r = Y − 𝒢(θ₀)
    let base = m.solve(&theta0).unwrap();
    let tan = m.linearize(&theta0).unwrap().apply(&h).unwrap();
    let s = (d.len() as f64).sqrt();
    let mut oracle = 0.0;
    for i in 0..d.len() {
        let x = &d.x[i][..1];
        let delta = tan.evaluate(d.t[i], x).unwrap()[0] / s;
        let r = d.y[i] - base.evaluate(d.t[i], x).unwrap()[0];
        oracle += delta * (2.0 * r - delta) / (2.0 * 0.5);
    }
    assert!((llr - oracle).abs() < 1e-8, "{llr} {oracle}");
}

#[test]
fn support_escape_is_counted() {
    let m = heat();
    let noise = NoiseModel::new(NoiseFamily::CosineBump).unwrap();
    let h = [2.0];
    let rep = lan_montecarlo(&m, &[], &h, &noise, &DesignMeasure::Uniform, 100, 40, Hypothesis::Null, 4, LanTolerances::default())
        .unwrap();
    assert!(rep.support_escapes > 0);
    assert_eq!(rep.values.iter().filter(|v| **v == f64::NEG_INFINITY).count(), rep.support_escapes);
}

#[test]
fn degenerate_datum_is_reported() {
    let m = heat();
    let noise = NoiseModel::new(NoiseFamily::CosineBump).unwrap();
    let mut d = simulate_dataset(&m, &[], &DesignMeasure::Uniform, &noise, 5, 1).unwrap();
    d.y[2] = 10.0;
    let err = log_likelihood_ratio(&m, &d, &[], &[0.1], &noise).unwrap_err();
    assert!(matches!(err, Error::DegenerateDatum { index: 2 }));
}

#[test]
fn lan_heat_gaussian_and_quadratic_scaling() {
    let m = heat();
    let noise = NoiseModel::gaussian(1.0).unwrap();
    let j = m.eigensystem().index_of([1, 0]).unwrap();
    let h0 = e(j, 9);
    let norm = lan_norm_direct(&m, &[], &h0, &noise, &DesignMeasure::Uniform).unwrap();
    let h: Vec<f64> = h0.iter().map(|v| v / norm).collect();
    let tol = LanTolerances::default();
    let rep = lan_montecarlo(&m, &[], &h, &noise, &DesignMeasure::Uniform, 1000, 300, Hypothesis::Null, 5, tol).unwrap();
    assert!((rep.lan_norm_sq - 1.0).abs() < 1e-12);
    assert!(rep.pass(), "{:?}", rep.checks);
    assert!(rep.mean < 0.0);
    let alt = lan_montecarlo(&m, &[], &h, &noise, &DesignMeasure::Uniform, 1000, 300, Hypothesis::Alternative, 5, tol).unwrap();
    assert!(alt.pass(), "{:?}", alt.checks);
    assert!((rep.mean + alt.mean).abs() < 3.0 * (rep.mean_stderr.powi(2) + alt.mean_stderr.powi(2)).sqrt());
    let h2: Vec<f64> = h.iter().map(|v| 2.0 * v).collect();
    let rep2 = lan_montecarlo(&m, &[], &h2, &noise, &DesignMeasure::Uniform, 1000, 300, Hypothesis::Null, 6, tol).unwrap();
    assert!((rep2.lan_norm_sq - 4.0).abs() < 1e-10);
    assert!(rep2.pass(), "{:?}", rep2.checks);
}

#[test]
fn lan_rd_laplace() {
    let m = ForwardModel::reaction_diffusion(1, 4, 1.0, 32, Reaction::default()).unwrap();
    let noise = NoiseModel::new(NoiseFamily::Laplace { scale: 1.0 }).unwrap();
    let theta0 = [0.5, 0.4, -0.3];
    let h0 = [0.0, 1.0, 0.5, 0.0, 0.3];
    let norm = lan_norm_direct(&m, &theta0, &h0, &noise, &DesignMeasure::Uniform).unwrap();
    let h: Vec<f64> = h0.iter().map(|v| v / norm).collect();
    let rep = lan_montecarlo(&m, &theta0, &h, &noise, &DesignMeasure::Uniform, 2000, 200, Hypothesis::Null, 7, LanTolerances::default())
        .unwrap();
    assert!(rep.pass(), "{:?}", rep.checks);
}

#[test]
fn influence_estimator_zero_target_and_centering() {
    let (a, noise) = heat_assembly(1.0);
    let d = simulate_dataset(&heat(), &[], &DesignMeasure::Uniform, &noise, 300, 9).unwrap();
    assert_eq!(efficient_influence_estimate(&a, &noise, &[0.0; 9], &d).unwrap(), 0.0);
    let inf = InfluenceFunction::new(&a, &noise, &e(1, 9)).unwrap();
    let chis: Vec<f64> = (0..d.len()).map(|i| inf.chi(d.t[i], &d.x[i][..1], d.response(i)).unwrap()).collect();
    let (mean, var) = mean_var(&chis);
    assert!(mean.abs() < 3.0 * (var / d.len() as f64).sqrt());
    assert!(InfluenceFunction::new(&a, &noise, &e(9, 10)).is_err());
}

#[test]
fn efficiency_in_the_heat_model() {
    let (a, noise) = heat_assembly(1.0);
    let spec = EfficiencySpec { psi: e(1, 9), n: 500, replicates: 1000, local_shift: None, octave_start: 2 };
    let rep = efficiency_report(&a, &noise, &spec, 11).unwrap();
    let l = 4.0 * PI * PI;
    assert!((rep.bound - 2.0 * l / (1.0 - (-2.0 * l).exp())).abs() < 1e-8);
    assert!(rep.ratio > 0.9 && rep.ratio < 1.15, "{}", rep.ratio);
    assert!(rep.bias.abs() < 3.0 * rep.bias_stderr);
    assert!(!rep.divergent);
    // estimator never significantly beats the bound
    assert!(rep.ratio + 3.0 * rep.ratio_stderr > 1.0);

    let (a4, noise4) = heat_assembly(4.0);
    let rep4 = efficiency_report(&a4, &noise4, &spec, 11).unwrap();
    assert!((rep4.bound / rep.bound - 4.0).abs() < 1e-10);
    assert!((rep4.mc_variance / rep.mc_variance - 4.0).abs() < 0.6);
}

#[test]
fn efficiency_is_regular_under_local_shifts() {
    let m = ForwardModel::reaction_diffusion(1, 4, 1.0, 32, Reaction::default()).unwrap();
    let noise = NoiseModel::gaussian(0.25).unwrap();
    let theta0 = [0.5, 0.4, -0.3];
    let a = assemble_information_matrix(&m, &theta0, &noise.fisher_matrix().unwrap(), &DesignMeasure::Uniform, 9).unwrap();
    let spec = EfficiencySpec {
        psi: e(2, 9),
        n: 1000,
        replicates: 400,
        local_shift: Some(vec![0.0, 1.0, 0.0, 0.5]),
        octave_start: 2,
    };
    let rep = efficiency_report(&a, &noise, &spec, 12).unwrap();
    // √N-scaled bias
    let s = (spec.n as f64).sqrt();
    assert!((s * rep.bias).abs() < 3.0 * s * rep.bias_stderr, "{} {}", rep.bias, rep.bias_stderr);
}

#[test]
fn octaves() {
    let trace: Vec<f64> = (1..=16).map(|k| (k as f64).ln()).collect();
    let o = octave_increments(&trace, 2);
    assert_eq!(o.iter().map(|p| p.0).collect::<Vec<_>>(), vec![2, 4, 8]);
    for (_, v) in o {
        assert!((v - 2f64.ln()).abs() < 1e-12);
    }
}
