use std::f64::consts::PI;

use super::*;
use crate::rng;
use rand::Rng as _;

fn rd_theta0(n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n];
    t[0] = 0.5;
    t[1] = 0.4;
    t[2] = -0.3;
    t[4] = 0.1;
    t
}

fn ns_theta0(n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n];
    t[0] = 0.5;
    t[5] = 0.3;
    t[9] = -0.2;
    t
}

/// Classical RK4 on u' = f(u), used as an independent ODE oracle.
fn rk4_scalar(f: impl Fn(f64) -> f64, u0: f64, t: f64, n: usize) -> f64 {
    let h = t / n as f64;
    let mut u = u0;
    for _ in 0..n {
        let k1 = f(u);
        let k2 = f(u + 0.5 * h * k1);
        let k3 = f(u + 0.5 * h * k2);
        let k4 = f(u + h * k3);
        u += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    u
}

#[test]
fn heat_constant_and_first_mode() {
    let f = solve_heat_exact(1, 4, &[2.5], 1.0, 10).unwrap();
    for i in 0..=10 {
        assert_eq!(f.node(i)[0], 2.5);
    }
    let m = ForwardModel::heat(1, 4, 1.0, 10).unwrap();
    let mut e1 = vec![0.0; 9];
    e1[1] = 1.0;
    let f = m.solve(&e1).unwrap();
    let v = f.node(10)[1];
    assert!((v - (-4.0 * PI * PI).exp()).abs() < 1e-30);
    assert!((v - 7.16e-18).abs() < 1e-19);
    let exact = (1.0 - (-8.0 * PI * PI).exp()) / (8.0 * PI * PI);
    assert!((f.norm_sq() - exact).abs() < 1e-12);
    assert!((exact - 0.0126651).abs() < 1e-7);
}

#[test]
fn reaction_is_compactly_supported_with_consistent_derivatives() {
    let r = Reaction { amplitude: 1.5, radius: 2.0 };
    assert_eq!(r.eval(2.0), [0.0; 3]);
    assert_eq!(r.eval(-3.1), [0.0; 3]);
    for &u in &[-1.7, -0.6, 0.0, 0.3, 1.2, 1.9] {
        let e = 1e-6;
        let [f, fp, fpp] = r.eval(u);
        let dfd = (r.eval(u + e)[0] - r.eval(u - e)[0]) / (2.0 * e);
        let ddfd = (r.eval(u + e)[1] - r.eval(u - e)[1]) / (2.0 * e);
        assert!((dfd - fp).abs() < 1e-6 * (1.0 + fp.abs()), "u={u}");
        assert!((ddfd - fpp).abs() < 1e-5 * (1.0 + fpp.abs()), "u={u}");
        assert!(f.is_finite());
    }
}

#[test]
fn rd_without_reaction_is_heat() {
    let rd = ForwardModel::reaction_diffusion(1, 8, 1.0, 64, Reaction { amplitude: 0.0, radius: 2.0 }).unwrap();
    let heat = ForwardModel::heat(1, 8, 1.0, 64).unwrap();
    let theta = rd_theta0(17);
    let a = rd.solve(&theta).unwrap();
    let b = heat.solve(&theta).unwrap();
    for i in 0..=64 {
        for (x, y) in a.node(i).iter().zip(b.node(i)) {
            assert!((x - y).abs() < 1e-10);
        }
    }
    let h: Vec<f64> = (0..17).map(|j| 1.0 / (1.0 + j as f64)).collect();
    let u = rd.linearize(&theta).unwrap().apply(&h).unwrap();
    let v = heat.solve(&h).unwrap();
    for i in 0..=64 {
        for (x, y) in u.node(i).iter().zip(v.node(i)) {
            assert!((x - y).abs() < 1e-10);
        }
    }
}

#[test]
fn rd_constant_data_solves_the_reaction_ode() {
    let r = Reaction { amplitude: 2.0, radius: 2.0 };
    let m = ForwardModel::reaction_diffusion(2, 4, 1.0, 200, r).unwrap();
    let f = m.solve(&[0.3]).unwrap();
    let end = f.node(200);
    assert!(end[1..].iter().all(|v| v.abs() < 1e-12));
    let oracle = rk4_scalar(|u| r.eval(u)[0], 0.3, 1.0, 100_000);
    assert!((end[0] - oracle).abs() < 1e-8, "{} vs {oracle}", end[0]);
}

#[test]
fn rd_self_convergence_order() {
    let r = Reaction { amplitude: 3.0, radius: 2.0 };
    let theta = rd_theta0(33);
    let run = |steps| ForwardModel::reaction_diffusion(1, 16, 0.5, steps, r).unwrap().solve(&theta).unwrap();
    let reference = run(1280).node(1280);
    let err = |steps: usize| {
        let f = run(steps);
        f.node(steps).iter().zip(&reference).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    };
    let (e1, e2) = (err(80), err(160));
    let order = (e1 / e2).log2();
    assert!(order > 3.5, "observed order {order} ({e1:e}, {e2:e})");
}

#[test]
fn rd_linearization_is_linear_and_first_order_accurate() {
    let m = ForwardModel::reaction_diffusion(1, 8, 1.0, 50, Reaction { amplitude: 2.0, radius: 2.0 }).unwrap();
    let theta = rd_theta0(17);
    let lin = m.linearize(&theta).unwrap();
    let mut g = rng::rng(3);
    let h1: Vec<f64> = (0..17).map(|_| g.random::<f64>() - 0.5).collect();
    let h2: Vec<f64> = (0..17).map(|_| g.random::<f64>() - 0.5).collect();
    let mix: Vec<f64> = h1.iter().zip(&h2).map(|(a, b)| 2.0 * a - 0.7 * b).collect();
    let u1 = lin.apply(&h1).unwrap();
    let u2 = lin.apply(&h2).unwrap();
    let um = lin.apply(&mix).unwrap();
    let d = SpaceTimeField::linear_combination(&[(1.0, &um), (-2.0, &u1), (0.7, &u2)]).unwrap();
    assert!(d.norm_sq().sqrt() < 1e-10);
    let s: Vec<f64> = (0..5).map(|i| 10f64.powf(-1.0 - 0.5 * i as f64)).collect();
    let rep = qmd_remainder_slope(&m, &theta, &h1, &s).unwrap();
    let slope = rep.slope.unwrap();
    assert!((slope - 2.0).abs() < 0.15, "{rep:?}");
    assert!(rep.ratios.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn heat_remainder_vanishes() {
    let m = ForwardModel::heat(1, 8, 1.0, 20).unwrap();
    let theta = rd_theta0(17);
    let h: Vec<f64> = (0..17).map(|j| (j as f64).cos()).collect();
    let rep = qmd_remainder_slope(&m, &theta, &h, &[1e-1, 1e-2, 1e-3, 1e-4]).unwrap();
    assert!(rep.remainders.iter().all(|r| *r < 1e-12), "{rep:?}");
    assert!(rep.slope.is_none());
}

#[test]
fn ns_single_mode_decays_exactly() {
    let nu = 0.05;
    let m = ForwardModel::navier_stokes(4, 1.0, 40, nu, &[]).unwrap();
    // all four |k| = 1 modes: the nonlinearity vanishes identically
    let theta = [0.7, -0.4, 0.2, 0.5];
    let f = m.solve(&theta).unwrap();
    let lam = 4.0 * PI * PI;
    for (i, t) in f.times().iter().enumerate() {
        let c = f.node(i);
        for j in 0..4 {
            assert!((c[j] - theta[j] * (-nu * lam * t).exp()).abs() < 1e-8);
        }
        assert!(c[4..].iter().all(|v| v.abs() < 1e-12));
    }
}

#[test]
fn ns_invariants_and_energy_balance() {
    let m = ForwardModel::navier_stokes(6, 1.0, 200, 0.05, &[]).unwrap();
    let theta = ns_theta0(m.eigensystem().len());
    let f = m.solve(&theta).unwrap();
    assert!(divergence_max(&f) < 1e-12);
    for i in [0, 100, 200] {
        let s = f.snapshot(i);
        assert!(s.get(0, [0, 0]).norm() < 1e-15 && s.get(1, [0, 0]).norm() < 1e-15);
    }
    let r = ns_energy_residual(&m, &f).unwrap();
    assert!(r < 1e-6, "energy residual {r:e}");
    // the flow is genuinely nonlinear: energy moves between shells
    let shell = |c: &[f64]| c[8..].iter().map(|v| v * v).sum::<f64>();
    assert!(shell(&f.node(200)) > 1e-8);
}

#[test]
fn ns_linearization() {
    let m = ForwardModel::navier_stokes(5, 1.0, 100, 0.05, &[]).unwrap();
    let n = m.eigensystem().len();
    let mut g = rng::rng(11);
    let h: Vec<f64> = (0..n).map(|j| (g.random::<f64>() - 0.5) / (1.0 + j as f64)).collect();
    let h2: Vec<f64> = (0..n).map(|j| (g.random::<f64>() - 0.5) / (1.0 + j as f64)).collect();

    // vanishing base flow: Stokes
    let stokes = m.linearize(&vec![0.0; n]).unwrap().apply(&h).unwrap();
    let t = 0.6;
    let c = stokes.coords_at(t).unwrap();
    for j in 0..n {
        assert!((c[j] - h[j] * (-m.rates()[j] * t).exp()).abs() < 1e-12);
    }

    let theta = ns_theta0(n);
    let lin = m.linearize(&theta).unwrap();
    let u = lin.apply(&h).unwrap();
    let u2 = lin.apply(&h2).unwrap();
    let sum: Vec<f64> = h.iter().zip(&h2).map(|(a, b)| a + 3.0 * b).collect();
    let us = lin.apply(&sum).unwrap();
    let d = SpaceTimeField::linear_combination(&[(1.0, &us), (-1.0, &u), (-3.0, &u2)]).unwrap();
    assert!(d.norm_sq().sqrt() < 1e-10);
    assert!(divergence_max(&u) < 1e-12);

    let s: Vec<f64> = (0..5).map(|i| 10f64.powf(-1.0 - 0.5 * i as f64)).collect();
    let rep = qmd_remainder_slope(&m, &theta, &h, &s).unwrap();
    assert!((rep.slope.unwrap() - 2.0).abs() < 0.2, "{rep:?}");
}

#[test]
fn field_evaluation() {
    let f = solve_heat_exact(2, 3, &[1.75], 1.0, 8).unwrap();
    assert!((evaluate_field(&f, 0.33, &[0.2, 0.9]).unwrap()[0] - 1.75).abs() < 1e-14);

    let m = ForwardModel::heat(1, 3, 1.0, 8).unwrap();
    let es = m.eigensystem().clone();
    let f = m.solve(&es.unit(1)).unwrap();
    let (t, x) = (0.0123, 0.31);
    let exact = (-es.mode(1).eigenvalue * t).exp() * es.mode(1).scalar_at(&[x]);
    assert!((f.evaluate(t, &[x]).unwrap()[0] - exact).abs() < 1e-8);
    assert!(f.evaluate(1.2, &[x]).is_err());

    // knots are reproduced
    let rd = ForwardModel::reaction_diffusion(1, 6, 1.0, 10, Reaction::default()).unwrap();
    let g = rd.solve(&rd_theta0(13)).unwrap();
    for i in [0, 3, 10] {
        let t = g.times()[i];
        let c = g.coords_at(t).unwrap();
        for (a, b) in c.iter().zip(g.node(i)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn positive_time_smoothing_band() {
    // ‖𝕀[h](t)‖_{𝒟²} / ‖h‖_{𝒟^{−3}} stays bounded for t ≥ t0
    let m = ForwardModel::reaction_diffusion(1, 16, 1.0, 100, Reaction { amplitude: 2.0, radius: 2.0 }).unwrap();
    let es = m.eigensystem().clone();
    let lin = m.linearize(&rd_theta0(es.len())).unwrap();
    let t0 = 0.1;
    // heat bound: sup over modes of τ^{5/2} e^{−λ t0}
    let heat_bound = es
        .modes()
        .iter()
        .map(|md| md.weight.powf(2.5) * (-md.eigenvalue * t0).exp())
        .fold(0.0, f64::max);
    let mut g = rng::rng(2);
    for _ in 0..20 {
        let h: Vec<f64> = (0..es.len()).map(|_| g.random::<f64>() - 0.5).collect();
        let u = lin.apply(&h).unwrap();
        let den = es.sobolev_norm(&h, -3.0);
        for t in [0.1, 0.5, 1.0] {
            let ratio = es.sobolev_norm(&u.coords_at(t).unwrap(), 2.0) / den;
            assert!(ratio.is_finite() && ratio < 10.0 * heat_bound, "{ratio} vs {heat_bound}");
        }
    }
}

