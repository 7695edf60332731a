use std::f64::consts::PI;

use rand::Rng as _;

use super::*;
use crate::forward::{ForwardModel, Reaction};
use crate::noise::{NoiseFamily, NoiseModel};
use crate::quadrature::gl16;
use crate::spectral::TorusGrid;

fn gaussian(var: f64) -> FisherMatrix {
    NoiseModel::gaussian(var).unwrap().fisher_matrix().unwrap()
}

fn heat_diag(lambda: f64, t: f64) -> f64 {
    if lambda == 0.0 {
        t
    } else {
        (1.0 - (-2.0 * lambda * t).exp()) / (2.0 * lambda)
    }
}

fn rd_theta0(n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n];
    t[0] = 0.5;
    t[1] = 0.4;
    t[2] = -0.3;
    t[4] = 0.1;
    t
}

/// ∫∫ F_i·A F_j λ by a physical grid in space and composite GL16 in time.
fn dense_oracle(fields: &[SpaceTimeField], design: &DesignMeasure, a: &DMatrix<f64>) -> DMatrix<f64> {
    let es = fields[0].eigensystem();
    let horizon = fields[0].horizon();
    let grid = TorusGrid::new(es.dim(), 4 * es.kmax() + 8, 1).unwrap();
    let p = es.components();
    let k = fields.len();
    let mut g = DMatrix::zeros(k, k);
    let panels = 4 * fields[0].steps();
    let width = horizon / panels as f64;
    for q in 0..panels {
        for (t, wt) in gl16().mapped(q as f64 * width, (q + 1) as f64 * width) {
            for i in 0..grid.points() {
                let x = grid.point(i);
                let x = &x[..es.dim()];
                let vals: Vec<Vec<f64>> = fields.iter().map(|f| f.evaluate(t, x).unwrap()).collect();
                let w = wt * design.density(t, x, horizon) / grid.points() as f64;
                for r in 0..k {
                    for c in 0..k {
                        let mut s = 0.0;
                        for u in 0..p {
                            for v in 0..p {
                                s += vals[r][u] * a[(u, v)] * vals[c][v];
                            }
                        }
                        g[(r, c)] += w * s;
                    }
                }
            }
        }
    }
    g
}

#[test]
fn l2lambda_norm_closed_forms() {
    let m = ForwardModel::heat(1, 4, 1.0, 20).unwrap();
    let c = m.solve(&[-1.7]).unwrap();
    assert!((l2lambda_norm(&c, &DesignMeasure::Uniform).unwrap() - 1.7).abs() < 1e-12);
    let mut e1 = vec![0.0; 9];
    e1[1] = 1.0;
    let f = m.solve(&e1).unwrap();
    let exact = heat_diag(4.0 * PI * PI, 1.0).sqrt();
    assert!((l2lambda_norm(&f, &DesignMeasure::Uniform).unwrap() - exact).abs() < 1e-10);
}

#[test]
fn space_cosine_design_matches_grid_oracle() {
    let m = ForwardModel::reaction_diffusion(1, 4, 1.0, 16, Reaction::default()).unwrap();
    let design = DesignMeasure::SpaceCosine { amplitude: 0.5, wavevector: [1, 0] };
    let lin = m.linearize(&rd_theta0(9)).unwrap();
    let cols = lin.basis_columns(8).unwrap();
    let refs: Vec<&SpaceTimeField> = cols.iter().collect();
    let g = l2lambda_gram(&refs, &design, None).unwrap();
    let oracle = dense_oracle(&cols, &design, &DMatrix::identity(1, 1));
    assert!((&g - &oracle).abs().max() < 1e-6, "{}", (&g - &oracle).abs().max());
    let n = l2lambda_norm(&cols[3], &design).unwrap();
    assert!((n - oracle[(3, 3)].sqrt()).abs() < 1e-6);
}

#[test]
fn heat_information_matrix_is_diagonal_closed_form() {
    let m = ForwardModel::heat(1, 4, 1.0, 20).unwrap();
    let a = assemble_information_matrix(&m, &[], &gaussian(1.0), &DesignMeasure::Uniform, 9).unwrap();
    let mm = a.info.matrix();
    let lam = m.eigensystem().eigenvalues();
    for i in 0..9 {
        for j in 0..9 {
            if i == j {
                assert!((mm[(i, i)] - heat_diag(lam[i], 1.0)).abs() < 1e-10);
            } else {
                assert!(mm[(i, j)].abs() < 1e-10);
            }
        }
    }
    let a4 = assemble_information_matrix(&m, &[], &gaussian(4.0), &DesignMeasure::Uniform, 9).unwrap();
    let diff = (a4.info.matrix() * 4.0 - mm).abs().max();
    assert!(diff < 1e-14, "{diff}");
}

#[test]
fn rd_information_matrix_matches_dense_oracle() {
    let m = ForwardModel::reaction_diffusion(1, 4, 1.0, 16, Reaction::default()).unwrap();
    let fisher = gaussian(0.5);
    let a = assemble_information_matrix(&m, &rd_theta0(9), &fisher, &DesignMeasure::Uniform, 9).unwrap();
    let oracle = dense_oracle(&a.columns, &DesignMeasure::Uniform, &fisher.matrix);
    let err = (a.info.matrix() - &oracle).abs().max();
    assert!(err < 1e-6, "{err}");
    assert!(a.info.condition() > 1.0);
}

#[test]
fn lan_norm_matches_direct_definition() {
    let m = ForwardModel::reaction_diffusion(1, 4, 1.0, 16, Reaction::default()).unwrap();
    let fisher = gaussian(0.7);
    let a = assemble_information_matrix(&m, &rd_theta0(9), &fisher, &DesignMeasure::Uniform, 9).unwrap();
    assert_eq!(a.info.lan_norm(&[0.0; 9]).unwrap(), 0.0);
    let mut r = rng::rng(3);
    for _ in 0..20 {
        let h: Vec<f64> = (0..9).map(|_| r.random::<f64>() - 0.5).collect();
        let direct = l2lambda_gram(&[&a.linearization.apply(&h).unwrap()], &a.design, Some(&fisher)).unwrap()[(0, 0)];
        let via_m = a.info.lan_norm(&h).unwrap().powi(2);
        assert!((via_m - direct).abs() < 1e-6 * direct.max(1.0), "{via_m} {direct}");
    }
    let mut outside = vec![0.0; 10];
    outside[9] = 1.0;
    assert!(a.info.lan_norm(&outside).is_err());
}

#[test]
fn heat_lan_norm_of_unit_vectors() {
    let m = ForwardModel::heat(1, 4, 1.0, 20).unwrap();
    let a = assemble_information_matrix(&m, &[], &gaussian(1.0), &DesignMeasure::Uniform, 9).unwrap();
    for j in 0..9 {
        let e = m.eigensystem().unit(j);
        assert!((a.info.lan_norm(&e).unwrap() - a.info.matrix()[(j, j)].sqrt()).abs() < 1e-14);
    }
}

#[test]
fn s_norm_closed_form_and_monotone_trace() {
    let m = ForwardModel::heat(1, 8, 1.0, 20).unwrap();
    let a = assemble_information_matrix(&m, &[], &gaussian(1.0), &DesignMeasure::Uniform, 17).unwrap();
    let mut e1 = vec![0.0; 17];
    e1[1] = 1.0;
    let l = 4.0 * PI * PI;
    let exact = 2.0 * l / (1.0 - (-2.0 * l).exp());
    assert!((a.info.s_norm_sq(&e1).unwrap() - exact).abs() < 1e-8);
    assert!((exact - 78.9568).abs() < 1e-4);
    assert_eq!(a.info.s_norm_sq(&[0.0; 17]).unwrap(), 0.0);

    let rd = ForwardModel::reaction_diffusion(1, 4, 1.0, 16, Reaction::default()).unwrap();
    let b = assemble_information_matrix(&rd, &rd_theta0(9), &gaussian(1.0), &DesignMeasure::Uniform, 9).unwrap();
    let mut r = rng::rng(11);
    for _ in 0..20 {
        let psi: Vec<f64> = (0..9).map(|_| r.random::<f64>() * 2.0 - 1.0).collect();
        let trace = b.info.s_norm_trace(&psi).unwrap();
        assert!(trace.windows(2).all(|w| w[1] >= w[0]));
        // trace entries agree with explicit leading-block solves
        for k in [3, 6, 9] {
            let lead = b.info.leading(k).unwrap();
            let x = lead.solve(&psi[..k]).unwrap();
            let v: f64 = x.iter().zip(&psi).map(|(a, b)| a * b).sum();
            assert!((v - trace[k - 1]).abs() < 1e-9 * v.max(1.0));
        }
    }
}

#[test]
fn s_norm_trace_grows_logarithmically_outside_h1() {
    let m = ForwardModel::heat(1, 64, 1.0, 8).unwrap();
    let a = assemble_information_matrix(&m, &[], &gaussian(1.0), &DesignMeasure::Uniform, 129).unwrap();
    let lam = m.eigensystem().eigenvalues();
    let psi: Vec<f64> = (0..129).map(|j| ((1.0 + lam[j]) * (j + 1) as f64).powf(-0.5)).collect();
    let trace = a.info.s_norm_trace(&psi).unwrap();
    let incs: Vec<f64> = [8usize, 16, 32, 64].iter().map(|&k| trace[2 * k - 1] - trace[k - 1]).collect();
    let (lo, hi) = incs.iter().fold((f64::INFINITY, 0.0f64), |(l, h), v| (l.min(*v), h.max(*v)));
    assert!(hi / lo < 1.3, "{incs:?}");
    assert!(trace[128] > 1.5 * trace[16]);
}

#[test]
fn h_orthonormal_basis() {
    let diag = InformationMatrix::new(DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 0.25, 9.0]))).unwrap();
    let hb = orthonormalize_h(&diag).unwrap();
    let expect = [0.5, 2.0, 1.0 / 3.0];
    for j in 0..3 {
        for i in 0..3 {
            let e = if i == j { expect[j] } else { 0.0 };
            assert!((hb.coefficients[(i, j)] - e).abs() < 1e-15);
        }
    }
    let rd = ForwardModel::reaction_diffusion(1, 4, 1.0, 16, Reaction::default()).unwrap();
    let a = assemble_information_matrix(&rd, &rd_theta0(9), &gaussian(1.0), &DesignMeasure::Uniform, 9).unwrap();
    let hb = orthonormalize_h(&a.info).unwrap();
    assert!(hb.residual < 1e-8);
    let mut r = rng::rng(5);
    for _ in 0..10 {
        let psi: Vec<f64> = (0..9).map(|_| r.random::<f64>() - 0.5).collect();
        let v = DVector::from_vec(psi.clone());
        let series: f64 = (0..9).map(|j| hb.coefficients.column(j).dot(&v).powi(2)).sum();
        let s = a.info.s_norm_sq(&psi).unwrap();
        assert!((series - s).abs() < 1e-8 * s.max(1.0));
    }
}

#[test]
fn isometry_and_duality_at_truncation() {
    let rd = ForwardModel::reaction_diffusion(1, 4, 1.0, 16, Reaction::default()).unwrap();
    let a = assemble_information_matrix(&rd, &rd_theta0(9), &gaussian(1.0), &DesignMeasure::Uniform, 9).unwrap();
    let mut r = rng::rng(8);
    for _ in 0..10 {
        let psi: Vec<f64> = (0..9).map(|_| r.random::<f64>() - 0.5).collect();
        let x = a.info.solve(&psi).unwrap();
        let h_norm = a.info.lan_norm(&x).unwrap();
        let s = a.info.s_norm_sq(&psi).unwrap().sqrt();
        assert!((h_norm - s).abs() < 1e-10);
        // the supremum over the unit 𝓗-sphere is attained at M⁻¹ψ / ‖M⁻¹ψ‖_𝓗
        let attained: f64 = x.iter().zip(&psi).map(|(a, b)| a * b).sum::<f64>() / h_norm;
        assert!((attained - s).abs() < 1e-10);
        for _ in 0..50 {
            let v: Vec<f64> = (0..9).map(|_| r.random::<f64>() - 0.5).collect();
            let n = a.info.lan_norm(&v).unwrap();
            let pair: f64 = v.iter().zip(&psi).map(|(a, b)| a * b).sum::<f64>() / n;
            assert!(pair.abs() <= s * (1.0 + 1e-12));
        }
    }
}

#[test]
fn rejects_bad_matrices() {
    let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
    assert!(matches!(InformationMatrix::new(asym), Err(Error::Singular(_))));
    let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
    assert!(InformationMatrix::new(indefinite).is_err());
    let ill = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-13]));
    assert!(matches!(InformationMatrix::new(ill), Err(Error::IllConditioned { .. })));
    let m = ForwardModel::heat(1, 2, 1.0, 4).unwrap();
    assert!(assemble_information_matrix(&m, &[], &gaussian(1.0), &DesignMeasure::Uniform, 6).is_err());
}

#[test]
fn basis_resolution_check() {
    let es = EigenSystem::build(2, 3, crate::spectral::Subspace::Full).unwrap();
    assert!(check_basis_resolved(&es, 29).is_ok());
    // the 30th mode has |k|² = 10 > 9
    assert!(check_basis_resolved(&es, 30).is_err());
}

#[test]
fn heat_norm_equivalence_band_is_modewise_closed_form() {
    let m = ForwardModel::heat(1, 32, 1.0, 8).unwrap();
    let lin = m.linearize(&[]).unwrap();
    let cols = lin.basis_columns(64).unwrap();
    let rep = norm_equivalence_diagnostic(&cols, &DesignMeasure::Uniform, &[32, 64], 200, 1.0, 1).unwrap();
    let es = m.eigensystem();
    let lam = es.eigenvalues();
    for lv in &rep.levels {
        let r2: Vec<f64> = (0..lv.k).map(|j| (1.0 + lam[j]) * heat_diag(lam[j], 1.0)).collect();
        let lo = r2.iter().copied().fold(f64::INFINITY, f64::min).sqrt();
        let hi = r2.iter().copied().fold(0.0, f64::max).sqrt();
        assert!((lv.bound_min - lo).abs() < 1e-8 && (lv.bound_max - hi).abs() < 1e-8);
        assert!(lv.ratio_min >= lo - 1e-12 && lv.ratio_max <= hi + 1e-12);
        assert!(lo * lo >= 0.49 && hi * hi <= 1.01);
    }
    // a random ratio equals √(Σ r_j² z_j²)/|z| with the same stream
    let again = norm_equivalence_diagnostic(&cols, &DesignMeasure::Uniform, &[32, 64], 200, 1.0, 1).unwrap();
    assert_eq!(rep, again);
}

#[test]
fn rd_norm_equivalence_is_stable_under_refinement() {
    let m = ForwardModel::reaction_diffusion(1, 32, 1.0, 64, Reaction::default()).unwrap();
    let mut theta0 = vec![0.0; 65];
    theta0[..5].copy_from_slice(&[0.5, 0.4, -0.3, 0.0, 0.1]);
    let lin = m.linearize(&theta0).unwrap();
    let cols = lin.basis_columns(64).unwrap();
    let rep = norm_equivalence_diagnostic(&cols, &DesignMeasure::Uniform, &[32, 64], 200, 1.0, 2).unwrap();
    let (l32, l64) = (&rep.levels[0], &rep.levels[1]);
    assert!(l64.ratio_max / l64.ratio_min < 20.0);
    assert!(l64.ratio_max < 1.1 * l32.ratio_max);
    assert!(l64.bound_min > 0.0);
}

#[test]
fn information_matrix_exists_for_every_noise_family() {
    let rd = ForwardModel::reaction_diffusion(1, 4, 1.0, 16, Reaction::default()).unwrap();
    let families = [
        NoiseFamily::Gaussian { variance: 1.0 },
        NoiseFamily::Laplace { scale: 1.0 },
        NoiseFamily::Logistic { scale: 0.5 },
        NoiseFamily::CosineBump,
    ];
    let mut conds = Vec::new();
    for fam in families {
        let f = NoiseModel::new(fam).unwrap().fisher_matrix().unwrap();
        let a = assemble_information_matrix(&rd, &rd_theta0(9), &f, &DesignMeasure::Uniform, 9).unwrap();
        conds.push(a.info.condition());
    }
    // scalar noise only rescales M, so the condition number is shared
    for c in &conds {
        assert!((c / conds[0] - 1.0).abs() < 1e-8);
    }
}

#[test]
fn vector_noise_couples_components() {
    let m = ForwardModel::navier_stokes(3, 0.5, 20, 0.1, &[]).unwrap();
    let mut theta0 = vec![0.0; 10];
    theta0[0] = 0.4;
    theta0[3] = -0.2;
    let cov = [[1.0, 0.3], [0.3, 0.5]];
    let f = NoiseModel::new(NoiseFamily::BivariateGaussian { covariance: cov }).unwrap().fisher_matrix().unwrap();
    let a = assemble_information_matrix(&m, &theta0, &f, &DesignMeasure::Uniform, 8).unwrap();
    let oracle = dense_oracle(&a.columns, &DesignMeasure::Uniform, &f.matrix);
    let err = (a.info.matrix() - &oracle).abs().max();
    assert!(err < 1e-6, "{err}");
    let design = DesignMeasure::SpaceCosine { amplitude: 0.3, wavevector: [1, 1] };
    let refs: Vec<&SpaceTimeField> = a.columns.iter().collect();
    let g = l2lambda_gram(&refs, &design, Some(&f)).unwrap();
    let oracle = dense_oracle(&a.columns, &design, &f.matrix);
    assert!((g - oracle).abs().max() < 1e-6);
}

#[test]
fn design_sampling_and_validation() {
    let d = DesignMeasure::SpaceCosine { amplitude: 0.5, wavevector: [1, 0] };
    assert!(d.validate(1).is_ok());
    assert!(DesignMeasure::SpaceCosine { amplitude: 1.0, wavevector: [1, 0] }.validate(1).is_err());
    assert!(DesignMeasure::SpaceCosine { amplitude: 0.2, wavevector: [0, 1] }.validate(1).is_err());
    let mut r = rng::rng(1);
    let n = 40000;
    let mut c = 0.0;
    for _ in 0..n {
        let (t, x) = d.sample(&mut r, 2.0, 1);
        assert!((0.0..2.0).contains(&t) && x[1] == 0.0);
        c += (2.0 * PI * x[0]).cos();
    }
    // E cos 2πx = a/2 under (1 + a cos 2πx)
    let se = (0.5f64 / n as f64).sqrt();
    assert!((c / n as f64 - 0.25).abs() < 4.0 * se);
}

mod invariants {
    use std::sync::OnceLock;

    use proptest::prelude::*;

    use super::*;

    fn rd_info() -> &'static InformationMatrix {
        static INFO: OnceLock<InformationMatrix> = OnceLock::new();
        INFO.get_or_init(|| {
            let m = ForwardModel::reaction_diffusion(1, 8, 1.0, 16, Reaction::default()).unwrap();
            assemble_information_matrix(&m, &[0.5, 0.4, -0.3], &gaussian(1.0), &DesignMeasure::Uniform, 17).unwrap().info
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn truncated_bounds_grow_with_k(psi in prop::collection::vec(-10.0f64..10.0, 17)) {
            let info = rd_info();
            let trace = info.s_norm_trace(&psi).unwrap();
            for w in trace.windows(2) {
                prop_assert!(w[1] >= w[0]);
            }
            let full = info.s_norm_sq(&psi).unwrap();
            prop_assert!((trace[16] - full).abs() <= 1e-10 * full.max(1.0));
            let k = 1 + psi.iter().map(|v| v.abs() as usize).sum::<usize>() % 16;
            let lead = info.leading(k).unwrap().s_norm_sq(&psi[..k]).unwrap();
            prop_assert!((trace[k - 1] - lead).abs() <= 1e-9 * lead.max(1.0));
        }

        #[test]
        fn lan_norm_is_the_dual_of_the_s_norm(h in prop::collection::vec(-5.0f64..5.0, 17)) {
            // sup_ψ ⟨ψ,h⟩²/‖ψ‖²_𝕊 is attained at ψ = Mh and equals ‖h‖²_LAN
            let info = rd_info();
            let mh = info.matrix() * nalgebra::DVector::from_column_slice(&h);
            let lan = info.lan_norm(&h).unwrap().powi(2);
            let dual = mh.dot(&nalgebra::DVector::from_column_slice(&h)).powi(2) / info.s_norm_sq(mh.as_slice()).unwrap();
            prop_assert!((lan - dual).abs() <= 1e-9 * lan.max(1e-12));
        }
    }
}
