use super::*;
use crate::covariance::{OmegaTemplate, VcBasis};
use crate::oracle::{derivative, gradient, rel_err};
use crate::sampler::sample_unit;
use approx::assert_relative_eq;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn design(rng: &mut ChaCha8Rng, d: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, p, |_, c| if c == 0 { 1.0 } else { rng.gen_range(-1.0..1.0) })
}

fn draw_y(fam: &Family, rng: &mut ChaCha8Rng) -> f64 {
    match fam {
        Family::Gaussian { .. } => rng.gen_range(-2.0..2.0),
        Family::Poisson => rng.gen_range(0..5) as f64,
        Family::Bernoulli => rng.gen_range(0..2) as f64,
        _ => rng.gen_range(0..8) as f64,
    }
}

fn cov_of(kind: CovKind, rng: &mut ChaCha8Rng) -> CovarianceSpec {
    match kind {
        CovKind::Vc => CovarianceSpec::VarianceComponents {
            theta: vec![rng.gen_range(0.05..1.0), rng.gen_range(0.05..1.0)],
            basis: VcBasis::Templates(vec![OmegaTemplate::Ones, OmegaTemplate::Identity]),
        },
        CovKind::Ar1 => CovarianceSpec::ar1(rng.gen_range(0.05..1.0), rng.gen_range(-0.8..0.8)),
        CovKind::Cs => CovarianceSpec::cs(rng.gen_range(0.05..1.0), rng.gen_range(-0.15..0.8)),
    }
}

fn random_problem(
    fam: Family,
    kind: CovKind,
    rng: &mut ChaCha8Rng,
) -> (QuasiCopulaModel, Vec<SamplingUnit>) {
    let fam = match fam {
        Family::Gaussian { .. } => Family::Gaussian { tau: rng.gen_range(0.3..3.0) },
        Family::NegativeBinomial { .. } => Family::NegativeBinomial { r: rng.gen_range(0.5..20.0) },
        f => f,
    };
    let p = 3;
    let beta = DVector::from_fn(p, |_, _| rng.gen_range(-0.5..0.5));
    let model = QuasiCopulaModel::new(beta, cov_of(kind, rng), vec![fam]);
    let units = (0..6)
        .map(|_| {
            let d = rng.gen_range(2..6);
            let y = DVector::from_fn(d, |_, _| draw_y(&fam, rng));
            SamplingUnit::new(y, design(rng, d, p))
        })
        .collect();
    (model, units)
}

fn fd_gradient(model: &QuasiCopulaModel, units: &[SamplingUnit], layout: &Layout) -> Vec<f64> {
    let x = layout.pack(model);
    gradient(|v| loglik(&layout.unpack(model, v), units).unwrap(), &x, 1e-4)
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let families = [
        Family::Gaussian { tau: 1.0 },
        Family::Poisson,
        Family::Bernoulli,
        Family::NegativeBinomial { r: 1.0 },
    ];
    let mut worst: f64 = 0.0;
    for fam in families {
        for kind in [CovKind::Vc, CovKind::Ar1, CovKind::Cs] {
            for _ in 0..10 {
                let (model, units) = random_problem(fam, kind, &mut rng);
                let layout = Layout::new(&model, &units);
                let (_, g) = loglik_and_gradient(&model, &units, &layout).unwrap();
                let fd = fd_gradient(&model, &units, &layout);
                let e = rel_err(g.as_slice(), &fd, 1.0);
                worst = worst.max(e);
                assert!(e < 1e-6, "{fam:?} {kind:?}: {:?} vs {fd:?}", g.as_slice());
            }
        }
    }
    assert!(worst < 1e-6);
}

#[test]
fn loglik_agrees_with_model_density() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for fam in [Family::Poisson, Family::NegativeBinomial { r: 1.0 }, Family::Gaussian { tau: 1.0 }] {
        let (model, units) = random_problem(fam, CovKind::Ar1, &mut rng);
        assert_relative_eq!(
            loglik(&model, &units).unwrap(),
            model.loglikelihood(&units).unwrap(),
            max_relative = 1e-12
        );
    }
}

#[test]
fn dispersion_second_derivative_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for fam in [Family::Gaussian { tau: 1.0 }, Family::NegativeBinomial { r: 1.0 }] {
        for kind in [CovKind::Vc, CovKind::Ar1] {
            let (model, units) = random_problem(fam, kind, &mut rng);
            let phi = model.families[0].dispersion().unwrap();
            let at = |v: f64| {
                let mut m = model.clone();
                m.families[0] = m.families[0].with_dispersion(v);
                m
            };
            let d1 = |v: f64| {
                let m = at(v);
                units
                    .iter()
                    .map(|u| UnitState::new(&m, u).unwrap().dispersion_derivatives(&m.families, 0).0)
                    .sum::<f64>()
            };
            let d2: f64 = units
                .iter()
                .map(|u| UnitState::new(&model, u).unwrap().dispersion_derivatives(&model.families, 0).1)
                .sum();
            let fd = derivative(d1, phi, 1e-4 * phi);
            assert!((d2 - fd).abs() < 1e-6 * fd.abs().max(1.0), "{fam:?}: {d2} vs {fd}");
        }
    }
}

#[test]
fn nb_score_without_copula_is_profile_score() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut model, units) = random_problem(Family::NegativeBinomial { r: 1.0 }, CovKind::Vc, &mut rng);
    model.covariance = model.covariance.with_params(&[0.0, 0.0]);
    let r = model.families[0].dispersion().unwrap();
    let layout = Layout::new(&model, &units);
    let g = loglik_and_gradient(&model, &units, &layout).unwrap().1;
    let profile = |size: f64| -> f64 {
        units
            .iter()
            .flat_map(|u| {
                let eta = model.linear_predictor(u);
                (0..u.d())
                    .map(|j| {
                        Family::NegativeBinomial { r: size }
                            .law_at(eta[j])
                            .unwrap()
                            .ln_pdf(u.y[j])
                            .unwrap()
                    })
                    .collect::<Vec<_>>()
            })
            .sum()
    };
    let fd = derivative(profile, r, 1e-5 * r);
    assert_relative_eq!(g[layout.len() - 1], fd, max_relative = 1e-7);
}

#[test]
fn beta_score_without_copula_is_glm_score() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut model, units) = random_problem(Family::Poisson, CovKind::Vc, &mut rng);
    model.covariance = model.covariance.with_params(&[0.0, 0.0]);
    let (g, h) = beta_score_and_hessian(&model, &units).unwrap();
    let mut gs = DVector::zeros(3);
    let mut xwx = DMatrix::zeros(3, 3);
    for u in &units {
        let eta = model.linear_predictor(u);
        let mu = eta.map(f64::exp);
        gs += u.x.tr_mul(&(&u.y - &mu));
        xwx += u.x.tr_mul(&DMatrix::from_diagonal(&mu)) * &u.x;
    }
    assert!(rel_err(g.as_slice(), gs.as_slice(), 1.0) < 1e-12);
    assert!(rel_err(h.as_slice(), (-xwx).as_slice(), 1.0) < 1e-12);
}

#[test]
fn beta_hessian_is_symmetric_negative_semidefinite() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for fam in [Family::Poisson, Family::Bernoulli, Family::NegativeBinomial { r: 1.0 }] {
        for kind in [CovKind::Vc, CovKind::Ar1, CovKind::Cs] {
            let (model, units) = random_problem(fam, kind, &mut rng);
            let (_, h) = beta_score_and_hessian(&model, &units).unwrap();
            assert!((&h - h.transpose()).amax() < 1e-12 * h.amax());
            let top = h.symmetric_eigen().eigenvalues.max();
            assert!(top <= 1e-10, "{top}");
        }
    }
}

fn gaussian_units(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<SamplingUnit> {
    (0..n)
        .map(|_| {
            let x = design(rng, d, 2);
            let y = DVector::from_fn(d, |j, _| 0.5 + 2.0 * x[(j, 1)] + rng.gen_range(-1.0..1.0));
            SamplingUnit::new(y, x)
        })
        .collect()
}

fn ols(units: &[SamplingUnit]) -> DVector<f64> {
    let p = units[0].x.ncols();
    let mut xtx = DMatrix::zeros(p, p);
    let mut xty = DVector::zeros(p);
    for u in units {
        xtx += u.x.tr_mul(&u.x);
        xty += u.x.tr_mul(&u.y);
    }
    xtx.cholesky().unwrap().solve(&xty)
}

#[test]
fn gaussian_newton_step_lands_on_ols() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let units = gaussian_units(&mut rng, 30, 3);
    let model = QuasiCopulaModel::new(
        DVector::from_vec(vec![10.0, -7.0]),
        CovarianceSpec::random_intercept(0.0),
        vec![Family::Gaussian { tau: 2.0 }],
    );
    let step = beta_newton_step(&model, &units, &FitConfig::default()).unwrap();
    assert!(rel_err(step.model.beta.as_slice(), ols(&units).as_slice(), 1.0) < 1e-8);
    let again = beta_newton_step(&step.model, &units, &FitConfig::default()).unwrap();
    assert!(rel_err(again.model.beta.as_slice(), step.model.beta.as_slice(), 1.0) < 1e-9);
}

fn poisson_qc_data(n: usize, d: usize, theta: f64, seed: u64) -> (QuasiCopulaModel, Vec<SamplingUnit>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = QuasiCopulaModel::new(
        DVector::from_vec(vec![0.2, -0.1, 0.15]),
        CovarianceSpec::random_intercept(theta),
        vec![Family::Poisson],
    );
    let units = (0..n)
        .map(|_| {
            let x = DMatrix::from_fn(d, 3, |_, c| {
                if c == 0 {
                    1.0
                } else {
                    crate::glm_base::std_normal_quantile(rng.gen_range(1e-9..1.0))
                }
            });
            let mut u = SamplingUnit::new(DVector::zeros(d), x);
            u.y = sample_unit(&truth, &u, &mut rng).unwrap();
            u
        })
        .collect();
    (truth, units)
}

#[test]
fn poisson_newton_steps_increase_loglik() {
    let (truth, units) = poisson_qc_data(300, 4, 0.1, 9);
    let mut model = truth.clone();
    model.beta = DVector::zeros(3);
    let mut ll = loglik(&model, &units).unwrap();
    for _ in 0..3 {
        let s = beta_newton_step(&model, &units, &FitConfig::default()).unwrap();
        assert!(s.loglik > ll);
        ll = s.loglik;
        model = s.model;
    }
}

#[test]
fn vc_parts_examples() {
    let model = QuasiCopulaModel::new(
        DVector::from_vec(vec![0.0]),
        CovarianceSpec::VarianceComponents {
            theta: vec![1.0, 1.0],
            basis: VcBasis::Templates(vec![OmegaTemplate::Ones, OmegaTemplate::Identity]),
        },
        vec![Family::Gaussian { tau: 1.0 }],
    );
    let u = SamplingUnit::new(DVector::from_vec(vec![1.0, 1.0]), DMatrix::from_element(2, 1, 1.0));
    let (b, c) = vc_parts(&model, &[u]).unwrap();
    assert_eq!(b[(0, 0)], 2.0);
    assert_eq!(b[(0, 1)], 1.0);
    assert_eq!(c[(0, 0)], 1.0);
    let u5 = SamplingUnit::new(DVector::zeros(5), DMatrix::from_element(5, 1, 1.0));
    let (b, c) = vc_parts(&model, &[u5]).unwrap();
    assert_eq!(b[(0, 0)], 0.0);
    assert_eq!(c[(0, 1)], 2.5);
    let ar = QuasiCopulaModel::new(model.beta.clone(), CovarianceSpec::ar1(1.0, 0.2), model.families.clone());
    assert!(matches!(vc_parts(&ar, &[]), Err(QcError::Unsupported(_))));
}

#[test]
fn theta_mm_examples() {
    let one = |v: f64| DMatrix::from_element(1, 1, v);
    assert_relative_eq!(theta_mm_step(&[1.0], &one(2.0), &one(1.0))[0], 4.0 / 3.0, epsilon = 1e-15);
    assert_eq!(theta_mm_step(&[0.0], &one(2.0), &one(1.0))[0], 0.0);
    let b = DMatrix::from_row_slice(2, 2, &[0.3, 1.2, 0.7, 0.1]);
    assert_eq!(theta_mm_step(&[0.4, 2.0], &b, &b), vec![0.4, 2.0]);
    let (g, _) = vc_grad_hess(&[0.4, 2.0], &b, &b);
    assert_eq!(g.amax(), 0.0);
}

#[test]
fn vc_grad_hess_matches_finite_differences_and_vanishes_at_fixed_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 40;
    let b = DMatrix::from_fn(n, 2, |_, _| rng.gen_range(0.0..3.0));
    let c = DMatrix::from_fn(n, 2, |_, k| if k == 0 { 1.5 } else { 0.8 });
    let theta = [0.7, 0.3];
    let (g, h) = vc_grad_hess(&theta, &b, &c);
    let fd = gradient(|t| vc_objective(t, &b, &c), &theta, 1e-4);
    assert!(rel_err(g.as_slice(), &fd, 1.0) < 1e-9);
    for k in 0..2 {
        let fdk = gradient(|t| vc_grad_hess(t, &b, &c).0[k], &theta, 1e-4);
        assert!(rel_err(&[h[(k, 0)], h[(k, 1)]], &fdk, 1.0) < 1e-8);
    }
    let mut t = vec![1.0, 1.0];
    for _ in 0..20_000 {
        t = theta_mm_step(&t, &b, &c);
    }
    let (g, _) = vc_grad_hess(&t, &b, &c);
    let interior = t.iter().all(|v| *v > 1e-6);
    if interior {
        assert!(g.amax() < 1e-8, "{t:?} {g}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]
    #[test]
    fn mm_never_decreases_objective(
        seed in 0u64..1_000_000,
        n in 1usize..50,
        m in 1usize..4,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = DMatrix::from_fn(n, m, |_, _| rng.gen_range(0.0..4.0));
        let c = DMatrix::from_fn(n, m, |_, _| rng.gen_range(0.1..3.0));
        let mut theta: Vec<f64> = (0..m)
            .map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..3.0) })
            .collect();
        let zeros: Vec<bool> = theta.iter().map(|t| *t == 0.0).collect();
        let mut f = vc_objective(&theta, &b, &c);
        for _ in 0..25 {
            theta = theta_mm_step(&theta, &b, &c);
            let next = vc_objective(&theta, &b, &c);
            prop_assert!(next >= f - 1e-12, "{next} < {f}");
            f = next;
        }
        for (t, z) in theta.iter().zip(zeros) {
            prop_assert_eq!(*t == 0.0, z);
        }
    }

    #[test]
    fn gaussian_tau_mm_never_decreases(seed in 0u64..1_000_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, d) = (rng.gen_range(3..20), rng.gen_range(1..5));
        let units = gaussian_units(&mut rng, n, d);
        let model = QuasiCopulaModel::new(
            DVector::from_vec(vec![rng.gen_range(-1.0..1.0), rng.gen_range(0.0..3.0)]),
            CovarianceSpec::VarianceComponents {
                theta: vec![rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0)],
                basis: VcBasis::Templates(vec![OmegaTemplate::Ones, OmegaTemplate::Identity]),
            },
            vec![Family::Gaussian { tau: rng.gen_range(0.1..5.0) }],
        );
        let before = loglik(&model, &units).unwrap();
        let (tau, theta) = gaussian_tau_mm_step(&model, &units).unwrap();
        let mut next = model.clone();
        next.families[0] = Family::Gaussian { tau };
        next.covariance = model.covariance.with_params(&theta);
        let after = loglik(&next, &units).unwrap();
        prop_assert!(tau > 0.0);
        prop_assert!(after >= before - 1e-10 * before.abs().max(1.0), "{after} < {before}");
    }
}

#[test]
fn gaussian_tau_mm_without_copula_is_classical_precision() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let units = gaussian_units(&mut rng, 25, 3);
    let model = QuasiCopulaModel::new(
        DVector::from_vec(vec![0.4, 1.9]),
        CovarianceSpec::random_intercept(0.0),
        vec![Family::Gaussian { tau: 3.0 }],
    );
    let (tau, theta) = gaussian_tau_mm_step(&model, &units).unwrap();
    let rss: f64 = units.iter().map(|u| (&u.y - &u.x * &model.beta).norm_squared()).sum();
    assert_relative_eq!(tau, 75.0 / rss, max_relative = 1e-14);
    assert_eq!(theta, vec![0.0]);
    let mut perfect = units[..2].to_vec();
    for u in perfect.iter_mut() {
        u.y = &u.x * &model.beta;
    }
    assert!(matches!(gaussian_tau_mm_step(&model, &perfect), Err(QcError::Degenerate(_))));
}

#[test]
fn gaussian_tau_mm_fixed_point_at_joint_mle() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let truth = QuasiCopulaModel::new(
        DVector::from_vec(vec![0.5, 1.0]),
        CovarianceSpec::random_intercept(0.5),
        vec![Family::Gaussian { tau: 2.0 }],
    );
    let units: Vec<SamplingUnit> = (0..200)
        .map(|_| {
            let mut u = SamplingUnit::new(DVector::zeros(4), design(&mut rng, 4, 2));
            u.y = sample_unit(&truth, &u, &mut rng).unwrap();
            u
        })
        .collect();
    let mut model = truth.clone();
    for _ in 0..5000 {
        let (tau, theta) = gaussian_tau_mm_step(&model, &units).unwrap();
        model.families[0] = Family::Gaussian { tau };
        model.covariance = model.covariance.with_params(&theta);
    }
    let tau0 = model.families[0].dispersion().unwrap();
    let (tau1, _) = gaussian_tau_mm_step(&model, &units).unwrap();
    assert!((tau1 - tau0).abs() < 1e-8 * tau0);
}

#[test]
fn ar1_cs_gradient_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for kind in [CovKind::Ar1, CovKind::Cs] {
        let (model, units) = random_problem(Family::Poisson, kind, &mut rng);
        let gh = ar1_cs_grad_hess(&model, &units).unwrap();
        let layout = Layout::new(&model, &units);
        let fd = fd_gradient(&model, &units, &layout);
        assert!(rel_err(gh.g.as_slice(), &fd[3..5], 1.0) < 1e-6);
        assert!(!gh.clamped);
        let f = |v: &[f64]| -> f64 {
            let mut m = model.clone();
            m.covariance = m.covariance.with_params(v);
            ar1_cs_grad_hess(&m, &units).unwrap().g.iter().sum()
        };
        let fdh = gradient(f, &model.covariance.params(), 1e-4);
        let row_sum = [gh.h[(0, 0)] + gh.h[(1, 0)], gh.h[(0, 1)] + gh.h[(1, 1)]];
        assert!(rel_err(&row_sum, &fdh, 1.0) < 1e-6);

        let mut zero = model.clone();
        zero.covariance = zero.covariance.with_params(&[0.0, 0.3]);
        let g0 = ar1_cs_grad_hess(&zero, &units).unwrap().g;
        let direct: f64 = units
            .iter()
            .map(|u| {
                let r = zero.standardized_residuals(u).unwrap();
                let cov = CovarianceSpec::ar1(1.0, 0.3);
                let v = if kind == CovKind::Cs {
                    CovarianceSpec::cs(1.0, 0.3).unit(u.d(), &[]).unwrap().quad(&r)
                } else {
                    cov.unit(u.d(), &[]).unwrap().quad(&r)
                };
                0.5 * v - 0.5 * u.d() as f64
            })
            .sum();
        assert_relative_eq!(g0[0], direct, max_relative = 1e-12);
    }
    let mut cs = random_problem(Family::Poisson, CovKind::Cs, &mut rng);
    cs.0.covariance = CovarianceSpec::cs(0.5, 0.0);
    let g = ar1_cs_grad_hess(&cs.0, &cs.1).unwrap().g;
    let off: f64 = cs
        .1
        .iter()
        .map(|u| {
            let r = cs.0.standardized_residuals(u).unwrap();
            0.5 * 0.5 * (r.sum().powi(2) - r.norm_squared()) / (1.0 + 0.25 * r.norm_squared())
        })
        .sum();
    assert_relative_eq!(g[1], off, max_relative = 1e-12);
    cs.0.covariance = CovarianceSpec::cs(0.5, 1.5);
    assert!(ar1_cs_grad_hess(&cs.0, &cs.1).unwrap().clamped);
}

#[test]
fn sigma2_mm_and_rho_newton_increase_loglik() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for kind in [CovKind::Ar1, CovKind::Cs] {
        let (model, units) = random_problem(Family::Poisson, kind, &mut rng);
        let l0 = loglik(&model, &units).unwrap();
        let m1 = sigma2_mm_step(&model, &units).unwrap();
        let l1 = loglik(&m1, &units).unwrap();
        assert!(l1 >= l0 - 1e-12);
        let (m2, l2) = rho_newton_step(&m1, &units, &FitConfig::default()).unwrap();
        assert!(l2 >= l1);
        assert_relative_eq!(l2, loglik(&m2, &units).unwrap(), max_relative = 1e-14);
    }
}

#[test]
fn nb_newton_step_improves_and_respects_floor() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let (model, units) = random_problem(Family::NegativeBinomial { r: 1.0 }, CovKind::Vc, &mut rng);
    let l0 = loglik(&model, &units).unwrap();
    let s = nb_r_newton_step(&model, &units, &FitConfig::default()).unwrap();
    assert!(s.loglik >= l0);
    assert!(s.model.families[0].dispersion().unwrap() >= NB_R_FLOOR);
    let pois = QuasiCopulaModel::new(model.beta.clone(), model.covariance.clone(), vec![Family::Poisson]);
    assert!(nb_r_newton_step(&pois, &units, &FitConfig::default()).is_err());
}

#[test]
fn init_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let units = gaussian_units(&mut rng, 20, 3);
    let template = QuasiCopulaModel::new(
        DVector::zeros(2),
        CovarianceSpec::random_intercept(0.0),
        vec![Family::Gaussian { tau: 1.0 }],
    );
    let m = init_params(&units, &template, &FitConfig::default()).unwrap();
    assert!(rel_err(m.beta.as_slice(), ols(&units).as_slice(), 1.0) < 1e-10);

    let ones: Vec<SamplingUnit> = (0..5)
        .map(|_| SamplingUnit::new(DVector::from_element(3, 1.0), DMatrix::from_element(3, 1, 1.0)))
        .collect();
    let pois = QuasiCopulaModel::new(DVector::zeros(1), CovarianceSpec::random_intercept(0.1), vec![Family::Poisson]);
    let m = init_params(&ones, &pois, &FitConfig::default()).unwrap();
    assert!(m.beta[0].abs() < 1e-12);

    let mut dup = units.clone();
    for u in dup.iter_mut() {
        u.x = DMatrix::from_fn(u.d(), 2, |j, _| u.x[(j, 1)]);
    }
    assert!(matches!(init_params(&dup, &template, &FitConfig::default()), Err(QcError::Design(_))));
}

#[test]
fn init_loglik_is_close_to_fitted() {
    let (truth, units) = poisson_qc_data(1000, 5, 0.1, 18);
    let mut template = truth.clone();
    template.covariance = CovarianceSpec::random_intercept(1.0);
    let init = init_params(&units, &template, &FitConfig::default()).unwrap();
    let f = fit(&units, &template, &FitConfig::default()).unwrap();
    let li = loglik(&init, &units).unwrap();
    assert!((li - f.loglik).abs() < 0.1 * f.loglik.abs());
    assert!(f.converged, "{:?}", f.warnings);
    assert!(f.trace.windows(2).all(|w| w[1] >= w[0] - 1e-10 * w[0].abs()), "{:?}", f.trace);
    let (g, _) = beta_score_and_hessian(&f.model, &units).unwrap();
    assert!(g.amax() < 1e-6 * (1.0 + f.loglik.abs()));
}

#[test]
fn fixed_independent_gaussian_fit_is_ols_with_classical_se() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let units = gaussian_units(&mut rng, 40, 3);
    let template = QuasiCopulaModel::new(
        DVector::zeros(2),
        CovarianceSpec::random_intercept(0.0),
        vec![Family::Gaussian { tau: 4.0 }],
    );
    let config = FitConfig {
        fix_covariance: true,
        fix_dispersion: true,
        ..FitConfig::default()
    };
    let f = fit(&units, &template, &config).unwrap();
    assert!(rel_err(f.model.beta.as_slice(), ols(&units).as_slice(), 1.0) < 1e-10);
    let mut xtx = DMatrix::zeros(2, 2);
    for u in &units {
        xtx += u.x.tr_mul(&u.x);
    }
    let cov = (xtx * 4.0).try_inverse().unwrap();
    let se = f.se.unwrap();
    assert_relative_eq!(se[0], cov[(0, 0)].sqrt(), max_relative = 1e-8);
    assert_relative_eq!(se[1], cov[(1, 1)].sqrt(), max_relative = 1e-8);
    assert_eq!(se[2], 0.0);
}

#[test]
fn lrt_examples() {
    let (truth, units) = poisson_qc_data(100, 3, 0.1, 20);
    let f = fit(&units, &truth, &FitConfig::default()).unwrap();
    let t = lrt(&f, &f, 1).unwrap();
    assert_eq!(t.statistic, 0.0);
    assert_eq!(t.p_value, 1.0);
    let null = fit(
        &units,
        &QuasiCopulaModel::new(truth.beta.clone(), CovarianceSpec::random_intercept(0.0), vec![Family::Poisson]),
        &FitConfig {
            fix_covariance: true,
            ..FitConfig::default()
        },
    )
    .unwrap();
    let t = lrt(&f, &null, 1).unwrap();
    assert!(t.statistic >= 0.0 && t.p_value <= 1.0);
    assert!(t.conservative);
    assert!(matches!(lrt(&null, &f, 1), Err(QcError::Nesting(_))) || t.statistic < 2e-6);
    assert!(lrt(&f, &null, 0).is_err());
}

#[test]
fn se_shrinks_with_sample_size() {
    let (truth, small) = poisson_qc_data(300, 3, 0.1, 22);
    let (_, large) = poisson_qc_data(3000, 3, 0.1, 23);
    let a = fit(&small, &truth, &FitConfig::default()).unwrap();
    let b = fit(&large, &truth, &FitConfig::default()).unwrap();
    let (sa, sb) = (a.se.unwrap(), b.se.unwrap());
    for j in 0..3 {
        let ratio = sa[j] / sb[j];
        assert!(ratio > 10f64.sqrt() * 0.8 && ratio < 10f64.sqrt() * 1.25, "{ratio}");
    }
}
