use super::*;
use crate::forward::{observe, LinearObserver};
use crate::priors::{sample_prior_ensemble, GaussVonMises, NormalPrior};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

fn scale_prior() -> HyperPrior {
    HyperPrior::Scale1d {
        log_sigma: NormalPrior::new(0.0, 0.3),
        log_range: NormalPrior::new((0.15f64).ln(), 0.3),
    }
}

fn line_setup(n: usize, noise: f64) -> (GridSpec, LinearObserver, ObsSet) {
    let grid = GridSpec::line(n, 0.0, 1.0).unwrap();
    let obs = LinearObserver::every_nth(grid, 4, 0).unwrap();
    let truth: Vec<f64> = (0..n).map(|i| (i as f64 * 0.2).sin()).collect();
    let clean = obs.observe(&truth).unwrap();
    let set = observe(&obs, &clean, &vec![0.0; clean.len()], vec![noise; clean.len()]).unwrap();
    (grid, obs, set)
}

fn problem<'a>(grid: GridSpec, fwd: &'a LinearObserver, obs: &'a ObsSet, mode: HyperMode) -> Problem<'a> {
    Problem {
        grid,
        family: KernelFamily::Gaussian1d,
        prior: scale_prior(),
        prior_mean: vec![0.0; grid.len()],
        forward: fwd,
        obs,
        angle: AngleTreatment::Circular,
        hyper_mode: mode,
    }
}

fn fixed() -> HyperMode {
    HyperMode::Fixed(HyperParams::Scale1d {
        log_sigma: 0.0,
        log_range: (0.15f64).ln(),
    })
}

#[test]
fn mismatch_basics() {
    assert_eq!(mismatch(&[1.0, 2.0], &[1.0, 2.0], &[0.1, 0.1]).unwrap(), 0.0);
    let v = mismatch(&[1.1, 2.1, 3.1], &[1.0, 2.0, 3.0], &[0.1; 3]).unwrap();
    assert!((v - 1.5).abs() < 1e-12);
    assert!(mismatch(&[1.0], &[1.0, 2.0], &[0.1, 0.1]).is_err());
}

#[test]
fn linear_step_solves_the_critical_point() {
    let (grid, fwd, obs) = line_setup(40, 0.05);
    let p = problem(grid, &fwd, &obs, fixed());
    let ens = sample_prior_ensemble(1, &p.prior, 40, &obs.noise_std, 3).unwrap();
    let x0 = p.conform(&ens.members[0]);
    let eps = &ens.perturbed_obs[0];
    let ev = p.evaluate(&x0).unwrap();
    let x1 = rml_update(&p, &x0, &x0, eps, &ev.g, 0.0).unwrap();
    // ∇J = (z − z′) + (G_m L)ᵀ C_d⁻¹ (g(z) + ε′ − d°).
    let l = build_l(&grid, &p.family, &x1.hyper).unwrap();
    let g1 = p.evaluate(&x1).unwrap().g;
    let w: Vec<f64> = g1
        .iter()
        .zip(eps)
        .zip(&obs.values)
        .zip(&obs.noise_std)
        .map(|(((g, e), d), s)| (g + e - d) / (s * s))
        .collect();
    let gl = fwd.selection_matrix() * l.l();
    let grad = DVector::from_iterator(40, x1.z.iter().zip(&x0.z).map(|(a, b)| a - b))
        + gl.transpose() * DVector::from_vec(w);
    let scale = DVector::from_column_slice(&x1.z).norm().max(1.0);
    assert!(grad.norm() / scale < 1e-8, "{}", grad.norm());
}

#[test]
fn scalar_posterior_from_one_step() {
    // Prior N(0, 1), datum x + ε with ε ~ N(0, s²): posterior N(d/(1+s²), s²/(1+s²)).
    let s = 0.5f64;
    let d = 0.8;
    let n = 10_000;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
    let g = DMatrix::from_element(1, 1, 1.0);
    let mut xs = Vec::with_capacity(n);
    for _ in 0..n {
        let x0: f64 = StandardNormal.sample(&mut rng);
        let eps: f64 = s * Distribution::<f64>::sample(&StandardNormal, &mut rng);
        let e = [(x0 + eps - d) / s];
        let gw = &g / s;
        let delta = gauss_newton_step(&gw, &e, &[0.0], 0.0).unwrap();
        xs.push(x0 + delta[0]);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let (m_exact, v_exact) = (d / (1.0 + s * s), s * s / (1.0 + s * s));
    assert!((mean - m_exact).abs() < 0.02 * m_exact, "{mean}");
    assert!((var / v_exact - 1.0).abs() < 0.02 + 3.0 * (2.0 / n as f64).sqrt(), "{var}");
}

#[test]
fn huge_lambda_does_not_move() {
    let (grid, fwd, obs) = line_setup(40, 0.05);
    let p = problem(grid, &fwd, &obs, HyperMode::Hierarchical);
    let ens = sample_prior_ensemble(1, &p.prior, 40, &obs.noise_std, 4).unwrap();
    let x = &ens.members[0];
    let ev = p.evaluate(x).unwrap();
    let moved = rml_update(&p, x, x, &ens.perturbed_obs[0], &ev.g, 1e15).unwrap();
    assert!(moved.to_vec().iter().zip(x.to_vec()).all(|(a, b)| (a - b).abs() < 1e-10));
}

#[test]
fn hybrid_with_exact_sensitivity_is_rml() {
    let (grid, fwd, obs) = line_setup(40, 0.05);
    let p = problem(grid, &fwd, &obs, HyperMode::Hierarchical);
    let ens = sample_prior_ensemble(3, &p.prior, 40, &obs.noise_std, 5).unwrap();
    let gm = exact_sensitivity(&p).unwrap();
    for i in 0..3 {
        let x = &ens.members[i];
        let a = &ens.anchors[(i + 1) % 3];
        let g = p.evaluate(x).unwrap().g;
        let r = rml_update(&p, x, a, &ens.perturbed_obs[i], &g, 3.0).unwrap();
        let h = hybrid_update(&p, &gm, x, a, &ens.perturbed_obs[i], &g, 3.0).unwrap();
        assert_eq!(r.to_vec(), h.to_vec());
    }
}

#[test]
fn exact_cross_covariance_is_the_sensitivity_row() {
    let grid = GridSpec::new(30, 15, 1.0 / 30.0, 1.0 / 30.0, [0.0; 2]).unwrap();
    let cell = grid.index(10, 4).unwrap();
    let fwd = LinearObserver::new(grid, vec![cell]).unwrap();
    let obs = observe(&fwd, &[0.0], &[0.0], vec![0.02]).unwrap();
    let p = Problem {
        grid,
        family: KernelFamily::Gaussian2d { sigma: 2.0 },
        prior: HyperPrior::Aniso2d {
            log_range: NormalPrior::new(0.0, 0.3),
            log_ratio: NormalPrior::new((4.0f64).ln(), 0.3),
            angle: GaussVonMises::new(0.8, 10.0).unwrap(),
        },
        prior_mean: vec![0.0; grid.len()],
        forward: &fwd,
        obs: &obs,
        angle: AngleTreatment::Circular,
        hyper_mode: HyperMode::Hierarchical,
    };
    let ens = sample_prior_ensemble(1, &p.prior, grid.len(), &[0.02], 6).unwrap();
    let x = &ens.members[0];
    let cc = cross_covariance(&p, &exact_sensitivity(&p).unwrap(), x, 0).unwrap();
    let mx = p.jacobian(x).unwrap();
    for k in 0..grid.len() {
        assert!((cc[k] - mx[(cell, k)]).abs() < 1e-14);
    }
}

#[test]
fn collapsed_ies_ensemble_stays_put() {
    let (grid, fwd, obs) = line_setup(40, 0.05);
    let p = problem(grid, &fwd, &obs, fixed());
    let one = sample_prior_ensemble(1, &p.prior, 40, &obs.noise_std, 7).unwrap();
    let ens = Ensemble {
        members: vec![one.members[0].clone(); 4],
        anchors: vec![one.members[0].clone(); 4],
        perturbed_obs: vec![one.perturbed_obs[0].clone(); 4],
    };
    let out = run_sampler(Method::Ies, &p, &ens, &SamplerSettings::default()).unwrap();
    for m in &out.ensemble.members {
        assert_eq!(m.z, p.conform(&one.members[0]).z);
    }
}

#[test]
fn accepted_steps_never_raise_the_mean() {
    let (grid, fwd, obs) = line_setup(60, 0.05);
    let p = problem(grid, &fwd, &obs, HyperMode::Hierarchical);
    let ens = sample_prior_ensemble(30, &p.prior, 60, &obs.noise_std, 8).unwrap();
    for method in [Method::Ies, Method::Hybrid] {
        let out = run_sampler(method, &p, &ens, &SamplerSettings::default()).unwrap();
        assert!(out.history.len() >= 2);
        for w in out.history.windows(2) {
            assert!(w[1].mean_pert() <= w[0].mean_pert() + 1e-9 * w[0].mean_pert());
            if w[1].accepted.iter().any(|a| *a) {
                assert!(w[1].mean_pert() < w[0].mean_pert());
            }
        }
        let first = out.history[0].mean_pert();
        assert!(out.final_record().mean_pert() < 0.5 * first, "{method:?}");
    }
}

#[test]
fn rml_members_each_reduce_their_objective() {
    let (grid, fwd, obs) = line_setup(60, 0.05);
    let p = problem(grid, &fwd, &obs, HyperMode::Hierarchical);
    let ens = sample_prior_ensemble(8, &p.prior, 60, &obs.noise_std, 9).unwrap();
    let out = run_sampler(Method::Rml, &p, &ens, &SamplerSettings::default()).unwrap();
    let first = &out.history[0];
    let last = out.final_record();
    for i in 0..8 {
        assert!(last.s_pert[i] < first.s_pert[i]);
        assert!(out.status[i].stop.is_some());
    }
    let csv = history_csv(&out.history);
    assert!(csv.starts_with("iteration,member,s_pert,s_obs,lambda,accepted,failed\n"));
    assert_eq!(csv.lines().count(), 1 + 8 * out.history.len());
}

#[test]
fn rml_rejects_nonlinear_forward_models() {
    let grid = GridSpec::new(30, 15, 1.0 / 30.0, 1.0 / 30.0, [0.0; 2]).unwrap();
    let flow = crate::forward::FlowModel::new(grid, Default::default()).unwrap();
    let obs = ObsSet::new(
        vec![0.0; 480],
        vec![0.02; 480],
        flow.data_labels()
            .into_iter()
            .zip(flow.data_locations())
            .map(|((label, time), location)| crate::forward::ObsMeta { label, time, location })
            .collect(),
    )
    .unwrap();
    let p = Problem {
        grid,
        family: KernelFamily::Gaussian2d { sigma: 2.0 },
        prior: HyperPrior::Aniso2d {
            log_range: NormalPrior::new(0.0, 0.3),
            log_ratio: NormalPrior::new(1.0, 0.3),
            angle: GaussVonMises::new(0.8, 10.0).unwrap(),
        },
        prior_mean: vec![0.0; grid.len()],
        forward: &flow,
        obs: &obs,
        angle: AngleTreatment::Circular,
        hyper_mode: HyperMode::Hierarchical,
    };
    assert!(matches!(exact_sensitivity(&p), Err(Error::Unsupported(_))));
}

#[test]
fn quantiles() {
    let mut v = vec![4.0, 1.0, 3.0, 2.0];
    assert_eq!(quantile(&mut v, 0.0), 1.0);
    assert_eq!(quantile(&mut v, 1.0), 4.0);
    assert!((quantile(&mut v, 0.5) - 2.5).abs() < 1e-12);
}
