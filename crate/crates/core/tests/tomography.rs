use hyperqst::apparatus::{mub_pol_set, tomography_pol_set, PolProjectorSetting};
use hyperqst::tomography::{
    bayesian_mean, constrained_least_squares, linear_inversion, run_chain, ChainConfig, InitStrategy, PovmSet, TomographyProblem,
};
use hyperqst::{ComplexMatrix, ComplexVector, DensityMatrix, Error, SubsystemLayout, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

fn phi_plus() -> ComplexVector {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    ComplexVector::from_vec(vec![C64::new(h, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(h, 0.0)])
}

fn noisy_bell(p: f64) -> ComplexMatrix {
    let v = phi_plus();
    (&v * v.adjoint()).scale(1.0 - p) + ComplexMatrix::identity(4, 4).scale(p / 4.0)
}

fn expectation(v: &ComplexVector, rho: &ComplexMatrix) -> f64 {
    (v.adjoint() * rho * v)[(0, 0)].re
}

/// Polarization-only problem with Poisson counts drawn here, not by the crate.
fn pol_problem(settings: &[PolProjectorSetting], rho: &ComplexMatrix, rate: f64, seed: u64) -> TomographyProblem {
    let vectors: Vec<ComplexVector> = settings.iter().map(|s| s.vector()).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let counts = vectors
        .iter()
        .map(|v| {
            let mean = rate * expectation(v, rho);
            if mean > 0.0 { Poisson::new(mean).unwrap().sample(&mut rng) } else { 0.0 }
        })
        .collect();
    let m = vectors.len();
    TomographyProblem::new(SubsystemLayout::polarization(), PovmSet::from_vectors(&vectors).unwrap(), counts, vec![1.0; m], vec![0.0; m])
        .unwrap()
}

fn fidelity_values(samples: &[DensityMatrix], target: &ComplexVector) -> Vec<f64> {
    samples.iter().map(|s| expectation(target, s.matrix())).collect()
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    (m, (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

/// Posterior mean of `⟨Φ+|ρ|Φ+⟩` by self-normalized importance sampling
/// from the Hilbert–Schmidt prior, with the flux profiled out.
fn importance_sampled_fidelity(problem: &TomographyProblem, vectors: &[ComplexVector], draws: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let total: f64 = problem.counts.iter().sum();
    let target = phi_plus();
    let mut lls = Vec::with_capacity(draws);
    let mut fids = Vec::with_capacity(draws);
    for _ in 0..draws {
        let a = ComplexMatrix::from_fn(4, 4, |_, _| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)));
        let g = &a * a.adjoint();
        let rho = g.unscale(g.trace().re);
        let probs: Vec<f64> = vectors.iter().map(|v| expectation(v, &rho)).collect();
        let exposure: f64 = probs.iter().zip(&problem.durations).map(|(p, t)| p * t).sum();
        let s = total / exposure;
        let ll: f64 = problem.counts.iter().zip(&probs).zip(&problem.durations).map(|((&n, &p), &t)| if n > 0.0 { n * (s * p).ln() } else { 0.0 } - s * p * t).sum();
        lls.push(ll);
        fids.push(expectation(&target, &rho));
    }
    let top = lls.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = lls.iter().map(|l| (l - top).exp()).collect();
    let sw: f64 = w.iter().sum();
    let ess = sw * sw / w.iter().map(|x| x * x).sum::<f64>();
    (w.iter().zip(&fids).map(|(w, f)| w * f).sum::<f64>() / sw, ess)
}

#[test]
fn chain_matches_importance_sampled_posterior() {
    let settings = tomography_pol_set();
    let vectors: Vec<ComplexVector> = settings.iter().map(|s| s.vector()).collect();
    let truth = noisy_bell(0.4);
    let problem = pol_problem(&settings, &truth, 12.0, 5);
    let (oracle, ess) = importance_sampled_fidelity(&problem, &vectors, 1_000_000, 6);
    assert!(ess > 2000.0, "importance sampler degenerate: ESS {ess}");
    let config = ChainConfig { n_samples: 4000, burn_in: 4000, thinning: 25, seed: 7, ..Default::default() };
    let ens = run_chain(&problem, &config).unwrap();
    let (chain_mean, _) = mean_std(&fidelity_values(&ens.samples, &phi_plus()));
    assert!((chain_mean - oracle).abs() <= 0.01, "chain {chain_mean} vs importance sampling {oracle}");
}

#[test]
fn flat_likelihood_reproduces_the_prior() {
    let vectors: Vec<ComplexVector> = tomography_pol_set().iter().map(|s| s.vector()).collect();
    let m = vectors.len();
    let problem =
        TomographyProblem::new(SubsystemLayout::polarization(), PovmSet::from_vectors(&vectors).unwrap(), vec![0.0; m], vec![0.0; m], vec![0.0; m])
            .unwrap();
    let config = ChainConfig { n_samples: 4000, burn_in: 0, thinning: 1, step_beta: 1.0, adapt: false, init: InitStrategy::Prior, ..Default::default() };
    let ens = run_chain(&problem, &config).unwrap();
    assert_eq!(ens.acceptance_rate, 1.0);
    let mean = bayesian_mean(&ens).unwrap();
    let dev = (mean.matrix() - ComplexMatrix::identity(4, 4).scale(0.25)).iter().map(|z| z.norm()).fold(0.0, f64::max);
    assert!(dev <= 0.02, "prior mean deviates from I/4 by {dev}");
    // Hilbert–Schmidt purity moment for D = 4: 2D/(D²+1)
    let purity = ens.samples.iter().map(|s| s.purity()).sum::<f64>() / ens.len() as f64;
    assert!((purity - 8.0 / 17.0).abs() <= 0.01, "mean purity {purity}");
}

#[test]
fn small_steps_on_flat_likelihood_keep_the_prior_mean() {
    let vectors: Vec<ComplexVector> = tomography_pol_set().iter().map(|s| s.vector()).collect();
    let m = vectors.len();
    let problem =
        TomographyProblem::new(SubsystemLayout::polarization(), PovmSet::from_vectors(&vectors).unwrap(), vec![0.0; m], vec![0.0; m], vec![0.0; m])
            .unwrap();
    let config = ChainConfig { n_samples: 2000, burn_in: 100, thinning: 20, step_beta: 0.3, adapt: false, init: InitStrategy::Prior, ..Default::default() };
    let ens = run_chain(&problem, &config).unwrap();
    assert_eq!(ens.acceptance_rate, 1.0);
    let mean = bayesian_mean(&ens).unwrap();
    let dev = (mean.matrix() - ComplexMatrix::identity(4, 4).scale(0.25)).iter().map(|z| z.norm()).fold(0.0, f64::max);
    assert!(dev <= 0.03, "chain mean deviates from I/4 by {dev}");
}

#[test]
fn posterior_contracts_with_more_counts() {
    let settings = tomography_pol_set();
    let truth = noisy_bell(0.5);
    let std_at = |rate: f64| {
        let runs: Vec<f64> = (0..4)
            .map(|seed| {
                let problem = pol_problem(&settings, &truth, rate, 100 + seed);
                let config = ChainConfig { n_samples: 1500, burn_in: 3000, thinning: 20, seed, ..Default::default() };
                let ens = run_chain(&problem, &config).unwrap();
                mean_std(&fidelity_values(&ens.samples, &phi_plus())).1
            })
            .collect();
        runs.iter().sum::<f64>() / runs.len() as f64
    };
    let ratio = std_at(1000.0) / std_at(500.0);
    let ideal = std::f64::consts::FRAC_1_SQRT_2;
    assert!((ratio / ideal - 1.0).abs() <= 0.3, "std ratio {ratio}");
}

#[test]
fn samples_are_physical_and_acceptance_is_tuned() {
    let settings = tomography_pol_set();
    let problem = pol_problem(&settings, &noisy_bell(0.1), 500.0, 9);
    let config = ChainConfig { n_samples: 300, burn_in: 3000, thinning: 20, seed: 2, ..Default::default() };
    let ens = run_chain(&problem, &config).unwrap();
    assert_eq!(ens.len(), 300);
    assert!((0.1..=0.6).contains(&ens.acceptance_rate), "acceptance {}", ens.acceptance_rate);
    for s in &ens.samples {
        assert!((s.matrix().trace().re - 1.0).abs() <= 1e-10);
        assert!(s.eigenvalues().iter().all(|&v| v >= -1e-10));
        DensityMatrix::new(s.layout().clone(), s.matrix().clone()).unwrap();
    }
    let betas: Vec<f64> = ens.trace.iter().filter(|r| r.step > config.burn_in).map(|r| r.step_beta).collect();
    assert!(betas.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn seeded_chains_are_identical() {
    let problem = pol_problem(&tomography_pol_set(), &noisy_bell(0.2), 100.0, 1);
    let config = ChainConfig { n_samples: 50, burn_in: 500, thinning: 10, seed: 42, ..Default::default() };
    let a = run_chain(&problem, &config).unwrap();
    let b = run_chain(&problem, &config).unwrap();
    assert_eq!(a.samples.len(), b.samples.len());
    for (x, y) in a.samples.iter().zip(&b.samples) {
        assert_eq!(x.matrix(), y.matrix());
    }
    let c = run_chain(&problem, &ChainConfig { seed: 43, ..config }).unwrap();
    assert_ne!(a.samples[49].matrix(), c.samples[49].matrix());
}

#[test]
fn linear_inversion_reports_completeness() {
    let truth = noisy_bell(0.3);
    let full = pol_problem(&tomography_pol_set(), &truth, 1e9, 3);
    let li = linear_inversion(&full).unwrap();
    assert!(li.is_complete());
    assert!((&li.estimate - &truth).iter().map(|z| z.norm()).fold(0.0, f64::max) <= 1e-3);

    let zz: Vec<PolProjectorSetting> = mub_pol_set()[..4].to_vec();
    let partial = pol_problem(&zz, &truth, 1e6, 3);
    let li = linear_inversion(&partial).unwrap();
    assert!(!li.is_complete());
    assert_eq!(li.rank, 4);
}

#[test]
fn constrained_fit_is_a_density_matrix_near_the_truth() {
    let truth = noisy_bell(0.05);
    let problem = pol_problem(&tomography_pol_set(), &truth, 1e5, 4);
    let est = constrained_least_squares(&problem, 500).unwrap();
    assert!(est.eigenvalues().iter().all(|&v| v >= -1e-10));
    let truth_state = DensityMatrix::new(SubsystemLayout::polarization(), truth).unwrap();
    assert!(est.trace_distance(&truth_state).unwrap() <= 0.02);
}

#[test]
fn impossible_data_is_a_diagnostic() {
    let vectors = vec![phi_plus(), ComplexVector::zeros(4)];
    let problem = TomographyProblem::new(
        SubsystemLayout::polarization(),
        PovmSet::from_vectors(&vectors).unwrap(),
        vec![10.0, 3.0],
        vec![1.0, 1.0],
        vec![0.0, 0.0],
    )
    .unwrap();
    let err = run_chain(&problem, &ChainConfig { n_samples: 10, burn_in: 10, thinning: 1, ..Default::default() }).unwrap_err();
    assert!(matches!(err, Error::Diagnostic(_)));
}
