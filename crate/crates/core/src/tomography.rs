//! Bayesian state tomography with a Ginibre-induced uniform prior.
//!
//! States are parametrized as `ρ(A) = AA†/Tr(AA†)` with `A` a square complex
//! Gaussian matrix, which induces the Hilbert–Schmidt measure on density
//! matrices. A preconditioned Crank–Nicolson (pCN) proposal leaves the
//! Gaussian prior invariant, so the Metropolis ratio is the likelihood ratio
//! alone. Counts are Poissonian with an unknown global flux that is either
//! profiled out or integrated against a Gamma prior.
//!
//! Every POVM element is stored as a sum of rank-one terms `w w†`, and the
//! probabilities `‖w†A‖²` for all terms come out of one real matrix product.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::algebra::{c64, eig_hermitian, hermitian_part, ComplexMatrix, ComplexVector, DensityMatrix, SubsystemLayout};
use crate::apparatus::{Protocol, TruncationPolicy};
use crate::error::{arg, Error, Result};
use crate::simulator::Dataset;

/// POVM elements factored into rank-one terms, packed for the likelihood kernel.
#[derive(Debug, Clone)]
pub struct PovmSet {
    dim: usize,
    /// One row `[Re wᵀ, Im wᵀ]` per rank-one term.
    packed: DMatrix<f64>,
    /// Record index of each packed row.
    owner: Vec<usize>,
    n_records: usize,
}

impl PovmSet {
    /// Rank-one elements `E_m = v_m v_m†`.
    pub fn from_vectors(vectors: &[ComplexVector]) -> Result<Self> {
        let Some(first) = vectors.first() else {
            return arg("empty POVM list");
        };
        let dim = first.len();
        if vectors.iter().any(|v| v.len() != dim) {
            return arg("POVM vectors have inconsistent dimensions");
        }
        let terms: Vec<(usize, &ComplexVector)> = vectors.iter().enumerate().collect();
        Ok(Self::pack(dim, vectors.len(), &terms))
    }

    /// General PSD elements, factored by eigendecomposition.
    pub fn from_elements(elements: &[ComplexMatrix]) -> Result<Self> {
        let Some(first) = elements.first() else {
            return arg("empty POVM list");
        };
        let dim = first.nrows();
        let mut owned = Vec::new();
        for (m, e) in elements.iter().enumerate() {
            if e.nrows() != dim || e.ncols() != dim {
                return arg(format!("POVM element {m} has the wrong shape"));
            }
            let eig = eig_hermitian(e)?;
            let scale = eig.values.first().copied().unwrap_or(0.0).abs().max(1.0);
            for (j, &lam) in eig.values.iter().enumerate() {
                if lam < -1e-10 * scale {
                    return arg(format!("POVM element {m} is not positive semidefinite ({lam:.3e})"));
                }
                if lam > 1e-14 * scale {
                    owned.push((m, eig.vectors.column(j).scale(lam.sqrt()).into_owned()));
                }
            }
        }
        let terms: Vec<(usize, &ComplexVector)> = owned.iter().map(|(m, v)| (*m, v)).collect();
        Ok(Self::pack(dim, elements.len(), &terms))
    }

    pub fn from_protocol(protocol: &Protocol, trunc: &TruncationPolicy) -> Result<Self> {
        Self::from_vectors(&protocol.measurement_vectors(trunc)?)
    }

    fn pack(dim: usize, n_records: usize, terms: &[(usize, &ComplexVector)]) -> Self {
        let mut packed = DMatrix::zeros(terms.len(), 2 * dim);
        for (r, (_, w)) in terms.iter().enumerate() {
            for j in 0..dim {
                packed[(r, j)] = w[j].re;
                packed[(r, dim + j)] = w[j].im;
            }
        }
        Self { dim, packed, owner: terms.iter().map(|(m, _)| *m).collect(), n_records }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.n_records
    }

    pub fn is_empty(&self) -> bool {
        self.n_records == 0
    }

    fn term(&self, r: usize) -> ComplexVector {
        ComplexVector::from_fn(self.dim, |j, _| c64(self.packed[(r, j)], self.packed[(r, self.dim + j)]))
    }

    /// Reassembled element `E_m`.
    pub fn element(&self, m: usize) -> ComplexMatrix {
        let mut e = ComplexMatrix::zeros(self.dim, self.dim);
        for r in (0..self.owner.len()).filter(|&r| self.owner[r] == m) {
            let w = self.term(r);
            e += &w * w.adjoint();
        }
        e
    }

    /// Trace of each element.
    pub fn traces(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.n_records];
        for (r, &m) in self.owner.iter().enumerate() {
            t[m] += self.packed.row(r).norm_squared();
        }
        t
    }

    /// `Tr(E_m ρ)` for an explicit density matrix.
    pub fn probabilities_of(&self, rho: &ComplexMatrix) -> Vec<f64> {
        let mut p = vec![0.0; self.n_records];
        for (r, &m) in self.owner.iter().enumerate() {
            let w = self.term(r);
            p[m] += (w.adjoint() * rho * &w)[(0, 0)].re;
        }
        p
    }
}

/// Ginibre matrix `A` with standard complex normal entries (`E|a|² = 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct GinibreParam {
    re: DMatrix<f64>,
    im: DMatrix<f64>,
}

impl GinibreParam {
    pub fn draw<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut normal = || s * rng.sample::<f64, _>(StandardNormal);
        let re = DMatrix::from_fn(dim, dim, |_, _| normal());
        let im = DMatrix::from_fn(dim, dim, |_, _| normal());
        Self { re, im }
    }

    pub fn from_complex(a: &ComplexMatrix) -> Result<Self> {
        if !a.is_square() {
            return arg("Ginibre parameter must be square");
        }
        Ok(Self { re: a.map(|z| z.re), im: a.map(|z| z.im) })
    }

    /// `A = D·√ρ`, a point with `ρ(A) = ρ` and prior-typical norm.
    pub fn from_state(rho: &ComplexMatrix) -> Result<Self> {
        let eig = eig_hermitian(&hermitian_part(rho))?;
        let dim = rho.nrows() as f64;
        let roots: Vec<f64> = eig.values.iter().map(|&v| v.max(0.0).sqrt() * dim).collect();
        Self::from_complex(&eig.reconstruct_with(&roots))
    }

    pub fn dim(&self) -> usize {
        self.re.nrows()
    }

    pub fn to_complex(&self) -> ComplexMatrix {
        ComplexMatrix::from_fn(self.dim(), self.dim(), |i, j| c64(self.re[(i, j)], self.im[(i, j)]))
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.re.norm_squared() + self.im.norm_squared()
    }

    /// Global phase `e^{iφ}A`.
    pub fn rotate_phase(&self, phi: f64) -> Self {
        let (s, c) = phi.sin_cos();
        Self { re: &self.re * c - &self.im * s, im: &self.re * s + &self.im * c }
    }

    /// `AA†/Tr(AA†)`.
    pub fn density_matrix(&self) -> ComplexMatrix {
        let a = self.to_complex();
        (&a * a.adjoint()).unscale(self.frobenius_sq())
    }

    pub fn state(&self, layout: &SubsystemLayout) -> Result<DensityMatrix> {
        if layout.total_dim() != self.dim() {
            return arg("layout does not match parameter dimension");
        }
        Ok(DensityMatrix::from_physical(layout.clone(), self.density_matrix()))
    }

    /// `[[Re A, Im A], [Im A, −Re A]]`, so that `[Re w, Im w]ᵀ · block = w†A` split into parts.
    fn block(&self, out: &mut DMatrix<f64>) {
        let n = self.dim();
        out.view_mut((0, 0), (n, n)).copy_from(&self.re);
        out.view_mut((0, n), (n, n)).copy_from(&self.im);
        out.view_mut((n, 0), (n, n)).copy_from(&self.im);
        out.view_mut((n, n), (n, n)).copy_from(&(-&self.re));
    }
}

/// How the unknown global flux is eliminated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScaleHandling {
    /// Maximize over the flux for every evaluation.
    #[default]
    Profile,
    /// Integrate the flux against `Gamma(shape, rate)`; needs zero background.
    GammaPrior { shape: f64, rate: f64 },
}

/// Count data aligned with a POVM set, on a known layout.
#[derive(Debug, Clone)]
pub struct TomographyProblem {
    pub layout: SubsystemLayout,
    pub povms: PovmSet,
    pub counts: Vec<f64>,
    pub durations: Vec<f64>,
    /// Known background rate per record (counts/s).
    pub background: Vec<f64>,
}

impl TomographyProblem {
    pub fn new(layout: SubsystemLayout, povms: PovmSet, counts: Vec<f64>, durations: Vec<f64>, background: Vec<f64>) -> Result<Self> {
        let m = povms.len();
        if layout.total_dim() != povms.dim() {
            return arg(format!("layout dimension {} does not match POVM dimension {}", layout.total_dim(), povms.dim()));
        }
        if counts.len() != m || durations.len() != m || background.len() != m {
            return arg(format!("{} POVM elements but {} count records", m, counts.len()));
        }
        if counts.iter().chain(&durations).chain(&background).any(|x| !(x.is_finite() && *x >= 0.0)) {
            return arg("counts, durations and backgrounds must be finite and non-negative");
        }
        Ok(Self { layout, povms, counts, durations, background })
    }

    /// Uses the dataset's accidental rate as known background; the pair rate
    /// stays unknown to the estimator.
    pub fn from_dataset(data: &Dataset, povms: PovmSet) -> Result<Self> {
        let d = data.d;
        let layout = SubsystemLayout::hyper(d);
        let counts = data.records.iter().map(|r| r.counts as f64).collect();
        let durations = data.records.iter().map(|r| r.duration).collect();
        let background = vec![data.flux.accidental_rate; data.records.len()];
        Self::new(layout, povms, counts, durations, background)
    }

    pub fn total_counts(&self) -> f64 {
        self.counts.iter().sum()
    }

    /// Fails when some record has counts but its element can never fire.
    pub fn check_support(&self) -> Result<()> {
        let traces = self.povms.traces();
        for (m, (&n, &t)) in self.counts.iter().zip(&traces).enumerate() {
            if n > 0.0 && t <= 1e-300 && self.background[m] == 0.0 {
                return Err(Error::Diagnostic(format!(
                    "record {m} has {n} counts but its POVM element is zero and there is no background: no state explains the data"
                )));
            }
        }
        Ok(())
    }
}

/// Reusable buffers plus the likelihood definition.
#[derive(Debug, Clone)]
pub struct Likelihood<'a> {
    problem: &'a TomographyProblem,
    scale: ScaleHandling,
    block: DMatrix<f64>,
    product: DMatrix<f64>,
    probs: Vec<f64>,
}

impl<'a> Likelihood<'a> {
    pub fn new(problem: &'a TomographyProblem, scale: ScaleHandling) -> Result<Self> {
        if let ScaleHandling::GammaPrior { shape, rate } = scale {
            if !(shape > 0.0 && rate >= 0.0) {
                return arg("Gamma flux prior needs shape > 0 and rate >= 0");
            }
            if problem.background.iter().any(|&b| b != 0.0) {
                return arg("Gamma flux prior is only conjugate without background");
            }
        }
        let n = problem.povms.dim;
        Ok(Self {
            problem,
            scale,
            block: DMatrix::zeros(2 * n, 2 * n),
            product: DMatrix::zeros(problem.povms.packed.nrows(), 2 * n),
            probs: vec![0.0; problem.povms.len()],
        })
    }

    /// Born probabilities `Tr(E_m ρ(A))`.
    pub fn probabilities(&mut self, param: &GinibreParam) -> &[f64] {
        let povms = &self.problem.povms;
        param.block(&mut self.block);
        povms.packed.mul_to(&self.block, &mut self.product);
        let norm = param.frobenius_sq();
        self.probs.iter_mut().for_each(|p| *p = 0.0);
        for (r, &m) in povms.owner.iter().enumerate() {
            self.probs[m] += self.product.row(r).norm_squared();
        }
        self.probs.iter_mut().for_each(|p| *p /= norm);
        &self.probs
    }

    pub fn log_likelihood(&mut self, param: &GinibreParam) -> f64 {
        self.probabilities(param);
        let probs = std::mem::take(&mut self.probs);
        let ll = self.log_likelihood_of(&probs);
        self.probs = probs;
        ll
    }

    /// Log-likelihood with the flux eliminated, from Born probabilities.
    pub fn log_likelihood_of(&self, probs: &[f64]) -> f64 {
        match self.scale {
            ScaleHandling::Profile => {
                let s = self.profile_scale(probs);
                self.log_likelihood_at_scale(probs, s)
            }
            ScaleHandling::GammaPrior { shape, rate } => {
                let pr = self.problem;
                let mut ll = 0.0;
                let mut exposure = 0.0;
                for ((&n, &t), &p) in pr.counts.iter().zip(&pr.durations).zip(probs) {
                    if n > 0.0 {
                        ll += n * p.ln();
                    }
                    exposure += p * t;
                }
                ll - (pr.total_counts() + shape) * (rate + exposure).ln()
            }
        }
    }

    /// `Σ N_m ln(s p_m + b_m) − (s p_m + b_m) T_m`.
    pub fn log_likelihood_at_scale(&self, probs: &[f64], s: f64) -> f64 {
        let pr = self.problem;
        let mut ll = 0.0;
        for m in 0..probs.len() {
            let rate = s * probs[m] + pr.background[m];
            if pr.counts[m] > 0.0 {
                ll += pr.counts[m] * rate.ln();
            }
            ll -= rate * pr.durations[m];
        }
        ll
    }

    /// Flux maximizing the Poisson likelihood for fixed probabilities.
    pub fn profile_scale(&self, probs: &[f64]) -> f64 {
        let pr = self.problem;
        let exposure: f64 = probs.iter().zip(&pr.durations).map(|(p, t)| p * t).sum();
        let total = pr.total_counts();
        if total == 0.0 || exposure <= 0.0 {
            return 0.0;
        }
        if pr.background.iter().all(|&b| b == 0.0) {
            return total / exposure;
        }
        // concave in s: bisect the derivative on [0, N/exposure]
        let slope = |s: f64| -> f64 {
            let mut g = -exposure;
            for m in 0..probs.len() {
                if pr.counts[m] > 0.0 {
                    g += pr.counts[m] * probs[m] / (s * probs[m] + pr.background[m]);
                }
            }
            g
        };
        if slope(0.0) <= 0.0 {
            return 0.0;
        }
        let (mut lo, mut hi) = (0.0, total / exposure);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if slope(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-13 * hi {
                break;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Log-likelihood of `param` for `problem` (up to parameter-independent constants).
pub fn log_likelihood(param: &GinibreParam, problem: &TomographyProblem, scale: ScaleHandling) -> Result<f64> {
    if param.dim() != problem.povms.dim() {
        return arg("parameter dimension does not match POVMs");
    }
    Ok(Likelihood::new(problem, scale)?.log_likelihood(param))
}

/// `√(1−β²)·A + β·G` with fresh Ginibre `G`.
pub fn pcn_propose<R: Rng + ?Sized>(current: &GinibreParam, beta: f64, rng: &mut R) -> GinibreParam {
    let keep = (1.0 - beta * beta).max(0.0).sqrt();
    let g = GinibreParam::draw(current.dim(), rng);
    GinibreParam { re: &current.re * keep + g.re * beta, im: &current.im * keep + g.im * beta }
}

#[derive(Debug, Clone)]
pub struct PcnStep {
    pub proposal: GinibreParam,
    pub proposal_log_likelihood: f64,
    pub accepted: bool,
}

/// One pCN Metropolis step; the prior cancels so only the likelihood ratio enters.
pub fn pcn_step<R: Rng + ?Sized>(
    current: &GinibreParam,
    current_log_likelihood: f64,
    beta: f64,
    likelihood: &mut Likelihood<'_>,
    rng: &mut R,
) -> PcnStep {
    let proposal = pcn_propose(current, beta, rng);
    let ll = likelihood.log_likelihood(&proposal);
    let u: f64 = rng.random();
    let accepted = ll.is_finite() && u < (ll - current_log_likelihood).exp();
    PcnStep { proposal, proposal_log_likelihood: ll, accepted }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    /// Draw the starting point from the prior.
    Prior,
    /// Start at the physical least-squares estimate with 5% white noise mixed in.
    #[default]
    LeastSquares,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub n_samples: usize,
    pub burn_in: usize,
    pub thinning: usize,
    /// Initial pCN step size in `(0, 1]`.
    pub step_beta: f64,
    /// Tune `step_beta` during burn-in, frozen afterwards.
    pub adapt: bool,
    pub target_acceptance: f64,
    pub seed: u64,
    pub init: InitStrategy,
    pub scale: ScaleHandling,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            n_samples: 1024,
            burn_in: 10_000,
            thinning: 200,
            step_beta: 0.05,
            adapt: true,
            target_acceptance: 0.25,
            seed: 0,
            init: InitStrategy::LeastSquares,
            scale: ScaleHandling::Profile,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return arg("chain must retain at least one sample");
        }
        if self.thinning == 0 {
            return arg("thinning must be at least 1");
        }
        if !(self.step_beta > 0.0 && self.step_beta <= 1.0) {
            return arg(format!("step_beta {} outside (0, 1]", self.step_beta));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return arg("target acceptance must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChainPhase {
    BurnIn,
    Sampling,
}

/// One row of the chain diagnostics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub phase: ChainPhase,
    pub step_beta: f64,
    /// Acceptance fraction over the interval ending at `step`.
    pub acceptance: f64,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone)]
pub struct PosteriorEnsemble {
    pub samples: Vec<DensityMatrix>,
    /// Post-burn-in acceptance fraction.
    pub acceptance_rate: f64,
    /// Frozen step size used while sampling.
    pub step_beta: f64,
    pub trace: Vec<TraceRow>,
}

impl PosteriorEnsemble {
    pub fn from_samples(samples: Vec<DensityMatrix>) -> Self {
        Self { samples, acceptance_rate: f64::NAN, step_beta: f64::NAN, trace: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

const ADAPT_BATCH: usize = 50;

pub fn run_chain(problem: &TomographyProblem, config: &ChainConfig) -> Result<PosteriorEnsemble> {
    config.validate()?;
    problem.check_support()?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut lik = Likelihood::new(problem, config.scale)?;
    let dim = problem.povms.dim();

    let mut current = match config.init {
        InitStrategy::Prior => GinibreParam::draw(dim, &mut rng),
        InitStrategy::LeastSquares => {
            let start = constrained_least_squares(problem, 300)
                .map(|r| r.into_matrix())
                .unwrap_or_else(|_| DensityMatrix::maximally_mixed(problem.layout.clone()).into_matrix());
            let mixed = start.scale(0.95) + ComplexMatrix::identity(dim, dim).scale(0.05 / dim as f64);
            GinibreParam::from_state(&mixed)?
        }
    };
    let mut current_ll = lik.log_likelihood(&current);
    if !current_ll.is_finite() {
        // a prior draw has full rank, so this only fails if the data are impossible
        current = GinibreParam::draw(dim, &mut rng);
        current_ll = lik.log_likelihood(&current);
        if !current_ll.is_finite() {
            return Err(Error::Diagnostic("log-likelihood is not finite at any starting point; the data contradict the measurement model".into()));
        }
    }

    let mut beta = config.step_beta;
    let mut trace = Vec::new();
    let mut batch_accepts = 0usize;
    let mut batch_index = 0usize;
    for step in 1..=config.burn_in {
        let s = pcn_step(&current, current_ll, beta, &mut lik, &mut rng);
        if s.accepted {
            current = s.proposal;
            current_ll = s.proposal_log_likelihood;
            batch_accepts += 1;
        }
        if step % ADAPT_BATCH == 0 {
            let rate = batch_accepts as f64 / ADAPT_BATCH as f64;
            trace.push(TraceRow { step, phase: ChainPhase::BurnIn, step_beta: beta, acceptance: rate, log_likelihood: current_ll });
            if config.adapt {
                let gain = 1.0 / (1.0 + batch_index as f64).sqrt();
                beta = (beta * ((rate - config.target_acceptance) * 2.0 * gain).exp()).clamp(1e-6, 1.0);
            }
            batch_accepts = 0;
            batch_index += 1;
        }
    }

    let mut samples = Vec::with_capacity(config.n_samples);
    let mut accepted_total = 0usize;
    for k in 0..config.n_samples {
        let mut interval_accepts = 0usize;
        for _ in 0..config.thinning {
            let s = pcn_step(&current, current_ll, beta, &mut lik, &mut rng);
            if s.accepted {
                current = s.proposal;
                current_ll = s.proposal_log_likelihood;
                interval_accepts += 1;
            }
        }
        accepted_total += interval_accepts;
        samples.push(current.state(&problem.layout)?);
        trace.push(TraceRow {
            step: config.burn_in + (k + 1) * config.thinning,
            phase: ChainPhase::Sampling,
            step_beta: beta,
            acceptance: interval_accepts as f64 / config.thinning as f64,
            log_likelihood: current_ll,
        });
    }
    let acceptance_rate = accepted_total as f64 / (config.n_samples * config.thinning) as f64;
    Ok(PosteriorEnsemble { samples, acceptance_rate, step_beta: beta, trace })
}

/// Entrywise average of the posterior samples.
pub fn bayesian_mean(ens: &PosteriorEnsemble) -> Result<DensityMatrix> {
    let n = ens.samples.len();
    if n == 0 {
        return arg("Bayesian mean of an empty ensemble");
    }
    let refs: Vec<&DensityMatrix> = ens.samples.iter().collect();
    DensityMatrix::mixture(&refs, &vec![1.0 / n as f64; n])
}

/// Orthonormal Hermitian basis: `E_jj`, `(E_jk+E_kj)/√2`, `i(E_jk−E_kj)/√2`.
fn hermitian_coordinates(w: &ComplexVector, out: &mut [f64]) {
    let n = w.len();
    let r2 = std::f64::consts::SQRT_2;
    let mut b = 0;
    for j in 0..n {
        out[b] += w[j].norm_sqr();
        b += 1;
    }
    for j in 0..n {
        for k in j + 1..n {
            let z = w[j].conj() * w[k];
            out[b] += r2 * z.re;
            out[b + 1] -= r2 * z.im;
            b += 2;
        }
    }
}

fn from_hermitian_coordinates(x: &[f64], n: usize) -> ComplexMatrix {
    let r2 = std::f64::consts::FRAC_1_SQRT_2;
    let mut m = ComplexMatrix::zeros(n, n);
    let mut b = 0;
    for j in 0..n {
        m[(j, j)] = c64(x[b], 0.0);
        b += 1;
    }
    for j in 0..n {
        for k in j + 1..n {
            let (s, a) = (x[b] * r2, x[b + 1] * r2);
            m[(j, k)] = c64(s, a);
            m[(k, j)] = c64(s, -a);
            b += 2;
        }
    }
    m
}

fn to_hermitian_coordinates(m: &ComplexMatrix) -> Vec<f64> {
    let n = m.nrows();
    let r2 = std::f64::consts::SQRT_2;
    let mut x = Vec::with_capacity(n * n);
    x.extend((0..n).map(|j| m[(j, j)].re));
    for j in 0..n {
        for k in j + 1..n {
            x.push(r2 * m[(j, k)].re);
            x.push(r2 * m[(j, k)].im);
        }
    }
    x
}

/// Real design matrix `Φ[m, b] = Tr(E_m B_b)`.
fn design_matrix(povms: &PovmSet) -> DMatrix<f64> {
    let n = povms.dim();
    let mut phi = DMatrix::zeros(povms.len(), n * n);
    let mut row = vec![0.0; n * n];
    for m in 0..povms.len() {
        row.iter_mut().for_each(|x| *x = 0.0);
        for r in (0..povms.owner.len()).filter(|&r| povms.owner[r] == m) {
            hermitian_coordinates(&povms.term(r), &mut row);
        }
        for (b, &v) in row.iter().enumerate() {
            phi[(m, b)] = v;
        }
    }
    phi
}

fn rate_data(problem: &TomographyProblem) -> Vec<f64> {
    (0..problem.povms.len())
        .map(|m| {
            let t = problem.durations[m];
            if t > 0.0 { problem.counts[m] / t - problem.background[m] } else { 0.0 }
        })
        .collect()
}

/// Unconstrained least-squares estimate.
#[derive(Debug, Clone)]
pub struct LinearInversion {
    pub layout: SubsystemLayout,
    /// Hermitian, unit trace, possibly with negative eigenvalues.
    pub estimate: ComplexMatrix,
    /// Rank of the measurement map on Hermitian operators.
    pub rank: usize,
    /// `D²`, the rank a complete protocol reaches.
    pub operator_dim: usize,
    /// Estimated pair rate `Tr X` before renormalization.
    pub scale: f64,
}

impl LinearInversion {
    pub fn is_complete(&self) -> bool {
        self.rank == self.operator_dim
    }

    /// Eigenvalue clipping followed by renormalization.
    pub fn psd_clipped(&self) -> Result<DensityMatrix> {
        DensityMatrix::psd_projection(self.layout.clone(), &self.estimate)
    }
}

/// Minimum-norm least-squares solution of `Tr(E_m X) = N_m/T_m − b_m`,
/// normalized to unit trace. The rank of the linear map is reported; an
/// incomplete protocol leaves its null space at zero rather than regularizing.
pub fn linear_inversion(problem: &TomographyProblem) -> Result<LinearInversion> {
    let n = problem.povms.dim();
    let phi = design_matrix(&problem.povms);
    let y = nalgebra::DVector::from_vec(rate_data(problem));
    let svd = phi.svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return Err(Error::Diagnostic("measurement map is identically zero".into()));
    }
    let tol = 1e-10 * smax;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let x = svd.solve(&y, tol).map_err(|e| Error::Diagnostic(format!("least-squares solve failed: {e}")))?;
    let raw = from_hermitian_coordinates(x.as_slice(), n);
    let scale = raw.trace().re;
    if !(scale > 0.0) {
        return Err(Error::Diagnostic(format!("least-squares estimate has non-positive trace {scale:.3e}")));
    }
    Ok(LinearInversion { layout: problem.layout.clone(), estimate: raw.unscale(scale), rank, operator_dim: n * n, scale })
}

/// Euclidean projection of a vector onto the probability simplex.
fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Frobenius-nearest density matrix to a Hermitian matrix.
pub fn project_to_density(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    let eig = eig_hermitian(&hermitian_part(m))?;
    Ok(eig.reconstruct_with(&project_simplex(&eig.values)))
}

/// Least-squares fit restricted to density matrices (accelerated projected
/// gradient). Positivity pins down directions that the measurements leave
/// unconstrained, which plain inversion cannot do.
pub fn constrained_least_squares(problem: &TomographyProblem, iterations: usize) -> Result<DensityMatrix> {
    let lin = linear_inversion(problem)?;
    let n = problem.povms.dim();
    let phi = design_matrix(&problem.povms);
    let target = nalgebra::DVector::from_vec(rate_data(problem)).unscale(lin.scale);
    let lipschitz = phi.clone().svd(false, false).singular_values.iter().cloned().fold(0.0, f64::max).powi(2);
    let step = 1.0 / lipschitz;
    let phit = phi.transpose();

    let mut x = nalgebra::DVector::from_vec(to_hermitian_coordinates(&project_to_density(&lin.estimate)?));
    let mut y = x.clone();
    let mut t = 1.0_f64;
    for _ in 0..iterations {
        let grad = &phit * (&phi * &y - &target);
        let stepped = from_hermitian_coordinates((&y - grad * step).as_slice(), n);
        let next = nalgebra::DVector::from_vec(to_hermitian_coordinates(&project_to_density(&stepped)?));
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &next + (&next - &x) * ((t - 1.0) / t_next);
        x = next;
        t = t_next;
    }
    Ok(DensityMatrix::from_physical(problem.layout.clone(), from_hermitian_coordinates(x.as_slice(), n)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apparatus::{pol_projector, tomography_pol_set};

    fn pol_problem(rho: &ComplexMatrix, scale: f64) -> TomographyProblem {
        let elements: Vec<ComplexMatrix> = tomography_pol_set().iter().map(pol_projector).collect();
        let povms = PovmSet::from_elements(&elements).unwrap();
        let counts: Vec<f64> = povms.probabilities_of(rho).iter().map(|p| p * scale).collect();
        TomographyProblem::new(SubsystemLayout::polarization(), povms, counts, vec![1.0; 16], vec![0.0; 16]).unwrap()
    }

    fn bell() -> ComplexMatrix {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let v = ComplexVector::from_vec(vec![c64(s, 0.), c64(0., 0.), c64(0., 0.), c64(s, 0.)]);
        &v * v.adjoint()
    }

    #[test]
    fn kernel_matches_direct_trace() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let a = GinibreParam::draw(4, &mut rng);
        let problem = pol_problem(&bell(), 100.0);
        let mut lik = Likelihood::new(&problem, ScaleHandling::Profile).unwrap();
        let fast = lik.probabilities(&a).to_vec();
        let direct = problem.povms.probabilities_of(&a.density_matrix());
        for (f, d) in fast.iter().zip(&direct) {
            assert!((f - d).abs() < 1e-13);
        }
    }

    #[test]
    fn profile_scale_is_stationary() {
        let problem = TomographyProblem::new(
            SubsystemLayout::polarization(),
            PovmSet::from_elements(&[pol_projector(&tomography_pol_set()[0])]).unwrap(),
            vec![120.0],
            vec![2.0],
            vec![0.0],
        )
        .unwrap();
        let lik = Likelihood::new(&problem, ScaleHandling::Profile).unwrap();
        let p = [0.3];
        let s = lik.profile_scale(&p);
        assert!((s - 120.0 / (2.0 * 0.3)).abs() < 1e-9);
        let h = 1e-4 * s;
        let deriv = (lik.log_likelihood_at_scale(&p, s + h) - lik.log_likelihood_at_scale(&p, s - h)) / (2.0 * h);
        assert!(deriv.abs() < 1e-6, "{deriv}");
    }

    #[test]
    fn profile_scale_with_background() {
        let elements: Vec<ComplexMatrix> = tomography_pol_set()[..3].iter().map(pol_projector).collect();
        let problem = TomographyProblem::new(
            SubsystemLayout::polarization(),
            PovmSet::from_elements(&elements).unwrap(),
            vec![50.0, 10.0, 3.0],
            vec![1.0, 1.0, 1.0],
            vec![1.0, 2.0, 0.5],
        )
        .unwrap();
        let lik = Likelihood::new(&problem, ScaleHandling::Profile).unwrap();
        let p = [0.5, 0.2, 0.05];
        let s = lik.profile_scale(&p);
        let h = 1e-5 * s;
        let deriv = (lik.log_likelihood_at_scale(&p, s + h) - lik.log_likelihood_at_scale(&p, s - h)) / (2.0 * h);
        assert!(deriv.abs() < 1e-5, "{deriv}");
        assert!(Likelihood::new(&problem, ScaleHandling::GammaPrior { shape: 1.0, rate: 0.0 }).is_err());
    }

    #[test]
    fn zero_counts_give_zero_scale() {
        let problem = pol_problem(&bell(), 0.0);
        let lik = Likelihood::new(&problem, ScaleHandling::Profile).unwrap();
        let p = vec![0.1; 16];
        assert_eq!(lik.profile_scale(&p), 0.0);
        assert!(lik.log_likelihood_at_scale(&p, 1.0).is_finite());
        assert!(lik.log_likelihood_at_scale(&p, 0.5) > lik.log_likelihood_at_scale(&p, 1.0));
    }

    #[test]
    fn likelihood_is_phase_invariant() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let a = GinibreParam::draw(4, &mut rng);
        let problem = pol_problem(&bell(), 500.0);
        for scale in [ScaleHandling::Profile, ScaleHandling::GammaPrior { shape: 1.0, rate: 0.01 }] {
            let l0 = log_likelihood(&a, &problem, scale).unwrap();
            let l1 = log_likelihood(&a.rotate_phase(1.234), &problem, scale).unwrap();
            assert!((l0 - l1).abs() < 1e-9 * l0.abs().max(1.0));
        }
    }

    #[test]
    fn pcn_with_zero_step_stays_put() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let a = GinibreParam::draw(4, &mut rng);
        let problem = pol_problem(&bell(), 500.0);
        let mut lik = Likelihood::new(&problem, ScaleHandling::Profile).unwrap();
        let ll = lik.log_likelihood(&a);
        for _ in 0..20 {
            let s = pcn_step(&a, ll, 0.0, &mut lik, &mut rng);
            assert!(s.accepted);
            assert_eq!(s.proposal, a);
        }
    }

    #[test]
    fn flat_likelihood_always_accepts() {
        let problem = pol_problem(&bell(), 0.0);
        let config = ChainConfig { n_samples: 50, burn_in: 100, thinning: 10, step_beta: 0.7, adapt: false, init: InitStrategy::Prior, ..Default::default() };
        let ens = run_chain(&problem, &config).unwrap();
        assert_eq!(ens.acceptance_rate, 1.0);
        assert_eq!(ens.len(), 50);
    }

    #[test]
    fn model_mismatch_is_diagnosed() {
        let mut problem = pol_problem(&bell(), 100.0);
        let zero = PovmSet::from_vectors(&vec![ComplexVector::zeros(4); 16]).unwrap();
        problem.povms = zero;
        let err = run_chain(&problem, &ChainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Diagnostic(_)));
    }

    #[test]
    fn bayesian_mean_examples() {
        let layout = SubsystemLayout::polarization();
        let one = DensityMatrix::new(layout.clone(), bell()).unwrap();
        let ens = PosteriorEnsemble::from_samples(vec![one.clone()]);
        assert_eq!(bayesian_mean(&ens).unwrap().matrix(), one.matrix());
        let mut e00 = ComplexMatrix::zeros(4, 4);
        e00[(0, 0)] = c64(1., 0.);
        let mut e11 = ComplexMatrix::zeros(4, 4);
        e11[(1, 1)] = c64(1., 0.);
        let ens = PosteriorEnsemble::from_samples(vec![
            DensityMatrix::new(layout.clone(), e00.clone()).unwrap(),
            DensityMatrix::new(layout.clone(), e11.clone()).unwrap(),
        ]);
        let mean = bayesian_mean(&ens).unwrap();
        assert!((mean.matrix() - (e00 + e11).scale(0.5)).norm() < 1e-15);
        assert!(bayesian_mean(&PosteriorEnsemble::from_samples(vec![])).is_err());
    }

    #[test]
    fn linear_inversion_exact_for_complete_polarization_data() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let truth = GinibreParam::draw(4, &mut rng).density_matrix();
        let li = linear_inversion(&pol_problem(&truth, 1e3)).unwrap();
        assert!(li.is_complete());
        assert!((li.estimate - &truth).norm() < 1e-9);
        assert!((li.scale - 1e3).abs() < 1e-6);
    }

    #[test]
    fn simplex_projection() {
        let p = project_simplex(&[0.5, 0.4, -0.3, 0.6]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&x| x >= 0.0));
        assert_eq!(project_simplex(&[0.2, 0.8]), vec![0.2, 0.8]);
    }

    #[test]
    fn hermitian_coordinates_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let m = hermitian_part(&GinibreParam::draw(5, &mut rng).to_complex());
        let back = from_hermitian_coordinates(&to_hermitian_coordinates(&m), 5);
        assert!((back - &m).norm() < 1e-14);
        // coordinates of w w† agree with the design-row helper
        let w = GinibreParam::draw(5, &mut rng).to_complex().column(0).into_owned();
        let mut row = vec![0.0; 25];
        hermitian_coordinates(&w, &mut row);
        let direct = to_hermitian_coordinates(&(&w * w.adjoint()));
        for (a, b) in row.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
