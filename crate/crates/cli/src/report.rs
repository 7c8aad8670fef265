//! Reconstruction reports and plot-ready tables.

use std::fmt::Write as _;
use std::path::Path;

use hyperqst::algebra::fidelity_pure;
use hyperqst::apparatus::{Protocol, TruncationPolicy};
use hyperqst::metrics::{
    coherent_information, ensemble_interval, entanglement_interval, log_negativity, reduce_to_dof, Bipartition, Dof,
    EntanglementInterval, IntervalEstimate,
};
use hyperqst::simulator::Dataset;
use hyperqst::state::{build_target, HyperStateSpec};
use hyperqst::tomography::{
    bayesian_mean, constrained_least_squares, linear_inversion, run_chain, ChainConfig, PosteriorEnsemble, PovmSet, TomographyProblem,
};
use hyperqst::{ComplexMatrix, DensityMatrix, SubsystemLayout, C64};
use serde::{Deserialize, Serialize};

use crate::config::SCHEMA_VERSION;
use crate::error::{CliError, CliResult};

/// Row-major real and imaginary parts with the basis of each row/column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRecord {
    pub basis: Vec<String>,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl MatrixRecord {
    pub fn from_state(rho: &DensityMatrix) -> Self {
        let m = rho.matrix();
        let n = m.nrows();
        let mut re = Vec::with_capacity(n * n);
        let mut im = Vec::with_capacity(n * n);
        for r in 0..n {
            for c in 0..n {
                re.push(m[(r, c)].re);
                im.push(m[(r, c)].im);
            }
        }
        Self { basis: rho.layout().basis_labels(), re, im }
    }

    pub fn to_state(&self, layout: SubsystemLayout) -> CliResult<DensityMatrix> {
        let n = layout.total_dim();
        if self.basis.len() != n || self.re.len() != n * n || self.im.len() != n * n {
            return Err(CliError::Invalid(format!("matrix record does not describe a {n}x{n} matrix")));
        }
        let m = ComplexMatrix::from_fn(n, n, |r, c| C64::new(self.re[r * n + c], self.im[r * n + c]));
        Ok(DensityMatrix::new(layout, m)?)
    }

    /// `row,col,real,imag` with basis labels.
    pub fn bar_table(&self) -> String {
        let n = self.basis.len();
        let mut out = String::from("row,col,real,imag\n");
        for r in 0..n {
            for c in 0..n {
                let _ = writeln!(out, "{},{},{:?},{:?}", self.basis[r], self.basis[c], self.re[r * n + c], self.im[r * n + c]);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Labeled {
    pub estimate: IntervalEstimate,
    pub formatted: String,
}

impl Labeled {
    fn percent(estimate: IntervalEstimate) -> Self {
        let formatted = estimate.formatted_percent();
        Self { estimate, formatted }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntanglementBlock {
    pub interval: EntanglementInterval,
    pub formatted: String,
    /// `log₂` of the smaller local dimension.
    pub ceiling_ebits: f64,
}

impl EntanglementBlock {
    fn new(interval: EntanglementInterval, local_dim: usize) -> Self {
        let formatted = interval.formatted();
        Self { interval, formatted, ceiling_ebits: (local_dim as f64).log2() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityBlock {
    pub pf: Labeled,
    pub p: Labeled,
    pub f: Labeled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntanglementSummary {
    pub polarization: EntanglementBlock,
    pub frequency: EntanglementBlock,
}

/// Least-squares baselines next to the Bayesian mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub rank: usize,
    pub operator_dim: usize,
    pub complete: bool,
    pub fidelity_clipped: f64,
    pub fidelity_constrained: f64,
    pub trace_distance_clipped: f64,
    pub trace_distance_constrained: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub seed: u64,
    pub protocol_id: String,
    pub d: usize,
    pub records: usize,
    pub total_counts: u64,
    pub n_samples: usize,
    pub acceptance_rate: f64,
    pub step_beta: f64,
    pub chain: ChainConfig,
    /// Seconds; the only field that differs between identical runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrices {
    pub pf: MatrixRecord,
    pub p: MatrixRecord,
    pub f: MatrixRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub kind: String,
    pub metadata: RunMetadata,
    pub fidelity: FidelityBlock,
    pub entanglement: EntanglementSummary,
    pub baseline: Baseline,
    pub matrices: Matrices,
}

impl Report {
    pub fn summary_lines(&self) -> Vec<String> {
        let f = &self.fidelity;
        let e = &self.entanglement;
        let limit = |b: &EntanglementBlock| {
            let name = if b.ceiling_ebits == 1.0 { "qubit" } else if (b.ceiling_ebits - 3f64.log2()).abs() < 1e-12 { "qutrit" } else { "local" };
            format!("{name} limit {:.2} ebits", b.ceiling_ebits)
        };
        vec![
            format!("F_PF = {}", f.pf.formatted),
            format!("F_P  = {}", f.p.formatted),
            format!("F_F  = {}", f.f.formatted),
            format!("[I_C, E_N]_P = {} ({})", e.polarization.formatted, limit(&e.polarization)),
            format!("[I_C, E_N]_F = {} ({})", e.frequency.formatted, limit(&e.frequency)),
            format!(
                "acceptance {:.3}, {} samples, {} counts over {} settings",
                self.metadata.acceptance_rate, self.metadata.n_samples, self.metadata.total_counts, self.metadata.records
            ),
        ]
    }
}

/// Posterior ensemble plus everything derived from it.
pub struct Reconstruction {
    pub report: Report,
    pub ensemble: PosteriorEnsemble,
}

pub fn problem_for(dataset: &Dataset, protocol: &Protocol, trunc: &TruncationPolicy) -> CliResult<TomographyProblem> {
    dataset.check_against(protocol)?;
    if dataset.protocol_id != protocol.id {
        return Err(CliError::Invalid(format!(
            "dataset was recorded with protocol {} but the configuration builds {}",
            dataset.protocol_id, protocol.id
        )));
    }
    let povms = PovmSet::from_protocol(protocol, trunc)?;
    Ok(TomographyProblem::from_dataset(dataset, povms)?)
}

pub fn reconstruct(
    dataset: &Dataset,
    protocol: &Protocol,
    spec: &HyperStateSpec,
    chain: &ChainConfig,
    trunc: &TruncationPolicy,
    seed: u64,
) -> CliResult<Reconstruction> {
    if spec.d != dataset.d {
        return Err(CliError::Invalid(format!("dataset has d = {}, configured state has d = {}", dataset.d, spec.d)));
    }
    let problem = problem_for(dataset, protocol, trunc)?;
    let ensemble = run_chain(&problem, chain)?;
    let report = summarize(&problem, dataset, protocol, spec, chain, seed, &ensemble)?;
    Ok(Reconstruction { report, ensemble })
}

fn summarize(
    problem: &TomographyProblem,
    dataset: &Dataset,
    protocol: &Protocol,
    spec: &HyperStateSpec,
    chain: &ChainConfig,
    seed: u64,
    ens: &PosteriorEnsemble,
) -> CliResult<Report> {
    let target = build_target(spec)?;
    let target_p = spec.polarization_ket()?;
    let target_f = spec.frequency_ket()?;
    let fid_pf = ensemble_interval(ens, "F_PF", |s| fidelity_pure(s, &target))?;
    let fid_p = ensemble_interval(ens, "F_P", |s| fidelity_pure(&reduce_to_dof(s, Dof::Polarization)?, &target_p))?;
    let fid_f = ensemble_interval(ens, "F_F", |s| fidelity_pure(&reduce_to_dof(s, Dof::Frequency)?, &target_f))?;

    let mean = bayesian_mean(ens)?;
    let li = linear_inversion(problem)?;
    let clipped = li.psd_clipped()?;
    let constrained = constrained_least_squares(problem, 300)?;

    Ok(Report {
        schema_version: SCHEMA_VERSION,
        kind: "reconstruction".into(),
        metadata: RunMetadata {
            seed,
            protocol_id: protocol.id.clone(),
            d: dataset.d,
            records: dataset.records.len(),
            total_counts: dataset.total_counts(),
            n_samples: ens.len(),
            acceptance_rate: ens.acceptance_rate,
            step_beta: ens.step_beta,
            chain: chain.clone(),
            wall_time_s: None,
        },
        fidelity: FidelityBlock { pf: Labeled::percent(fid_pf), p: Labeled::percent(fid_p), f: Labeled::percent(fid_f) },
        entanglement: EntanglementSummary {
            polarization: EntanglementBlock::new(entanglement_interval(ens, Some(Dof::Polarization))?, 2),
            frequency: EntanglementBlock::new(entanglement_interval(ens, Some(Dof::Frequency))?, dataset.d),
        },
        baseline: Baseline {
            rank: li.rank,
            operator_dim: li.operator_dim,
            complete: li.is_complete(),
            fidelity_clipped: fidelity_pure(&clipped, &target)?,
            fidelity_constrained: fidelity_pure(&constrained, &target)?,
            trace_distance_clipped: clipped.trace_distance(&mean)?,
            trace_distance_constrained: constrained.trace_distance(&mean)?,
        },
        matrices: Matrices {
            pf: MatrixRecord::from_state(&mean),
            p: MatrixRecord::from_state(&reduce_to_dof(&mean, Dof::Polarization)?),
            f: MatrixRecord::from_state(&reduce_to_dof(&mean, Dof::Frequency)?),
        },
    })
}

/// Point metrics of a single state at every level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMetrics {
    pub fidelity_pf: f64,
    pub fidelity_p: f64,
    pub fidelity_f: f64,
    pub polarization: PointBounds,
    pub frequency: PointBounds,
    pub photons: PointBounds,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointBounds {
    pub coherent_information: f64,
    pub log_negativity: f64,
}

fn point_bounds(rho: &DensityMatrix) -> CliResult<PointBounds> {
    let cut = Bipartition::photons(rho.layout());
    Ok(PointBounds { coherent_information: coherent_information(rho, &cut)?, log_negativity: log_negativity(rho, &cut)? })
}

pub fn state_metrics(rho: &DensityMatrix, spec: &HyperStateSpec) -> CliResult<StateMetrics> {
    let rho_p = reduce_to_dof(rho, Dof::Polarization)?;
    let rho_f = reduce_to_dof(rho, Dof::Frequency)?;
    Ok(StateMetrics {
        fidelity_pf: fidelity_pure(rho, &build_target(spec)?)?,
        fidelity_p: fidelity_pure(&rho_p, &spec.polarization_ket()?)?,
        fidelity_f: fidelity_pure(&rho_f, &spec.frequency_ket()?)?,
        polarization: point_bounds(&rho_p)?,
        frequency: point_bounds(&rho_f)?,
        photons: point_bounds(rho)?,
    })
}

/// Chain diagnostics as `step,phase,step_beta,acceptance,log_likelihood`.
pub fn trace_table(ens: &PosteriorEnsemble) -> String {
    let mut out = String::from("step,phase,step_beta,acceptance,log_likelihood\n");
    for r in &ens.trace {
        let phase = match r.phase {
            hyperqst::tomography::ChainPhase::BurnIn => "burn-in",
            hyperqst::tomography::ChainPhase::Sampling => "sampling",
        };
        let _ = writeln!(out, "{},{phase},{:?},{:?},{:?}", r.step, r.step_beta, r.acceptance, r.log_likelihood);
    }
    out
}

/// Every posterior sample plus the summary block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleExport {
    pub schema_version: u32,
    pub summary: FidelityBlock,
    pub acceptance_rate: f64,
    pub samples: Vec<MatrixRecord>,
}

pub fn ensemble_export(rec: &Reconstruction) -> EnsembleExport {
    EnsembleExport {
        schema_version: SCHEMA_VERSION,
        summary: rec.report.fidelity.clone(),
        acceptance_rate: rec.ensemble.acceptance_rate,
        samples: rec.ensemble.samples.iter().map(MatrixRecord::from_state).collect(),
    }
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}
