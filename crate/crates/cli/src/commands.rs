//! Subcommand implementations.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hyperqst::apparatus::{protocol_qubit128, protocol_qutrit720, Protocol};
use hyperqst::metrics::{ensemble_interval, entanglement_interval, reduce_to_dof, Dof};
use hyperqst::simulator::{generate_dataset, Dataset, FluxModel};
use hyperqst::state::{build_target, depolarize, depolarizing_for_fidelity, HyperStateSpec};
use hyperqst::tomography::PosteriorEnsemble;
use hyperqst::SubsystemLayout;
use serde::{Deserialize, Serialize};

use crate::config::{derive_seed, ExperimentConfig, ProtocolFile, SCHEMA_VERSION};
use crate::error::{CliError, CliResult};
use crate::report::{
    ensemble_export, reconstruct, state_metrics, to_json, trace_table, write_text, EnsembleExport, EntanglementBlock, Labeled, Report,
    StateMetrics,
};

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Options {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub samples: Option<usize>,
    pub quiet: bool,
}

impl Options {
    fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }

    /// Config file (or defaults) with command-line overrides, validated.
    pub fn load_config(&self) -> CliResult<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(n) = self.samples {
            config.chain.n_samples = n;
        }
        config.validate()?;
        Ok(config)
    }

    fn out_or(&self, configured: &Option<PathBuf>, fallback: &str) -> PathBuf {
        self.out.clone().or_else(|| configured.clone()).unwrap_or_else(|| PathBuf::from(fallback))
    }
}

pub fn cmd_protocol(opts: &Options) -> CliResult<Protocol> {
    let config = opts.load_config()?;
    let protocol = config.build_protocol()?;
    let path = opts.out_or(&config.output.protocol, "protocol.json");
    write_text(&path, &to_json(&ProtocolFile { schema_version: SCHEMA_VERSION, protocol: protocol.clone() }))?;
    opts.say(format!("{} settings ({}) written to {}", protocol.len(), protocol.id, path.display()));
    Ok(protocol)
}

pub fn cmd_simulate(opts: &Options) -> CliResult<Dataset> {
    let config = opts.load_config()?;
    let protocol = config.build_protocol()?;
    let (rho, description) = config.ground_truth()?;
    let mut dataset = generate_dataset(&rho, &protocol, &config.flux(), &config.truncation, config.simulation_seed())?;
    dataset.ground_truth = Some(description);
    let path = opts.out_or(&config.output.dataset, "dataset.csv");
    write_text(&path, &dataset.to_table())?;
    opts.say(format!(
        "{} records, {} coincidences ({}) written to {}",
        dataset.records.len(),
        dataset.total_counts(),
        protocol.id,
        path.display()
    ));
    Ok(dataset)
}

pub fn read_dataset(path: &Path) -> CliResult<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(Dataset::from_table(&text)?)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "report".into());
    path.with_file_name(format!("{stem}.{suffix}"))
}

pub fn cmd_reconstruct(opts: &Options, dataset_path: &Path) -> CliResult<Report> {
    let config = opts.load_config()?;
    let dataset = read_dataset(dataset_path)?;
    if dataset.d != config.d() {
        return Err(CliError::Invalid(format!("dataset has d = {} but the configuration has d = {}", dataset.d, config.d())));
    }
    let protocol = config.build_protocol()?;
    let chain = config.chain_config();
    let start = Instant::now();
    let rec = reconstruct(&dataset, &protocol, &config.state, &chain, &config.truncation, config.seed)?;
    let mut report = rec.report.clone();
    report.metadata.wall_time_s = Some(start.elapsed().as_secs_f64());

    let path = opts.out_or(&config.output.report, "report.json");
    write_text(&path, &to_json(&report))?;
    let table_path = |name: &str| match &config.output.tables {
        Some(dir) => dir.join(format!("{name}.csv")),
        None => sibling(&path, &format!("{name}.csv")),
    };
    write_text(&table_path("rho_pf"), &report.matrices.pf.bar_table())?;
    write_text(&table_path("rho_p"), &report.matrices.p.bar_table())?;
    write_text(&table_path("rho_f"), &report.matrices.f.bar_table())?;
    write_text(&table_path("trace"), &trace_table(&rec.ensemble))?;
    if let Some(ens_path) = &config.output.ensemble {
        write_text(ens_path, &to_json(&ensemble_export(&rec)))?;
    }
    for line in report.summary_lines() {
        opts.say(line);
    }
    opts.say(format!("report written to {}", path.display()));
    Ok(report)
}

/// Published values for one replication row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportedValues {
    pub fidelity_pf: String,
    pub fidelity_p: Option<String>,
    pub fidelity_f: Option<String>,
    pub interval_p: Option<String>,
    pub interval_f: Option<String>,
}

struct ReferenceRow {
    name: &'static str,
    d: usize,
    fidelity: f64,
    reported: [Option<&'static str>; 5],
}

const REFERENCE_ROWS: [ReferenceRow; 6] = [
    ReferenceRow { name: "qubit channel 1", d: 2, fidelity: 0.944, reported: [Some("94.4(6)%"), None, None, Some("[0.69(3), 0.936(9)]"), Some("[0.76(2), 0.954(5)]")] },
    ReferenceRow { name: "qubit channel 2", d: 2, fidelity: 0.933, reported: [Some("93.3(7)%"), Some("94.5(6)%"), Some("95.9(4)%"), None, None] },
    ReferenceRow { name: "qubit channel 3", d: 2, fidelity: 0.933, reported: [Some("93.3(7)%"), Some("94.5(6)%"), Some("96.1(4)%"), None, None] },
    ReferenceRow { name: "qubit channel 4", d: 2, fidelity: 0.937, reported: [Some("93.7(8)%"), Some("94.8(7)%"), Some("96.7(3)%"), None, None] },
    ReferenceRow { name: "qubit channel 5", d: 2, fidelity: 0.913, reported: [Some("91.3(9)%"), Some("93.1(8)%"), Some("94.8(5)%"), None, None] },
    ReferenceRow { name: "qutrit", d: 3, fidelity: 0.908, reported: [Some("90.8(7)%"), None, None, Some("[0.62(1), 0.915(3)]"), Some("[1.04(4), 1.48(1)]")] },
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub name: String,
    pub d: usize,
    pub protocol_id: String,
    pub ground_truth_fidelity: f64,
    pub data_seed: u64,
    pub chain_seed: u64,
    pub total_counts: u64,
    pub acceptance_rate: f64,
    pub fidelity_pf: Labeled,
    pub fidelity_p: Labeled,
    pub fidelity_f: Labeled,
    pub polarization: EntanglementBlock,
    pub frequency: EntanglementBlock,
    /// Posterior mean minus ground truth.
    pub deviation: f64,
    /// Deviation in posterior standard deviations.
    pub z_score: f64,
    pub within_tolerance: bool,
    pub within_two_std: bool,
    pub reported: ReportedValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub schema_version: u32,
    pub kind: String,
    pub seed: u64,
    pub counts_per_setting: f64,
    pub tolerance: f64,
    pub chain: hyperqst::tomography::ChainConfig,
    pub rows: Vec<ReplicationRow>,
    pub all_pass: bool,
}

impl ReplicationReport {
    /// Plain-text comparison against the published values.
    pub fn comparison_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<16} {:>6} {:>10} {:>10} {:>10} {:>10} {:>9} {:>7}  {:<26} {:<26}",
            "row", "truth", "F_PF", "published", "F_P", "F_F", "dev", "check", "[I_C, E_N]_P", "[I_C, E_N]_F"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<16} {:>6.3} {:>10} {:>10} {:>10} {:>10} {:>+9.4} {:>7}  {:<26} {:<26}",
                r.name,
                r.ground_truth_fidelity,
                r.fidelity_pf.formatted,
                r.reported.fidelity_pf,
                r.fidelity_p.formatted,
                r.fidelity_f.formatted,
                r.deviation,
                if r.within_tolerance { "pass" } else { "FAIL" },
                r.polarization.formatted.trim_end_matches(" ebits"),
                r.frequency.formatted.trim_end_matches(" ebits"),
            );
            let published: Vec<String> = [("F_P", &r.reported.fidelity_p), ("F_F", &r.reported.fidelity_f), ("P", &r.reported.interval_p), ("F", &r.reported.interval_f)]
                .iter()
                .filter_map(|(k, v)| v.as_ref().map(|v| format!("{k} {v}")))
                .collect();
            if !published.is_empty() {
                let _ = writeln!(out, "{:<16} published: {}", "", published.join(", "));
            }
        }
        out
    }

    /// `row,truth,...` for plotting.
    pub fn comparison_csv(&self) -> String {
        let mut out = String::from("row,d,truth,mean,std,published,deviation,z_score,within_tolerance,ic_p,en_p,ic_f,en_f\n");
        for r in &self.rows {
            let e = &r.fidelity_pf.estimate;
            let _ = writeln!(
                out,
                "{},{},{:?},{:?},{:?},{},{:?},{:?},{},{:?},{:?},{:?},{:?}",
                r.name,
                r.d,
                r.ground_truth_fidelity,
                e.mean,
                e.std,
                r.reported.fidelity_pf,
                r.deviation,
                r.z_score,
                r.within_tolerance,
                r.polarization.interval.coherent_information.mean,
                r.polarization.interval.log_negativity.mean,
                r.frequency.interval.coherent_information.mean,
                r.frequency.interval.log_negativity.mean,
            );
        }
        out
    }
}

/// Synthetic experiments at the published fidelities, each with its own
/// derived data and chain seeds.
pub fn run_replication(config: &ExperimentConfig, progress: &dyn Fn(&str)) -> CliResult<ReplicationReport> {
    let settings = &config.replicate;
    let mut rows = Vec::with_capacity(REFERENCE_ROWS.len());
    for (i, row) in REFERENCE_ROWS.iter().enumerate() {
        let spec = HyperStateSpec::uniform(row.d);
        let protocol = if row.d == 2 { protocol_qubit128() } else { protocol_qutrit720(config.seed) };
        let dim = 4 * row.d * row.d;
        let truth = depolarize(&build_target(&spec)?.density(), depolarizing_for_fidelity(row.fidelity, dim)?)?;
        let flux = FluxModel::for_mixed_counts(settings.counts_per_setting, dim);
        let data_seed = derive_seed(config.seed, 100 + i as u64);
        let chain_seed = derive_seed(config.seed, 200 + i as u64);
        let mut dataset = generate_dataset(&truth, &protocol, &flux, &config.truncation, data_seed)?;
        dataset.ground_truth = Some(format!("{} depolarized to fidelity {}", row.name, row.fidelity));
        let chain = hyperqst::tomography::ChainConfig { seed: chain_seed, ..config.chain.clone() };
        let rec = reconstruct(&dataset, &protocol, &spec, &chain, &config.truncation, config.seed)?;
        let report = rec.report;
        let est = &report.fidelity.pf.estimate;
        let deviation = est.mean - row.fidelity;
        let z_score = if est.std > 0.0 { deviation / est.std } else { f64::INFINITY.copysign(deviation) };
        let [f_pf, f_p, f_f, i_p, i_f] = row.reported;
        let out = ReplicationRow {
            name: row.name.into(),
            d: row.d,
            protocol_id: protocol.id.clone(),
            ground_truth_fidelity: row.fidelity,
            data_seed,
            chain_seed,
            total_counts: dataset.total_counts(),
            acceptance_rate: report.metadata.acceptance_rate,
            fidelity_pf: report.fidelity.pf.clone(),
            fidelity_p: report.fidelity.p.clone(),
            fidelity_f: report.fidelity.f.clone(),
            polarization: report.entanglement.polarization.clone(),
            frequency: report.entanglement.frequency.clone(),
            deviation,
            z_score,
            within_tolerance: deviation.abs() <= settings.tolerance,
            within_two_std: z_score.abs() <= 2.0,
            reported: ReportedValues {
                fidelity_pf: f_pf.unwrap_or_default().into(),
                fidelity_p: f_p.map(Into::into),
                fidelity_f: f_f.map(Into::into),
                interval_p: i_p.map(Into::into),
                interval_f: i_f.map(Into::into),
            },
        };
        progress(&format!("{}: F_PF {} (truth {:.3}, published {})", out.name, out.fidelity_pf.formatted, row.fidelity, out.reported.fidelity_pf));
        rows.push(out);
    }
    let all_pass = rows.iter().all(|r| r.within_tolerance);
    Ok(ReplicationReport {
        schema_version: SCHEMA_VERSION,
        kind: "replication".into(),
        seed: config.seed,
        counts_per_setting: settings.counts_per_setting,
        tolerance: settings.tolerance,
        chain: config.chain.clone(),
        rows,
        all_pass,
    })
}

pub fn cmd_replicate_paper(opts: &Options) -> CliResult<ReplicationReport> {
    let config = opts.load_config()?;
    let report = run_replication(&config, &|line| opts.say(line))?;
    let path = opts.out_or(&config.output.report, "replication.json");
    write_text(&path, &to_json(&report))?;
    write_text(&sibling(&path, "csv"), &report.comparison_csv())?;
    opts.say(report.comparison_table());
    opts.say(format!("report written to {}", path.display()));
    if !report.all_pass {
        let failing: Vec<String> = report
            .rows
            .iter()
            .filter(|r| !r.within_tolerance)
            .map(|r| format!("{} (mean {:.4}, truth {:.3}, deviation {:+.4})", r.name, r.fidelity_pf.estimate.mean, r.ground_truth_fidelity, r.deviation))
            .collect();
        return Err(CliError::Check(format!("posterior mean outside ±{} of ground truth: {}", report.tolerance, failing.join("; "))));
    }
    Ok(report)
}

/// Output of the `metrics` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum MetricsOutput {
    /// A single state: the configured ground truth or a report's Bayesian mean.
    State { d: usize, description: String, metrics: StateMetrics },
    /// Intervals over an exported posterior ensemble.
    Ensemble {
        d: usize,
        samples: usize,
        fidelity_pf: Labeled,
        fidelity_p: Labeled,
        fidelity_f: Labeled,
        polarization: EntanglementBlock,
        frequency: EntanglementBlock,
        photons: EntanglementBlock,
    },
}

fn d_from_dim(dim: usize) -> CliResult<usize> {
    let d = ((dim / 4) as f64).sqrt().round() as usize;
    if d >= 2 && 4 * d * d == dim {
        Ok(d)
    } else {
        Err(CliError::Invalid(format!("matrix dimension {dim} is not 4·d² for any d ≥ 2")))
    }
}

pub fn cmd_metrics(opts: &Options, input: Option<&Path>) -> CliResult<MetricsOutput> {
    let config = opts.load_config()?;
    let spec_for = |d: usize| -> CliResult<HyperStateSpec> {
        if opts.config.is_none() {
            return Ok(HyperStateSpec::uniform(d));
        }
        if config.d() != d {
            return Err(CliError::Invalid(format!("input has d = {d}, configuration has d = {}", config.d())));
        }
        Ok(config.state.clone())
    };
    let output = match input {
        None => {
            let (rho, description) = config.ground_truth()?;
            MetricsOutput::State { d: config.d(), description, metrics: state_metrics(&rho, &config.state)? }
        }
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            if let Ok(report) = serde_json::from_str::<Report>(&text) {
                let d = report.metadata.d;
                let spec = spec_for(d)?;
                let rho = report.matrices.pf.to_state(SubsystemLayout::hyper(d))?;
                MetricsOutput::State { d, description: format!("Bayesian mean from {}", path.display()), metrics: state_metrics(&rho, &spec)? }
            } else {
                let export: EnsembleExport = serde_json::from_str(&text)
                    .map_err(|e| CliError::Invalid(format!("{}: neither a report nor an ensemble export ({e})", path.display())))?;
                let first = export.samples.first().ok_or_else(|| CliError::Invalid("ensemble export has no samples".into()))?;
                let d = d_from_dim(first.basis.len())?;
                let spec = spec_for(d)?;
                let samples = export.samples.iter().map(|m| m.to_state(SubsystemLayout::hyper(d))).collect::<CliResult<Vec<_>>>()?;
                ensemble_metrics(&PosteriorEnsemble::from_samples(samples), &spec)?
            }
        }
    };
    let text = to_json(&output);
    match &opts.out {
        Some(path) => {
            write_text(path, &text)?;
            opts.say(format!("metrics written to {}", path.display()));
        }
        None => print!("{text}"),
    }
    Ok(output)
}

fn ensemble_metrics(ens: &PosteriorEnsemble, spec: &HyperStateSpec) -> CliResult<MetricsOutput> {
    let target = build_target(spec)?;
    let (tp, tf) = (spec.polarization_ket()?, spec.frequency_ket()?);
    let fid = |label: &str, f: &dyn Fn(&hyperqst::DensityMatrix) -> hyperqst::Result<f64>| -> CliResult<Labeled> {
        let e = ensemble_interval(ens, label, f)?;
        Ok(Labeled { formatted: e.formatted_percent(), estimate: e })
    };
    let block = |dof: Option<Dof>, local: usize| -> CliResult<EntanglementBlock> {
        let interval = entanglement_interval(ens, dof)?;
        Ok(EntanglementBlock { formatted: interval.formatted(), interval, ceiling_ebits: (local as f64).log2() })
    };
    Ok(MetricsOutput::Ensemble {
        d: spec.d,
        samples: ens.len(),
        fidelity_pf: fid("F_PF", &|s| hyperqst::algebra::fidelity_pure(s, &target))?,
        fidelity_p: fid("F_P", &|s| hyperqst::algebra::fidelity_pure(&reduce_to_dof(s, Dof::Polarization)?, &tp))?,
        fidelity_f: fid("F_F", &|s| hyperqst::algebra::fidelity_pure(&reduce_to_dof(s, Dof::Frequency)?, &tf))?,
        polarization: block(Some(Dof::Polarization), 2)?,
        frequency: block(Some(Dof::Frequency), spec.d)?,
        photons: block(None, 2 * spec.d)?,
    })
}
