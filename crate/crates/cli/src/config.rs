//! Versioned JSON experiment configuration.

use std::path::{Path, PathBuf};

use hyperqst::apparatus::{protocol_qubit128, protocol_qutrit720, protocol_random, Protocol, TruncationPolicy, RANDOM_FRAMES, RANDOM_MAX_DEPTH};
use hyperqst::simulator::FluxModel;
use hyperqst::state::{build_target, depolarize, depolarizing_for_fidelity, BinGrid, HyperStateSpec};
use hyperqst::tomography::ChainConfig;
use hyperqst::DensityMatrix;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

/// Expected coincidences per setting for a maximally mixed input.
pub const DESK_COUNTS_PER_SETTING: f64 = 500.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProtocolChoice {
    Qubit128,
    Qutrit720 {
        /// Frame seed; the master seed when absent.
        #[serde(default)]
        seed: Option<u64>,
    },
    Random {
        #[serde(default = "default_frames")]
        frames: usize,
        #[serde(default = "default_max_depth")]
        max_depth: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
    File {
        path: PathBuf,
    },
}

fn default_frames() -> usize {
    RANDOM_FRAMES
}

fn default_max_depth() -> f64 {
    RANDOM_MAX_DEPTH
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NoiseModel {
    #[default]
    None,
    /// `(1−p)ρ + p·I/D`.
    Depolarizing { p: f64 },
    /// Depolarizing noise chosen so the target fidelity equals `fidelity`.
    TargetFidelity { fidelity: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    pub protocol: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub report: Option<PathBuf>,
    /// Directory for bar-plot and chain-trace tables.
    pub tables: Option<PathBuf>,
    /// Full posterior ensemble export.
    pub ensemble: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplicateSettings {
    /// Count level for every row, as in [`FluxModel::for_mixed_counts`].
    pub counts_per_setting: f64,
    /// Largest accepted `|posterior mean − ground truth|`.
    pub tolerance: f64,
}

impl Default for ReplicateSettings {
    fn default() -> Self {
        Self { counts_per_setting: DESK_COUNTS_PER_SETTING, tolerance: 0.02 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub state: HyperStateSpec,
    /// Physical bin grid; the standard grid for `state.d` when absent.
    pub grid: Option<BinGrid>,
    pub protocol: ProtocolChoice,
    /// Desk-scale flux for the state dimension when absent.
    pub flux: Option<FluxModel>,
    pub noise: NoiseModel,
    pub chain: ChainConfig,
    pub truncation: TruncationPolicy,
    pub output: OutputPaths,
    pub replicate: ReplicateSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            state: HyperStateSpec::uniform(2),
            grid: None,
            protocol: ProtocolChoice::Qubit128,
            flux: None,
            noise: NoiseModel::None,
            chain: ChainConfig::default(),
            truncation: TruncationPolicy::default(),
            output: OutputPaths::default(),
            replicate: ReplicateSettings::default(),
        }
    }
}

/// Protocol file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolFile {
    pub schema_version: u32,
    pub protocol: Protocol,
}

/// Independent seed for one pipeline stage.
pub fn derive_seed(master: u64, stage: u64) -> u64 {
    let mut rng = ChaCha20Rng::seed_from_u64(master);
    rng.set_stream(stage);
    rng.next_u64()
}

pub const SIMULATION_STAGE: u64 = 1;
pub const CHAIN_STAGE: u64 = 2;

impl ExperimentConfig {
    /// Reads a config; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut config: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let ProtocolChoice::File { path } = &mut self.protocol {
            fix(path);
        }
        let out = &mut self.output;
        for p in [&mut out.protocol, &mut out.dataset, &mut out.report, &mut out.tables, &mut out.ensemble].into_iter().flatten() {
            fix(p);
        }
    }

    pub fn d(&self) -> usize {
        self.state.d
    }

    pub fn grid(&self) -> BinGrid {
        self.grid.clone().unwrap_or_else(|| BinGrid::standard(self.d()))
    }

    pub fn flux(&self) -> FluxModel {
        self.flux.unwrap_or_else(|| FluxModel::for_mixed_counts(DESK_COUNTS_PER_SETTING, 4 * self.d() * self.d()))
    }

    /// Checks everything that does not need expensive computation.
    pub fn validate(&self) -> CliResult<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Invalid(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version)));
        }
        self.state.validate()?;
        let d = self.d();
        let grid = self.grid();
        grid.validate()?;
        if grid.d != d {
            return Err(CliError::Invalid(format!("grid has d = {} but state has d = {d}", grid.d)));
        }
        match &self.protocol {
            ProtocolChoice::Qubit128 if d != 2 => {
                return Err(CliError::Invalid(format!("protocol qubit128 needs d = 2, state has d = {d}")));
            }
            ProtocolChoice::Qutrit720 { .. } if d != 3 => {
                return Err(CliError::Invalid(format!("protocol qutrit720 needs d = 3, state has d = {d}")));
            }
            ProtocolChoice::File { path } if !path.is_file() => {
                return Err(CliError::Invalid(format!("protocol file {} does not exist", path.display())));
            }
            _ => {}
        }
        self.flux().validate()?;
        match self.noise {
            NoiseModel::Depolarizing { p } if !(0.0..=1.0).contains(&p) => {
                return Err(CliError::Invalid(format!("depolarizing p = {p} outside [0, 1]")));
            }
            NoiseModel::TargetFidelity { fidelity } => {
                depolarizing_for_fidelity(fidelity, 4 * d * d)?;
            }
            _ => {}
        }
        self.chain.validate()?;
        let r = &self.replicate;
        if !(r.counts_per_setting > 0.0 && r.counts_per_setting.is_finite() && r.tolerance > 0.0) {
            return Err(CliError::Invalid("replicate counts_per_setting and tolerance must be positive".into()));
        }
        Ok(())
    }

    pub fn protocol_seed(&self) -> u64 {
        match &self.protocol {
            ProtocolChoice::Qutrit720 { seed } | ProtocolChoice::Random { seed, .. } => seed.unwrap_or(self.seed),
            _ => self.seed,
        }
    }

    pub fn build_protocol(&self) -> CliResult<Protocol> {
        let protocol = match &self.protocol {
            ProtocolChoice::Qubit128 => protocol_qubit128(),
            ProtocolChoice::Qutrit720 { .. } => protocol_qutrit720(self.protocol_seed()),
            ProtocolChoice::Random { frames, max_depth, .. } => protocol_random(self.d(), *frames, *max_depth, self.protocol_seed())?,
            ProtocolChoice::File { path } => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                let file: ProtocolFile =
                    serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
                if file.schema_version != SCHEMA_VERSION {
                    return Err(CliError::Invalid(format!("{}: unsupported schema_version {}", path.display(), file.schema_version)));
                }
                file.protocol
            }
        };
        protocol.validate()?;
        if protocol.d != self.d() {
            return Err(CliError::Invalid(format!("protocol {} has d = {}, state has d = {}", protocol.id, protocol.d, self.d())));
        }
        self.truncation.check(protocol.max_depth())?;
        Ok(protocol)
    }

    pub fn ground_truth(&self) -> CliResult<(DensityMatrix, String)> {
        let ideal = build_target(&self.state)?.density();
        let dim = ideal.dim();
        let p = match self.noise {
            NoiseModel::None => 0.0,
            NoiseModel::Depolarizing { p } => p,
            NoiseModel::TargetFidelity { fidelity } => depolarizing_for_fidelity(fidelity, dim)?,
        };
        let fidelity = 1.0 - p + p / dim as f64;
        let rho = depolarize(&ideal, p)?;
        Ok((rho, format!("target d={} depolarized p={p:?} fidelity={fidelity:?}", self.d())))
    }

    pub fn simulation_seed(&self) -> u64 {
        derive_seed(self.seed, SIMULATION_STAGE)
    }

    pub fn chain_config(&self) -> ChainConfig {
        ChainConfig { seed: derive_seed(self.seed, CHAIN_STAGE), ..self.chain.clone() }
    }
}
