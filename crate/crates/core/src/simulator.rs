//! Synthetic coincidence counts.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::algebra::{ComplexVector, DensityMatrix};
use crate::apparatus::{joint_povm, MeasurementSetting, Protocol, TruncationPolicy};
use crate::error::{arg, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluxModel {
    /// Detected coincidences per second at unit POVM expectation.
    pub pair_rate: f64,
    /// Seconds per setting.
    pub integration_time: f64,
    /// Background coincidences per second, added to every setting.
    pub accidental_rate: f64,
}

impl FluxModel {
    /// Flux giving `counts` expected coincidences in a rank-one setting for a
    /// maximally mixed input of dimension `dim`, at 60 s per setting.
    pub fn for_mixed_counts(counts: f64, dim: usize) -> Self {
        let integration_time = 60.0;
        Self { pair_rate: counts * dim as f64 / integration_time, integration_time, accidental_rate: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if !(ok(self.pair_rate) && ok(self.integration_time) && ok(self.accidental_rate)) {
            return arg("flux model rates and integration time must be finite and non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRecord {
    pub label: String,
    pub counts: u64,
    /// Seconds.
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub protocol_id: String,
    pub d: usize,
    pub seed: u64,
    pub flux: FluxModel,
    /// Free-form description of the state the counts were drawn from.
    pub ground_truth: Option<String>,
    pub records: Vec<CountRecord>,
}

impl Dataset {
    pub fn total_counts(&self) -> u64 {
        self.records.iter().map(|r| r.counts).sum()
    }

    /// Checks that records line up one-to-one with `protocol`.
    pub fn check_against(&self, protocol: &Protocol) -> Result<()> {
        if self.d != protocol.d {
            return arg(format!("dataset has d = {}, protocol has d = {}", self.d, protocol.d));
        }
        if self.records.len() != protocol.len() {
            return arg(format!("dataset has {} records, protocol has {} settings", self.records.len(), protocol.len()));
        }
        for (r, s) in self.records.iter().zip(&protocol.settings) {
            if r.label != s.label {
                return arg(format!("record {} does not match setting {}", r.label, s.label));
            }
        }
        Ok(())
    }

    /// Text table: `#key=value` metadata lines, a `label,counts,duration`
    /// header, then one record per line in protocol order.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let f = &self.flux;
        let _ = writeln!(out, "#format=hyperqst-dataset-v1");
        let _ = writeln!(out, "#protocol_id={}", self.protocol_id);
        let _ = writeln!(out, "#d={}", self.d);
        let _ = writeln!(out, "#seed={}", self.seed);
        let _ = writeln!(out, "#pair_rate={:?}", f.pair_rate);
        let _ = writeln!(out, "#integration_time={:?}", f.integration_time);
        let _ = writeln!(out, "#accidental_rate={:?}", f.accidental_rate);
        if let Some(gt) = &self.ground_truth {
            let _ = writeln!(out, "#ground_truth={}", gt.replace('\n', " "));
        }
        out.push_str("label,counts,duration\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{},{:?}", r.label, r.counts, r.duration);
        }
        out
    }

    pub fn from_table(text: &str) -> Result<Self> {
        let parse_err = |line: usize, msg: &str| Error::Parse(format!("dataset line {}: {msg}", line + 1));
        let mut meta = std::collections::HashMap::new();
        let mut records = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(kv) = line.strip_prefix('#') {
                let (k, v) = kv.split_once('=').ok_or_else(|| parse_err(i, "metadata line without '='"))?;
                meta.insert(k.trim().to_string(), v.trim().to_string());
                continue;
            }
            if line == "label,counts,duration" {
                continue;
            }
            let mut fields = line.split(',');
            let (Some(label), Some(counts), Some(duration), None) = (fields.next(), fields.next(), fields.next(), fields.next()) else {
                return Err(parse_err(i, "expected label,counts,duration"));
            };
            let counts = counts.trim().parse().map_err(|_| parse_err(i, "counts is not a non-negative integer"))?;
            let duration: f64 = duration.trim().parse().map_err(|_| parse_err(i, "duration is not a number"))?;
            if !(duration.is_finite() && duration >= 0.0) {
                return Err(parse_err(i, "duration must be non-negative"));
            }
            records.push(CountRecord { label: label.trim().to_string(), counts, duration });
        }
        let get = |k: &str| meta.get(k).ok_or_else(|| Error::Parse(format!("dataset header is missing '{k}'")));
        let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| Error::Parse(format!("header '{k}' is not a number"))) };
        Ok(Self {
            protocol_id: get("protocol_id")?.clone(),
            d: get("d")?.parse().map_err(|_| Error::Parse("header 'd' is not an integer".into()))?,
            seed: get("seed")?.parse().map_err(|_| Error::Parse("header 'seed' is not an integer".into()))?,
            flux: FluxModel {
                pair_rate: num("pair_rate")?,
                integration_time: num("integration_time")?,
                accidental_rate: num("accidental_rate")?,
            },
            ground_truth: meta.get("ground_truth").cloned(),
            records,
        })
    }
}

/// Born-rule rate `pair_rate · Tr(Eρ) + accidental_rate`.
pub fn expected_rate(rho: &DensityMatrix, setting: &MeasurementSetting, flux: &FluxModel, trunc: &TruncationPolicy) -> Result<f64> {
    let d = setting.d();
    if rho.dim() != 4 * d * d {
        return arg(format!("state dimension {} does not match setting dimension {}", rho.dim(), 4 * d * d));
    }
    let e = joint_povm(setting, trunc)?;
    let p = (&e * rho.matrix()).trace().re.max(0.0);
    Ok(flux.pair_rate * p + flux.accidental_rate)
}

fn rate_from_vector(rho: &DensityMatrix, v: &ComplexVector, flux: &FluxModel) -> f64 {
    let p = (v.adjoint() * rho.matrix() * v)[(0, 0)].re.max(0.0);
    flux.pair_rate * p + flux.accidental_rate
}

/// Poisson draw with mean `rate · duration`.
pub fn sample_counts<R: Rng + ?Sized>(rate: f64, duration: f64, rng: &mut R) -> Result<u64> {
    let mean = rate * duration;
    if !(mean.is_finite() && rate >= 0.0 && duration >= 0.0) {
        return arg(format!("invalid Poisson mean {rate} x {duration}"));
    }
    if mean == 0.0 {
        return Ok(0);
    }
    let dist = Poisson::new(mean).map_err(|e| Error::Argument(format!("Poisson mean {mean}: {e}")))?;
    Ok(dist.sample(rng) as u64)
}

/// Independent RNG stream for setting `index` under `seed`.
pub fn setting_rng(seed: u64, index: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// One Poisson record per protocol setting, each drawn from its own stream.
pub fn generate_dataset(rho: &DensityMatrix, protocol: &Protocol, flux: &FluxModel, trunc: &TruncationPolicy, seed: u64) -> Result<Dataset> {
    flux.validate()?;
    protocol.validate()?;
    if rho.dim() != 4 * protocol.d * protocol.d {
        return arg(format!("state dimension {} does not match protocol d = {}", rho.dim(), protocol.d));
    }
    let vectors = protocol.measurement_vectors(trunc)?;
    let records = protocol
        .settings
        .iter()
        .zip(&vectors)
        .enumerate()
        .map(|(i, (s, v))| {
            let rate = rate_from_vector(rho, v, flux);
            let counts = sample_counts(rate, flux.integration_time, &mut setting_rng(seed, i))?;
            Ok(CountRecord { label: s.label.clone(), counts, duration: flux.integration_time })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { protocol_id: protocol.id.clone(), d: protocol.d, seed, flux: *flux, ground_truth: None, records })
}
