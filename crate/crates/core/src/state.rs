//! Target hyperentangled states and noisy ground truths.
//!
//! The ideal two-photon state is the product of a polarization Bell-type state
//! `α|HH⟩ + β|VV⟩` and an energy-anticorrelated frequency-bin state
//! `Σₖ γₖ |ωₖ⁽ᴵ⁾ ω_{d−1−k}⁽ˢ⁾⟩`.

use serde::{Deserialize, Serialize};

use crate::algebra::{c64, ComplexVector, DensityMatrix, Ket, SubsystemLayout, C64};
use crate::error::{arg, Result};

const NORM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperStateSpec {
    /// Frequency bins per photon.
    pub d: usize,
    pub alpha: C64,
    pub beta: C64,
    /// Frequency amplitudes, one per anti-correlated bin pair.
    pub gamma: Vec<C64>,
}

impl HyperStateSpec {
    /// `α = β = 1/√2`, `γₖ = 1/√d`.
    pub fn uniform(d: usize) -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let g = 1.0 / (d as f64).sqrt();
        Self { d, alpha: c64(s, 0.0), beta: c64(s, 0.0), gamma: vec![c64(g, 0.0); d] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return arg(format!("frequency dimension must be at least 2, got {}", self.d));
        }
        if self.gamma.len() != self.d {
            return arg(format!("gamma has {} entries, expected d = {}", self.gamma.len(), self.d));
        }
        let pol = self.alpha.norm_sqr() + self.beta.norm_sqr();
        if (pol - 1.0).abs() > NORM_TOL {
            return arg(format!("|alpha|^2 + |beta|^2 = {pol}, expected 1"));
        }
        let freq: f64 = self.gamma.iter().map(|g| g.norm_sqr()).sum();
        if (freq - 1.0).abs() > NORM_TOL {
            return arg(format!("sum |gamma_k|^2 = {freq}, expected 1"));
        }
        Ok(())
    }

    pub fn polarization_ket(&self) -> Result<Ket> {
        self.validate()?;
        let zero = c64(0.0, 0.0);
        let amps = ComplexVector::from_vec(vec![self.alpha, zero, zero, self.beta]);
        Ket::new(SubsystemLayout::polarization(), amps)
    }

    pub fn frequency_ket(&self) -> Result<Ket> {
        self.validate()?;
        let d = self.d;
        let mut amps = ComplexVector::zeros(d * d);
        for (k, &g) in self.gamma.iter().enumerate() {
            amps[k * d + (d - 1 - k)] = g;
        }
        Ket::new(SubsystemLayout::frequency(d), amps)
    }
}

/// `|Ψ_P⟩ ⊗ |Ψ_F⟩` on the canonical `[2, 2, d, d]` layout.
pub fn build_target(spec: &HyperStateSpec) -> Result<Ket> {
    spec.polarization_ket()?.tensor(&spec.frequency_ket()?)
}

/// Global white noise `(1−p)ρ + p·I/D`.
pub fn depolarize(rho: &DensityMatrix, p: f64) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&p) {
        return arg(format!("depolarizing strength {p} outside [0, 1]"));
    }
    let mixed = DensityMatrix::maximally_mixed(rho.layout().clone());
    DensityMatrix::mixture(&[rho, &mixed], &[1.0 - p, p])
}

/// Strength `p` for which depolarizing a pure target of dimension `dim`
/// leaves fidelity `fidelity` with it: `F = 1 − p(D−1)/D`.
pub fn depolarizing_for_fidelity(fidelity: f64, dim: usize) -> Result<f64> {
    if dim < 2 {
        return arg("dimension must be at least 2");
    }
    let floor = 1.0 / dim as f64;
    if !(floor..=1.0).contains(&fidelity) {
        return arg(format!("fidelity {fidelity} not reachable by white noise in dimension {dim}"));
    }
    Ok((1.0 - fidelity) * dim as f64 / (dim as f64 - 1.0))
}

/// Frequency-bin comb carried as metadata; operators only use bin indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinGrid {
    pub d: usize,
    pub spacing_ghz: f64,
    pub width_ghz: f64,
    pub idler_origin_ghz: f64,
    pub signal_origin_ghz: f64,
}

impl BinGrid {
    /// 18 GHz-wide bins on a 25 GHz grid, origins at zero offset.
    pub fn standard(d: usize) -> Self {
        Self { d, spacing_ghz: 25.0, width_ghz: 18.0, idler_origin_ghz: 0.0, signal_origin_ghz: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return arg("bin grid needs at least one bin");
        }
        if !(self.width_ghz > 0.0 && self.width_ghz < self.spacing_ghz) {
            return arg(format!("bin width {} GHz must be positive and below spacing {} GHz", self.width_ghz, self.spacing_ghz));
        }
        Ok(())
    }

    /// Sum frequency `ω₀⁽ᴵ⁾ + ω_{d−1}⁽ˢ⁾` shared by every correlated pair.
    pub fn pump_ghz(&self) -> f64 {
        self.idler_origin_ghz + self.signal_origin_ghz + (self.d.saturating_sub(1)) as f64 * self.spacing_ghz
    }

    /// Signal bin paired with idler bin `k`.
    pub fn partner(&self, k: usize) -> usize {
        self.d - 1 - k
    }
}

/// Bin centers `(idler, signal)`, both ascending from their origins.
pub fn bin_frequencies(grid: &BinGrid) -> (Vec<f64>, Vec<f64>) {
    let prog = |origin: f64| (0..grid.d).map(|k| origin + k as f64 * grid.spacing_ghz).collect::<Vec<_>>();
    (prog(grid.idler_origin_ghz), prog(grid.signal_origin_ghz))
}
