//! Reduced states, entanglement bounds and posterior summaries.
//!
//! Distillable entanglement across a bipartition is bracketed from below by
//! the coherent information (best one-way direction) and from above by the
//! logarithmic negativity. Both are in ebits.

use serde::{Deserialize, Serialize};

use crate::algebra::{entropy, partial_trace, partial_transpose, trace_norm, DensityMatrix, Role, SubsystemLayout};
use crate::error::{arg, Result};
use crate::tomography::PosteriorEnsemble;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dof {
    Polarization,
    Frequency,
}

/// `ρ_P = Tr_F ρ_PF` or `ρ_F = Tr_P ρ_PF`.
pub fn reduce_to_dof(rho_pf: &DensityMatrix, dof: Dof) -> Result<DensityMatrix> {
    let layout = rho_pf.layout();
    let dims = layout.dims();
    let canonical = layout.len() == 4 && dims[0] == 2 && dims[1] == 2 && dims[2] == dims[3] && *layout == SubsystemLayout::hyper(dims[2]);
    if !canonical {
        return arg(format!("reduce_to_dof needs the [2, 2, d, d] hyperentangled layout, got {:?}", layout.dims()));
    }
    match dof {
        Dof::Polarization => partial_trace(rho_pf, &[0, 1]),
        Dof::Frequency => partial_trace(rho_pf, &[2, 3]),
    }
}

/// Disjoint cover of a layout's subsystems.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bipartition {
    pub side_a: Vec<usize>,
    pub side_b: Vec<usize>,
}

impl Bipartition {
    pub fn new(side_a: Vec<usize>, side_b: Vec<usize>) -> Self {
        Self { side_a, side_b }
    }

    /// Idler subsystems versus signal subsystems.
    pub fn photons(layout: &SubsystemLayout) -> Self {
        let (a, b): (Vec<usize>, Vec<usize>) = (0..layout.len()).partition(|&i| layout.roles()[i].is_idler());
        Self { side_a: a, side_b: b }
    }

    pub fn validate(&self, layout: &SubsystemLayout) -> Result<()> {
        if self.side_a.is_empty() || self.side_b.is_empty() {
            return arg("bipartition sides must be nonempty");
        }
        let mut all: Vec<usize> = self.side_a.iter().chain(&self.side_b).copied().collect();
        all.sort_unstable();
        if all != (0..layout.len()).collect::<Vec<_>>() {
            return arg(format!("bipartition {:?} | {:?} is not a disjoint cover of {} subsystems", self.side_a, self.side_b, layout.len()));
        }
        Ok(())
    }
}

/// `log₂ ‖ρ^{T_B}‖₁`.
pub fn log_negativity(rho: &DensityMatrix, cut: &Bipartition) -> Result<f64> {
    cut.validate(rho.layout())?;
    let pt = partial_transpose(rho, &cut.side_b)?;
    Ok(trace_norm(&pt)?.log2().max(0.0))
}

/// `max{S(ρ_B) − S(ρ_AB), S(ρ_A) − S(ρ_AB)}`.
pub fn coherent_information(rho: &DensityMatrix, cut: &Bipartition) -> Result<f64> {
    cut.validate(rho.layout())?;
    let joint = entropy(rho);
    let sa = entropy(&partial_trace(rho, &cut.side_a)?);
    let sb = entropy(&partial_trace(rho, &cut.side_b)?);
    Ok(sa.max(sb) - joint)
}

/// Mean and standard deviation of a functional over posterior samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate {
    pub label: String,
    pub mean: f64,
    pub std: f64,
}

impl IntervalEstimate {
    pub fn from_values(label: impl Into<String>, values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return arg("interval over zero values");
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        Ok(Self { label: label.into(), mean, std: var.sqrt() })
    }

    /// `0.936(9)` style.
    pub fn formatted(&self) -> String {
        format_uncertainty(self.mean, self.std)
    }

    /// `94.4(6)%` style.
    pub fn formatted_percent(&self) -> String {
        format!("{}%", format_uncertainty(100.0 * self.mean, 100.0 * self.std))
    }
}

/// Mean with a one-significant-digit uncertainty on its last digit.
pub fn format_uncertainty(mean: f64, std: f64) -> String {
    if !(std > 0.0) || !std.is_finite() {
        return format!("{mean:.4}(0)");
    }
    let mut decimals = -std.log10().floor() as i32;
    let mut digit = (std * 10f64.powi(decimals)).round() as i64;
    if digit >= 10 {
        decimals -= 1;
        digit = 1;
    }
    if decimals <= 0 {
        let unit = 10f64.powi(-decimals);
        let m = (mean / unit).round() * unit;
        return format!("{m:.0}({})", digit as f64 * unit);
    }
    format!("{mean:.prec$}({digit})", prec = decimals as usize)
}

pub fn ensemble_interval<F>(ens: &PosteriorEnsemble, label: &str, functional: F) -> Result<IntervalEstimate>
where
    F: Fn(&DensityMatrix) -> Result<f64>,
{
    if ens.is_empty() {
        return arg("interval over an empty ensemble");
    }
    let values = ens.samples.iter().map(&functional).collect::<Result<Vec<_>>>()?;
    IntervalEstimate::from_values(label, &values)
}

/// Per-sample `[I_C, E_N]` over one degree of freedom (or the full state).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntanglementInterval {
    pub coherent_information: IntervalEstimate,
    pub log_negativity: IntervalEstimate,
    /// Largest `I_C − E_N` over samples; non-positive when the bounds are ordered.
    pub worst_ordering_gap: f64,
}

impl EntanglementInterval {
    pub fn formatted(&self) -> String {
        format!("[{}, {}] ebits", self.coherent_information.formatted(), self.log_negativity.formatted())
    }
}

/// `[I_C, E_N]` per sample across the idler/signal cut of `dof`
/// (`None` = full state, cut `(pol-idler, freq-idler) | (pol-signal, freq-signal)`).
pub fn entanglement_interval(ens: &PosteriorEnsemble, dof: Option<Dof>) -> Result<EntanglementInterval> {
    if ens.is_empty() {
        return arg("interval over an empty ensemble");
    }
    let mut ic = Vec::with_capacity(ens.len());
    let mut en = Vec::with_capacity(ens.len());
    for s in &ens.samples {
        let reduced = match dof {
            Some(d) => reduce_to_dof(s, d)?,
            None => s.clone(),
        };
        let cut = Bipartition::photons(reduced.layout());
        ic.push(coherent_information(&reduced, &cut)?);
        en.push(log_negativity(&reduced, &cut)?);
    }
    let gap = ic.iter().zip(&en).map(|(a, b)| a - b).fold(f64::NEG_INFINITY, f64::max);
    let tag = match dof {
        Some(Dof::Polarization) => "P",
        Some(Dof::Frequency) => "F",
        None => "PF",
    };
    Ok(EntanglementInterval {
        coherent_information: IntervalEstimate::from_values(format!("I_C[{tag}]"), &ic)?,
        log_negativity: IntervalEstimate::from_values(format!("E_N[{tag}]"), &en)?,
        worst_ordering_gap: gap,
    })
}

/// Roles on one side of the photon cut, for display.
pub fn side_roles(layout: &SubsystemLayout, side: &[usize]) -> Vec<Role> {
    side.iter().map(|&i| layout.roles()[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{c64, ComplexVector, Ket};
    use crate::state::{build_target, HyperStateSpec};

    fn max_entangled(d: usize) -> DensityMatrix {
        let mut v = ComplexVector::zeros(d * d);
        for k in 0..d {
            v[k * d + k] = c64(1.0 / (d as f64).sqrt(), 0.0);
        }
        Ket::new(SubsystemLayout::frequency(d), v).unwrap().density()
    }

    #[test]
    fn bell_and_qutrit_values() {
        let cut = Bipartition::new(vec![0], vec![1]);
        let bell = max_entangled(2);
        assert!((log_negativity(&bell, &cut).unwrap() - 1.0).abs() < 1e-9);
        assert!((coherent_information(&bell, &cut).unwrap() - 1.0).abs() < 1e-9);
        let q = max_entangled(3);
        assert!((log_negativity(&q, &cut).unwrap() - 3f64.log2()).abs() < 1e-9);
        assert!((coherent_information(&q, &cut).unwrap() - 3f64.log2()).abs() < 1e-9);
    }

    #[test]
    fn mixed_and_product_states() {
        let cut = Bipartition::new(vec![0], vec![1]);
        let mixed = DensityMatrix::maximally_mixed(SubsystemLayout::polarization());
        assert!((coherent_information(&mixed, &cut).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(log_negativity(&mixed, &cut).unwrap(), 0.0);
        let spec = HyperStateSpec { d: 2, alpha: c64(1., 0.), beta: c64(0., 0.), gamma: vec![c64(0.6, 0.), c64(0.0, 0.8)] };
        let prod = spec.polarization_ket().unwrap().density();
        assert!(log_negativity(&prod, &cut).unwrap().abs() < 1e-12);
    }

    #[test]
    fn invalid_cuts() {
        let bell = max_entangled(2);
        assert!(log_negativity(&bell, &Bipartition::new(vec![0], vec![0])).is_err());
        assert!(coherent_information(&bell, &Bipartition::new(vec![0], vec![2])).is_err());
        assert!(log_negativity(&bell, &Bipartition::new(vec![], vec![0, 1])).is_err());
    }

    #[test]
    fn reduce_ideal_state() {
        let spec = HyperStateSpec::uniform(3);
        let rho = build_target(&spec).unwrap().density();
        let p = reduce_to_dof(&rho, Dof::Polarization).unwrap();
        assert!((p.matrix() - spec.polarization_ket().unwrap().density().matrix()).norm() < 1e-14);
        let f = reduce_to_dof(&rho, Dof::Frequency).unwrap();
        assert!((f.purity() - 1.0).abs() < 1e-12);
        let fi = crate::algebra::partial_trace(&f, &[0]).unwrap();
        let ev = fi.eigenvalues();
        assert!(ev.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-12));
        assert!((f.matrix().trace().re - 1.0).abs() < 1e-10);
        assert!(reduce_to_dof(&max_entangled(2), Dof::Polarization).is_err());
    }

    #[test]
    fn photon_cut_of_full_layout() {
        let cut = Bipartition::photons(&SubsystemLayout::hyper(2));
        assert_eq!(cut.side_a, vec![0, 2]);
        assert_eq!(cut.side_b, vec![1, 3]);
    }

    #[test]
    fn uncertainty_formatting() {
        let f = IntervalEstimate { label: "F".into(), mean: 0.9440, std: 0.0062 };
        assert_eq!(f.formatted_percent(), "94.4(6)%");
        assert_eq!(format_uncertainty(0.936, 0.009), "0.936(9)");
        assert_eq!(format_uncertainty(1.48, 0.01), "1.48(1)");
        assert_eq!(format_uncertainty(0.69, 0.0296), "0.69(3)");
        assert_eq!(format_uncertainty(0.5, 0.0), "0.5000(0)");
        assert_eq!(format_uncertainty(0.5, 0.096), "0.5(1)");
    }

    #[test]
    fn constant_functional_has_zero_std() {
        let ens = PosteriorEnsemble::from_samples(vec![max_entangled(2); 5]);
        let iv = ensemble_interval(&ens, "c", |_| Ok(0.7)).unwrap();
        assert_eq!(iv.std, 0.0);
        assert!((iv.mean - 0.7).abs() < 1e-15);
        assert!(ensemble_interval(&PosteriorEnsemble::from_samples(vec![]), "c", |_| Ok(1.0)).is_err());
    }
}
