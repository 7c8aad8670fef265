//! Measurement-chain operators.
//!
//! Each photon passes a polarization analyzer, then the frequency analyzer:
//! a pulse shaper (diagonal spectral phases), an electro-optic phase modulator
//! (EOM) that scatters amplitude between bins with Bessel weights, and a
//! wavelength-selective switch that picks one output bin. All frequency
//! operators act on bin indices; the WSS passband is an ideal bin selector.

use std::f64::consts::{FRAC_1_SQRT_2, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::algebra::{c64, tensor, ComplexMatrix, ComplexVector, C64};
use crate::error::{arg, Error, Result};

/// Single-photon polarization states used by the analyzers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolState {
    H,
    V,
    D,
    A,
    R,
    L,
}

impl PolState {
    pub const ALL: [PolState; 6] = [PolState::H, PolState::V, PolState::D, PolState::A, PolState::R, PolState::L];

    /// Amplitudes in the `(H, V)` basis.
    pub fn ket(self) -> [C64; 2] {
        let s = FRAC_1_SQRT_2;
        match self {
            PolState::H => [c64(1.0, 0.0), c64(0.0, 0.0)],
            PolState::V => [c64(0.0, 0.0), c64(1.0, 0.0)],
            PolState::D => [c64(s, 0.0), c64(s, 0.0)],
            PolState::A => [c64(s, 0.0), c64(-s, 0.0)],
            PolState::R => [c64(s, 0.0), c64(0.0, s)],
            PolState::L => [c64(s, 0.0), c64(0.0, -s)],
        }
    }

    pub fn letter(self) -> char {
        match self {
            PolState::H => 'H',
            PolState::V => 'V',
            PolState::D => 'D',
            PolState::A => 'A',
            PolState::R => 'R',
            PolState::L => 'L',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PolProjectorSetting {
    pub idler: PolState,
    pub signal: PolState,
}

impl PolProjectorSetting {
    pub const fn new(idler: PolState, signal: PolState) -> Self {
        Self { idler, signal }
    }

    pub fn label(&self) -> String {
        format!("{}{}", self.idler.letter(), self.signal.letter())
    }

    /// `|a⟩ ⊗ |b⟩`, idler first.
    pub fn vector(&self) -> ComplexVector {
        let a = ComplexVector::from_row_slice(&self.idler.ket());
        let b = ComplexVector::from_row_slice(&self.signal.ket());
        a.kronecker(&b)
    }
}

/// `|a⟩⟨a| ⊗ |b⟩⟨b|` on the two-qubit polarization space.
pub fn pol_projector(setting: &PolProjectorSetting) -> ComplexMatrix {
    let v = setting.vector();
    &v * v.adjoint()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EomSetting {
    /// Modulation index δ in radians.
    pub depth: f64,
    /// RF phase θ in radians.
    pub rf_phase: f64,
}

impl EomSetting {
    pub const OFF: EomSetting = EomSetting { depth: 0.0, rf_phase: 0.0 };

    pub fn is_off(&self) -> bool {
        self.depth == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShaperMask {
    pub idler_phases: Vec<f64>,
    pub signal_phases: Vec<f64>,
}

impl ShaperMask {
    pub fn flat(d: usize) -> Self {
        Self { idler_phases: vec![0.0; d], signal_phases: vec![0.0; d] }
    }

    pub fn d(&self) -> usize {
        self.idler_phases.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSetting {
    pub label: String,
    pub pol: PolProjectorSetting,
    pub mask: ShaperMask,
    pub idler_eom: EomSetting,
    pub signal_eom: EomSetting,
    /// Output bins `(idler, signal)` selected by the WSSs.
    pub out_bins: (usize, usize),
}

impl MeasurementSetting {
    pub fn d(&self) -> usize {
        self.mask.d()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.mask.idler_phases.len();
        if d == 0 || self.mask.signal_phases.len() != d {
            return arg(format!("setting {}: shaper mask must carry d phases per photon", self.label));
        }
        if self.mask.idler_phases.iter().chain(&self.mask.signal_phases).any(|p| !(0.0..TAU).contains(p)) {
            return arg(format!("setting {}: shaper phases must lie in [0, 2pi)", self.label));
        }
        for eom in [&self.idler_eom, &self.signal_eom] {
            if !(eom.depth >= 0.0 && eom.depth.is_finite() && eom.rf_phase.is_finite()) {
                return arg(format!("setting {}: EOM depth must be finite and non-negative", self.label));
            }
        }
        if self.out_bins.0 >= d || self.out_bins.1 >= d {
            return arg(format!("setting {}: output bins {:?} outside [0, {d})", self.label, self.out_bins));
        }
        Ok(())
    }
}

/// Finite representation of the infinite bin lattice seen by the EOMs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationPolicy {
    /// Extra bins on each side of the computational band.
    pub guard_bins: usize,
    /// Allowed Bessel power outside `|n| ≤ guard_bins`.
    pub leakage_tolerance: f64,
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        Self { guard_bins: 12, leakage_tolerance: 1e-10 }
    }
}

impl TruncationPolicy {
    /// `1 − Σ_{|n|≤n_max} J_n(δ)²`.
    pub fn leakage(&self, depth: f64) -> Result<f64> {
        let n_max = self.guard_bins.min(MAX_BESSEL_ORDER as usize) as i32;
        let mut kept = 0.0;
        for n in -n_max..=n_max {
            kept += bessel_j(n, depth)?.powi(2);
        }
        Ok((1.0 - kept).max(0.0))
    }

    pub fn check(&self, depth: f64) -> Result<()> {
        let leak = self.leakage(depth)?;
        if leak > self.leakage_tolerance {
            return Err(Error::Configuration(format!(
                "EOM depth {depth} leaks {leak:.3e} of its power beyond {} guard bins (tolerance {:.1e})",
                self.guard_bins, self.leakage_tolerance
            )));
        }
        Ok(())
    }
}

pub const MAX_BESSEL_ORDER: i32 = 40;
pub const MAX_BESSEL_ARG: f64 = 10.0;

/// Bessel function of the first kind `J_n(x)` for `|n| ≤ 40`, `|x| ≤ 10`.
///
/// Uses Miller's backward recurrence normalized by `J₀ + 2Σ J₂ₖ = 1`.
pub fn bessel_j(n: i32, x: f64) -> Result<f64> {
    if n.abs() > MAX_BESSEL_ORDER || !(x.abs() <= MAX_BESSEL_ARG) {
        return arg(format!("bessel_j({n}, {x}) outside |n| <= {MAX_BESSEL_ORDER}, |x| <= {MAX_BESSEL_ARG}"));
    }
    let order = n.unsigned_abs() as usize;
    let odd = order % 2 == 1;
    let sign = if odd && ((n < 0) != (x < 0.0)) { -1.0 } else { 1.0 };
    Ok(sign * bessel_j_nonneg(order, x.abs()))
}

fn bessel_j_nonneg(n: usize, x: f64) -> f64 {
    if x == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let mut start = n.max(x.ceil() as usize) + 40;
    if start % 2 == 1 {
        start += 1;
    }
    let (mut upper, mut current) = (0.0_f64, 1e-30_f64);
    let mut result = if start == n { current } else { 0.0 };
    let mut norm = 0.0;
    for k in (1..=start).rev() {
        if k % 2 == 0 {
            norm += 2.0 * current;
        }
        let lower = 2.0 * k as f64 / x * current - upper;
        upper = current;
        current = lower;
        if k - 1 == n {
            result = current;
        }
        if current.abs() > 1e200 {
            upper *= 1e-200;
            current *= 1e-200;
            result *= 1e-200;
            norm *= 1e-200;
        }
    }
    norm += current;
    result / norm
}

/// Smallest positive modulation index with `|J₀(δ)| = |J₁(δ)|`, searched in `[1, 2]`.
///
/// Driving both EOMs at this depth turns bin-pair interference into a
/// probabilistic Hadamard between adjacent bins.
pub fn hadamard_depth() -> f64 {
    hadamard_depth_in(1.0, 2.0).expect("[1, 2] brackets the first J0/J1 crossing")
}

pub fn hadamard_depth_in(lo: f64, hi: f64) -> Result<f64> {
    let f = |x: f64| -> Result<f64> { Ok(bessel_j(0, x)?.abs() - bessel_j(1, x)?.abs()) };
    let (mut a, mut b) = (lo, hi);
    let (fa, fb) = (f(a)?, f(b)?);
    if fa.signum() == fb.signum() {
        return arg(format!("[{lo}, {hi}] does not bracket |J0| = |J1|"));
    }
    while b - a > 1e-12 {
        let mid = 0.5 * (a + b);
        if f(mid)?.signum() == fa.signum() {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

/// Single-EOM transfer matrix on a lattice of `lattice_size` bins:
/// entry `(m, k) = J_{m−k}(δ) e^{i(m−k)θ}`.
pub fn eom_transfer(setting: &EomSetting, lattice_size: usize, trunc: &TruncationPolicy) -> Result<ComplexMatrix> {
    trunc.check(setting.depth)?;
    let mut out = ComplexMatrix::zeros(lattice_size, lattice_size);
    let orders = MAX_BESSEL_ORDER.min(lattice_size as i32 - 1);
    for shift in -orders..=orders {
        let amp = bessel_j(shift, setting.depth)?;
        if amp == 0.0 {
            continue;
        }
        let z = C64::from_polar(amp, shift as f64 * setting.rf_phase);
        for k in 0..lattice_size {
            let m = k as i64 + shift as i64;
            if (0..lattice_size as i64).contains(&m) {
                out[(m as usize, k)] = z;
            }
        }
    }
    Ok(out)
}

/// Diagonal `exp(i(φ_I[j] + φ_S[k]))` on `|j⟩_I |k⟩_S`.
pub fn shaper_operator(mask: &ShaperMask) -> ComplexMatrix {
    let d = mask.d();
    let diag = ComplexVector::from_fn(d * d, |idx, _| {
        let (j, k) = (idx / d, idx % d);
        C64::from_polar(1.0, mask.idler_phases[j] + mask.signal_phases[k])
    });
    ComplexMatrix::from_diagonal(&diag)
}

/// Row of one EOM's transfer matrix that lands in output bin `out`,
/// restricted to the computational input bins.
fn eom_row(eom: &EomSetting, d: usize, out: usize, trunc: &TruncationPolicy) -> Result<Vec<C64>> {
    let g = trunc.guard_bins;
    let lattice = d + 2 * g;
    let t = eom_transfer(eom, lattice, trunc)?;
    Ok((0..d).map(|k| t[(g + out, g + k)]).collect())
}

/// Vector `v` with `E = v v†` for the frequency part of `setting`.
pub fn freq_measurement_vector(setting: &MeasurementSetting, trunc: &TruncationPolicy) -> Result<ComplexVector> {
    setting.validate()?;
    let d = setting.d();
    let ri = eom_row(&setting.idler_eom, d, setting.out_bins.0, trunc)?;
    let rs = eom_row(&setting.signal_eom, d, setting.out_bins.1, trunc)?;
    let mask = &setting.mask;
    // bra K = (⟨out_I|U_I ⊗ ⟨out_S|U_S)·U_shaper; v = K†
    Ok(ComplexVector::from_fn(d * d, |idx, _| {
        let (j, k) = (idx / d, idx % d);
        let phase = C64::from_polar(1.0, mask.idler_phases[j] + mask.signal_phases[k]);
        (ri[j] * rs[k] * phase).conj()
    }))
}

/// Frequency POVM element `K†K` on the `d²`-dimensional bin space.
pub fn freq_povm_element(setting: &MeasurementSetting, trunc: &TruncationPolicy) -> Result<ComplexMatrix> {
    let v = freq_measurement_vector(setting, trunc)?;
    Ok(&v * v.adjoint())
}

/// Vector of the rank-one joint element, canonical `[2, 2, d, d]` order.
pub fn joint_measurement_vector(setting: &MeasurementSetting, trunc: &TruncationPolicy) -> Result<ComplexVector> {
    Ok(setting.pol.vector().kronecker(&freq_measurement_vector(setting, trunc)?))
}

/// `pol_projector ⊗ freq_povm_element`.
pub fn joint_povm(setting: &MeasurementSetting, trunc: &TruncationPolicy) -> Result<ComplexMatrix> {
    Ok(tensor(&pol_projector(&setting.pol), &freq_povm_element(setting, trunc)?))
}

/// An ordered list of settings for one frequency dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub id: String,
    pub d: usize,
    pub settings: Vec<MeasurementSetting>,
}

impl Protocol {
    pub fn len(&self) -> usize {
        self.settings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.settings.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.settings.is_empty() {
            return arg(format!("protocol {} has no settings", self.id));
        }
        let mut seen = std::collections::HashSet::new();
        for s in &self.settings {
            s.validate()?;
            if s.d() != self.d {
                return arg(format!("setting {} has d = {}, protocol has d = {}", s.label, s.d(), self.d));
            }
            if !seen.insert(s.label.as_str()) {
                return arg(format!("duplicate setting label {}", s.label));
            }
        }
        Ok(())
    }

    pub fn max_depth(&self) -> f64 {
        self.settings
            .iter()
            .flat_map(|s| [s.idler_eom.depth, s.signal_eom.depth])
            .fold(0.0, f64::max)
    }

    pub fn measurement_vectors(&self, trunc: &TruncationPolicy) -> Result<Vec<ComplexVector>> {
        trunc.check(self.max_depth())?;
        self.settings.iter().map(|s| joint_measurement_vector(s, trunc)).collect()
    }
}

/// Sixteen two-photon polarization projections.
///
/// Built on the standard two-qubit tomography list, with two entries swapped
/// for `AA` and `LL` so every analyzer visits all six states; the set spans
/// the full two-qubit operator space.
pub fn tomography_pol_set() -> [PolProjectorSetting; 16] {
    use PolState::*;
    let pairs = [
        (H, H), (H, V), (V, V), (V, H), (R, H), (R, V), (D, V), (D, H),
        (D, R), (A, A), (R, D), (H, D), (V, D), (L, L), (H, L), (R, L),
    ];
    pairs.map(|(a, b)| PolProjectorSetting::new(a, b))
}

/// `{H,V}² ∪ {D,A}²`, the reduced polarization set for Z⊗Z and X⊗X only.
pub fn mub_pol_set() -> [PolProjectorSetting; 8] {
    use PolState::*;
    [(H, H), (H, V), (V, H), (V, V), (D, D), (D, A), (A, D), (A, A)].map(|(a, b)| PolProjectorSetting::new(a, b))
}

/// 16 polarization projections × (4 Z⊗Z bin pairs with EOMs off + 4 X⊗X bin
/// pairs with both EOMs at [`hadamard_depth`]).
pub fn protocol_qubit128() -> Protocol {
    let d = 2;
    let hadamard = EomSetting { depth: hadamard_depth(), rf_phase: 0.0 };
    let mut settings = Vec::with_capacity(128);
    for pol in tomography_pol_set() {
        for (basis, eom) in [("ZZ", EomSetting::OFF), ("XX", hadamard)] {
            for i in 0..d {
                for s in 0..d {
                    settings.push(MeasurementSetting {
                        label: format!("{}-{basis}-I{i}S{s}", pol.label()),
                        pol,
                        mask: ShaperMask::flat(d),
                        idler_eom: eom,
                        signal_eom: eom,
                        out_bins: (i, s),
                    });
                }
            }
        }
    }
    Protocol { id: "qubit128".into(), d, settings }
}

pub const RANDOM_FRAMES: usize = 10;
pub const RANDOM_MAX_DEPTH: f64 = 2.32;

/// The 720-setting qutrit protocol: 8 polarization pairs × 10 random
/// shaper/EOM frames × 9 output bin pairs.
pub fn protocol_qutrit720(seed: u64) -> Protocol {
    let mut p = protocol_random(3, RANDOM_FRAMES, RANDOM_MAX_DEPTH, seed).expect("valid qutrit recipe");
    p.id = format!("qutrit720-seed{seed}");
    p
}

/// Random-measurement recipe for any `d`: `8 · frames · d²` settings.
///
/// Each frame draws `2d` shaper phases uniform in `[0, 2π)` and one depth
/// per EOM uniform in `[0, max_depth]`; frames are shared by all polarization
/// settings and expanded over every output bin pair.
pub fn protocol_random(d: usize, frames: usize, max_depth: f64, seed: u64) -> Result<Protocol> {
    if d < 2 || frames == 0 {
        return arg("random protocol needs d >= 2 and at least one frame");
    }
    if !(max_depth >= 0.0 && max_depth <= MAX_BESSEL_ARG) {
        return arg(format!("maximum EOM depth {max_depth} outside [0, {MAX_BESSEL_ARG}]"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let frame_list: Vec<(ShaperMask, EomSetting, EomSetting)> = (0..frames)
        .map(|_| {
            let idler_phases = (0..d).map(|_| rng.random_range(0.0..TAU)).collect();
            let signal_phases = (0..d).map(|_| rng.random_range(0.0..TAU)).collect();
            let idler = EomSetting { depth: rng.random_range(0.0..=max_depth), rf_phase: 0.0 };
            let signal = EomSetting { depth: rng.random_range(0.0..=max_depth), rf_phase: 0.0 };
            (ShaperMask { idler_phases, signal_phases }, idler, signal)
        })
        .collect();
    let mut settings = Vec::with_capacity(8 * frames * d * d);
    for pol in mub_pol_set() {
        for (f, (mask, ie, se)) in frame_list.iter().enumerate() {
            for i in 0..d {
                for s in 0..d {
                    settings.push(MeasurementSetting {
                        label: format!("{}-F{f:02}-I{i}S{s}", pol.label()),
                        pol,
                        mask: mask.clone(),
                        idler_eom: *ie,
                        signal_eom: *se,
                        out_bins: (i, s),
                    });
                }
            }
        }
    }
    Ok(Protocol { id: format!("random-d{d}-r{frames}-seed{seed}"), d, settings })
}
