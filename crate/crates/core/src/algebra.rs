//! Dense complex linear algebra on multipartite Hilbert spaces.
//!
//! Every operator in the crate lives on a [`SubsystemLayout`], an ordered list
//! of tensor factors. The left factor of a Kronecker product is the
//! slower-varying index, so a flat basis index is the mixed-radix number whose
//! most significant digit belongs to the first subsystem. The full
//! hyperentangled space is always ordered
//! `[pol-idler, pol-signal, freq-idler, freq-signal]`.

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};

pub type C64 = Complex<f64>;
pub type ComplexMatrix = DMatrix<C64>;
pub type ComplexVector = DVector<C64>;

/// Entrywise Hermiticity tolerance for a [`DensityMatrix`].
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Most negative eigenvalue accepted for a [`DensityMatrix`].
pub const PSD_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-10;
pub const KET_NORM_TOL: f64 = 1e-12;
/// Eigenvalues below this are treated as exact zeros in entropies.
pub const EIGEN_CLIP: f64 = 1e-12;

#[inline]
pub fn c64(re: f64, im: f64) -> C64 {
    Complex::new(re, im)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    PolIdler,
    PolSignal,
    FreqIdler,
    FreqSignal,
}

impl Role {
    pub fn is_idler(self) -> bool {
        matches!(self, Role::PolIdler | Role::FreqIdler)
    }

    pub fn is_polarization(self) -> bool {
        matches!(self, Role::PolIdler | Role::PolSignal)
    }

    fn basis_label(self, level: usize) -> String {
        match self {
            Role::PolIdler | Role::PolSignal => ["H", "V"].get(level).map_or_else(|| format!("P{level}"), |s| s.to_string()),
            Role::FreqIdler => format!("I{level}"),
            Role::FreqSignal => format!("S{level}"),
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::PolIdler => "pol-idler",
            Role::PolSignal => "pol-signal",
            Role::FreqIdler => "freq-idler",
            Role::FreqSignal => "freq-signal",
        };
        f.write_str(s)
    }
}

/// Ordered tensor-factor structure of a Hilbert space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsystemLayout {
    dims: Vec<usize>,
    roles: Vec<Role>,
}

impl SubsystemLayout {
    pub fn new(dims: Vec<usize>, roles: Vec<Role>) -> Result<Self> {
        if dims.is_empty() || dims.len() != roles.len() {
            return arg(format!("layout needs one role per subsystem, got {} dims and {} roles", dims.len(), roles.len()));
        }
        if dims.iter().any(|&d| d == 0) {
            return arg("subsystem dimension must be positive");
        }
        for (i, r) in roles.iter().enumerate() {
            if roles[..i].contains(r) {
                return arg(format!("role {r} appears twice in layout"));
            }
        }
        Ok(Self { dims, roles })
    }

    /// Full `(2⊗2)_P ⊗ (d⊗d)_F` layout in canonical order.
    pub fn hyper(d: usize) -> Self {
        Self {
            dims: vec![2, 2, d, d],
            roles: vec![Role::PolIdler, Role::PolSignal, Role::FreqIdler, Role::FreqSignal],
        }
    }

    pub fn polarization() -> Self {
        Self { dims: vec![2, 2], roles: vec![Role::PolIdler, Role::PolSignal] }
    }

    pub fn frequency(d: usize) -> Self {
        Self { dims: vec![d, d], roles: vec![Role::FreqIdler, Role::FreqSignal] }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn total_dim(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn position(&self, role: Role) -> Option<usize> {
        self.roles.iter().position(|&r| r == role)
    }

    /// Sub-layout on the given (sorted, deduplicated) subsystem indices.
    pub fn select(&self, subsystems: &[usize]) -> Result<Self> {
        let idx = self.normalize_subset(subsystems)?;
        Ok(Self {
            dims: idx.iter().map(|&i| self.dims[i]).collect(),
            roles: idx.iter().map(|&i| self.roles[i]).collect(),
        })
    }

    pub(crate) fn normalize_subset(&self, subsystems: &[usize]) -> Result<Vec<usize>> {
        let mut idx = subsystems.to_vec();
        idx.sort_unstable();
        idx.dedup();
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.len()) {
            return arg(format!("subsystem index {bad} out of range for {} subsystems", self.len()));
        }
        Ok(idx)
    }

    /// Mixed-radix digits of a flat basis index.
    pub fn digits(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.dims.len()];
        for (slot, &d) in out.iter_mut().zip(&self.dims).rev() {
            *slot = index % d;
            index /= d;
        }
        out
    }

    pub fn flat_index(&self, digits: &[usize]) -> usize {
        digits.iter().zip(&self.dims).fold(0, |acc, (&g, &d)| acc * d + g)
    }

    /// Human-readable basis labels, e.g. `"H H I0 S1"`.
    pub fn basis_labels(&self) -> Vec<String> {
        (0..self.total_dim())
            .map(|i| {
                self.digits(i)
                    .iter()
                    .zip(&self.roles)
                    .map(|(&g, r)| r.basis_label(g))
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect()
    }
}

/// Kronecker product, left factor slower-varying.
pub fn tensor(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    a.kronecker(b)
}

pub fn identity(n: usize) -> ComplexMatrix {
    ComplexMatrix::identity(n, n)
}

pub fn max_hermitian_defect(m: &ComplexMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn trace(m: &ComplexMatrix) -> C64 {
    m.diagonal().iter().sum()
}

/// Hermitian part `(m + m†)/2`.
pub fn hermitian_part(m: &ComplexMatrix) -> ComplexMatrix {
    (m + m.adjoint()).scale(0.5)
}

/// Pure state on a layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Ket {
    layout: SubsystemLayout,
    amplitudes: ComplexVector,
}

impl Ket {
    pub fn new(layout: SubsystemLayout, amplitudes: ComplexVector) -> Result<Self> {
        if amplitudes.len() != layout.total_dim() {
            return arg(format!("ket has {} amplitudes, layout needs {}", amplitudes.len(), layout.total_dim()));
        }
        let norm2 = amplitudes.norm_squared();
        if (norm2 - 1.0).abs() > KET_NORM_TOL {
            return arg(format!("ket squared norm {norm2} is not 1"));
        }
        Ok(Self { layout, amplitudes })
    }

    /// Normalizes `amplitudes` before validating.
    pub fn normalized(layout: SubsystemLayout, amplitudes: ComplexVector) -> Result<Self> {
        let n = amplitudes.norm();
        if n == 0.0 {
            return arg("cannot normalize the zero vector");
        }
        Self::new(layout, amplitudes.unscale(n))
    }

    pub fn layout(&self) -> &SubsystemLayout {
        &self.layout
    }

    pub fn amplitudes(&self) -> &ComplexVector {
        &self.amplitudes
    }

    pub fn tensor(&self, other: &Ket) -> Result<Ket> {
        let mut dims = self.layout.dims.clone();
        dims.extend_from_slice(&other.layout.dims);
        let mut roles = self.layout.roles.clone();
        roles.extend_from_slice(&other.layout.roles);
        let layout = SubsystemLayout::new(dims, roles)?;
        Ok(Ket { layout, amplitudes: self.amplitudes.kronecker(&other.amplitudes) })
    }

    pub fn density(&self) -> DensityMatrix {
        let m = &self.amplitudes * self.amplitudes.adjoint();
        DensityMatrix { layout: self.layout.clone(), matrix: hermitian_part(&m) }
    }
}

/// Hermitian, positive-semidefinite, unit-trace operator on a layout.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    layout: SubsystemLayout,
    matrix: ComplexMatrix,
}

impl DensityMatrix {
    /// Validating constructor.
    pub fn new(layout: SubsystemLayout, matrix: ComplexMatrix) -> Result<Self> {
        let d = layout.total_dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return arg(format!("matrix is {}x{}, layout needs {d}x{d}", matrix.nrows(), matrix.ncols()));
        }
        let herm = max_hermitian_defect(&matrix);
        if herm > HERMITIAN_TOL {
            return arg(format!("matrix is not Hermitian (defect {herm:.3e})"));
        }
        let tr = trace(&matrix);
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return arg(format!("trace {tr} is not 1"));
        }
        let rho = Self { layout, matrix };
        let min = rho.eigenvalues().last().copied().unwrap_or(0.0);
        if min < -PSD_TOL {
            return arg(format!("matrix has negative eigenvalue {min:.3e}"));
        }
        Ok(rho)
    }

    /// Constructor for matrices that are physical by construction (e.g. `AA†/Tr`).
    /// Only the Hermitian part is kept.
    pub(crate) fn from_physical(layout: SubsystemLayout, matrix: ComplexMatrix) -> Self {
        debug_assert_eq!(matrix.nrows(), layout.total_dim());
        Self { layout, matrix: hermitian_part(&matrix) }
    }

    pub fn maximally_mixed(layout: SubsystemLayout) -> Self {
        let d = layout.total_dim();
        let matrix = identity(d).unscale(d as f64);
        Self { layout, matrix }
    }

    /// Clips negative eigenvalues of a Hermitian matrix and renormalizes.
    pub fn psd_projection(layout: SubsystemLayout, m: &ComplexMatrix) -> Result<Self> {
        let eig = eig_hermitian(&hermitian_part(m))?;
        let clipped: Vec<f64> = eig.values.iter().map(|&v| v.max(0.0)).collect();
        let total: f64 = clipped.iter().sum();
        if total <= 0.0 {
            return Err(Error::Diagnostic("matrix has no positive spectrum to project onto".into()));
        }
        let weights: Vec<f64> = clipped.iter().map(|v| v / total).collect();
        Ok(Self::from_physical(layout, eig.reconstruct_with(&weights)))
    }

    pub fn layout(&self) -> &SubsystemLayout {
        &self.layout
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Eigenvalues in descending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        eig_hermitian(&self.matrix).map(|e| e.values).unwrap_or_default()
    }

    pub fn purity(&self) -> f64 {
        self.matrix.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn tensor(&self, other: &DensityMatrix) -> Result<DensityMatrix> {
        let mut dims = self.layout.dims.clone();
        dims.extend_from_slice(&other.layout.dims);
        let mut roles = self.layout.roles.clone();
        roles.extend_from_slice(&other.layout.roles);
        let layout = SubsystemLayout::new(dims, roles)?;
        Ok(DensityMatrix { layout, matrix: tensor(&self.matrix, &other.matrix) })
    }

    /// Convex combination `Σ wᵢ ρᵢ`; weights must be non-negative and sum to one.
    pub fn mixture(states: &[&DensityMatrix], weights: &[f64]) -> Result<DensityMatrix> {
        let Some(first) = states.first() else {
            return arg("mixture of zero states");
        };
        if states.len() != weights.len() {
            return arg("one weight per state required");
        }
        if weights.iter().any(|&w| w < 0.0) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return arg("mixture weights must be a probability vector");
        }
        let mut acc = ComplexMatrix::zeros(first.dim(), first.dim());
        for (s, &w) in states.iter().zip(weights) {
            if s.layout != first.layout {
                return arg("mixture of states on different layouts");
            }
            acc += s.matrix.scale(w);
        }
        Ok(Self::from_physical(first.layout.clone(), acc))
    }

    pub fn trace_distance(&self, other: &DensityMatrix) -> Result<f64> {
        if self.dim() != other.dim() {
            return arg("trace distance between states of different dimension");
        }
        Ok(0.5 * trace_norm(&(&self.matrix - &other.matrix))?)
    }
}

/// Spectral decomposition of a Hermitian matrix, eigenvalues descending.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    /// Column `i` is the eigenvector of `values[i]`.
    pub vectors: ComplexMatrix,
}

impl HermitianEigen {
    /// `V diag(w) V†`.
    pub fn reconstruct_with(&self, weights: &[f64]) -> ComplexMatrix {
        let n = self.vectors.nrows();
        let mut scaled = self.vectors.clone();
        for (j, &w) in weights.iter().enumerate() {
            scaled.column_mut(j).scale_mut(w);
        }
        let out = &scaled * self.vectors.adjoint();
        debug_assert_eq!(out.nrows(), n);
        out
    }

    pub fn reconstruct(&self) -> ComplexMatrix {
        self.reconstruct_with(&self.values)
    }
}

pub fn eig_hermitian(m: &ComplexMatrix) -> Result<HermitianEigen> {
    if !m.is_square() {
        return arg(format!("eigendecomposition of non-square {}x{} matrix", m.nrows(), m.ncols()));
    }
    let scale = m.iter().map(|z| z.norm()).fold(1.0_f64, f64::max);
    let defect = max_hermitian_defect(m);
    if defect > 1e-10 * scale {
        return arg(format!("matrix is not Hermitian (defect {defect:.3e})"));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(HermitianEigen { values: vec![], vectors: ComplexMatrix::zeros(0, 0) });
    }
    let eig = SymmetricEigen::new(hermitian_part(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = ComplexMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(HermitianEigen { values, vectors })
}

/// Reduced state on `keep`; the kept subsystems stay in layout order.
pub fn partial_trace(rho: &DensityMatrix, keep: &[usize]) -> Result<DensityMatrix> {
    let layout = rho.layout();
    let keep = layout.normalize_subset(keep)?;
    if keep.is_empty() {
        return arg("partial trace must keep at least one subsystem");
    }
    let kept_layout = layout.select(&keep)?;
    let traced: Vec<usize> = (0..layout.len()).filter(|i| !keep.contains(i)).collect();
    let traced_dims: Vec<usize> = traced.iter().map(|&i| layout.dims[i]).collect();

    let n = layout.total_dim();
    // (kept flat index, traced flat index) for every full basis index
    let split: Vec<(usize, usize)> = (0..n)
        .map(|i| {
            let g = layout.digits(i);
            let k = keep.iter().fold(0, |acc, &s| acc * layout.dims[s] + g[s]);
            let t = traced.iter().zip(&traced_dims).fold(0, |acc, (&s, &d)| acc * d + g[s]);
            (k, t)
        })
        .collect();

    let m = kept_layout.total_dim();
    let mut out = ComplexMatrix::zeros(m, m);
    for r in 0..n {
        let (kr, tr) = split[r];
        for c in 0..n {
            let (kc, tc) = split[c];
            if tr == tc {
                out[(kr, kc)] += rho.matrix[(r, c)];
            }
        }
    }
    Ok(DensityMatrix { layout: kept_layout, matrix: out })
}

/// Transpose of the listed tensor factors only.
pub fn partial_transpose(rho: &DensityMatrix, subsystems: &[usize]) -> Result<ComplexMatrix> {
    let layout = rho.layout();
    let subs = layout.normalize_subset(subsystems)?;
    let n = layout.total_dim();
    let digits: Vec<Vec<usize>> = (0..n).map(|i| layout.digits(i)).collect();
    let mut out = ComplexMatrix::zeros(n, n);
    let mut gr = vec![0; layout.len()];
    let mut gc = vec![0; layout.len()];
    for r in 0..n {
        for c in 0..n {
            gr.copy_from_slice(&digits[r]);
            gc.copy_from_slice(&digits[c]);
            for &s in &subs {
                std::mem::swap(&mut gr[s], &mut gc[s]);
            }
            out[(layout.flat_index(&gr), layout.flat_index(&gc))] = rho.matrix[(r, c)];
        }
    }
    Ok(out)
}

/// Von Neumann entropy in bits.
pub fn entropy(rho: &DensityMatrix) -> f64 {
    entropy_of_spectrum(&rho.eigenvalues())
}

pub fn entropy_of_spectrum(values: &[f64]) -> f64 {
    values
        .iter()
        .filter(|&&v| v > EIGEN_CLIP)
        .map(|&v| -v * v.log2())
        .sum()
}

/// `⟨ψ|ρ|ψ⟩`.
pub fn fidelity_pure(rho: &DensityMatrix, target: &Ket) -> Result<f64> {
    if rho.dim() != target.amplitudes.len() {
        return arg(format!("state dimension {} does not match target dimension {}", rho.dim(), target.amplitudes.len()));
    }
    let psi = &target.amplitudes;
    let f = (psi.adjoint() * &rho.matrix * psi)[(0, 0)].re;
    Ok(f.clamp(0.0, 1.0))
}

/// Sum of singular values.
pub fn trace_norm(m: &ComplexMatrix) -> Result<f64> {
    if !m.is_square() {
        return arg(format!("trace norm of non-square {}x{} matrix", m.nrows(), m.ncols()));
    }
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    let scale = m.iter().map(|z| z.norm()).fold(1.0_f64, f64::max);
    if max_hermitian_defect(m) <= 1e-12 * scale {
        return Ok(eig_hermitian(m)?.values.iter().map(|v| v.abs()).sum());
    }
    Ok(m.clone().svd(false, false).singular_values.iter().sum())
}
