//! State and operator types plus the quantum-information functionals used
//! throughout the crate.

use nalgebra::SymmetricEigen;
use num_complex::Complex64;

use crate::{CMatrix, CVector, Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Validation thresholds for [`DensityMatrix`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    /// Maximum `|ρ_ij − conj(ρ_ji)|`.
    pub hermiticity: f64,
    /// Maximum `|tr ρ − 1|`.
    pub trace: f64,
    /// Smallest admissible eigenvalue.
    pub min_eigenvalue: f64,
}

impl Tolerances {
    /// Thresholds for states built from closed forms.
    pub const STRICT: Tolerances = Tolerances {
        hermiticity: 1e-12,
        trace: 1e-12,
        min_eigenvalue: -1e-10,
    };

    /// Thresholds for states produced by numerical integration.
    pub const ENGINE: Tolerances = Tolerances {
        hermiticity: 1e-10,
        trace: 1e-9,
        min_eigenvalue: -1e-8,
    };
}

/// Kronecker product of two objects of the same kind.
///
/// Basis labels are joined as `"a⊗b"`, with the left operand varying slowest.
pub trait Tensor {
    fn tensor(&self, other: &Self) -> Self;
}

fn tensor_labels(a: &[String], b: &[String]) -> Vec<String> {
    a.iter()
        .flat_map(|la| b.iter().map(move |lb| format!("{la}⊗{lb}")))
        .collect()
}

pub(crate) fn index_labels(dim: usize) -> Vec<String> {
    (0..dim).map(|i| i.to_string()).collect()
}

/// Largest deviation from Hermiticity, `max |m_ij − conj(m_ji)|`.
pub fn hermiticity_error(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Largest entry magnitude.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Eigenvalues of the Hermitian part `(m + m†)/2`, ascending.
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let h = (m + m.adjoint()).scale(0.5);
    let mut values: Vec<f64> = SymmetricEigen::new(h).eigenvalues.iter().copied().collect();
    values.sort_by(f64::total_cmp);
    values
}

/// A normalized (or explicitly unnormalized) state vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Ket {
    amplitudes: CVector,
    labels: Vec<String>,
}

impl Ket {
    /// Builds a ket, requiring unit norm to 1e-12.
    pub fn new(amplitudes: CVector, labels: Vec<String>) -> Result<Self> {
        let ket = Self::unnormalized(amplitudes, labels)?;
        let err = (ket.norm_sqr() - 1.0).abs();
        if err > 1e-12 {
            return Err(Error::InvalidState(format!(
                "ket squared norm deviates from 1 by {err:e}"
            )));
        }
        Ok(ket)
    }

    /// Builds a ket without the normalization check.
    pub fn unnormalized(amplitudes: CVector, labels: Vec<String>) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::Shape("ket must have positive dimension".into()));
        }
        if labels.len() != amplitudes.len() {
            return Err(Error::Shape(format!(
                "{} labels for a ket of dimension {}",
                labels.len(),
                amplitudes.len()
            )));
        }
        Ok(Self { amplitudes, labels })
    }

    /// Normalizes arbitrary amplitudes.
    pub fn from_amplitudes(amplitudes: &[Complex64], labels: Vec<String>) -> Result<Self> {
        Self::unnormalized(CVector::from_column_slice(amplitudes), labels)?.normalized()
    }

    /// Unit vector `|labels[index]⟩`.
    pub fn basis(labels: Vec<String>, index: usize) -> Result<Self> {
        if index >= labels.len() {
            return Err(Error::Shape(format!(
                "basis index {index} out of range for dimension {}",
                labels.len()
            )));
        }
        let mut amplitudes = CVector::zeros(labels.len());
        amplitudes[index] = Complex64::new(1.0, 0.0);
        Ok(Self { amplitudes, labels })
    }

    pub fn normalized(mut self) -> Result<Self> {
        let norm = self.norm_sqr().sqrt();
        if norm < 1e-300 {
            return Err(Error::InvalidState("cannot normalize a zero vector".into()));
        }
        self.amplitudes.unscale_mut(norm);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.norm_squared()
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &Ket) -> Result<Complex64> {
        if self.dim() != other.dim() {
            return Err(Error::Shape(format!(
                "inner product of kets with dimensions {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(self.amplitudes.dotc(&other.amplitudes))
    }

    /// `|self⟩⟨self|` as a raw matrix.
    pub fn outer(&self) -> CMatrix {
        &self.amplitudes * self.amplitudes.adjoint()
    }

    pub fn projector(&self) -> DensityMatrix {
        DensityMatrix {
            entries: self.outer(),
            labels: self.labels.clone(),
        }
    }

    /// Linear combination `Σ cᵢ |kᵢ⟩`, normalized afterwards.
    pub fn superpose(terms: &[(Complex64, &Ket)]) -> Result<Ket> {
        let first = terms
            .first()
            .ok_or_else(|| Error::Shape("empty superposition".into()))?
            .1;
        let mut amplitudes = CVector::zeros(first.dim());
        for (c, k) in terms {
            if k.dim() != first.dim() {
                return Err(Error::Shape("superposition of kets with different dimensions".into()));
            }
            amplitudes += &k.amplitudes * *c;
        }
        Ket::unnormalized(amplitudes, first.labels.clone())?.normalized()
    }
}

impl Tensor for Ket {
    fn tensor(&self, other: &Self) -> Self {
        Ket {
            amplitudes: self.amplitudes.kronecker(&other.amplitudes),
            labels: tensor_labels(&self.labels, &other.labels),
        }
    }
}

/// A general (possibly non-Hermitian, possibly rectangular) linear map.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    matrix: CMatrix,
}

impl Operator {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::Shape("operator must have positive dimensions".into()));
        }
        Ok(Self { matrix })
    }

    pub(crate) fn from_matrix(matrix: CMatrix) -> Self {
        Self { matrix }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_matrix(CMatrix::identity(dim, dim))
    }

    pub fn zeros(dim_out: usize, dim_in: usize) -> Self {
        Self::from_matrix(CMatrix::zeros(dim_out, dim_in))
    }

    pub fn dim_in(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn dim_out(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_square(&self) -> bool {
        self.dim_in() == self.dim_out()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn adjoint(&self) -> Operator {
        Self::from_matrix(self.matrix.adjoint())
    }

    /// `self · other`.
    pub fn compose(&self, other: &Operator) -> Result<Operator> {
        if self.dim_in() != other.dim_out() {
            return Err(Error::Shape(format!(
                "cannot compose {}×{} with {}×{}",
                self.dim_out(),
                self.dim_in(),
                other.dim_out(),
                other.dim_in()
            )));
        }
        Ok(Self::from_matrix(&self.matrix * &other.matrix))
    }

    /// Applies the operator; the result is not renormalized.
    pub fn apply(&self, ket: &Ket) -> Result<Ket> {
        if self.dim_in() != ket.dim() {
            return Err(Error::Shape(format!(
                "operator with input dimension {} applied to ket of dimension {}",
                self.dim_in(),
                ket.dim()
            )));
        }
        let labels = if self.is_square() {
            ket.labels.clone()
        } else {
            index_labels(self.dim_out())
        };
        Ok(Ket {
            amplitudes: &self.matrix * &ket.amplitudes,
            labels,
        })
    }

    pub fn scaled(&self, c: Complex64) -> Operator {
        Self::from_matrix(&self.matrix * c)
    }

    pub fn plus(&self, other: &Operator) -> Result<Operator> {
        if self.matrix.shape() != other.matrix.shape() {
            return Err(Error::Shape("operator sum with mismatched shapes".into()));
        }
        Ok(Self::from_matrix(&self.matrix + &other.matrix))
    }
}

impl Tensor for Operator {
    fn tensor(&self, other: &Self) -> Self {
        Self::from_matrix(self.matrix.kronecker(&other.matrix))
    }
}

/// A Hermitian, positive semidefinite, unit-trace matrix over a labeled basis.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    entries: CMatrix,
    labels: Vec<String>,
}

impl DensityMatrix {
    /// Validates against [`Tolerances::STRICT`].
    pub fn new(entries: CMatrix, labels: Vec<String>) -> Result<Self> {
        Self::with_tolerances(entries, labels, &Tolerances::STRICT)
    }

    pub fn with_tolerances(entries: CMatrix, labels: Vec<String>, tol: &Tolerances) -> Result<Self> {
        if !entries.is_square() || entries.nrows() == 0 {
            return Err(Error::Shape(format!(
                "density matrix must be square and nonempty, got {}×{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if labels.len() != entries.nrows() {
            return Err(Error::Shape(format!(
                "{} labels for a density matrix of dimension {}",
                labels.len(),
                entries.nrows()
            )));
        }
        let herm = hermiticity_error(&entries);
        if herm > tol.hermiticity {
            return Err(Error::InvalidState(format!("not Hermitian: deviation {herm:e}")));
        }
        let trace_err = (entries.trace() - Complex64::new(1.0, 0.0)).norm();
        if trace_err > tol.trace {
            return Err(Error::InvalidState(format!("trace deviates from 1 by {trace_err:e}")));
        }
        let min_eig = hermitian_eigenvalues(&entries)[0];
        if min_eig < tol.min_eigenvalue {
            return Err(Error::InvalidState(format!("negative eigenvalue {min_eig:e}")));
        }
        Ok(Self { entries, labels })
    }

    pub(crate) fn from_entries_unchecked(entries: CMatrix, labels: Vec<String>) -> Self {
        Self { entries, labels }
    }

    pub fn pure(ket: &Ket) -> Self {
        ket.projector()
    }

    pub fn maximally_mixed(labels: Vec<String>) -> Result<Self> {
        let d = labels.len();
        if d == 0 {
            return Err(Error::Shape("empty basis".into()));
        }
        let entries = CMatrix::identity(d, d).unscale(d as f64);
        Ok(Self { entries, labels })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn into_entries(self) -> CMatrix {
        self.entries
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn trace(&self) -> Complex64 {
        self.entries.trace()
    }

    pub fn relabeled(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.dim() {
            return Err(Error::Shape(format!(
                "{} labels for a density matrix of dimension {}",
                labels.len(),
                self.dim()
            )));
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn hermiticity_error(&self) -> f64 {
        hermiticity_error(&self.entries)
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigenvalues(&self.entries)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    /// Diagonal element `ρ_ii` (real part).
    pub fn population(&self, i: usize) -> f64 {
        self.entries[(i, i)].re
    }

    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.population(i)).collect()
    }

    /// `tr(ρ A)`.
    pub fn expectation(&self, op: &Operator) -> Result<Complex64> {
        if !op.is_square() || op.dim_in() != self.dim() {
            return Err(Error::Shape("observable dimension does not match state".into()));
        }
        Ok((&self.entries * op.matrix()).trace())
    }

    /// `U ρ U†` relabelled with `labels`; validity is re-checked at engine tolerances.
    pub fn transformed(&self, u: &Operator, labels: Vec<String>) -> Result<DensityMatrix> {
        if u.dim_in() != self.dim() {
            return Err(Error::Shape("transformation dimension does not match state".into()));
        }
        let entries = u.matrix() * &self.entries * u.matrix().adjoint();
        DensityMatrix::with_tolerances(entries, labels, &Tolerances::ENGINE)
    }
}

impl Tensor for DensityMatrix {
    fn tensor(&self, other: &Self) -> Self {
        DensityMatrix {
            entries: self.entries.kronecker(&other.entries),
            labels: tensor_labels(&self.labels, &other.labels),
        }
    }
}

fn digits(mut index: usize, dims: &[usize]) -> Vec<usize> {
    let mut out = vec![0; dims.len()];
    for k in (0..dims.len()).rev() {
        out[k] = index % dims[k];
        index /= dims[k];
    }
    out
}

fn compose_index(digits: &[usize], dims: &[usize]) -> usize {
    digits.iter().zip(dims).fold(0, |acc, (d, n)| acc * n + d)
}

/// Reduced state over the factors listed in `keep`.
///
/// `dims` gives the factor dimensions in tensor order (first factor slowest).
pub fn partial_trace(rho: &DensityMatrix, dims: &[usize], keep: &[usize]) -> Result<DensityMatrix> {
    if dims.is_empty() || dims.contains(&0) {
        return Err(Error::Shape("factor dimensions must be positive".into()));
    }
    let total: usize = dims.iter().product();
    if total != rho.dim() {
        return Err(Error::Shape(format!(
            "factor dimensions multiply to {total}, state has dimension {}",
            rho.dim()
        )));
    }
    let mut kept: Vec<usize> = keep.to_vec();
    kept.sort_unstable();
    kept.dedup();
    if kept.is_empty() || kept.iter().any(|&k| k >= dims.len()) {
        return Err(Error::Shape(format!("invalid factor selection {keep:?}")));
    }
    let traced: Vec<usize> = (0..dims.len()).filter(|k| !kept.contains(k)).collect();
    let kept_dims: Vec<usize> = kept.iter().map(|&k| dims[k]).collect();
    let traced_dims: Vec<usize> = traced.iter().map(|&k| dims[k]).collect();
    let d_keep: usize = kept_dims.iter().product();
    let d_trace: usize = traced_dims.iter().product();

    let full_index = |keep_idx: usize, trace_idx: usize| {
        let kd = digits(keep_idx, &kept_dims);
        let td = digits(trace_idx, &traced_dims);
        let mut all = vec![0; dims.len()];
        for (slot, &k) in kept.iter().enumerate() {
            all[k] = kd[slot];
        }
        for (slot, &k) in traced.iter().enumerate() {
            all[k] = td[slot];
        }
        compose_index(&all, dims)
    };

    let mut reduced = CMatrix::zeros(d_keep, d_keep);
    for i in 0..d_keep {
        for j in 0..d_keep {
            let mut acc = ZERO;
            for t in 0..d_trace {
                acc += rho.entries[(full_index(i, t), full_index(j, t))];
            }
            reduced[(i, j)] = acc;
        }
    }

    let labels = (0..d_keep)
        .map(|i| {
            let label = &rho.labels[full_index(i, 0)];
            let parts: Vec<&str> = label.split('⊗').collect();
            if parts.len() == dims.len() {
                kept.iter().map(|&k| parts[k]).collect::<Vec<_>>().join("⊗")
            } else {
                i.to_string()
            }
        })
        .collect();
    Ok(DensityMatrix::from_entries_unchecked(reduced, labels))
}

/// Singlet-style fidelity `⟨ψ|ρ|ψ⟩`.
pub fn fidelity_with_pure(rho: &DensityMatrix, psi: &Ket) -> Result<f64> {
    if rho.dim() != psi.dim() {
        return Err(Error::Shape(format!(
            "state of dimension {} against ket of dimension {}",
            rho.dim(),
            psi.dim()
        )));
    }
    let v = psi.amplitudes();
    let value = v.dotc(&(&rho.entries * v));
    if value.im.abs() >= 1e-12 {
        return Err(Error::InvalidState(format!(
            "fidelity has imaginary part {:e}",
            value.im
        )));
    }
    Ok(value.re)
}

/// `Σ λ ln λ` over the eigenvalues of ρ (with `0 ln 0 = 0`).
///
/// This is the sign convention of the Werner entropy formulas, so the result
/// is never positive. [`von_neumann_entropy`] returns the usual `−Σ λ ln λ`.
pub fn von_neumann_entropy_paper(rho: &DensityMatrix) -> Result<f64> {
    let eigenvalues = rho.eigenvalues();
    if eigenvalues[0] < -1e-10 {
        return Err(Error::InvalidState(format!(
            "negative eigenvalue {:e}",
            eigenvalues[0]
        )));
    }
    Ok(eigenvalues
        .into_iter()
        .map(|l| l.clamp(0.0, 1.0))
        .map(x_ln_x)
        .sum())
}

pub fn von_neumann_entropy(rho: &DensityMatrix) -> Result<f64> {
    von_neumann_entropy_paper(rho).map(|s| -s)
}

pub(crate) fn x_ln_x(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// Half the trace norm of `a − b`.
pub fn trace_distance(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    trace_distance_raw(&a.entries, &b.entries)
}

pub(crate) fn trace_distance_raw(a: &CMatrix, b: &CMatrix) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "trace distance between {:?} and {:?} matrices",
            a.shape(),
            b.shape()
        )));
    }
    let diff = a - b;
    Ok(0.5 * diff.singular_values().sum())
}

/// Product-basis labels for `n` two-level atoms, e.g. `e⊗g` for `n = 2`.
pub fn atom_labels(n: usize) -> Vec<String> {
    let single = vec!["e".to_string(), "g".to_string()];
    (1..n).fold(single.clone(), |acc, _| tensor_labels(&acc, &single))
}
