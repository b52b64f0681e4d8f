//! Collective spin algebra for ensembles of two-level atoms.
//!
//! Spin quantum numbers are carried doubled (`two_s`, `two_m`) so that
//! half-integers stay exact. Multiplets are always ordered with `m`
//! decreasing, which puts the fully excited state first.

use num_complex::Complex64;
use std::fmt;

use crate::state::{atom_labels, Ket, Operator, Tensor};
use crate::{CMatrix, CVector, Error, Result};

/// Default singular-value threshold for [`kernel`].
pub const DEFAULT_KERNEL_TOL: f64 = 1e-10;

const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Formats a doubled quantum number as an integer or `p/2`.
pub fn format_half(two: i64) -> String {
    if two % 2 == 0 {
        (two / 2).to_string()
    } else {
        format!("{two}/2")
    }
}

/// The `2S+1` states `|S, m⟩` of a single spin multiplet.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DickeBasis {
    two_s: u32,
}

impl DickeBasis {
    pub fn new(two_s: u32) -> Self {
        Self { two_s }
    }

    /// Builds the basis from `S` given as a real number; `S` must be a
    /// non-negative half-integer.
    pub fn from_spin(s: f64) -> Result<Self> {
        let two = 2.0 * s;
        if s < 0.0 || (two - two.round()).abs() > 1e-12 {
            return Err(Error::param("S", format!("{s} is not a non-negative half-integer")));
        }
        Ok(Self::new(two.round() as u32))
    }

    pub fn two_s(&self) -> u32 {
        self.two_s
    }

    pub fn spin(&self) -> f64 {
        self.two_s as f64 / 2.0
    }

    pub fn dim(&self) -> usize {
        self.two_s as usize + 1
    }

    /// Doubled magnetic quantum numbers `2S, 2S−2, …, −2S`.
    pub fn two_m_values(&self) -> Vec<i32> {
        let s = self.two_s as i32;
        (0..self.dim() as i32).map(|k| s - 2 * k).collect()
    }

    pub fn labels(&self) -> Vec<String> {
        self.two_m_values()
            .into_iter()
            .map(|m| format!("S={},m={}", format_half(self.two_s as i64), format_half(m as i64)))
            .collect()
    }
}

/// `S⁻` on a multiplet: `⟨S,m−1|S⁻|S,m⟩ = √(S(S+1) − m(m−1))`.
pub fn lowering_operator(basis: &DickeBasis) -> Operator {
    let d = basis.dim();
    let s = basis.spin();
    let mut m = CMatrix::zeros(d, d);
    for (k, two_m) in basis.two_m_values().into_iter().enumerate().take(d - 1) {
        let mm = two_m as f64 / 2.0;
        m[(k + 1, k)] = Complex64::new((s * (s + 1.0) - mm * (mm - 1.0)).sqrt(), 0.0);
    }
    Operator::from_matrix(m)
}

pub fn raising_operator(basis: &DickeBasis) -> Operator {
    lowering_operator(basis).adjoint()
}

pub fn sz_operator(basis: &DickeBasis) -> Operator {
    let diag: Vec<Complex64> = basis
        .two_m_values()
        .into_iter()
        .map(|m| Complex64::new(m as f64 / 2.0, 0.0))
        .collect();
    Operator::from_matrix(CMatrix::from_diagonal(&CVector::from_vec(diag)))
}

/// Resonant coherent drive with Rabi frequency `|Ω| e^{−iφ}` and collective
/// decay constant Γ.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriveParams {
    pub omega_abs: f64,
    pub phi: f64,
    pub gamma: f64,
}

impl DriveParams {
    pub fn new(omega_abs: f64, phi: f64, gamma: f64) -> Result<Self> {
        let drive = Self {
            omega_abs,
            phi,
            gamma,
        };
        drive.validate()?;
        Ok(drive)
    }

    /// Drive of strength `Ω/Γ` with `φ = 0` and `Γ = 1`.
    pub fn with_ratio(omega_over_gamma: f64) -> Result<Self> {
        Self::new(omega_over_gamma, 0.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::param("gamma", format!("must be positive, got {}", self.gamma)));
        }
        if !(self.omega_abs >= 0.0) || !self.omega_abs.is_finite() {
            return Err(Error::param(
                "omega_abs",
                format!("must be non-negative, got {}", self.omega_abs),
            ));
        }
        if !self.phi.is_finite() {
            return Err(Error::param("phi", "must be finite"));
        }
        Ok(())
    }

    pub fn omega_over_gamma(&self) -> f64 {
        self.omega_abs / self.gamma
    }

    /// Scalar shift `i(|Ω|/Γ)e^{iφ}` of the displaced lowering operator.
    pub fn displacement(&self) -> Complex64 {
        Complex64::new(0.0, self.omega_over_gamma()) * Complex64::from_polar(1.0, self.phi)
    }
}

/// `R⁻ = S⁻ + i(|Ω|/Γ)e^{iφ}·1`, which turns the driven master equation
/// into a pure collective-decay equation.
pub fn displaced_lowering(basis: &DickeBasis, drive: &DriveParams) -> Result<Operator> {
    drive.validate()?;
    let shift = CMatrix::identity(basis.dim(), basis.dim()) * drive.displacement();
    Ok(Operator::from_matrix(lowering_operator(basis).matrix() + shift))
}

/// `σ⁻ = |g⟩⟨e|` for a single atom.
pub fn sigma_minus() -> Operator {
    let mut m = CMatrix::zeros(2, 2);
    m[(1, 0)] = ONE;
    Operator::from_matrix(m)
}

/// `σ⁻` acting on atom `site` of `n` atoms.
pub fn site_lowering(n: usize, site: usize) -> Operator {
    (0..n)
        .map(|k| if k == site { sigma_minus() } else { Operator::identity(2) })
        .reduce(|acc, op| acc.tensor(&op))
        .expect("at least one atom")
}

/// `R⁻ = cos ξ S₁⁻ + sin ξ S₂⁻` in the product basis `{ee, eg, ge, gg}`.
pub fn two_atom_positioned_lowering(xi: f64) -> Operator {
    let m = site_lowering(2, 0).matrix() * Complex64::new(xi.cos(), 0.0)
        + site_lowering(2, 1).matrix() * Complex64::new(xi.sin(), 0.0);
    Operator::from_matrix(m)
}

/// Dark state `cos ξ|g,e⟩ − sin ξ|e,g⟩` of [`two_atom_positioned_lowering`].
pub fn two_atom_dark_state(xi: f64) -> Ket {
    let mut v = CVector::zeros(4);
    v[1] = Complex64::new(-xi.sin(), 0.0);
    v[2] = Complex64::new(xi.cos(), 0.0);
    Ket::new(v, atom_labels(2)).expect("unit norm by construction")
}

/// Orthonormal basis of the null space of a square operator: right singular
/// vectors whose singular value is below `tol`.
pub fn kernel(op: &Operator, tol: f64) -> Result<Vec<Ket>> {
    if !op.is_square() {
        return Err(Error::Shape(format!(
            "kernel of a non-square {}×{} operator",
            op.dim_out(),
            op.dim_in()
        )));
    }
    let n = op.dim_in();
    let svd = op.matrix().clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V^H");
    let labels: Vec<String> = (0..n).map(|i| i.to_string()).collect();
    let mut out = Vec::new();
    for (k, &sigma) in svd.singular_values.iter().enumerate() {
        if sigma < tol {
            let v: CVector = v_t.row(k).adjoint();
            out.push(Ket::unnormalized(v, labels.clone())?.normalized()?);
        }
    }
    Ok(out)
}

/// The four Bell states in the product basis `{ee, eg, ge, gg}`.
#[derive(Clone, Debug)]
pub struct BellStates {
    pub phi_plus: Ket,
    pub phi_minus: Ket,
    pub psi_plus: Ket,
    pub psi_minus: Ket,
}

impl BellStates {
    pub fn named(&self) -> [(&'static str, &Ket); 4] {
        [
            ("phi_plus", &self.phi_plus),
            ("phi_minus", &self.phi_minus),
            ("psi_plus", &self.psi_plus),
            ("psi_minus", &self.psi_minus),
        ]
    }
}

/// `Φ± = (|ee⟩ ± |gg⟩)/√2`, `Ψ± = (|eg⟩ ± |ge⟩)/√2`.
///
/// In collective-spin language `Ψ⁺ = |1,0⟩`, `Φ± = (|1,1⟩ ± |1,−1⟩)/√2` and
/// `Ψ⁻ = |0,0⟩`.
pub fn bell_states() -> BellStates {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let make = |a: usize, b: usize, sign: f64| {
        let mut v = CVector::zeros(4);
        v[a] = Complex64::new(h, 0.0);
        v[b] = Complex64::new(sign * h, 0.0);
        Ket::new(v, atom_labels(2)).expect("unit norm by construction")
    };
    BellStates {
        phi_plus: make(0, 3, 1.0),
        phi_minus: make(0, 3, -1.0),
        psi_plus: make(1, 2, 1.0),
        psi_minus: make(1, 2, -1.0),
    }
}

fn factorial(n: i64) -> f64 {
    debug_assert!(n >= 0);
    (2..=n).map(|k| k as f64).product()
}

/// Clebsch–Gordan coefficient `⟨j1 m1; j2 m2 | j m⟩` (Condon–Shortley phase),
/// with every argument doubled. Evaluated with the Racah sum.
pub fn clebsch_gordan(two_j1: u32, two_m1: i32, two_j2: u32, two_m2: i32, two_j: u32, two_m: i32) -> f64 {
    let (j1, j2, j) = (two_j1 as i64, two_j2 as i64, two_j as i64);
    let (m1, m2, m) = (two_m1 as i64, two_m2 as i64, two_m as i64);
    if m1 + m2 != m {
        return 0.0;
    }
    if m1.abs() > j1 || m2.abs() > j2 || m.abs() > j {
        return 0.0;
    }
    if (j1 + m1) % 2 != 0 || (j2 + m2) % 2 != 0 || (j + m) % 2 != 0 {
        return 0.0;
    }
    if j > j1 + j2 || j < (j1 - j2).abs() || (j1 + j2 + j) % 2 != 0 {
        return 0.0;
    }
    // Halve everything now that parities are known to be consistent.
    let a = (j1 + j2 - j) / 2;
    let b = (j1 - j2 + j) / 2;
    let c = (-j1 + j2 + j) / 2;
    let total = (j1 + j2 + j) / 2 + 1;
    let pref = ((j + 1) as f64 * factorial(a) * factorial(b) * factorial(c) / factorial(total)).sqrt()
        * (factorial((j + m) / 2)
            * factorial((j - m) / 2)
            * factorial((j1 - m1) / 2)
            * factorial((j1 + m1) / 2)
            * factorial((j2 - m2) / 2)
            * factorial((j2 + m2) / 2))
            .sqrt();
    let terms = [
        a,
        (j1 - m1) / 2,
        (j2 + m2) / 2,
    ];
    let shifts = [(j - j2 + m1) / 2, (j - j1 - m2) / 2];
    let k_min = 0.max(-shifts[0]).max(-shifts[1]);
    let k_max = *terms.iter().min().unwrap();
    let mut sum = 0.0;
    for k in k_min..=k_max {
        let denom = factorial(k)
            * factorial(a - k)
            * factorial((j1 - m1) / 2 - k)
            * factorial((j2 + m2) / 2 - k)
            * factorial(shifts[0] + k)
            * factorial(shifts[1] + k);
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign / denom;
    }
    pref * sum
}

/// Label of one coupled-basis state `|S, m⟩_copy`.
///
/// `path` holds the doubled intermediate spins of the coupling tree: the pair
/// spins in order, interleaved with running totals after the second pair
/// (for four atoms it is `[2S′, 2S″]`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoupledLabel {
    pub two_s: u32,
    pub two_m: i32,
    /// 1-based index among multiplets sharing the same `S`.
    pub copy: usize,
    pub path: Vec<u32>,
}

impl fmt::Display for CoupledLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "S={},m={},c={}",
            format_half(self.two_s as i64),
            format_half(self.two_m as i64),
            self.copy
        )
    }
}

/// A contiguous block of the coupled basis holding one multiplet.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sector {
    pub two_s: u32,
    pub copy: usize,
    pub path: Vec<u32>,
    /// First coupled-basis index of the multiplet.
    pub start: usize,
}

impl Sector {
    pub fn dim(&self) -> usize {
        self.two_s as usize + 1
    }

    pub fn indices(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.dim()
    }

    pub fn name(&self) -> String {
        format!("S{}_c{}", format_half(self.two_s as i64), self.copy)
    }
}

/// Total-spin basis of `2N` atoms obtained by coupling atoms pairwise,
/// `(1,2) → S′`, `(3,4) → S″`, …, and then adding the pair spins in order.
#[derive(Clone, Debug)]
pub struct CoupledBasis {
    n_particles: usize,
    labels: Vec<CoupledLabel>,
    sectors: Vec<Sector>,
    /// Rows are the coupled states: `U[k, p] = ⟨k|p⟩`.
    unitary: Operator,
}

struct Multiplet {
    two_s: u32,
    path: Vec<u32>,
    /// `|S, m⟩` for m descending, in the product space of the atoms involved.
    states: Vec<CVector>,
}

fn single_atom_multiplet() -> Multiplet {
    let e = CVector::from_vec(vec![ONE, Complex64::new(0.0, 0.0)]);
    let g = CVector::from_vec(vec![Complex64::new(0.0, 0.0), ONE]);
    Multiplet {
        two_s: 1,
        path: Vec::new(),
        states: vec![e, g],
    }
}

fn couple(a: &Multiplet, b: &Multiplet) -> Vec<Multiplet> {
    let dim = a.states[0].len() * b.states[0].len();
    let a_m = DickeBasis::new(a.two_s).two_m_values();
    let b_m = DickeBasis::new(b.two_s).two_m_values();
    let lo = (a.two_s as i32 - b.two_s as i32).unsigned_abs();
    let hi = a.two_s + b.two_s;
    (lo..=hi)
        .rev()
        .step_by(2)
        .map(|two_j| {
            let states = DickeBasis::new(two_j)
                .two_m_values()
                .into_iter()
                .map(|two_m| {
                    let mut v = CVector::zeros(dim);
                    for (ia, &ma) in a_m.iter().enumerate() {
                        for (ib, &mb) in b_m.iter().enumerate() {
                            let cg = clebsch_gordan(a.two_s, ma, b.two_s, mb, two_j, two_m);
                            if cg != 0.0 {
                                v += a.states[ia].kronecker(&b.states[ib]) * Complex64::new(cg, 0.0);
                            }
                        }
                    }
                    v
                })
                .collect();
            Multiplet {
                two_s: two_j,
                path: Vec::new(),
                states,
            }
        })
        .collect()
}

/// Builds the pairwise-coupled basis for an even number of atoms.
///
/// Multiplets are ordered by `S` descending; copies of the same `S` are
/// ordered by their intermediate spins in descending lexicographic order, so
/// for four atoms `|1,0⟩₁ ↔ [1][1]`, `|1,0⟩₂ ↔ [1][0]`, `|1,0⟩₃ ↔ [0][1]`,
/// `|0,0⟩₁ ↔ [1][1]` and `|0,0⟩₂ ↔ [0][0]`.
pub fn build_coupled_basis(n_particles: usize) -> Result<CoupledBasis> {
    if n_particles == 0 || !n_particles.is_multiple_of(2) {
        return Err(Error::param(
            "n_particles",
            format!("must be a positive even number, got {n_particles}"),
        ));
    }
    if n_particles > 12 {
        return Err(Error::param("n_particles", "at most 12 atoms are supported"));
    }
    let atom = single_atom_multiplet();
    let pair: Vec<Multiplet> = couple(&atom, &atom);

    let mut current: Vec<Multiplet> = pair
        .iter()
        .map(|p| Multiplet {
            two_s: p.two_s,
            path: vec![p.two_s],
            states: p.states.clone(),
        })
        .collect();
    for step in 1..n_particles / 2 {
        let mut next = Vec::new();
        for a in &current {
            for b in &pair {
                for mut j in couple(a, b) {
                    let mut path = a.path.clone();
                    if step > 1 {
                        // Record the running total that fed this coupling.
                        path.push(a.two_s);
                    }
                    path.push(b.two_s);
                    j.path = path;
                    next.push(j);
                }
            }
        }
        current = next;
    }
    // With a single pair the path is just the final spin.
    if n_particles == 2 {
        for m in &mut current {
            m.path.clear();
        }
    }

    current.sort_by(|x, y| y.two_s.cmp(&x.two_s).then_with(|| y.path.cmp(&x.path)));

    let dim = 1usize << n_particles;
    let mut labels = Vec::with_capacity(dim);
    let mut sectors = Vec::new();
    let mut u = CMatrix::zeros(dim, dim);
    let mut copy = 0;
    let mut last_s = None;
    for multiplet in &current {
        if last_s != Some(multiplet.two_s) {
            copy = 0;
            last_s = Some(multiplet.two_s);
        }
        copy += 1;
        sectors.push(Sector {
            two_s: multiplet.two_s,
            copy,
            path: multiplet.path.clone(),
            start: labels.len(),
        });
        for (two_m, state) in DickeBasis::new(multiplet.two_s)
            .two_m_values()
            .into_iter()
            .zip(&multiplet.states)
        {
            let row = labels.len();
            for p in 0..dim {
                u[(row, p)] = state[p].conj();
            }
            labels.push(CoupledLabel {
                two_s: multiplet.two_s,
                two_m,
                copy,
                path: multiplet.path.clone(),
            });
        }
    }
    debug_assert_eq!(labels.len(), dim);
    Ok(CoupledBasis {
        n_particles,
        labels,
        sectors,
        unitary: Operator::from_matrix(u),
    })
}

impl CoupledBasis {
    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[CoupledLabel] {
        &self.labels
    }

    pub fn label_strings(&self) -> Vec<String> {
        self.labels.iter().map(|l| l.to_string()).collect()
    }

    pub fn sectors(&self) -> &[Sector] {
        &self.sectors
    }

    /// Maps product-basis coordinates to coupled-basis coordinates.
    pub fn unitary(&self) -> &Operator {
        &self.unitary
    }

    /// Number of multiplets with doubled spin `two_s`.
    pub fn multiplicity(&self, two_s: u32) -> usize {
        self.sectors.iter().filter(|s| s.two_s == two_s).count()
    }

    pub fn sector(&self, two_s: u32, copy: usize) -> Option<&Sector> {
        self.sectors.iter().find(|s| s.two_s == two_s && s.copy == copy)
    }

    pub fn index_of(&self, two_s: u32, two_m: i32, copy: usize) -> Option<usize> {
        self.labels
            .iter()
            .position(|l| l.two_s == two_s && l.two_m == two_m && l.copy == copy)
    }

    /// `|S, m⟩_copy` expressed in the product basis.
    pub fn product_state(&self, two_s: u32, two_m: i32, copy: usize) -> Result<Ket> {
        let k = self.index_of(two_s, two_m, copy).ok_or_else(|| {
            Error::param(
                "state",
                format!(
                    "no coupled state S={}, m={}, copy {copy}",
                    format_half(two_s as i64),
                    format_half(two_m as i64)
                ),
            )
        })?;
        let v: CVector = self.unitary.matrix().row(k).adjoint();
        Ket::new(v, atom_labels(self.n_particles))
    }

    /// Re-expresses a product-basis ket in the coupled basis.
    pub fn to_coupled(&self, ket: &Ket) -> Result<Ket> {
        let v = self.unitary.apply(ket)?;
        Ket::unnormalized(v.amplitudes().clone(), self.label_strings())
    }

    /// Projector onto one multiplet, as a coupled-basis matrix.
    pub fn sector_projector(&self, sector: &Sector) -> Operator {
        let mut p = CMatrix::zeros(self.dim(), self.dim());
        for i in sector.indices() {
            p[(i, i)] = ONE;
        }
        Operator::from_matrix(p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Collective {
    Lower,
    Raise,
    Z,
}

/// Collective `Σᵢ σᵢ⁻`, `Σᵢ σᵢ⁺` or `Σᵢ σᵢᶻ/2` in the product basis.
pub fn product_collective_operator(n_particles: usize, which: Collective) -> Operator {
    let dim = 1usize << n_particles;
    let lower = (0..n_particles)
        .map(|k| site_lowering(n_particles, k).into_matrix())
        .fold(CMatrix::zeros(dim, dim), |acc, m| acc + m);
    match which {
        Collective::Lower => Operator::from_matrix(lower),
        Collective::Raise => Operator::from_matrix(lower.adjoint()),
        Collective::Z => {
            let diag: Vec<Complex64> = (0..dim)
                .map(|p| {
                    let excited = n_particles as i32 - p.count_ones() as i32;
                    let ground = p.count_ones() as i32;
                    Complex64::new((excited - ground) as f64 / 2.0, 0.0)
                })
                .collect();
            Operator::from_matrix(CMatrix::from_diagonal(&CVector::from_vec(diag)))
        }
    }
}

/// Collective operator conjugated into the coupled basis, `U S U†`.
pub fn collective_operator_in_coupled_basis(basis: &CoupledBasis, which: Collective) -> Operator {
    let u = basis.unitary().matrix();
    let s = product_collective_operator(basis.n_particles(), which);
    Operator::from_matrix(u * s.matrix() * u.adjoint())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::max_abs;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, FRAC_PI_3, FRAC_PI_4};

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn lowering_spin_half() {
        let s = lowering_operator(&DickeBasis::new(1));
        assert_eq!(s.matrix(), &CMatrix::from_row_slice(2, 2, &[c(0.0), c(0.0), c(1.0), c(0.0)]));
    }

    #[test]
    fn lowering_spin_one() {
        let s = lowering_operator(&DickeBasis::new(2));
        assert_abs_diff_eq!(s.matrix()[(1, 0)].re, 2f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(s.matrix()[(2, 1)].re, 2f64.sqrt(), epsilon = 1e-15);
        let off: f64 = s.matrix().iter().map(|z| z.norm()).sum::<f64>() - 2.0 * 2f64.sqrt();
        assert_abs_diff_eq!(off, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn lowering_spin_zero() {
        let s = lowering_operator(&DickeBasis::new(0));
        assert_eq!(s.matrix(), &CMatrix::zeros(1, 1));
    }

    #[test]
    fn from_spin_rejects_non_half_integer() {
        assert!(DickeBasis::from_spin(0.3).is_err());
        assert!(DickeBasis::from_spin(-1.0).is_err());
        assert_eq!(DickeBasis::from_spin(1.5).unwrap().two_s(), 3);
    }

    #[test]
    fn displaced_lowering_examples() {
        let b1 = DickeBasis::new(2);
        let undriven = displaced_lowering(&b1, &DriveParams::with_ratio(0.0).unwrap()).unwrap();
        assert_eq!(undriven, lowering_operator(&b1));

        let r = displaced_lowering(&b1, &DriveParams::with_ratio(1.0).unwrap()).unwrap();
        let det = r.matrix().determinant();
        assert_abs_diff_eq!(det.re, 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(det.im, -1.0, epsilon = 1e-14);

        let half = DickeBasis::new(1);
        let r = displaced_lowering(&half, &DriveParams::new(2.0, FRAC_PI_2, 1.0).unwrap()).unwrap();
        let expected = lowering_operator(&half).matrix() - CMatrix::identity(2, 2) * c(2.0);
        assert_abs_diff_eq!((r.matrix() - expected).norm(), 0.0, epsilon = 1e-15);

        assert!(DriveParams::new(1.0, 0.0, 0.0).is_err());
        assert!(DriveParams::new(-1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn positioned_lowering_examples() {
        let sym = two_atom_positioned_lowering(FRAC_PI_4);
        let collective = product_collective_operator(2, Collective::Lower).scaled(c(FRAC_1_SQRT_2));
        assert_abs_diff_eq!((sym.matrix() - collective.matrix()).norm(), 0.0, epsilon = 1e-15);

        assert_eq!(two_atom_positioned_lowering(0.0).matrix(), site_lowering(2, 0).matrix());

        let ee = Ket::basis(atom_labels(2), 0).unwrap();
        let out = two_atom_positioned_lowering(FRAC_PI_3).apply(&ee).unwrap();
        // {ee, eg, ge, gg}: S₁⁻|ee⟩ = |ge⟩, S₂⁻|ee⟩ = |eg⟩.
        assert_abs_diff_eq!(out.amplitudes()[2].re, FRAC_PI_3.cos(), epsilon = 1e-15);
        assert_abs_diff_eq!(out.amplitudes()[1].re, FRAC_PI_3.sin(), epsilon = 1e-15);
    }

    fn projector_onto(kets: &[Ket]) -> CMatrix {
        kets.iter().map(|k| k.outer()).fold(CMatrix::zeros(kets[0].dim(), kets[0].dim()), |a, b| a + b)
    }

    #[test]
    fn kernel_of_positioned_lowering() {
        for xi in [0.3, FRAC_PI_4, 1.1, 2.0] {
            let ker = kernel(&two_atom_positioned_lowering(xi), DEFAULT_KERNEL_TOL).unwrap();
            assert_eq!(ker.len(), 2);
            let gg = Ket::basis(atom_labels(2), 3).unwrap();
            let expected = projector_onto(&[gg, two_atom_dark_state(xi)]);
            assert_abs_diff_eq!((projector_onto(&ker) - expected).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn kernel_of_driven_block_is_empty() {
        let r = displaced_lowering(&DickeBasis::new(2), &DriveParams::with_ratio(0.7).unwrap()).unwrap();
        assert!(kernel(&r, DEFAULT_KERNEL_TOL).unwrap().is_empty());
    }

    #[test]
    fn kernel_of_zero_matrix() {
        let ker = kernel(&Operator::zeros(3, 3), DEFAULT_KERNEL_TOL).unwrap();
        assert_eq!(ker.len(), 3);
        assert!(kernel(&Operator::zeros(3, 2), DEFAULT_KERNEL_TOL).is_err());
    }

    #[test]
    fn bell_examples() {
        let bell = bell_states();
        assert_abs_diff_eq!(bell.psi_plus.inner(&bell.psi_minus).unwrap().norm(), 0.0);
        let s = product_collective_operator(2, Collective::Lower);
        assert_abs_diff_eq!(s.apply(&bell.psi_minus).unwrap().norm_sqr(), 0.0, epsilon = 1e-30);

        let basis = build_coupled_basis(2).unwrap();
        let phi = basis.to_coupled(&bell.phi_plus).unwrap();
        let top = basis.index_of(2, 2, 1).unwrap();
        let bottom = basis.index_of(2, -2, 1).unwrap();
        for (k, a) in phi.amplitudes().iter().enumerate() {
            let expected = if k == top || k == bottom { FRAC_1_SQRT_2 } else { 0.0 };
            assert_abs_diff_eq!(a.re, expected, epsilon = 1e-15);
            assert_abs_diff_eq!(a.im, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn clebsch_gordan_values() {
        let h = FRAC_1_SQRT_2;
        assert_abs_diff_eq!(clebsch_gordan(1, 1, 1, -1, 0, 0), h, epsilon = 1e-15);
        assert_abs_diff_eq!(clebsch_gordan(1, -1, 1, 1, 0, 0), -h, epsilon = 1e-15);
        assert_abs_diff_eq!(clebsch_gordan(1, 1, 1, -1, 2, 0), h, epsilon = 1e-15);
        assert_abs_diff_eq!(clebsch_gordan(2, 2, 2, -2, 0, 0), 1.0 / 3f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(clebsch_gordan(2, 0, 2, 0, 0, 0), -1.0 / 3f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(clebsch_gordan(2, 0, 2, 0, 2, 0), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(clebsch_gordan(2, 2, 2, -2, 2, 0), h, epsilon = 1e-15);
        assert_abs_diff_eq!(clebsch_gordan(2, 2, 2, 0, 4, 2), h, epsilon = 1e-15);
        assert_eq!(clebsch_gordan(2, 2, 2, 0, 4, 0), 0.0);
    }

    #[test]
    fn two_atom_coupled_basis_matches_bell_mapping() {
        let basis = build_coupled_basis(2).unwrap();
        let names: Vec<String> = basis.label_strings();
        assert_eq!(names, ["S=1,m=1,c=1", "S=1,m=0,c=1", "S=1,m=-1,c=1", "S=0,m=0,c=1"]);
        let bell = bell_states();
        let singlet = basis.product_state(0, 0, 1).unwrap();
        assert_abs_diff_eq!(singlet.inner(&bell.psi_minus).unwrap().re, 1.0, epsilon = 1e-15);
        let t0 = basis.product_state(2, 0, 1).unwrap();
        assert_abs_diff_eq!(t0.inner(&bell.psi_plus).unwrap().re, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn four_atom_multiplicities() {
        let basis = build_coupled_basis(4).unwrap();
        assert_eq!(basis.dim(), 16);
        assert_eq!(basis.multiplicity(4), 1);
        assert_eq!(basis.multiplicity(2), 3);
        assert_eq!(basis.multiplicity(0), 2);
        let paths: Vec<(u32, usize, Vec<u32>)> = basis
            .sectors()
            .iter()
            .map(|s| (s.two_s, s.copy, s.path.clone()))
            .collect();
        assert_eq!(
            paths,
            vec![
                (4, 1, vec![2, 2]),
                (2, 1, vec![2, 2]),
                (2, 2, vec![2, 0]),
                (2, 3, vec![0, 2]),
                (0, 1, vec![2, 2]),
                (0, 2, vec![0, 0]),
            ]
        );
    }

    #[test]
    fn four_atom_singlet_amplitude() {
        let basis = build_coupled_basis(4).unwrap();
        let s1 = basis.product_state(0, 0, 1).unwrap();
        // |eegg⟩ is product index 0b0011.
        assert_abs_diff_eq!(s1.amplitudes()[0b0011].re, 1.0 / 3f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn odd_particle_count_rejected() {
        assert!(build_coupled_basis(3).is_err());
        assert!(build_coupled_basis(0).is_err());
    }

    #[test]
    fn coupled_basis_is_unitary() {
        for n in [2, 4, 6] {
            let basis = build_coupled_basis(n).unwrap();
            let u = basis.unitary().matrix();
            let err = max_abs(&(u * u.adjoint() - CMatrix::identity(basis.dim(), basis.dim())));
            assert!(err < 1e-12, "n = {n}: {err:e}");
            let count: usize = basis.sectors().iter().map(|s| s.dim()).sum();
            assert_eq!(count, 1 << n);
        }
    }

    #[test]
    fn collective_operators_in_coupled_basis() {
        let two = build_coupled_basis(2).unwrap();
        let lower = collective_operator_in_coupled_basis(&two, Collective::Lower);
        let singlet = two.index_of(0, 0, 1).unwrap();
        for m in [2, 0, -2] {
            let k = two.index_of(2, m, 1).unwrap();
            assert_abs_diff_eq!(lower.matrix()[(singlet, k)].norm(), 0.0, epsilon = 1e-15);
        }

        let four = build_coupled_basis(4).unwrap();
        let lower = collective_operator_in_coupled_basis(&four, Collective::Lower);
        let from = four.index_of(4, 0, 1).unwrap();
        let to = four.index_of(4, -2, 1).unwrap();
        assert_abs_diff_eq!(lower.matrix()[(to, from)].re, 6f64.sqrt(), epsilon = 1e-12);

        let z = collective_operator_in_coupled_basis(&four, Collective::Z);
        let k = four.index_of(2, 0, 2).unwrap();
        assert_abs_diff_eq!(z.matrix()[(k, k)].norm(), 0.0, epsilon = 1e-14);
    }
}
