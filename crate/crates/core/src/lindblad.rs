//! Liouvillian construction, time evolution and steady states.
//!
//! Every generator here has the Lindblad form
//!
//! ```text
//! dρ/dt = −i[H, ρ] + Σₖ rₖ (2 Jₖ ρ Jₖ† − Jₖ†Jₖ ρ − ρ Jₖ†Jₖ)
//! ```
//!
//! so a jump operator `J` with rate `r` empties an excited level at `2r`.
//! Superoperator matrices act on column-stacked density matrices:
//! `vec(A X B) = (Bᵀ ⊗ A) vec(X)`.

use std::sync::OnceLock;

use num_complex::Complex64;

use crate::spin::{
    displaced_lowering, lowering_operator, two_atom_positioned_lowering, CoupledBasis, DickeBasis,
    DriveParams,
};
use crate::state::{
    atom_labels, hermitian_eigenvalues, hermiticity_error, index_labels, max_abs, partial_trace,
    DensityMatrix, Ket, Operator, Tensor, Tolerances,
};
use crate::{CMatrix, CVector, Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Relative singular-value threshold used to identify the null space of a
/// superoperator.
pub const NULL_SPACE_REL_TOL: f64 = 1e-10;

/// Residual `‖L vec(ρ)‖∞` at which propagation is considered stationary.
pub const STATIONARY_RESIDUAL: f64 = 1e-11;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelTag {
    CavityFull,
    TwoAtomReduced,
    DrivenCollective,
}

impl ModelTag {
    pub fn name(&self) -> &'static str {
        match self {
            ModelTag::CavityFull => "cavity_full",
            ModelTag::TwoAtomReduced => "two_atom_reduced",
            ModelTag::DrivenCollective => "driven_collective",
        }
    }
}

/// A conserved block of the Hilbert space, given by basis indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SectorInfo {
    pub name: String,
    pub indices: Vec<usize>,
}

impl SectorInfo {
    pub fn projector(&self, dim: usize) -> Operator {
        let mut p = CMatrix::zeros(dim, dim);
        for &i in &self.indices {
            p[(i, i)] = ONE;
        }
        Operator::from_matrix(p)
    }

    /// `tr(P ρ P)`.
    pub fn weight(&self, rho: &CMatrix) -> f64 {
        self.indices.iter().map(|&i| rho[(i, i)].re).sum()
    }
}

/// Generator of a Markovian master equation, kept both in operator form (for
/// cheap application) and, on demand, as a dense superoperator.
#[derive(Debug)]
pub struct Liouvillian {
    hamiltonian: CMatrix,
    jumps: Vec<(f64, CMatrix)>,
    // −iH − Σ r J†J, so that L(ρ) = Kρ + ρK† + Σ (√(2r)J) ρ (√(2r)J)†.
    drift: CMatrix,
    scaled_jumps: Vec<(CMatrix, CMatrix)>,
    sectors: Option<Vec<SectorInfo>>,
    model: ModelTag,
    labels: Vec<String>,
    superoperator: OnceLock<CMatrix>,
}

impl Clone for Liouvillian {
    fn clone(&self) -> Self {
        Self {
            hamiltonian: self.hamiltonian.clone(),
            jumps: self.jumps.clone(),
            drift: self.drift.clone(),
            scaled_jumps: self.scaled_jumps.clone(),
            sectors: self.sectors.clone(),
            model: self.model,
            labels: self.labels.clone(),
            superoperator: OnceLock::new(),
        }
    }
}

impl Liouvillian {
    pub fn new(
        hamiltonian: CMatrix,
        jumps: Vec<(f64, CMatrix)>,
        model: ModelTag,
        labels: Vec<String>,
    ) -> Result<Self> {
        let d = hamiltonian.nrows();
        if d == 0 || !hamiltonian.is_square() {
            return Err(Error::Shape("Hamiltonian must be square and nonempty".into()));
        }
        if labels.len() != d {
            return Err(Error::Shape(format!("{} labels for dimension {d}", labels.len())));
        }
        for (rate, j) in &jumps {
            if j.shape() != (d, d) {
                return Err(Error::Shape("jump operator shape differs from Hamiltonian".into()));
            }
            if !(*rate >= 0.0) {
                return Err(Error::param("rate", format!("jump rate must be non-negative, got {rate}")));
            }
        }
        let mut drift = &hamiltonian * Complex64::new(0.0, -1.0);
        let mut scaled_jumps = Vec::with_capacity(jumps.len());
        for (rate, j) in &jumps {
            drift -= j.adjoint() * j * Complex64::new(*rate, 0.0);
            let a = j * Complex64::new((2.0 * rate).sqrt(), 0.0);
            let a_dag = a.adjoint();
            scaled_jumps.push((a, a_dag));
        }
        Ok(Self {
            hamiltonian,
            jumps,
            drift,
            scaled_jumps,
            sectors: None,
            model,
            labels,
            superoperator: OnceLock::new(),
        })
    }

    pub fn with_sectors(mut self, sectors: Vec<SectorInfo>) -> Result<Self> {
        let d = self.dim();
        if sectors.iter().flat_map(|s| &s.indices).any(|&i| i >= d) {
            return Err(Error::Shape("sector index out of range".into()));
        }
        self.sectors = Some(sectors);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.nrows()
    }

    pub fn model(&self) -> ModelTag {
        self.model
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn hamiltonian(&self) -> &CMatrix {
        &self.hamiltonian
    }

    pub fn jumps(&self) -> &[(f64, CMatrix)] {
        &self.jumps
    }

    pub fn sectors(&self) -> Option<&[SectorInfo]> {
        self.sectors.as_deref()
    }

    pub fn sector_projectors(&self) -> Option<Vec<Operator>> {
        self.sectors
            .as_ref()
            .map(|s| s.iter().map(|x| x.projector(self.dim())).collect())
    }

    /// `dρ/dt` for the given density matrix.
    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        let mut out = &self.drift * rho + rho * self.drift.adjoint();
        for (a, a_dag) in &self.scaled_jumps {
            out += a * rho * a_dag;
        }
        out
    }

    /// `max |L(ρ)|`.
    pub fn residual(&self, rho: &CMatrix) -> f64 {
        max_abs(&self.apply(rho))
    }

    /// Dense `d² × d²` superoperator (column stacking), built on first use.
    pub fn matrix(&self) -> &CMatrix {
        self.superoperator.get_or_init(|| {
            let d = self.dim();
            let id = CMatrix::identity(d, d);
            let minus_i = Complex64::new(0.0, -1.0);
            let mut l = (id.kronecker(&self.hamiltonian) - self.hamiltonian.transpose().kronecker(&id)) * minus_i;
            for (rate, j) in &self.jumps {
                let jdj = j.adjoint() * j;
                let term = j.conjugate().kronecker(j) * Complex64::new(2.0, 0.0)
                    - id.kronecker(&jdj)
                    - jdj.transpose().kronecker(&id);
                l += term * Complex64::new(*rate, 0.0);
            }
            l
        })
    }

    /// `‖vec(1)† L‖∞`: zero for a trace-preserving generator.
    pub fn trace_preservation_error(&self) -> f64 {
        let d = self.dim();
        let l = self.matrix();
        let mut worst = 0.0_f64;
        for col in 0..d * d {
            let mut acc = ZERO;
            for i in 0..d {
                acc += l[(i + i * d, col)];
            }
            worst = worst.max(acc.norm());
        }
        worst
    }

    /// Largest superoperator entry coupling different conserved sectors.
    ///
    /// Matrix elements `|i⟩⟨j|` are grouped by the sector pair `(s(i), s(j))`;
    /// a generator that conserves each sector never mixes different pairs.
    pub fn off_block_magnitude(&self) -> f64 {
        let Some(sectors) = &self.sectors else {
            return 0.0;
        };
        let d = self.dim();
        let mut owner = vec![usize::MAX; d];
        for (k, s) in sectors.iter().enumerate() {
            for &i in &s.indices {
                owner[i] = k;
            }
        }
        let l = self.matrix();
        let block = |v: usize| (owner[v % d], owner[v / d]);
        let mut worst = 0.0_f64;
        for row in 0..d * d {
            for col in 0..d * d {
                if block(row) != block(col) {
                    worst = worst.max(l[(row, col)].norm());
                }
            }
        }
        worst
    }
}

/// Two atoms coupled to one damped cavity mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CavityParams {
    /// Atom–cavity coupling 𝒢.
    pub g: f64,
    /// Cavity field decay κ.
    pub kappa: f64,
    pub xi: f64,
    /// Highest retained photon number.
    pub n_max: usize,
}

impl CavityParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.g > 0.0) || !self.g.is_finite() {
            return Err(Error::param("g", format!("must be positive, got {}", self.g)));
        }
        if !(self.kappa > 0.0) || !self.kappa.is_finite() {
            return Err(Error::param("kappa", format!("must be positive, got {}", self.kappa)));
        }
        if self.n_max < 1 {
            return Err(Error::param("n_max", "Fock truncation must be at least 1"));
        }
        if !self.xi.is_finite() {
            return Err(Error::param("xi", "must be finite"));
        }
        Ok(())
    }

    /// Effective collective decay constant `Γ = 𝒢²/κ`.
    pub fn gamma(&self) -> f64 {
        self.g * self.g / self.kappa
    }

    pub fn cavity_dim(&self) -> usize {
        self.n_max + 1
    }
}

fn annihilation(dim: usize) -> CMatrix {
    let mut a = CMatrix::zeros(dim, dim);
    for n in 1..dim {
        a[(n - 1, n)] = Complex64::new((n as f64).sqrt(), 0.0);
    }
    a
}

/// Labels `ee⊗0, ee⊗1, …` for the atom ⊗ cavity space.
pub fn cavity_labels(n_max: usize) -> Vec<String> {
    let photons: Vec<String> = (0..=n_max).map(|n| n.to_string()).collect();
    atom_labels(2)
        .iter()
        .flat_map(|a| photons.iter().map(move |p| format!("{a}⊗{p}")))
        .collect()
}

/// Atom–cavity model with `H = 𝒢(R⁻a† + R⁺a)` (resonant interaction picture)
/// and cavity damping `κ(2aρa† − a†aρ − ρa†a)`. The cavity factor is the
/// fast index.
pub fn build_cavity_liouvillian(p: &CavityParams) -> Result<Liouvillian> {
    p.validate()?;
    let nc = p.cavity_dim();
    let a = CMatrix::identity(4, 4).kronecker(&annihilation(nc));
    let r = two_atom_positioned_lowering(p.xi).matrix().kronecker(&CMatrix::identity(nc, nc));
    let g = Complex64::new(p.g, 0.0);
    let h = (&r * a.adjoint() + r.adjoint() * &a) * g;
    Liouvillian::new(h, vec![(p.kappa, a)], ModelTag::CavityFull, cavity_labels(p.n_max))
}

/// `|atoms⟩ ⊗ |0⟩` in the atom ⊗ cavity space.
pub fn cavity_vacuum_state(atoms: &Ket, n_max: usize) -> Result<DensityMatrix> {
    if atoms.dim() != 4 {
        return Err(Error::Shape("cavity model needs a two-atom ket".into()));
    }
    let vacuum = Ket::basis(index_labels(n_max + 1), 0)?;
    let full = atoms.tensor(&vacuum);
    DensityMatrix::pure(&full).relabeled(cavity_labels(n_max))
}

/// Traces the cavity out of an atom ⊗ cavity state.
pub fn atomic_state(rho: &DensityMatrix, n_max: usize) -> Result<DensityMatrix> {
    partial_trace(rho, &[4, n_max + 1], &[0])?.relabeled(atom_labels(2))
}

/// Mean photon number `tr(ρ a†a)` in the atom ⊗ cavity space.
pub fn photon_number(rho: &DensityMatrix, n_max: usize) -> f64 {
    let nc = n_max + 1;
    (0..rho.dim()).map(|i| (i % nc) as f64 * rho.population(i)).sum()
}

/// Reduced two-atom collective decay with jump operator
/// `R⁻ = cos ξ S₁⁻ + sin ξ S₂⁻` and rate Γ.
pub fn build_two_atom_reduced(xi: f64, gamma: f64) -> Result<Liouvillian> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::param("gamma", format!("must be positive, got {gamma}")));
    }
    if !xi.is_finite() {
        return Err(Error::param("xi", "must be finite"));
    }
    let r = two_atom_positioned_lowering(xi).into_matrix();
    Liouvillian::new(CMatrix::zeros(4, 4), vec![(gamma, r)], ModelTag::TwoAtomReduced, atom_labels(2))
}

/// Space on which the driven collective model is built.
#[derive(Clone, Debug)]
pub enum CollectiveSpace {
    /// A single multiplet.
    Dicke(DickeBasis),
    /// The full `2^{2N}`-dimensional space, in coupled-basis coordinates.
    Coupled(CoupledBasis),
}

impl CollectiveSpace {
    pub fn dim(&self) -> usize {
        match self {
            CollectiveSpace::Dicke(b) => b.dim(),
            CollectiveSpace::Coupled(b) => b.dim(),
        }
    }

    pub fn labels(&self) -> Vec<String> {
        match self {
            CollectiveSpace::Dicke(b) => b.labels(),
            CollectiveSpace::Coupled(b) => b.label_strings(),
        }
    }

    /// Collective `S⁻`; in the coupled basis it is assembled block by block,
    /// so it is exactly block-diagonal.
    pub fn lowering(&self) -> CMatrix {
        match self {
            CollectiveSpace::Dicke(b) => lowering_operator(b).into_matrix(),
            CollectiveSpace::Coupled(b) => {
                let mut m = CMatrix::zeros(b.dim(), b.dim());
                for s in b.sectors() {
                    let block = lowering_operator(&DickeBasis::new(s.two_s)).into_matrix();
                    m.view_mut((s.start, s.start), (s.dim(), s.dim())).copy_from(&block);
                }
                m
            }
        }
    }

    pub fn sectors(&self) -> Vec<SectorInfo> {
        match self {
            CollectiveSpace::Dicke(b) => vec![SectorInfo {
                name: format!("S{}", crate::spin::format_half(b.two_s() as i64)),
                indices: (0..b.dim()).collect(),
            }],
            CollectiveSpace::Coupled(b) => b
                .sectors()
                .iter()
                .map(|s| SectorInfo {
                    name: s.name(),
                    indices: s.indices().collect(),
                })
                .collect(),
        }
    }
}

/// Resonantly driven ensemble with collective decay:
/// `H = |Ω|(e^{iφ}S⁺ + e^{−iφ}S⁻)` and jump `S⁻` at rate Γ.
///
/// With this sign the generator equals the pure decay form built from
/// `R⁻ = S⁻ + i(|Ω|/Γ)e^{iφ}`, so the operator-inverse steady state of
/// [`analytic_steady_state`] annihilates it.
pub fn build_driven_collective(space: &CollectiveSpace, drive: &DriveParams) -> Result<Liouvillian> {
    drive.validate()?;
    let s_minus = space.lowering();
    let phase = Complex64::from_polar(1.0, drive.phi);
    let h = (s_minus.adjoint() * phase + &s_minus * phase.conj()) * Complex64::new(drive.omega_abs, 0.0);
    Liouvillian::new(h, vec![(drive.gamma, s_minus)], ModelTag::DrivenCollective, space.labels())?
        .with_sectors(space.sectors())
}

/// Per-sample health of an integrated state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepDiagnostics {
    /// `|tr ρ − 1|` before any renormalization.
    pub trace_error: f64,
    pub min_eigenvalue: f64,
    pub hermiticity_error: f64,
    /// `max |dρ/dt|` at the sample.
    pub derivative_norm: f64,
    pub renormalized: bool,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    pub diagnostics: Vec<StepDiagnostics>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> &DensityMatrix {
        self.states.last().expect("trajectories hold at least the initial state")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Integrator {
    /// Dormand–Prince 5(4) with embedded error control.
    Adaptive,
    /// `exp(L·Δt)` applied between samples.
    ExactPropagator,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvolveOptions {
    pub integrator: Integrator,
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            integrator: Integrator::Adaptive,
            rtol: 1e-9,
            atol: 1e-12,
            max_steps: 20_000_000,
        }
    }
}

impl EvolveOptions {
    pub fn exact() -> Self {
        Self {
            integrator: Integrator::ExactPropagator,
            ..Self::default()
        }
    }
}

/// Integrates with the default adaptive scheme.
pub fn evolve(l: &Liouvillian, rho0: &DensityMatrix, t_final: f64, dt_out: f64) -> Result<Trajectory> {
    evolve_with(l, rho0, t_final, dt_out, &EvolveOptions::default())
}

fn sample_times(t_final: f64, dt_out: f64) -> Vec<f64> {
    let n = ((t_final / dt_out) - 1e-9).ceil().max(1.0) as usize;
    (0..=n).map(|k| (k as f64 * dt_out).min(t_final)).collect()
}

pub fn evolve_with(
    l: &Liouvillian,
    rho0: &DensityMatrix,
    t_final: f64,
    dt_out: f64,
    opts: &EvolveOptions,
) -> Result<Trajectory> {
    if rho0.dim() != l.dim() {
        return Err(Error::Shape(format!(
            "initial state dimension {} does not match generator dimension {}",
            rho0.dim(),
            l.dim()
        )));
    }
    if !(t_final > 0.0) || !t_final.is_finite() {
        return Err(Error::param("t_final", format!("must be positive, got {t_final}")));
    }
    if !(dt_out > 0.0) || !dt_out.is_finite() {
        return Err(Error::param("dt_out", format!("must be positive, got {dt_out}")));
    }
    let times = sample_times(t_final, dt_out);
    let mut traj = Trajectory {
        times: Vec::with_capacity(times.len()),
        states: Vec::with_capacity(times.len()),
        diagnostics: Vec::with_capacity(times.len()),
    };
    let mut rho = rho0.entries().clone();
    record(l, &mut traj, times[0], &mut rho)?;

    match opts.integrator {
        Integrator::Adaptive => {
            let mut stepper = DormandPrince::new(l, opts);
            let mut t = times[0];
            for &target in &times[1..] {
                rho = stepper.advance(rho, t, target)?;
                t = target;
                record(l, &mut traj, t, &mut rho)?;
            }
        }
        Integrator::ExactPropagator => {
            let d = l.dim();
            let step = propagator(l, dt_out);
            let mut v = vectorize(&rho);
            for w in times.windows(2) {
                let h = w[1] - w[0];
                v = if (h - dt_out).abs() <= 1e-12 * dt_out {
                    &step * v
                } else {
                    propagator(l, h) * v
                };
                rho = unvectorize(&v, d);
                record(l, &mut traj, w[1], &mut rho)?;
                v = vectorize(&rho);
            }
        }
    }
    Ok(traj)
}

fn record(l: &Liouvillian, traj: &mut Trajectory, t: f64, rho: &mut CMatrix) -> Result<()> {
    let tr = rho.trace();
    let trace_error = (tr - ONE).norm();
    let renormalized = trace_error > 1e-9;
    if renormalized {
        *rho /= tr;
    }
    let diag = StepDiagnostics {
        trace_error,
        min_eigenvalue: hermitian_eigenvalues(rho)[0],
        hermiticity_error: hermiticity_error(rho),
        derivative_norm: l.residual(rho),
        renormalized,
    };
    let state = DensityMatrix::with_tolerances(rho.clone(), l.labels().to_vec(), &Tolerances::ENGINE)
        .map_err(|e| Error::InvalidState(format!("at t = {t}: {e}")))?;
    traj.times.push(t);
    traj.states.push(state);
    traj.diagnostics.push(diag);
    Ok(())
}

/// Column-stacked `vec(ρ)`.
pub fn vectorize(rho: &CMatrix) -> CVector {
    CVector::from_column_slice(rho.as_slice())
}

pub fn unvectorize(v: &CVector, d: usize) -> CMatrix {
    CMatrix::from_column_slice(d, d, v.as_slice())
}

/// Exact propagator `exp(L·t)` on vectorized states.
pub fn propagator(l: &Liouvillian, t: f64) -> CMatrix {
    (l.matrix() * Complex64::new(t, 0.0)).exp()
}

// Dormand–Prince 5(4) tableau. The generator is autonomous, so the nodes
// c = (0, 1/5, 3/10, 4/5, 8/9, 1, 1) never enter.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// Fifth-order weights minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

struct DormandPrince<'a> {
    l: &'a Liouvillian,
    opts: EvolveOptions,
    h: Option<f64>,
    steps: usize,
}

impl<'a> DormandPrince<'a> {
    fn new(l: &'a Liouvillian, opts: &EvolveOptions) -> Self {
        Self {
            l,
            opts: *opts,
            h: None,
            steps: 0,
        }
    }

    fn initial_step(&self, y: &CMatrix, f: &CMatrix, span: f64) -> f64 {
        let fy = max_abs(f);
        let yy = max_abs(y).max(1e-300);
        if fy == 0.0 {
            return span;
        }
        (0.01 * yy / fy).min(span)
    }

    fn advance(&mut self, mut y: CMatrix, mut t: f64, target: f64) -> Result<CMatrix> {
        let mut k1 = self.l.apply(&y);
        let mut h = self.h.unwrap_or_else(|| self.initial_step(&y, &k1, target - t));
        while t < target {
            let remaining = target - t;
            let last = h >= remaining;
            let h_try = if last { remaining } else { h };
            if h_try < 1e-14 * t.abs().max(1.0) {
                return Err(Error::StepUnderflow { t, h: h_try });
            }
            self.steps += 1;
            if self.steps > self.opts.max_steps {
                return Err(Error::StepUnderflow { t, h: h_try });
            }

            let mut k: Vec<CMatrix> = Vec::with_capacity(7);
            k.push(k1.clone());
            for row in A.iter().skip(1) {
                let mut ys = y.clone();
                for (j, kj) in k.iter().enumerate() {
                    let a = row[j];
                    if a != 0.0 {
                        ys += kj * Complex64::new(h_try * a, 0.0);
                    }
                }
                k.push(self.l.apply(&ys));
            }
            // Stage 7 is evaluated at the fifth-order solution (FSAL).
            let mut y_new = y.clone();
            for (j, kj) in k.iter().enumerate().take(6) {
                let a = A[6][j];
                if a != 0.0 {
                    y_new += kj * Complex64::new(h_try * a, 0.0);
                }
            }
            let mut err = CMatrix::zeros(y.nrows(), y.ncols());
            for (j, kj) in k.iter().enumerate() {
                if E[j] != 0.0 {
                    err += kj * Complex64::new(h_try * E[j], 0.0);
                }
            }
            let mut err_norm = 0.0_f64;
            for ((e, a), b) in err.iter().zip(y.iter()).zip(y_new.iter()) {
                let scale = self.opts.atol + self.opts.rtol * a.norm().max(b.norm());
                err_norm = err_norm.max(e.norm() / scale);
            }

            if err_norm <= 1.0 {
                t = if last { target } else { t + h_try };
                y = y_new;
                k1 = k.pop().expect("seven stages");
                let grow = if err_norm == 0.0 { 5.0 } else { (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0) };
                // A step clipped to the output time says nothing about the
                // unclipped proposal, which carries over.
                h = if last && h_try < h { h } else { h_try * grow };
            } else {
                h = h_try * (0.9 * err_norm.powf(-0.2)).clamp(0.2, 1.0);
            }
        }
        self.h = Some(h);
        Ok(y)
    }
}

/// Right and left null vectors of a superoperator.
struct NullSpace {
    right: Vec<CVector>,
    left: Vec<CVector>,
}

fn null_space(m: &CMatrix) -> NullSpace {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^H");
    let sigma_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let tol = NULL_SPACE_REL_TOL * sigma_max.max(1.0);
    let mut right = Vec::new();
    let mut left = Vec::new();
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s < tol {
            right.push(v_t.row(k).adjoint());
            left.push(u.column(k).into_owned());
        }
    }
    NullSpace { right, left }
}

/// Dimension of the stationary subspace of `L`.
pub fn null_space_dimension(l: &Liouvillian) -> usize {
    null_space(l.matrix()).right.len()
}

fn finish_steady(l: &Liouvillian, mut rho: CMatrix) -> Result<DensityMatrix> {
    let tr = rho.trace();
    if tr.norm() < 1e-300 {
        return Err(Error::DegenerateNormalization("steady state has zero trace".into()));
    }
    rho /= tr;
    let herm = (&rho + rho.adjoint()) * Complex64::new(0.5, 0.0);
    DensityMatrix::with_tolerances(herm, l.labels().to_vec(), &Tolerances::ENGINE)
}

/// Long-time limit of `exp(L t) ρ₀`.
///
/// When the generator carries conserved sectors and has exactly one
/// stationary state per sector, each sector is solved separately and weighted
/// by `tr(P ρ₀ P)`. Otherwise the spectral projector onto `ker L` is built
/// from left and right null vectors, which also fixes stationary coherences
/// between degenerate blocks from ρ₀.
pub fn steady_state_from_initial(l: &Liouvillian, rho0: &DensityMatrix) -> Result<DensityMatrix> {
    if rho0.dim() != l.dim() {
        return Err(Error::Shape("initial state dimension does not match generator".into()));
    }
    let d = l.dim();
    let ns = null_space(l.matrix());
    let sector_count = l.sectors().map_or(1, |s| s.len());

    if let Some(sectors) = l.sectors() {
        if ns.right.len() == sectors.len() {
            let mut rho = CMatrix::zeros(d, d);
            for sector in sectors {
                let w = sector.weight(rho0.entries());
                if w.abs() < 1e-15 {
                    continue;
                }
                let block = sector_steady_state(l, sector)?;
                for (a, &i) in sector.indices.iter().enumerate() {
                    for (b, &j) in sector.indices.iter().enumerate() {
                        rho[(i, j)] = block[(a, b)] * w;
                    }
                }
            }
            return finish_steady(l, rho);
        }
    }
    if ns.right.len() == 1 {
        return finish_steady(l, unvectorize(&ns.right[0], d));
    }

    let k = ns.right.len();
    if k == 0 {
        return Err(Error::DegenerateSteadyState {
            null_dim: 0,
            sectors: sector_count,
            detail: "no stationary state found".into(),
        });
    }
    let right = CMatrix::from_columns(&ns.right);
    let left = CMatrix::from_columns(&ns.left);
    let gram = left.adjoint() * &right;
    let sv = gram.singular_values();
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smin < 1e-8 * smax {
        return Err(Error::DegenerateSteadyState {
            null_dim: k,
            sectors: sector_count,
            detail: format!("zero eigenvalue is not semisimple (Gram conditioning {:e})", smin / smax),
        });
    }
    let gram_inv = gram
        .try_inverse()
        .ok_or_else(|| Error::DegenerateSteadyState {
            null_dim: k,
            sectors: sector_count,
            detail: "singular left/right Gram matrix".into(),
        })?;
    let coeffs = gram_inv * (left.adjoint() * vectorize(rho0.entries()));
    let v = right * coeffs;
    finish_steady(l, unvectorize(&v, d))
}

fn sector_steady_state(l: &Liouvillian, sector: &SectorInfo) -> Result<CMatrix> {
    let d = l.dim();
    let n = sector.indices.len();
    let full = l.matrix();
    let vec_index: Vec<usize> = (0..n * n)
        .map(|c| sector.indices[c % n] + sector.indices[c / n] * d)
        .collect();
    let sub = CMatrix::from_fn(n * n, n * n, |r, c| full[(vec_index[r], vec_index[c])]);
    let ns = null_space(&sub);
    if ns.right.len() != 1 {
        return Err(Error::DegenerateSteadyState {
            null_dim: ns.right.len(),
            sectors: 1,
            detail: format!("sector {} has no unique stationary state", sector.name),
        });
    }
    let mut block = unvectorize(&ns.right[0], n);
    let tr = block.trace();
    block /= tr;
    Ok(block)
}

/// Reference route to the steady state: propagate with `exp(L τ)`, doubling
/// `τ` by squaring, until `‖L vec(ρ)‖∞ < 1e-11`.
pub fn steady_state_by_propagation(l: &Liouvillian, rho0: &DensityMatrix) -> Result<DensityMatrix> {
    if rho0.dim() != l.dim() {
        return Err(Error::Shape("initial state dimension does not match generator".into()));
    }
    let d = l.dim();
    let mut step = propagator(l, 1.0);
    let mut v = vectorize(rho0.entries());
    let mut elapsed = 0.0;
    let mut tau = 1.0;
    let mut residual = f64::INFINITY;
    for _ in 0..48 {
        v = &step * v;
        elapsed += tau;
        let rho = unvectorize(&v, d);
        residual = l.residual(&rho);
        if residual < STATIONARY_RESIDUAL {
            return finish_steady(l, rho);
        }
        step = &step * &step;
        tau *= 2.0;
    }
    Err(Error::NotConverged { residual, elapsed })
}

/// Normalized `(R⁻)⁻¹(R⁺)⁻¹` together with the condition number of `R⁻`.
#[derive(Clone, Debug)]
pub struct AnalyticSteadyState {
    pub state: DensityMatrix,
    pub condition_number: f64,
}

/// Steady state `D (R⁻)⁻¹ (R⁺)⁻¹` of the collective-decay equation with a
/// nonsingular jump operator.
pub fn analytic_steady_state(r_minus: &Operator) -> Result<AnalyticSteadyState> {
    if !r_minus.is_square() {
        return Err(Error::Shape("R⁻ must be square".into()));
    }
    let m = r_minus.matrix();
    let sv = m.singular_values();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if smax == 0.0 || smin < 1e-12 * smax {
        let kernel_dim = sv.iter().filter(|&&s| s < 1e-12 * smax.max(1e-300)).count().max(1);
        return Err(Error::KernelExists { kernel_dim });
    }
    let inv = m.clone().try_inverse().ok_or(Error::KernelExists { kernel_dim: 1 })?;
    let mut rho = &inv * inv.adjoint();
    let tr = rho.trace();
    rho /= tr;
    let rho = (&rho + rho.adjoint()) * Complex64::new(0.5, 0.0);
    let state = DensityMatrix::new(rho, index_labels(m.nrows()))?;
    Ok(AnalyticSteadyState {
        state,
        condition_number: smax / smin,
    })
}

/// `max |R⁺R⁻ρ − 2R⁻ρR⁺ + ρR⁺R⁻|`.
pub fn dissipator_residual(r_minus: &Operator, rho: &DensityMatrix) -> Result<f64> {
    if r_minus.dim_in() != rho.dim() || !r_minus.is_square() {
        return Err(Error::Shape("R⁻ and ρ dimensions differ".into()));
    }
    let r = r_minus.matrix();
    let rd = r.adjoint();
    let rho = rho.entries();
    let rr = &rd * r;
    let value = &rr * rho - (r * rho * &rd) * Complex64::new(2.0, 0.0) + rho * &rr;
    Ok(max_abs(&value))
}

/// Driven single-multiplet model together with its displaced operator.
pub fn driven_multiplet(two_s: u32, drive: &DriveParams) -> Result<(Liouvillian, Operator)> {
    let basis = DickeBasis::new(two_s);
    let l = build_driven_collective(&CollectiveSpace::Dicke(basis), drive)?;
    let r = displaced_lowering(&basis, drive)?;
    Ok((l, r))
}
