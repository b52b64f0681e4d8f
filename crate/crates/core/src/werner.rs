//! Closed-form Werner-state constructions and steady-state predictions.

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;

use crate::error::Error;
use crate::spin::{bell_states, two_atom_dark_state, CoupledBasis};
use crate::state::{atom_labels, x_ln_x, DensityMatrix, Ket};
use crate::{CMatrix, Result};

/// Fidelity above which a Werner state can be purified.
pub const PURIFIABLE_THRESHOLD: f64 = 0.5;

/// `(2 + 3√2)/8`: fidelity above which a Werner state violates CHSH.
pub fn chsh_threshold() -> f64 {
    (2.0 + 3.0 * std::f64::consts::SQRT_2) / 8.0
}

fn check_fidelity(f: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&f) {
        return Err(Error::param("fidelity", format!("must lie in [0, 1], got {f}")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WernerSpec {
    fidelity: f64,
}

impl WernerSpec {
    pub fn new(fidelity: f64) -> Result<Self> {
        check_fidelity(fidelity)?;
        Ok(Self { fidelity })
    }

    pub fn fidelity(&self) -> f64 {
        self.fidelity
    }
}

/// `F|Ψ⁻⟩⟨Ψ⁻| + (1−F)/3 (|Ψ⁺⟩⟨Ψ⁺| + |Φ⁺⟩⟨Φ⁺| + |Φ⁻⟩⟨Φ⁻|)` in the product basis.
pub fn werner_state(spec: &WernerSpec) -> DensityMatrix {
    let f = spec.fidelity;
    let bell = bell_states();
    let rest = (1.0 - f) / 3.0;
    let mut rho = bell.psi_minus.outer() * Complex64::new(f, 0.0);
    for k in [&bell.psi_plus, &bell.phi_plus, &bell.phi_minus] {
        rho += k.outer() * Complex64::new(rest, 0.0);
    }
    DensityMatrix::new(rho, atom_labels(2)).expect("convex Bell mixture is a valid state")
}

/// Singlet fidelity of `sin θ|e,g⟩ + cos θ|g,e⟩`.
pub fn fidelity_from_theta(theta: f64) -> f64 {
    ((1.0 - (2.0 * theta).sin()) / 2.0).clamp(0.0, 1.0)
}

/// Principal inverse of [`fidelity_from_theta`], in `[−π/4, π/4]`.
pub fn theta_for_fidelity(f: f64) -> Result<f64> {
    check_fidelity(f)?;
    Ok(0.5 * (1.0 - 2.0 * f).asin())
}

/// `sin θ|e,g⟩ + cos θ|g,e⟩`.
pub fn two_atom_initial_state(theta: f64) -> Ket {
    let mut a = vec![Complex64::new(0.0, 0.0); 4];
    a[1] = Complex64::new(theta.sin(), 0.0);
    a[2] = Complex64::new(theta.cos(), 0.0);
    Ket::from_amplitudes(&a, atom_labels(2)).expect("unit norm")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FidelityClass {
    Classical,
    Purifiable,
    ChshViolating,
}

impl fmt::Display for FidelityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FidelityClass::Classical => "classical",
            FidelityClass::Purifiable => "purifiable",
            FidelityClass::ChshViolating => "chsh_violating",
        })
    }
}

/// Both thresholds are strict, so boundary values fall to the lower class.
pub fn classify_fidelity(f: f64) -> FidelityClass {
    if f > chsh_threshold() {
        FidelityClass::ChshViolating
    } else if f > PURIFIABLE_THRESHOLD {
        FidelityClass::Purifiable
    } else {
        FidelityClass::Classical
    }
}

/// Diagonal of the driven triplet steady state in `|1,1⟩, |1,0⟩, |1,−1⟩`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SteadyPopulations {
    pub rho11: f64,
    pub rho00: f64,
    pub rho_m1m1: f64,
}

impl SteadyPopulations {
    /// In Dicke order (m descending).
    pub fn as_array(&self) -> [f64; 3] {
        [self.rho11, self.rho00, self.rho_m1m1]
    }
}

/// Closed-form triplet populations as a function of `|Ω|/Γ`.
///
/// Written as `ρ₁₁ = χ⁴/D`, `ρ₀₀ = −χ²(1−χ²)/D`, `D = 3χ⁴ − 2χ² + 1` with the
/// signed square `χ² = −(Ω/Γ)²/2`; this is the diagonal of the normalized
/// `(R⁻)⁻¹(R⁺)⁻¹` for `R⁻ = S⁻ + i(Ω/Γ)e^{iφ}`.
pub fn analytic_steady_populations(omega_over_gamma: f64) -> Result<SteadyPopulations> {
    if !(omega_over_gamma >= 0.0) || !omega_over_gamma.is_finite() {
        return Err(Error::param(
            "omega_over_gamma",
            format!("must be finite and non-negative, got {omega_over_gamma}"),
        ));
    }
    let chi2 = -0.5 * omega_over_gamma * omega_over_gamma;
    if chi2 < -1e150 {
        return Ok(SteadyPopulations {
            rho11: 1.0 / 3.0,
            rho00: 1.0 / 3.0,
            rho_m1m1: 1.0 / 3.0,
        });
    }
    let chi4 = chi2 * chi2;
    let d = 3.0 * chi4 - 2.0 * chi2 + 1.0;
    let rho11 = chi4 / d;
    let rho00 = -chi2 * (1.0 - chi2) / d;
    Ok(SteadyPopulations {
        rho11,
        rho00,
        rho_m1m1: 1.0 - rho11 - rho00,
    })
}

/// `Σᵢ ρᵢᵢ ln ρᵢᵢ` over the triplet steady populations.
pub fn beta(omega_over_gamma: f64) -> Result<f64> {
    let p = analytic_steady_populations(omega_over_gamma)?;
    Ok(p.as_array().iter().map(|&x| x_ln_x(x)).sum())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Drive {
    Finite(f64),
    /// Strong-drive limit, where β becomes `ln(1/3)`.
    Infinite,
}

/// `F ln F + (1−F)[ln(1−F) + β]`, nonpositive by convention.
pub fn steady_entropy_paper(f: f64, drive: Drive) -> Result<f64> {
    check_fidelity(f)?;
    let b = match drive {
        Drive::Finite(x) => beta(x)?,
        Drive::Infinite => (1.0f64 / 3.0).ln(),
    };
    Ok(x_ln_x(f) + x_ln_x(1.0 - f) + (1.0 - f) * b)
}

/// Werner-state entropy `F ln F + (1−F) ln((1−F)/3)`, nonpositive by convention.
pub fn werner_entropy_paper(f: f64) -> Result<f64> {
    steady_entropy_paper(f, Drive::Infinite)
}

/// `|⟨ψ_E(ξ)|sin θ e,g + cos θ g,e⟩|²`, the weight that ends in the dark state.
pub fn dark_state_weight(xi: f64, theta_init: f64) -> f64 {
    let psi = two_atom_initial_state(theta_init);
    two_atom_dark_state(xi)
        .inner(&psi)
        .expect("same dimension")
        .norm_sqr()
}

/// Long-time state of collective decay from `sin θ|e,g⟩ + cos θ|g,e⟩`: the
/// dark-state component survives and the rest ends in `|g,g⟩`.
pub fn predicted_two_atom_mixture(xi: f64, theta_init: f64) -> DensityMatrix {
    let w = dark_state_weight(xi, theta_init);
    let mut rho = two_atom_dark_state(xi).outer() * Complex64::new(w, 0.0);
    rho[(3, 3)] += Complex64::new(1.0 - w, 0.0);
    DensityMatrix::new(rho, atom_labels(2)).expect("convex mixture is a valid state")
}

/// Generalized Werner state on `2N` spins: singlet fidelity F plus
/// maximally mixed multiplets weighted per `(2S, copy)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneralizedWernerSpec {
    n_particles: usize,
    fidelity: f64,
    weights: BTreeMap<(u32, usize), f64>,
    singlet_copy: usize,
}

impl GeneralizedWernerSpec {
    /// `weights` maps `(2S, copy)` to the share of `1 − F` in that copy.
    pub fn new(
        n_particles: usize,
        fidelity: f64,
        weights: BTreeMap<(u32, usize), f64>,
        singlet_copy: usize,
    ) -> Result<Self> {
        check_fidelity(fidelity)?;
        if n_particles < 2 || !n_particles.is_multiple_of(2) {
            return Err(Error::param("n_particles", format!("must be even and ≥ 2, got {n_particles}")));
        }
        if singlet_copy == 0 {
            return Err(Error::param("singlet_copy", "copy indices start at 1"));
        }
        let mut total = 0.0;
        for (&(two_s, copy), &w) in &weights {
            if two_s == 0 || two_s as usize > n_particles || two_s % 2 != 0 {
                return Err(Error::param(
                    "weights",
                    format!("S = {} is outside 1..{}", two_s as f64 / 2.0, n_particles / 2),
                ));
            }
            if copy == 0 {
                return Err(Error::param("weights", "copy indices start at 1"));
            }
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::param("weights", format!("weight {w} is negative or not finite")));
            }
            total += w;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::param("weights", format!("weights sum to {total}, not 1")));
        }
        Ok(Self {
            n_particles,
            fidelity,
            weights,
            singlet_copy,
        })
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn fidelity(&self) -> f64 {
        self.fidelity
    }

    pub fn weights(&self) -> &BTreeMap<(u32, usize), f64> {
        &self.weights
    }

    pub fn singlet_copy(&self) -> usize {
        self.singlet_copy
    }

    /// `α^{(S)}` summed over copies.
    pub fn alpha(&self, two_s: u32) -> f64 {
        self.weights
            .iter()
            .filter(|((s, _), _)| *s == two_s)
            .map(|(_, w)| w)
            .sum()
    }
}

/// `sin θ|e,e,g,g⟩ + cos θ|g,g,e,e⟩` in the product basis.
pub fn four_particle_initial_state(theta: f64) -> Ket {
    let mut a = vec![Complex64::new(0.0, 0.0); 16];
    a[0b0011] = Complex64::new(theta.sin(), 0.0);
    a[0b1100] = Complex64::new(theta.cos(), 0.0);
    Ket::from_amplitudes(&a, atom_labels(4)).expect("unit norm")
}

/// Closed-form steady state reached from [`four_particle_initial_state`]:
/// `F = [1+sin 2θ]/3`, `α⁽¹⁾ = (3/2)[1−sin 2θ]/[2−sin 2θ]` in the first
/// S=1 copy and `α⁽²⁾ = (1/2)[1+sin 2θ]/[2−sin 2θ]`.
pub fn four_particle_prediction(theta: f64) -> GeneralizedWernerSpec {
    let s2 = (2.0 * theta).sin();
    let f = ((1.0 + s2) / 3.0).clamp(0.0, 1.0);
    let a1 = 1.5 * (1.0 - s2) / (2.0 - s2);
    let a2 = 1.0 - a1;
    let weights = BTreeMap::from([((2, 1), a1), ((4, 1), a2)]);
    GeneralizedWernerSpec::new(4, f, weights, 1).expect("closed form yields valid weights")
}

/// Diagonal coupled-basis state `F|0,0⟩⟨0,0| + (1−F) Σ α/(2S+1) Σ_m |S,m⟩⟨S,m|`.
pub fn generalized_werner_state(spec: &GeneralizedWernerSpec, basis: &CoupledBasis) -> Result<DensityMatrix> {
    if basis.n_particles() != spec.n_particles {
        return Err(Error::Shape(format!(
            "spec has {} particles, basis has {}",
            spec.n_particles,
            basis.n_particles()
        )));
    }
    let mut rho = CMatrix::zeros(basis.dim(), basis.dim());
    let singlet = basis.index_of(0, 0, spec.singlet_copy).ok_or_else(|| {
        Error::param("singlet_copy", format!("no singlet copy {} in the basis", spec.singlet_copy))
    })?;
    rho[(singlet, singlet)] = Complex64::new(spec.fidelity, 0.0);
    for (&(two_s, copy), &w) in &spec.weights {
        let sector = basis.sector(two_s, copy).ok_or_else(|| {
            Error::param(
                "weights",
                format!("no copy {copy} of S = {} in the basis", two_s / 2),
            )
        })?;
        let each = (1.0 - spec.fidelity) * w / (two_s as f64 + 1.0);
        for i in sector.indices() {
            rho[(i, i)] += Complex64::new(each, 0.0);
        }
    }
    DensityMatrix::new(rho, basis.label_strings())
}
