//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fail.

use std::f64::consts::{FRAC_PI_3, FRAC_PI_4, FRAC_PI_8};
use std::process::ExitCode;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use werner_core::lindblad::{
    analytic_steady_state, build_cavity_liouvillian, build_driven_collective, build_two_atom_reduced,
    cavity_vacuum_state, evolve, evolve_with, CollectiveSpace, EvolveOptions, Integrator, Liouvillian,
    Trajectory,
};
use werner_core::scenario::{cavity_compare, default_fig1b_grid, figure_1a, figure_1b, four_particle_scenario, rescaled_cavity};
use werner_core::spin::{
    build_coupled_basis, displaced_lowering, product_collective_operator, two_atom_dark_state, Collective,
    DickeBasis, DriveParams,
};
use werner_core::state::{atom_labels, fidelity_with_pure, max_abs, trace_distance, DensityMatrix, Ket, Tolerances};
use werner_core::werner::{
    analytic_steady_populations, beta, chsh_threshold, classify_fidelity, dark_state_weight,
    four_particle_prediction, theta_for_fidelity, two_atom_initial_state, werner_state, FidelityClass, WernerSpec,
};
use werner_core::CMatrix;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new() -> Self {
        Self {
            pass: true,
            detail: String::new(),
        }
    }

    fn check(&mut self, ok: bool, what: impl AsRef<str>) {
        if !self.detail.is_empty() {
            self.detail.push_str("; ");
        }
        if !ok {
            self.pass = false;
            self.detail.push_str("FAILED ");
        }
        self.detail.push_str(what.as_ref());
    }
}

type Criterion = fn() -> Result<Outcome, String>;

fn driven_pair(omega_over_gamma: f64) -> Result<(Liouvillian, werner_core::spin::CoupledBasis), String> {
    let basis = build_coupled_basis(2).map_err(|e| e.to_string())?;
    let drive = DriveParams::new(omega_over_gamma, 0.0, 1.0).map_err(|e| e.to_string())?;
    let l = build_driven_collective(&CollectiveSpace::Coupled(basis.clone()), &drive).map_err(|e| e.to_string())?;
    Ok((l, basis))
}

fn psi_plus_plateau() -> Result<Outcome, String> {
    let mut o = Outcome::new();
    let t = figure_1a(0.0, 5.0, 20.0).map_err(|e| e.to_string())?;
    let last = t.last("psi_plus_normalized").ok_or("missing column")?;
    let gap = (last - 1.0 / 3.0).abs();
    o.check(gap < 2e-3, format!("|psi_plus_normalized(20) - 1/3| = {gap:.3e} (tol 2e-3, value {last:.6})"));
    let singlet = t.column("singlet").ok_or("missing column")?;
    let drift = singlet.iter().map(|s| (s - singlet[0]).abs()).fold(0.0, f64::max);
    o.check(drift < 1e-9, format!("singlet drift {drift:.1e} (tol 1e-9)"));
    Ok(o)
}

fn beta_curve() -> Result<Outcome, String> {
    let mut o = Outcome::new();
    let grid = default_fig1b_grid();
    let t = figure_1b(&grid).map_err(|e| e.to_string())?;
    let b0 = beta(0.0).map_err(|e| e.to_string())?;
    o.check(b0 == 0.0, format!("beta(0) = {b0}"));
    let xs = t.column("omega_over_gamma").ok_or("missing column")?;
    let bs = t.column("beta").ok_or("missing column")?;
    let tail: Vec<f64> = xs.iter().zip(&bs).filter(|(x, _)| **x >= 1.0).map(|(_, b)| *b).collect();
    let monotone = tail.windows(2).all(|w| w[1] <= w[0]);
    let above = tail.iter().all(|b| *b >= (1.0f64 / 3.0).ln());
    o.check(monotone && above, format!("monotone toward ln(1/3) over {} points with x >= 1", tail.len()));
    let b100 = beta(100.0).map_err(|e| e.to_string())?;
    let gap = (b100 - (1.0f64 / 3.0).ln()).abs();
    o.check(gap < 1e-4, format!("|beta(100) - ln(1/3)| = {gap:.2e} (tol 1e-4)"));
    let diff = t
        .column("max_population_difference")
        .ok_or("missing column")?
        .into_iter()
        .fold(0.0, f64::max);
    o.check(diff <= 1e-6, format!("closed form vs engine max diff {diff:.1e} (tol 1e-6)"));
    Ok(o)
}

fn dark_state_endpoint() -> Result<Outcome, String> {
    let mut o = Outcome::new();
    let eg = Ket::basis(atom_labels(2), 1).map_err(|e| e.to_string())?;
    for (xi, name) in [(FRAC_PI_4, "pi/4"), (FRAC_PI_3, "pi/3")] {
        let l = build_two_atom_reduced(xi, 1.0).map_err(|e| e.to_string())?;
        let traj = evolve(&l, &eg.projector(), 30.0, 1.0).map_err(|e| e.to_string())?;
        let last = traj.last();
        let w_dark = fidelity_with_pure(last, &two_atom_dark_state(xi)).map_err(|e| e.to_string())?;
        let w_gg = last.population(3);
        let predicted = dark_state_weight(xi, std::f64::consts::FRAC_PI_2);
        if xi == FRAC_PI_4 {
            let err = (w_dark - 0.5).abs().max((w_gg - 0.5).abs());
            o.check(err < 1e-6, format!("xi={name}: weights ({w_dark:.8}, {w_gg:.8}) vs (1/2, 1/2), err {err:.1e}"));
        } else {
            let err = (w_dark - predicted).abs();
            o.check(err < 1e-6, format!("xi={name}: dark weight {w_dark:.8} vs kernel projection {predicted:.8}"));
        }
    }
    Ok(o)
}

fn operator_inverse_identity() -> Result<Outcome, String> {
    let mut o = Outcome::new();
    let mut worst_residual = 0.0_f64;
    let mut worst_formula = 0.0_f64;
    for x in [0.1, 0.5, 1.0, 2.0, 5.0, 10.0] {
        let drive = DriveParams::with_ratio(x).map_err(|e| e.to_string())?;
        let r = displaced_lowering(&DickeBasis::new(2), &drive).map_err(|e| e.to_string())?;
        let ss = analytic_steady_state(&r).map_err(|e| e.to_string())?;
        let l = build_driven_collective(&CollectiveSpace::Dicke(DickeBasis::new(2)), &drive).map_err(|e| e.to_string())?;
        worst_residual = worst_residual.max(l.residual(ss.state.entries()));
        let closed = analytic_steady_populations(x).map_err(|e| e.to_string())?.as_array();
        for (a, b) in ss.state.populations().iter().zip(closed) {
            worst_formula = worst_formula.max((a - b).abs());
        }
    }
    o.check(worst_residual < 1e-9, format!("max |L rho| = {worst_residual:.1e} (tol 1e-9)"));
    o.check(worst_formula < 1e-10, format!("diagonal vs closed form max diff {worst_formula:.1e} (tol 1e-10)"));
    let r = displaced_lowering(&DickeBasis::new(2), &DriveParams::with_ratio(1.0).unwrap()).unwrap();
    let pops = analytic_steady_state(&r).map_err(|e| e.to_string())?.state.populations();
    let spot = [4.0 / 9.0, 2.0 / 9.0, 1.0 / 3.0];
    let err = pops.iter().zip(spot).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    o.check(
        err < 1e-10,
        format!(
            "spot value at x=1: ({:.6}, {:.6}, {:.6}) vs (4/9, 2/9, 1/3), err {err:.2e}",
            pops[0], pops[1], pops[2]
        ),
    );
    Ok(o)
}

fn werner_generation() -> Result<Outcome, String> {
    let mut o = Outcome::new();
    let (l, basis) = driven_pair(1e3)?;
    let u_dag = basis.unitary().adjoint();
    let opts = EvolveOptions {
        integrator: Integrator::ExactPropagator,
        ..EvolveOptions::default()
    };
    for f in [0.2, 0.5, 0.7, 0.9] {
        let theta = theta_for_fidelity(f).map_err(|e| e.to_string())?;
        let psi = basis.to_coupled(&two_atom_initial_state(theta)).map_err(|e| e.to_string())?;
        let traj = evolve_with(&l, &DensityMatrix::pure(&psi), 50.0, 1.0, &opts).map_err(|e| e.to_string())?;
        let product = traj.last().transformed(&u_dag, atom_labels(2)).map_err(|e| e.to_string())?;
        let target = werner_state(&WernerSpec::new(f).map_err(|e| e.to_string())?);
        let d = trace_distance(&product, &target).map_err(|e| e.to_string())?;
        o.check(d < 2e-3, format!("F={f}: trace distance {d:.2e}"));
    }
    let eps = 1e-9;
    let chsh = chsh_threshold();
    let classes = [
        (0.5 - eps, FidelityClass::Classical),
        (0.5 + eps, FidelityClass::Purifiable),
        (chsh - eps, FidelityClass::Purifiable),
        (chsh + eps, FidelityClass::ChshViolating),
    ];
    let ok = classes.iter().all(|(f, c)| classify_fidelity(*f) == *c);
    o.check(ok, format!("classification at 1/2 +- {eps:e} and {chsh:.6} +- {eps:e}"));
    Ok(o)
}

fn bad_cavity_limit() -> Result<Outcome, String> {
    let mut o = Outcome::new();
    let ratios = [0.2, 0.1, 0.05, 0.025];
    let mut distances = Vec::new();
    for r in ratios {
        let t = cavity_compare(r, 1.0, FRAC_PI_4, 2, 5.0, 0.25).map_err(|e| e.to_string())?;
        distances.push(t.last("trace_distance").ok_or("missing column")?);
    }
    let monotone = distances.windows(2).all(|w| w[1] < w[0]);
    let listed: Vec<String> = distances.iter().map(|d| format!("{d:.2e}")).collect();
    o.check(monotone, format!("trace distances at t=5 [{}] decreasing", listed.join(", ")));
    o.check(distances[2] < 0.02, format!("g/kappa=0.05 distance {:.2e} < 0.02", distances[2]));
    Ok(o)
}

fn four_particle_werner() -> Result<Outcome, String> {
    let mut o = Outcome::new();
    for (theta, name) in [(0.0, "0"), (FRAC_PI_8, "pi/8"), (FRAC_PI_4, "pi/4")] {
        let report = four_particle_scenario(theta, 1e3, 50.0).map_err(|e| e.to_string())?;
        o.check(
            report.max_diagonal_error < 2e-3,
            format!("theta={name}: max diagonal error {:.1e}", report.max_diagonal_error),
        );
        let spec = four_particle_prediction(theta);
        let f = spec.fidelity();
        let t = &report.trajectory;
        let singlet = t.column("weight_S0_c1").ok_or("missing singlet column")?;
        let expected_f = (1.0 + (2.0 * theta).sin()) / 3.0;
        let singlet_err = singlet.iter().map(|s| (s - expected_f).abs()).fold(0.0, f64::max);
        o.check(singlet_err < 1e-9, format!("theta={name}: singlet weight err {singlet_err:.1e}"));
        let s2 = (2.0 * theta).sin();
        let a1 = 1.5 * (1.0 - s2) / (2.0 - s2);
        let a2 = 0.5 * (1.0 + s2) / (2.0 - s2);
        let mut sector_err = 0.0_f64;
        for (col, alpha) in [("weight_S1_c1", a1), ("weight_S2_c1", a2)] {
            let w = t.column(col).ok_or("missing sector column")?;
            for x in w {
                sector_err = sector_err.max((x - (1.0 - f) * alpha).abs());
            }
        }
        o.check(sector_err < 1e-9, format!("theta={name}: sector weights err {sector_err:.1e}"));
    }
    Ok(o)
}

fn random_density(rng: &mut ChaCha8Rng, d: usize, labels: Vec<String>) -> DensityMatrix {
    let a = CMatrix::from_fn(d, d, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let mut rho = &a * a.adjoint();
    let tr = rho.trace();
    rho /= tr;
    let rho = (&rho + rho.adjoint()) * Complex64::new(0.5, 0.0);
    DensityMatrix::new(rho, labels).expect("random Gram matrix is a state")
}

fn trajectory_violation(traj: &Trajectory) -> Option<String> {
    let tol = Tolerances::ENGINE;
    for (t, d) in traj.times.iter().zip(&traj.diagnostics) {
        if d.trace_error > tol.trace || d.hermiticity_error > tol.hermiticity || d.min_eigenvalue < tol.min_eigenvalue {
            return Some(format!("t={t}: {d:?}"));
        }
    }
    None
}

fn structural_invariants() -> Result<Outcome, String> {
    let mut o = Outcome::new();
    let mut rng = ChaCha8Rng::seed_from_u64(20_061_115);
    let mut counts = [0usize; 3];
    let mut worst_agreement = 0.0_f64;
    let mut worst_block = 0.0_f64;
    let mut failures = Vec::new();
    let adaptive = EvolveOptions::default();
    let exact = EvolveOptions::exact();
    for k in 0..200 {
        let model = rng.random_range(0..3usize);
        counts[model] += 1;
        let (l, rho0) = match model {
            0 => {
                let ratio = 10f64.powf(rng.random_range(-1.7..-0.3));
                let n_max = rng.random_range(1..=3usize);
                let xi = rng.random_range(-3.2..3.2);
                let l = build_cavity_liouvillian(&rescaled_cavity(ratio, 1.0, xi, n_max)).map_err(|e| e.to_string())?;
                let amps: Vec<Complex64> =
                    (0..4).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
                let atoms = Ket::unnormalized(amps.into(), atom_labels(2))
                    .and_then(Ket::normalized)
                    .map_err(|e| e.to_string())?;
                (l, cavity_vacuum_state(&atoms, n_max).map_err(|e| e.to_string())?)
            }
            1 => {
                let xi = rng.random_range(-3.2..3.2);
                let l = build_two_atom_reduced(xi, 1.0).map_err(|e| e.to_string())?;
                let rho0 = random_density(&mut rng, 4, atom_labels(2));
                (l, rho0)
            }
            _ => {
                let n = if rng.random_bool(0.5) { 2 } else { 4 };
                let basis = build_coupled_basis(n).map_err(|e| e.to_string())?;
                let x = 10f64.powf(rng.random_range(-1.0..1.7));
                let drive = DriveParams::new(x, rng.random_range(-3.2..3.2), 1.0).map_err(|e| e.to_string())?;
                let l = build_driven_collective(&CollectiveSpace::Coupled(basis.clone()), &drive)
                    .map_err(|e| e.to_string())?;
                worst_block = worst_block.max(l.off_block_magnitude());
                let rho0 = random_density(&mut rng, basis.dim(), basis.label_strings());
                (l, rho0)
            }
        };
        let t_final = rng.random_range(0.5..2.0);
        let a = evolve_with(&l, &rho0, t_final, 0.25, &adaptive).map_err(|e| format!("config {k}: {e}"))?;
        let b = evolve_with(&l, &rho0, t_final, 0.25, &exact).map_err(|e| format!("config {k}: {e}"))?;
        for traj in [&a, &b] {
            if let Some(v) = trajectory_violation(traj) {
                failures.push(format!("config {k}: {v}"));
            }
        }
        for (x, y) in a.states.iter().zip(&b.states) {
            worst_agreement = worst_agreement.max(trace_distance(x, y).map_err(|e| e.to_string())?);
        }
    }
    o.check(
        failures.is_empty(),
        format!(
            "validity over 200 configs (cavity {}, reduced {}, driven {}){}",
            counts[0],
            counts[1],
            counts[2],
            failures.first().map(|f| format!(": {f}")).unwrap_or_default()
        ),
    );
    o.check(worst_block < 1e-12, format!("max off-block magnitude {worst_block:.1e} (tol 1e-12)"));
    o.check(worst_agreement < 1e-8, format!("adaptive vs exact max trace distance {worst_agreement:.1e} (tol 1e-8)"));

    let mut worst_unitary = 0.0_f64;
    for n in [2, 4, 6] {
        let basis = build_coupled_basis(n).map_err(|e| e.to_string())?;
        let u = basis.unitary().matrix();
        worst_unitary = worst_unitary.max(max_abs(&(u * u.adjoint() - CMatrix::identity(basis.dim(), basis.dim()))));
    }
    o.check(worst_unitary < 1e-10, format!("coupled basis unitarity err {worst_unitary:.1e}"));
    let ortho = listed_four_spin_states_error();
    o.check(ortho < 1e-10, format!("listed four-spin states orthonormality/S^2 err {ortho:.1e}"));
    Ok(o)
}

/// Largest orthonormality or total-spin residual of the explicit four-spin states.
fn listed_four_spin_states_error() -> f64 {
    let mk = |terms: &[(usize, f64)], scale: f64| -> CMatrix {
        let mut v = CMatrix::zeros(16, 1);
        for &(i, c) in terms {
            v[(i, 0)] = Complex64::new(c * scale, 0.0);
        }
        v
    };
    let (eegg, egeg, egge, geeg, gege, ggee) = (3, 5, 6, 9, 10, 12);
    let s6 = 1.0 / 6f64.sqrt();
    let s3 = 1.0 / (2.0 * 3f64.sqrt());
    let states = [
        (2.0, mk(&[(eegg, 1.0), (egeg, 1.0), (geeg, 1.0), (egge, 1.0), (gege, 1.0), (ggee, 1.0)], s6)),
        (0.0, mk(&[(eegg, 2.0), (egeg, -1.0), (geeg, -1.0), (egge, -1.0), (gege, -1.0), (ggee, 2.0)], s3)),
        (0.0, mk(&[(egeg, 1.0), (egge, -1.0), (geeg, -1.0), (gege, 1.0)], 0.5)),
        (1.0, mk(&[(eegg, 1.0), (ggee, -1.0)], std::f64::consts::FRAC_1_SQRT_2)),
        (1.0, mk(&[(egeg, 1.0), (egge, -1.0), (geeg, 1.0), (gege, -1.0)], 0.5)),
        (1.0, mk(&[(egeg, 1.0), (egge, 1.0), (geeg, -1.0), (gege, -1.0)], 0.5)),
        (2.0, mk(&[(0, 1.0)], 1.0)),
        (2.0, mk(&[(15, 1.0)], 1.0)),
    ];
    let lower = product_collective_operator(4, Collective::Lower).into_matrix();
    let z = product_collective_operator(4, Collective::Z).into_matrix();
    let s2 = lower.adjoint() * &lower + &z * &z - &z;
    let mut worst = 0.0_f64;
    for (i, (s, a)) in states.iter().enumerate() {
        worst = worst.max(max_abs(&(&s2 * a - a * Complex64::new(s * (s + 1.0), 0.0))));
        for (j, (_, b)) in states.iter().enumerate() {
            let overlap = (a.adjoint() * b)[(0, 0)];
            let expected = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((overlap - expected).norm());
        }
    }
    worst
}

fn main() -> ExitCode {
    let criteria: [(&str, Criterion); 8] = [
        ("driven pair psi_plus plateau at drive 5", psi_plus_plateau),
        ("beta curve over the default drive grid", beta_curve),
        ("reduced two-atom dark-state endpoint", dark_state_endpoint),
        ("operator-inverse steady state of the triplet", operator_inverse_identity),
        ("Werner state generation under strong drive", werner_generation),
        ("bad-cavity elimination", bad_cavity_limit),
        ("four-particle generalized Werner state", four_particle_werner),
        ("structural invariants over random configs", structural_invariants),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (pass, detail) = match run() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "{} criterion {}: {name} [{:.1}s] {detail}",
            if pass { "PASS" } else { "FAIL" },
            k + 1,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
