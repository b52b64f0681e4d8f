use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use werner_core::lindblad::{
    build_driven_collective, build_two_atom_reduced, steady_state_by_propagation, steady_state_from_initial,
    CollectiveSpace,
};
use werner_core::spin::{build_coupled_basis, DickeBasis, DriveParams};
use werner_core::state::{
    partial_trace, trace_distance, von_neumann_entropy, DensityMatrix, Ket, Operator,
};
use werner_core::{CMatrix, Error};

fn labels(d: usize) -> Vec<String> {
    (0..d).map(|i| format!("b{i}")).collect()
}

fn complex_matrix(d: usize, values: &[(f64, f64)]) -> CMatrix {
    DMatrix::from_fn(d, d, |i, j| {
        let (re, im) = values[(i * d + j) % values.len()];
        Complex64::new(re, im)
    })
}

fn density(d: usize, values: &[(f64, f64)]) -> DensityMatrix {
    let a = complex_matrix(d, values);
    let mut rho = &a * a.adjoint() + CMatrix::identity(d, d) * Complex64::new(1e-3, 0.0);
    let tr = rho.trace();
    rho /= tr;
    let rho = (&rho + rho.adjoint()) * Complex64::new(0.5, 0.0);
    DensityMatrix::new(rho, labels(d)).unwrap()
}

fn unitary(d: usize, values: &[(f64, f64)]) -> Operator {
    let q = complex_matrix(d, values).qr().q();
    Operator::new(q).unwrap()
}

/// Reference partial trace over the middle factor of a three-factor space.
fn trace_middle(rho: &CMatrix, dims: [usize; 3]) -> CMatrix {
    let [a, b, c] = dims;
    let mut out = CMatrix::zeros(a * c, a * c);
    for i in 0..a {
        for k in 0..c {
            for i2 in 0..a {
                for k2 in 0..c {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for j in 0..b {
                        acc += rho[((i * b + j) * c + k, (i2 * b + j) * c + k2)];
                    }
                    out[(i * c + k, i2 * c + k2)] = acc;
                }
            }
        }
    }
    out
}

fn entries() -> impl Strategy<Value = Vec<(f64, f64)>> {
    proptest::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 144)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partial_trace_matches_reference(v in entries()) {
        let dims = [2, 3, 2];
        let rho = density(12, &v);
        let ours = partial_trace(&rho, &dims, &[0, 2]).unwrap();
        let reference = trace_middle(rho.entries(), dims);
        prop_assert!((ours.entries() - reference).norm() < 1e-12);
    }

    #[test]
    fn partial_traces_compose(v in entries()) {
        let rho = density(12, &v);
        let direct = partial_trace(&rho, &[2, 3, 2], &[0]).unwrap();
        let step = partial_trace(&rho, &[2, 3, 2], &[0, 1]).unwrap();
        let staged = partial_trace(&step, &[2, 3], &[0]).unwrap();
        prop_assert!((direct.entries() - staged.entries()).norm() < 1e-12);
        prop_assert!((direct.trace().re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_is_unitarily_invariant(v in entries(), w in entries()) {
        let rho = density(6, &v);
        let u = unitary(6, &w);
        let rotated = rho.transformed(&u, labels(6)).unwrap();
        let a = von_neumann_entropy(&rho).unwrap();
        let b = von_neumann_entropy(&rotated).unwrap();
        prop_assert!((a - b).abs() < 1e-10);
        prop_assert!(a >= -1e-12 && a <= 6f64.ln() + 1e-12);
    }

    #[test]
    fn trace_distance_is_a_metric(v in entries(), w in entries(), x in entries()) {
        let (a, b, c) = (density(4, &v), density(4, &w), density(4, &x));
        let ab = trace_distance(&a, &b).unwrap();
        prop_assert!((ab - trace_distance(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!(ab <= trace_distance(&a, &c).unwrap() + trace_distance(&c, &b).unwrap() + 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
    }

    #[test]
    fn steady_state_routes_agree(x in 0.05..20.0f64, phi in -3.0..3.0f64, v in entries()) {
        let basis = build_coupled_basis(2).unwrap();
        let l = build_driven_collective(&CollectiveSpace::Coupled(basis), &DriveParams::new(x, phi, 1.0).unwrap()).unwrap();
        let rho0 = density(4, &v);
        let a = steady_state_from_initial(&l, &rho0).unwrap();
        let b = steady_state_by_propagation(&l, &rho0).unwrap();
        prop_assert!(trace_distance(&a, &b).unwrap() < 1e-8);
        prop_assert!(l.residual(a.entries()) < 1e-9);
    }
}

#[test]
fn dark_subspace_keeps_coherence_with_ground_state() {
    // ker R⁻ is two-dimensional, so the stationary set exceeds one state;
    // the spectral projector carries the ψ_E–gg coherence through.
    let xi = 0.4;
    let l = build_two_atom_reduced(xi, 1.0).unwrap();
    let dark = werner_core::spin::two_atom_dark_state(xi);
    let gg = Ket::basis(werner_core::state::atom_labels(2), 3).unwrap();
    let c = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let psi = Ket::superpose(&[(c, &dark), (c, &gg)]).unwrap();
    let rho0 = psi.projector();
    let ss = steady_state_from_initial(&l, &rho0).unwrap();
    assert!(trace_distance(&ss, &rho0).unwrap() < 1e-10);
    let reference = steady_state_by_propagation(&l, &rho0).unwrap();
    assert!(trace_distance(&ss, &reference).unwrap() < 1e-8);
}

#[test]
fn undriven_multiplet_relaxes_to_lowest_state() {
    let basis = DickeBasis::new(4);
    let l = build_driven_collective(&CollectiveSpace::Dicke(basis), &DriveParams::new(0.0, 0.0, 1.0).unwrap()).unwrap();
    let top = Ket::basis(basis.labels(), 0).unwrap().projector();
    let ss = steady_state_from_initial(&l, &top).unwrap();
    assert!((ss.population(4) - 1.0).abs() < 1e-10);
}

#[test]
fn pure_hamiltonian_evolution_is_not_a_unique_steady_state_problem() {
    // A zero generator has every matrix stationary; the projector then returns ρ₀.
    let l = werner_core::lindblad::Liouvillian::new(
        CMatrix::zeros(2, 2),
        vec![],
        werner_core::lindblad::ModelTag::TwoAtomReduced,
        labels(2),
    )
    .unwrap();
    let rho0 = density(2, &[(0.3, 0.1), (0.2, -0.4), (0.5, 0.0), (0.1, 0.2)]);
    let ss = steady_state_from_initial(&l, &rho0).unwrap();
    assert!(trace_distance(&ss, &rho0).unwrap() < 1e-12);
    assert!(!matches!(steady_state_by_propagation(&l, &rho0), Err(Error::NotConverged { .. })));
}
