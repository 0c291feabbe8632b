use nalgebra::DVector;
use proptest::prelude::*;
use rand::Rng;
use tro_core::cli::{report_json, run_command, Command, InstanceFile, Overrides, Settings};
use tro_core::expectation::{assemble_expectation, verify_expectation, VerifyOptions};
use tro_core::gen::{self, DegenerateKind};
use tro_core::mats::{commutant, span_equal, ComplexMatrix, Decomposer, SubspaceBasis, ToleranceProfile, C64};
use tro_core::sample::{complex_normal, gaussian_matrix, haar_unitary, rng_from_seed};
use tro_core::tro::{ternary_closure, ternary_product, Block, Tro};
use tro_core::wstar::double_commutant;

fn tol() -> ToleranceProfile {
    ToleranceProfile::default()
}

fn random_combination(basis: &[ComplexMatrix], seed: u64) -> ComplexMatrix {
    let mut rng = rng_from_seed(seed);
    let (r, c) = basis[0].shape();
    basis
        .iter()
        .fold(ComplexMatrix::zeros(r, c), |acc, b| &acc + &b.scale(complex_normal(&mut rng)))
}

fn quick() -> ProptestConfig {
    ProptestConfig::with_cases(24)
}

proptest! {
    #![proptest_config(quick())]

    #[test]
    fn decompose_then_recombine(rows in 1usize..4, cols in 1usize..4, count in 1usize..6, seed in any::<u64>()) {
        let mut rng = rng_from_seed(seed);
        let gens: Vec<_> = (0..count).map(|_| gaussian_matrix(rows, cols, &mut rng)).collect();
        let m = random_combination(&gens, seed ^ 1);
        let d = Decomposer::new(&gens, tol()).unwrap();
        let back = d.recombine(&d.coefficients(&m).unwrap());
        prop_assert!((&back - &m).hs_norm() <= tol().residual * m.hs_norm().max(1.0));
    }

    #[test]
    fn operator_norm_unitarily_invariant(rows in 1usize..5, cols in 1usize..5, seed in any::<u64>()) {
        let mut rng = rng_from_seed(seed);
        let m = gaussian_matrix(rows, cols, &mut rng);
        let u = haar_unitary(rows, &mut rng);
        let v = haar_unitary(cols, &mut rng);
        let n = m.operator_norm();
        prop_assert!(((&(&u * &m) * &v).operator_norm() - n).abs() <= 1e-12 * n);
    }

    #[test]
    fn commutant_is_unital_star_algebra(d in 1usize..4, count in 1usize..3, seed in any::<u64>()) {
        let mut rng = rng_from_seed(seed);
        // block-diagonal generators so the commutant is nontrivial
        let split = rng.random_range(0..=d);
        let gens: Vec<_> = (0..count)
            .map(|_| {
                let g = gaussian_matrix(d, d, &mut rng);
                let m = nalgebra::DMatrix::from_fn(d, d, |i, j| if (i < split) == (j < split) { g.get(i, j) } else { C64::new(0.0, 0.0) });
                ComplexMatrix::new(m).unwrap()
            })
            .collect();
        let c = commutant(&gens, d, tol()).unwrap();
        prop_assert!(c.relative_residual(&ComplexMatrix::identity(d)) <= 1e-9);
        for a in c.basis() {
            prop_assert!(c.relative_residual(&a.adjoint()) <= 1e-9);
            for b in c.basis() {
                prop_assert!(c.relative_residual(&(a * b)) <= 1e-9);
            }
        }
    }

    #[test]
    fn span_equal_is_an_equivalence(dim in 1usize..4, seed in any::<u64>()) {
        let mut rng = rng_from_seed(seed);
        let gens: Vec<_> = (0..dim).map(|_| gaussian_matrix(2, 3, &mut rng)).collect();
        let a = SubspaceBasis::span(2, 3, &gens, tol()).unwrap();
        let respan = |s: u64| {
            let mixed: Vec<_> = (0..dim).map(|k| random_combination(a.basis(), s + k as u64)).collect();
            SubspaceBasis::span(2, 3, &mixed, tol()).unwrap()
        };
        let (b, c) = (respan(seed ^ 7), respan(seed ^ 99));
        prop_assert!(span_equal(&a, &a).unwrap());
        prop_assert_eq!(span_equal(&a, &b).unwrap(), span_equal(&b, &a).unwrap());
        if span_equal(&a, &b).unwrap() && span_equal(&b, &c).unwrap() {
            prop_assert!(span_equal(&a, &c).unwrap());
        }
        let other = SubspaceBasis::span(2, 3, &[gaussian_matrix(2, 3, &mut rng)], tol()).unwrap();
        if dim < 6 {
            prop_assert_eq!(span_equal(&a, &other).unwrap(), span_equal(&other, &a).unwrap());
        }
    }

    #[test]
    fn ternary_product_adjoint(k in 1usize..4, h in 1usize..4, seed in any::<u64>()) {
        let mut rng = rng_from_seed(seed);
        let (a, b, c) = (gaussian_matrix(k, h, &mut rng), gaussian_matrix(k, h, &mut rng), gaussian_matrix(k, h, &mut rng));
        let lhs = ternary_product(&a, &b, &c).unwrap().adjoint();
        let rhs = &(&c.adjoint() * &b) * &a.adjoint();
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-12 * lhs.hs_norm().max(1.0));
        let via = ternary_product(&c.adjoint(), &b.adjoint(), &a.adjoint()).unwrap();
        prop_assert!(lhs.max_abs_diff(&via) <= 1e-12 * lhs.hs_norm().max(1.0));
    }

    #[test]
    fn closure_is_idempotent(m in 1usize..4, n in 1usize..4, gens in 1usize..3, seed in any::<u64>()) {
        let t = gen::random_tro(m, n, gens, seed).unwrap();
        let again = ternary_closure(t.space()).unwrap();
        prop_assert!(span_equal(t.space(), again.space()).unwrap());
    }

    #[test]
    fn left_linking_block_acts_nondegenerately(m in 1usize..5, n in 1usize..5, gens in 1usize..3, seed in any::<u64>()) {
        let t = gen::random_tro(m, n, gens, seed).unwrap();
        let left = &t.linking_blocks().unwrap().left;
        let products: Vec<_> = left.basis().iter().flat_map(|c| t.basis().iter().map(move |a| c * a)).collect();
        let span = SubspaceBasis::span(t.dim_k(), t.dim_h(), &products, tol()).unwrap();
        prop_assert!(span_equal(&span, t.space()).unwrap());
    }

    #[test]
    fn double_commutant_idempotent_and_monotone(d in 1usize..4, seed in any::<u64>()) {
        let mut rng = rng_from_seed(seed);
        let g = gaussian_matrix(d, d, &mut rng);
        let h = gaussian_matrix(d, d, &mut rng);
        let small = SubspaceBasis::span(d, d, &[g.clone(), g.adjoint()], tol()).unwrap();
        let large = SubspaceBasis::span(d, d, &[g.clone(), g.adjoint(), h.clone(), h.adjoint()], tol()).unwrap();
        let dc_small = double_commutant(&small).unwrap();
        let dc_large = double_commutant(&large).unwrap();
        prop_assert!(span_equal(&double_commutant(&dc_small).unwrap(), &dc_small).unwrap());
        prop_assert!(dc_large.contains_space(&dc_small).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn generated_instances_pass_the_pipeline(seed in any::<u64>()) {
        let inst = gen::random_instance(seed).unwrap();
        prop_assert!(inst.nondegenerate);
        let x = inst.x_tro().unwrap();
        let e = assemble_expectation(&inst.p, &x, &inst.t).unwrap();
        let opts = VerifyOptions { samples: 8, amplification_level: 2, seed };
        let rep = verify_expectation(&e, &x, &inst.t, opts).unwrap();
        prop_assert!(rep.pass);
        prop_assert!(rep.worst_residual() <= 1e-8);
        // the left corner is the identity on <XX*>
        let e11 = e.block(Block::B11);
        for b in x.linking_blocks().unwrap().left.basis() {
            prop_assert!((&e11.apply(b) - b).hs_norm() <= 1e-9);
        }
    }

    #[test]
    fn perturbing_the_dagger_block_breaks_an_axiom(seed in any::<u64>()) {
        let inst = gen::random_instance(seed).unwrap();
        let x = inst.x_tro().unwrap();
        let e = assemble_expectation(&inst.p, &x, &inst.t).unwrap();
        let b = e.block(Block::B21);
        let (r, c) = b.coeffs().shape();
        let g = gaussian_matrix(r, c, &mut rng_from_seed(seed ^ 21)).into_matrix();
        let eps = 1e-3;
        let delta = &g * C64::new(eps / g.norm(), 0.0);
        let e2 = e.with_block(Block::B21, b.perturbed(&delta).unwrap()).unwrap();
        let opts = VerifyOptions { samples: 4, amplification_level: 1, seed };
        let rep = verify_expectation(&e2, &x, &inst.t, opts).unwrap();
        prop_assert!(rep.worst_residual() >= eps / 10.0);
    }

    #[test]
    fn generators_are_deterministic(seed in any::<u64>()) {
        let a = gen::random_instance(seed).unwrap();
        let b = gen::random_instance(seed).unwrap();
        prop_assert_eq!(a.t.basis(), b.t.basis());
        prop_assert_eq!(a.x.basis(), b.x.basis());
        prop_assert_eq!(a.p.coeffs(), b.p.coeffs());
    }

    #[test]
    fn instance_files_round_trip(seed in any::<u64>(), with_e in any::<bool>()) {
        let inst = gen::random_instance(seed).unwrap();
        let e = if with_e {
            Some(assemble_expectation(&inst.p, &inst.x_tro().unwrap(), &inst.t).unwrap())
        } else {
            None
        };
        let file = InstanceFile::from_instance(&inst, e.as_ref());
        let text = file.to_json();
        let back = InstanceFile::parse(&text).unwrap();
        prop_assert_eq!(&back, &file);
        prop_assert_eq!(back.to_json(), text);
    }

    #[test]
    fn degenerate_instances_stop_at_their_gate(k in 0usize..3, seed in 0u64..1000) {
        let kind = DegenerateKind::ALL[k];
        let inst = gen::degenerate_instance(kind, seed).unwrap();
        let loaded = InstanceFile::from_instance(&inst, None).load(Overrides::default()).unwrap();
        let out = run_command(Command::Extend, &loaded, Settings::default()).unwrap();
        let first = out.first_failure().map(|c| c.name.clone());
        prop_assert_eq!(first.as_deref(), Some(kind.gate()));
        // the pipeline stops inside the gate's stage, before any construction
        prop_assert!(out.checks.iter().all(|c| c.name != "assemble"));
    }
}

#[test]
fn reports_are_deterministic() {
    let inst = gen::random_instance(42).unwrap();
    let loaded = InstanceFile::from_instance(&inst, None).load(Overrides::default()).unwrap();
    let run = || {
        let o = run_command(Command::Extend, &loaded, Settings::default()).unwrap();
        serde_json::to_string(&report_json(&o, "sha256:x")).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn coefficient_vectors_recombine_exactly_on_generators() {
    let gens: Vec<_> = (0..3).map(|k| ComplexMatrix::unit(2, 2, k / 2, k % 2)).collect();
    let d = Decomposer::new(&gens, tol()).unwrap();
    let c = d.coefficients(&gens[1]).unwrap();
    let want = DVector::from_vec(vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 0.0)]);
    assert!((c - want).norm() < 1e-14);
    let _ = Tro::from_spanning(&gens[..1], tol()).unwrap();
}
