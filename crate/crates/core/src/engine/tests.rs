use super::*;
use crate::operators::{cyclic_shift, random_ds, volterra_discrete, RandomKind};

fn uniform(d: usize) -> Arc<FiniteMeasureSpace> {
    Arc::new(FiniteMeasureSpace::uniform(d).unwrap())
}

fn rel_gap(a: &Func, b: &Func) -> f64 {
    let diff = measure::norm_inf(&a.sub(b).unwrap());
    diff / measure::norm_inf(b).max(1.0)
}

fn identity_problem(d: usize, k: usize, alpha: Vec<usize>) -> EntangledProblem {
    let s = uniform(d);
    let m = alpha.len();
    EntangledProblem::new(
        vec![OperatorRep::identity(&s); m],
        vec![OperatorRep::identity(&s); m - 1],
        EntanglementMap::new(k, alpha).unwrap(),
    )
    .unwrap()
}

#[test]
fn entanglement_map_validation() {
    assert!(EntanglementMap::new(2, vec![1, 3]).is_err());
    assert!(EntanglementMap::new(2, vec![0, 1]).is_err());
    assert!(EntanglementMap::new(0, vec![]).is_err());
    let err = EntanglementMap::new(2, vec![1, 2, 3]).unwrap_err();
    assert!(err.to_string().contains("alpha[3] = 3"));
    // not necessarily surjective
    assert!(EntanglementMap::new(3, vec![1, 1]).is_ok());
}

#[test]
fn problem_validation() {
    let s = uniform(2);
    let ent = EntanglementMap::new(1, vec![1, 1]).unwrap();
    let id = OperatorRep::identity(&s);
    assert!(EntangledProblem::new(vec![id.clone()], vec![], ent.clone()).is_err());
    assert!(EntangledProblem::new(vec![id.clone(), id.clone()], vec![], ent.clone()).is_err());
    let big = id.scaled(Complex64::new(2.0, 0.0));
    assert!(matches!(
        EntangledProblem::new(vec![id.clone(), big], vec![id.clone()], ent.clone()),
        Err(Error::NotDunfordSchwartz { .. })
    ));
    // A need not be DS
    let a = id.scaled(Complex64::new(3.0, 0.0));
    assert!(EntangledProblem::new(vec![id.clone(), id.clone()], vec![a], ent).is_ok());
}

#[test]
fn identity_operators_return_f() {
    let opts = EvalOptions::default();
    for alpha in [vec![1, 1, 1], vec![1, 2], vec![1, 2, 1], vec![2, 3, 1, 2]] {
        let p = identity_problem(3, 3, alpha);
        let f = measure::random_func(p.space(), 4, true);
        for n in [1, 2, 5] {
            assert!(rel_gap(&naive_average(&p, &f, n, &opts).unwrap(), &f) < 1e-14);
            assert!(rel_gap(&entangled_average(&p, &f, n, &opts).unwrap(), &f) < 1e-14);
        }
    }
}

#[test]
fn swap_average_by_hand() {
    let s = uniform(2);
    let swap = OperatorRep::from_real_rows(&s, &[&[0.0, 1.0], &[1.0, 0.0]]).unwrap();
    let p = EntangledProblem::new(vec![swap], vec![], EntanglementMap::new(1, vec![1]).unwrap()).unwrap();
    let f = Func::from_real(&s, &[1.0, 0.0]).unwrap();
    let expect = Func::from_real(&s, &[0.5, 0.5]).unwrap();
    let opts = EvalOptions::default();
    assert!(rel_gap(&naive_average(&p, &f, 2, &opts).unwrap(), &expect) < 1e-15);
    assert!(rel_gap(&entangled_average(&p, &f, 2, &opts).unwrap(), &expect) < 1e-15);
}

#[test]
fn elimination_matches_enumeration_on_random_problems() {
    let opts = EvalOptions::default();
    for seed in 0..30 {
        let (p, f) = random_problem(seed, 4, 2 + (seed as usize % 3), 1 + (seed as usize % 3)).unwrap();
        for n in [1, 3, 5] {
            let naive = naive_average(&p, &f, n, &opts).unwrap();
            let fast = entangled_average(&p, &f, n, &opts).unwrap();
            assert!(rel_gap(&fast, &naive) < 1e-10, "seed {seed} N {n}");
        }
    }
}

#[test]
fn nested_variable_toy_problem() {
    let s = uniform(4);
    let t1 = random_ds(4, 11, RandomKind::SignedContraction).unwrap();
    let t2 = cyclic_shift(&s, 1).unwrap();
    let t3 = random_ds(4, 12, RandomKind::DoublyStochastic).unwrap();
    let v = volterra_discrete(4).unwrap();
    let p = EntangledProblem::new(
        vec![t1, t2, t3],
        vec![v.clone(), v.modulus()],
        EntanglementMap::new(2, vec![1, 2, 1]).unwrap(),
    )
    .unwrap();
    let f = measure::random_func(&s, 9, true);
    let opts = EvalOptions::default();
    for n in 1..=6 {
        let naive = naive_average(&p, &f, n, &opts).unwrap();
        let fast = entangled_average(&p, &f, n, &opts).unwrap();
        assert!(rel_gap(&fast, &naive) < 1e-10, "N {n}");
    }
}

#[test]
fn live_variable_reused_mid_chain() {
    // α = (1, 2, 1, 2): variable 1 is live but not last at stage 3.
    let (p0, f) = random_problem(77, 3, 4, 2).unwrap();
    let p = EntangledProblem::new(
        p0.t().to_vec(),
        p0.a().to_vec(),
        EntanglementMap::new(2, vec![1, 2, 1, 2]).unwrap(),
    )
    .unwrap();
    let opts = EvalOptions::default();
    for n in [1, 4, 6] {
        let naive = naive_average(&p, &f, n, &opts).unwrap();
        let fast = entangled_average(&p, &f, n, &opts).unwrap();
        assert!(rel_gap(&fast, &naive) < 1e-10);
    }
}

#[test]
fn single_stage_is_the_ergodic_average() {
    let t = random_ds(6, 5, RandomKind::DoublyStochastic).unwrap();
    let f = measure::random_func(t.space(), 1, false);
    let p = EntangledProblem::new(vec![t.clone()], vec![], EntanglementMap::new(1, vec![1]).unwrap()).unwrap();
    for n in [1, 7, 100] {
        let direct = ergodic_average(&t, &f, n).unwrap();
        let fast = entangled_average(&p, &f, n, &EvalOptions::default()).unwrap();
        assert!(rel_gap(&fast, &direct) < 1e-13);
    }
}

#[test]
fn absolute_variant_examples() {
    let opts = EvalOptions::default();
    let p = identity_problem(2, 2, vec![1, 2]);
    let f = Func::from_real(p.space(), &[1.0, -1.0]).unwrap();
    for n in [1, 3, 8] {
        let v = absolute_entangled_average(&p, &f, n, &opts).unwrap();
        assert!(rel_gap(&v, &Func::from_real(p.space(), &[1.0, 1.0]).unwrap()) < 1e-14);
    }
    let zero = Func::zeros(p.space());
    assert_eq!(absolute_entangled_average(&p, &zero, 4, &opts).unwrap(), zero);
}

#[test]
fn absolute_variant_decays_on_stable_input() {
    let d = 8;
    let s = uniform(d);
    let t1 = random_ds(d, 3, RandomKind::SignedContraction)
        .unwrap()
        .scaled(Complex64::new(0.9, 0.0));
    let v = volterra_discrete(d).unwrap();
    let t2 = cyclic_shift(&s, 1).unwrap();
    let p = EntangledProblem::new(vec![t1, t2], vec![v], EntanglementMap::new(1, vec![1, 1]).unwrap()).unwrap();
    let f = measure::random_func(&s, 2, false);
    let opts = EvalOptions::default();
    let early = absolute_entangled_average(&p, &f, 16, &opts).unwrap();
    let late = absolute_entangled_average(&p, &f, 256, &opts).unwrap();
    for (a, b) in late.values().iter().zip(early.values()) {
        assert!(a.re < b.re || b.re == 0.0);
    }
}

#[test]
fn polynomial_identity_returns_f() {
    let p = identity_problem(3, 2, vec![1, 2, 2]);
    let f = measure::random_func(p.space(), 3, true);
    let polys = vec![PolynomialIndex::square(), PolynomialIndex::new(vec![0, 1, 1]).unwrap()];
    let v = polynomial_entangled_average(&p, &f, &polys, 5, &EvalOptions::default()).unwrap();
    assert!(rel_gap(&v, &f) < 1e-14);
}

#[test]
fn polynomial_parity_cancels() {
    // T f = -f; (-1)^{n²} = (-1)^n, so even N cancels exactly
    let s = uniform(2);
    let swap = OperatorRep::from_real_rows(&s, &[&[0.0, 1.0], &[1.0, 0.0]]).unwrap();
    let p = EntangledProblem::new(vec![swap], vec![], EntanglementMap::new(1, vec![1]).unwrap()).unwrap();
    let f = Func::from_real(&s, &[1.0, -1.0]).unwrap();
    let polys = [PolynomialIndex::square()];
    for n in [2, 4, 10, 64] {
        let v = polynomial_entangled_average(&p, &f, &polys, n, &EvalOptions::default()).unwrap();
        assert_eq!(measure::norm_inf(&v), 0.0, "N {n}");
    }
    let odd = polynomial_entangled_average(&p, &f, &polys, 3, &EvalOptions::default()).unwrap();
    assert!((measure::norm_inf(&odd) - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn polynomial_matches_enumeration() {
    let opts = EvalOptions::default();
    let polys = vec![PolynomialIndex::square(), PolynomialIndex::new(vec![0, 1, 1]).unwrap()];
    for seed in 0..10 {
        let (p, f) = random_problem(100 + seed, 3, 3, 2).unwrap();
        for n in [2, 5] {
            let naive = naive_polynomial_average(&p, &f, &polys, n, &opts).unwrap();
            let fast = polynomial_entangled_average(&p, &f, &polys, n, &opts).unwrap();
            assert!(rel_gap(&fast, &naive) < 1e-10);
        }
    }
}

#[test]
fn non_monotone_polynomial_exponents() {
    // q(n) = n² - 4n + 5 takes 2, 1, 2, 5, 10, ...
    let q = PolynomialIndex::new(vec![5, -4, 1]).unwrap();
    let (p, f) = random_problem(5, 3, 3, 1).unwrap();
    let opts = EvalOptions::default();
    let polys = [q];
    let naive = naive_polynomial_average(&p, &f, &polys, 6, &opts).unwrap();
    let fast = polynomial_entangled_average(&p, &f, &polys, 6, &opts).unwrap();
    assert!(rel_gap(&fast, &naive) < 1e-10);
}

#[test]
fn nonpositive_polynomial_is_rejected() {
    let (p, f) = random_problem(1, 3, 2, 1).unwrap();
    let q = PolynomialIndex::new(vec![-2, 1]).unwrap();
    let err = polynomial_entangled_average(&p, &f, &[q], 4, &EvalOptions::default()).unwrap_err();
    assert_eq!(err, Error::NonPositivePolynomial { n: 1, value: -1 });
}

#[test]
fn naive_budget_is_enforced() {
    let (p, f) = random_problem(2, 2, 3, 3).unwrap();
    let opts = EvalOptions {
        naive_budget: 1000,
        ..EvalOptions::default()
    };
    let err = naive_average(&p, &f, 10, &opts).unwrap_err();
    assert_eq!(
        err,
        Error::BudgetExceeded {
            required: 3000,
            budget: 1000
        }
    );
}

#[test]
fn memory_cap_is_enforced() {
    let p = identity_problem(4, 2, vec![1, 2, 1]);
    let f = Func::zeros(p.space());
    let opts = EvalOptions {
        memory_cap: 100,
        ..EvalOptions::default()
    };
    let err = entangled_average(&p, &f, 10, &opts).unwrap_err();
    assert_eq!(err, Error::MemoryCapExceeded { estimate: 400, cap: 100 });
}

#[test]
fn parallel_and_sequential_agree() {
    let (p, f) = random_problem(9, 5, 4, 3).unwrap();
    let par = EvalOptions {
        parallelism: Parallelism::Rayon,
        ..EvalOptions::default()
    };
    let seq = EvalOptions::sequential();
    for n in [3, 6, 12] {
        assert_eq!(
            entangled_average(&p, &f, n, &par).unwrap(),
            entangled_average(&p, &f, n, &seq).unwrap()
        );
    }
    assert_eq!(naive_average(&p, &f, 5, &par).unwrap(), naive_average(&p, &f, 5, &seq).unwrap());
}

#[test]
fn trajectory_examples() {
    let p = identity_problem(3, 1, vec![1, 1]);
    let f = measure::random_func(p.space(), 8, true);
    let traj = average_trajectory(&p, &f, &[1, 2, 4, 8], &Variant::Plain, &EvalOptions::default()).unwrap();
    assert_eq!(traj[0].cauchy_gap, None);
    assert!(traj[1..].iter().all(|pt| pt.cauchy_gap.unwrap() < 1e-15));
    assert!(average_trajectory(&p, &f, &[4, 2], &Variant::Plain, &EvalOptions::default()).is_err());
}

#[test]
fn pet_gaps_shrink() {
    let t = random_ds(32, 21, RandomKind::DoublyStochastic).unwrap();
    let f = measure::random_func(t.space(), 22, false);
    let p = EntangledProblem::new(vec![t], vec![], EntanglementMap::new(1, vec![1]).unwrap()).unwrap();
    let traj =
        average_trajectory(&p, &f, &[64, 256, 1024, 4096], &Variant::Plain, &EvalOptions::default()).unwrap();
    let gaps: Vec<f64> = traj.iter().filter_map(|pt| pt.cauchy_gap).collect();
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
}

#[test]
fn joint_bound_certification() {
    let d = 8;
    let s = uniform(d);
    let shift = cyclic_shift(&s, 1).unwrap();
    let v = volterra_discrete(d).unwrap();
    let mut p = EntangledProblem::new(
        vec![shift.clone(), shift],
        vec![v],
        EntanglementMap::new(1, vec![1, 1]).unwrap(),
    )
    .unwrap();
    let b = p.certify_joint_bound(16);
    assert_eq!(b.c, 1.0);
    assert!((b.observed_sup - 7.0 / 8.0).abs() < 1e-15);
    assert_eq!(b.certified_up_to, Some(16));
}
