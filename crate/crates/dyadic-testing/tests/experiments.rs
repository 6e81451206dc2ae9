use dyadic_testing::bellman::BellmanGrid;
use dyadic_testing::experiments::{
    bellman_experiment, compare, constants_report, corollaries, gap_search, maximal_testing, BellmanConfig,
    CorollaryConfig, GapConfig,
};
use dyadic_testing::generate::{random_instance, rng_for, InstanceConfig, KernelMode, WeightMode};
use dyadic_testing::optimize::AscentOptions;
use dyadic_testing::report::Tabular;
use dyadic_testing::{CubeId, DyadicSystem, Exponent, LatticeSpace, PositiveKernel, ProblemInstance, Weight};
use proptest::prelude::*;

fn quick(seed: u64) -> AscentOptions {
    AscentOptions {
        starts: 4,
        max_iterations: 400,
        ..AscentOptions::with_seed(seed)
    }
}

fn trivial(kernel_value: Option<f64>) -> ProblemInstance {
    let sys = DyadicSystem::new(0, 2).unwrap();
    let w = Weight::uniform(&sys);
    let mut k = PositiveKernel::zero(LatticeSpace::scalar(), LatticeSpace::scalar());
    if let Some(v) = kernel_value {
        k.insert(CubeId::ROOT, vec![v]).unwrap();
    }
    let p = Exponent::new(3.0).unwrap();
    ProblemInstance::new(sys, w.clone(), w, k, p, p, Exponent::INFINITY).unwrap()
}

#[test]
fn trivial_tree_has_unit_constants() {
    let report = constants_report(&[trivial(Some(1.0))], &quick(0));
    assert!(report.passed, "{:?}", report.checks.failures);
    let table = report.body.table();
    assert!(table.rows.len() >= 12);
    for row in &table.rows {
        assert_eq!(row[2], "1", "{row:?}");
    }
}

#[test]
fn zero_kernel_has_zero_testing_constants() {
    let report = constants_report(&[trivial(None)], &quick(0));
    assert!(report.passed);
    let c = &report.body.instances[0].constants;
    for r in [&c.norm, &c.direct, &c.dual, &c.pairing, &c.lt, &c.endpoint_direct, &c.endpoint_lt, &c.constant_function] {
        assert_eq!(r.value, 0.0, "{}", r.name);
    }
}

#[test]
fn reports_are_reproducible() {
    let cfg = InstanceConfig {
        dim: 2,
        kernel: KernelMode::DenseNonneg,
        ..Default::default()
    };
    let instances: Vec<_> = (0..3).map(|i| random_instance(&cfg, &mut rng_for(i, 0)).unwrap()).collect();
    let run = || compare(&instances, &quick(4), &[Exponent::TWO]).unwrap().0.to_json();
    assert_eq!(run(), run());
}

#[test]
fn compare_reports_assembled_constants_and_p_independence() {
    let cfg = InstanceConfig {
        equal_weights: true,
        ..Default::default()
    };
    let instances: Vec<_> = (0..4).map(|i| random_instance(&cfg, &mut rng_for(i, 1)).unwrap()).collect();
    let (report, constants) = compare(&instances, &quick(1), &[Exponent::TWO, Exponent::new(3.0).unwrap()]).unwrap();
    assert!(report.passed, "{:?}", report.checks.failures);
    assert_eq!(constants.len(), 4);
    let names: Vec<_> = report.assembled.iter().map(|k| k.name.as_str()).collect();
    assert_eq!(names, ["K1(p=2, q=2)", "K2(p=2, q=2)", "K2(p=3, q=3)"]);
    for row in &report.body.rows {
        assert!(row.norm_exact);
        assert!((row.a_infinity_sigma - 1.0).abs() < 1e-12);
        assert_eq!(row.exponents.len(), 2);
        assert!(row.exponents.iter().all(|e| e.norm <= e.bound));
    }
    assert!(report.checks.worst_ratio["testing lower bound"] <= 1.0 + 1e-9);
}

#[test]
fn corollary_checks_hold() {
    let cfg = CorollaryConfig {
        instances: 4,
        ..Default::default()
    };
    let report = corollaries(&cfg, &quick(2)).unwrap();
    assert!(report.passed, "{:?}", report.checks.failures);
    assert_eq!(report.body.embedding.len(), 4);
    assert_eq!(report.assembled.len(), 3);
    for r in &report.body.depolarisation {
        assert!(r.quadratic <= r.bilinear * (1.0 + 1e-9) && r.bilinear <= 2.0 * r.quadratic * (1.0 + 1e-9));
    }
}

#[test]
fn maximal_testing_over_three_exponents() {
    let sys = DyadicSystem::new(3, 2).unwrap();
    let ps: Vec<_> = [1.5, 2.0, 3.0].map(|p| Exponent::new(p).unwrap()).to_vec();
    for space in [
        LatticeSpace::scalar(),
        LatticeSpace::ell(2, Exponent::INFINITY).unwrap(),
        LatticeSpace::euclidean(2).unwrap(),
    ] {
        let report = maximal_testing(&sys, &space, &ps, &quick(3));
        assert!(report.passed, "{:?}", report.checks.failures);
        assert!(report.body.endpoint.value >= report.body.scalar_endpoint * (1.0 - 1e-12));
        assert_eq!(report.body.rows.len(), 3);
    }
}

#[test]
fn gap_search_reports_ratios_only() {
    let cfg = GapConfig {
        seed: 9,
        dims: vec![1, 2],
        depths: vec![2, 3],
        branching: 2,
        iterations: 60,
    };
    let report = gap_search(&cfg).unwrap();
    assert!(report.passed, "{:?}", report.checks.failures);
    assert_eq!(report.body.cells.len(), 4);
    for cell in &report.body.cells {
        assert!(cell.norm_ratio >= 1.0 - 1e-12, "{}", cell.norm_ratio);
        assert!(cell.form_ratio > 0.0);
        assert_eq!(cell.norm_ceiling.is_some(), cell.dim == 1);
    }
    let json = report.to_json();
    assert!(!json.contains("verdict") && !json.contains("counterexample"));
}

#[test]
fn bellman_report_on_a_small_grid() {
    let p = Exponent::TWO;
    let cfg = BellmanConfig {
        p,
        grid: BellmanGrid::with_nodes(p, 24, 9),
        depth: 3,
        weights: 12,
        sequence_depth: 3,
        samples: 500,
        seed: 1,
    };
    let (report, table) = bellman_experiment(&cfg).unwrap();
    assert!(report.passed, "{:?}", report.checks.failures);
    assert_eq!(report.body.monotonicity_violations, vec![0, 0, 0]);
    assert_eq!(table.grid().nodes, 24);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_compare_check_holds(
        seed in 0u64..10_000,
        kernel in prop_oneof![Just(KernelMode::Scalar), Just(KernelMode::DenseNonneg), Just(KernelMode::Diagonal)],
        weights in prop_oneof![Just(WeightMode::Lognormal), Just(WeightMode::Adversarial)],
        p in prop_oneof![Just(1.5), Just(2.0), Just(3.0)],
        equal in any::<bool>(),
    ) {
        let cfg = InstanceConfig {
            kernel,
            weights,
            dim: 2,
            depth: 2,
            p: Exponent::new(p).unwrap(),
            q: Exponent::new(p).unwrap(),
            equal_weights: equal,
            ..Default::default()
        };
        let inst = random_instance(&cfg, &mut rng_for(seed, 0)).unwrap();
        let (report, _) = compare(&[inst], &quick(seed), &[]).unwrap();
        prop_assert!(report.passed, "{:?}", report.checks.failures);
    }
}
