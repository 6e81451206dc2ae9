use dyadic_testing::constants::{a_infinity, testing_constants, ReductionCase};
use dyadic_testing::generate::{
    random_function, random_instance, random_weight, rng_for, InstanceConfig, KernelMode, WeightMode,
};
use dyadic_testing::optimize::AscentOptions;
use dyadic_testing::stopping::{
    build_family, build_ratio_family, carleson_embedding_check, decomposition_check, lsmp_check,
    parallel_decomposition, pythagoras_check, reduction_bound, split_pieces, verify_family,
    verify_ratio_family, StoppingInput, StoppingTag,
};
use dyadic_testing::{CubeFunction, DyadicSystem, Exponent, ProblemInstance};
use proptest::prelude::*;

fn unweighted(seed: u64, kernel: KernelMode, weights: WeightMode, dim: usize) -> ProblemInstance {
    let cfg = InstanceConfig {
        kernel,
        weights,
        dim,
        equal_weights: true,
        ..Default::default()
    };
    random_instance(&cfg, &mut rng_for(seed, 0)).unwrap()
}

fn function(inst: &ProblemInstance, seed: u64) -> CubeFunction {
    let d = inst.kernel.domain().dim();
    let values = random_function(inst.system.num_leaves(), d, &mut rng_for(seed, 1));
    CubeFunction::for_system(&inst.system, inst.kernel.domain().clone(), values).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_tag_satisfies_its_estimates(
        seed in 0u64..10_000,
        weights in prop_oneof![Just(WeightMode::Lognormal), Just(WeightMode::Adversarial), Just(WeightMode::Uniform)],
        kernel in prop_oneof![Just(KernelMode::Scalar), Just(KernelMode::DenseNonneg), Just(KernelMode::Diagonal)],
    ) {
        let inst = unweighted(seed, kernel, weights, 2);
        let f = function(&inst, seed);
        let input = StoppingInput { sys: &inst.system, w: &inst.sigma, f: &f, kernel: Some(&inst.kernel) };
        for tag in StoppingTag::FUNCTION_TAGS {
            let family = build_family(tag, &input).unwrap();
            let log = verify_family(&family, &input, Exponent::new(4.0).unwrap()).unwrap();
            prop_assert!(log.passed(), "{tag}: {:?}", log.violations);
        }
    }

    #[test]
    fn sparse_lemmas_hold(seed in 0u64..10_000, p in prop_oneof![Just(1.5), Just(2.0), Just(3.0)]) {
        let inst = unweighted(seed, KernelMode::DenseNonneg, WeightMode::Lognormal, 3);
        let f = function(&inst, seed);
        let p = Exponent::new(p).unwrap();
        let input = StoppingInput { sys: &inst.system, w: &inst.sigma, f: &f, kernel: None };
        let family = build_family(StoppingTag::Lemma31, &input).unwrap();
        let (sys, w) = (&inst.system, &inst.sigma);
        let c = carleson_embedding_check(&family, &f, w, sys, p).unwrap();
        prop_assert!(c.holds(), "{c:?}");
        let d = decomposition_check(&family, &f, w, sys, p).unwrap();
        prop_assert!(d.holds(), "{d:?}");
        let pieces = split_pieces(&family, &f, w, sys);
        let y = pythagoras_check(&family, &pieces, w, sys, p).unwrap();
        prop_assert!(y.holds(), "{y:?}");
    }
}

#[test]
fn parent_spread_bound_over_random_disjoint_families() {
    let sys = DyadicSystem::new(4, 2).unwrap();
    for seed in 0..60 {
        let mut rng = rng_for(seed, 2);
        let w = random_weight(&sys, WeightMode::Lognormal, &mut rng);
        let h = random_function(sys.num_leaves(), 1, &mut rng);
        let f = CubeFunction::scalar(h.clone());
        let input = StoppingInput { sys: &sys, w: &w, f: &f, kernel: None };
        let family = build_family(StoppingTag::Principal, &input).unwrap();
        let cubes = family.children_of(0).to_vec();
        for p in [1.5, 2.0, 3.0] {
            let check = lsmp_check(&cubes, &h, &w, &sys, Exponent::new(p).unwrap()).unwrap();
            assert!(check.holds(), "{check:?}");
        }
    }
}

#[test]
fn parallel_decomposition_chain_holds() {
    let cfgs = [
        InstanceConfig::default(),
        InstanceConfig {
            kernel: KernelMode::DenseNonneg,
            dim: 2,
            p: Exponent::new(1.5).unwrap(),
            q: Exponent::new(3.0).unwrap(),
            active_fraction: 0.7,
            ..Default::default()
        },
    ];
    let opts = AscentOptions {
        starts: 4,
        max_iterations: 300,
        ..AscentOptions::with_seed(2)
    };
    for cfg in &cfgs {
        for seed in 0..6 {
            let inst = random_instance(cfg, &mut rng_for(seed, 0)).unwrap();
            let n = inst.system.num_leaves();
            let f = random_function(n, inst.kernel.domain().dim(), &mut rng_for(seed, 1));
            let g = random_function(n, inst.kernel.range().dim(), &mut rng_for(seed, 2));
            let all = testing_constants(&inst, &opts);
            let report = parallel_decomposition(
                &inst,
                &f,
                &g,
                Some((all.direct.value, all.direct.method == dyadic_testing::constants::Method::Exact)),
                Some((all.dual.value, all.dual.method == dyadic_testing::constants::Method::Exact)),
            )
            .unwrap();
            assert!(report.passed(), "{:?}\n{:?}", report.log.violations, report.steps.iter().filter(|s| !s.holds).collect::<Vec<_>>());
            assert!((report.pairing - report.inside - report.outside).abs() <= 1e-10 * report.pairing.max(1.0));
        }
    }
}

#[test]
fn reduction_chain_holds_in_every_case() {
    for seed in 0..12 {
        for weights in [WeightMode::Lognormal, WeightMode::Uniform] {
            let inst = unweighted(seed, KernelMode::Scalar, weights, 1);
            let f = function(&inst, seed);
            for case in [ReductionCase::HardyLittlewood, ReductionCase::Doubling, ReductionCase::LtEndpoint] {
                let r = reduction_bound(&inst, f.values(), case, None).unwrap();
                assert!(r.passed(), "{case:?}: {:?} {:?}", r.log.violations, r.steps);
                assert!(r.norm <= r.bound * (1.0 + 1e-10));
            }
        }
    }
}

#[test]
fn ratio_family_is_sparse_and_controls_density() {
    let sys = DyadicSystem::new(4, 2).unwrap();
    for seed in 0..40 {
        let mut rng = rng_for(seed, 3);
        let mode = if seed % 2 == 0 { WeightMode::Adversarial } else { WeightMode::Lognormal };
        let sigma = random_weight(&sys, mode, &mut rng);
        let omega = random_weight(&sys, WeightMode::Lognormal, &mut rng);
        let family = build_ratio_family(&sigma, &omega, &sys, 0, None);
        let log = verify_ratio_family(&family, &sigma, &omega, &sys, None);
        assert!(log.passed(), "{:?}", log.violations);
        assert!(a_infinity(&sigma, &omega, &sys) >= 1.0 - 1e-12);
    }
}

#[test]
fn random_inputs_produce_nontrivial_families() {
    for tag in StoppingTag::FUNCTION_TAGS.into_iter().filter(|&t| t != StoppingTag::D) {
        let mut deep = 0;
        for seed in 0..40 {
            let weights = if seed % 2 == 0 { WeightMode::Adversarial } else { WeightMode::Lognormal };
            let inst = unweighted(seed, KernelMode::DenseNonneg, weights, 2);
            let f = function(&inst, seed);
            let input = StoppingInput { sys: &inst.system, w: &inst.sigma, f: &f, kernel: Some(&inst.kernel) };
            if build_family(tag, &input).unwrap().cubes.len() > 1 {
                deep += 1;
            }
        }
        assert!(deep >= 4, "{tag}: only {deep} of 40 families stop below the root");
    }
}

#[test]
fn kernel_condition_stops_below_a_heavy_deep_block() {
    use dyadic_testing::{CubeId, LatticeSpace, PositiveKernel, Weight};
    let sys = DyadicSystem::new(3, 2).unwrap();
    let w = Weight::uniform(&sys);
    let mut k = PositiveKernel::zero(LatticeSpace::scalar(), LatticeSpace::scalar());
    k.insert(CubeId::ROOT, vec![1.0]).unwrap();
    k.insert(CubeId::new(3, 5), vec![400.0]).unwrap();
    let f = CubeFunction::scalar(vec![1.0; 8]);
    let input = StoppingInput { sys: &sys, w: &w, f: &f, kernel: Some(&k) };
    let family = build_family(StoppingTag::D, &input).unwrap();
    let heavy = sys.position(CubeId::new(3, 5)).unwrap();
    assert_eq!(family.children_of(0), &[heavy]);
    let log = verify_family(&family, &input, Exponent::INFINITY).unwrap();
    assert!(log.passed(), "{:?}", log.violations);
}
