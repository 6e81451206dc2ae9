use dyadic_testing::constants::{
    evaluate_witness, operator_norm, sawyer_constants, testing_constants, Method,
};
use dyadic_testing::generate::{random_instance, rng_for, InstanceConfig, KernelMode, WeightMode};
use dyadic_testing::optimize::AscentOptions;
use dyadic_testing::{CubeFilter, Exponent, LatticeSpace, PositiveKernel, ProblemInstance};

fn quick() -> AscentOptions {
    AscentOptions {
        starts: 4,
        max_iterations: 400,
        ..AscentOptions::with_seed(11)
    }
}

fn configs() -> Vec<InstanceConfig> {
    vec![
        InstanceConfig::default(),
        InstanceConfig {
            kernel: KernelMode::DenseNonneg,
            dim: 2,
            depth: 2,
            ..Default::default()
        },
        InstanceConfig {
            kernel: KernelMode::Diagonal,
            dim: 3,
            depth: 2,
            weights: WeightMode::Adversarial,
            active_fraction: 0.7,
            ..Default::default()
        },
    ]
}

#[test]
fn testing_constants_sit_below_the_exact_norm() {
    for (c, cfg) in configs().iter().enumerate() {
        for i in 0..8 {
            let inst = random_instance(cfg, &mut rng_for(100 + c as u64, i)).unwrap();
            let all = testing_constants(&inst, &quick());
            assert_eq!(all.norm.method, Method::Exact);
            let norm = all.norm.value;
            for r in [&all.direct, &all.dual, &all.constant_function] {
                assert!(r.value <= norm + 1e-9, "{}: {} > {}", r.name, r.value, norm);
            }
            assert!(all.pairing.value <= all.direct.value + 1e-9);
            assert!(all.pairing.value <= all.dual.value + 1e-9);
            assert!(all.endpoint_direct.value <= all.direct.value + 1e-9);
            assert!(all.constant_function.value <= all.direct.value + 1e-9);
        }
    }
}

#[test]
fn witnesses_reproduce_reported_values() {
    let cfg = InstanceConfig {
        kernel: KernelMode::DenseNonneg,
        dim: 2,
        depth: 2,
        s: Exponent::new(3.0).unwrap(),
        p: Exponent::new(1.5).unwrap(),
        q: Exponent::new(2.5).unwrap(),
        t: Exponent::new(4.0).unwrap(),
        ..Default::default()
    };
    for i in 0..4 {
        let inst = random_instance(&cfg, &mut rng_for(5, i)).unwrap();
        let all = testing_constants(&inst, &quick());
        for r in [
            &all.norm,
            &all.direct,
            &all.dual,
            &all.pairing,
            &all.lt,
            &all.endpoint_direct,
            &all.endpoint_lt,
            &all.constant_function,
        ] {
            let again = evaluate_witness(&inst, r).unwrap();
            assert!((again - r.value).abs() <= 1e-9 * r.value.max(1.0), "{}", r.name);
        }
        assert!(all.pairing.value <= all.direct.value + 1e-9);
        assert!(all.direct.value <= all.lt.value + 1e-9);
        assert!(all.lt.value <= all.norm.value + 1e-9);
        assert!(all.dual.value <= all.norm.value + 1e-9);
    }
}

#[test]
fn scalar_exact_paths_agree_with_sawyer_closed_form() {
    for i in 0..10 {
        let inst = random_instance(&InstanceConfig::default(), &mut rng_for(9, i)).unwrap();
        let all = testing_constants(&inst, &quick());
        let (direct, dual) = sawyer_constants(&inst).unwrap();
        assert!((all.direct.value - direct).abs() <= 1e-12 * direct.max(1.0));
        assert!((all.dual.value - dual).abs() <= 1e-12 * dual.max(1.0));
    }
}

/// A weighted ℓ² norm is Hilbertian, so the true norm is the top singular
/// value after rescaling by the lattice weights, while the optimizer path is used.
#[test]
fn ascent_matches_rescaled_singular_value() {
    let cfg = InstanceConfig {
        kernel: KernelMode::DenseNonneg,
        dim: 2,
        depth: 2,
        ..Default::default()
    };
    let a = [1.0, 3.0];
    let b = [2.0, 0.5];
    for i in 0..6 {
        let base = random_instance(&cfg, &mut rng_for(21, i)).unwrap();
        let domain = LatticeSpace::weighted(2, Exponent::TWO, a.to_vec()).unwrap();
        let range = LatticeSpace::weighted(2, Exponent::TWO, b.to_vec()).unwrap();
        let mut k = PositiveKernel::zero(domain, range);
        for (cube, block) in base.kernel.blocks() {
            k.insert(*cube, block.entries().to_vec()).unwrap();
        }
        let inst = base.with_kernel(k);
        let mut m = base
            .kernel
            .assemble_linear_map(&base.system, &base.sigma, &base.omega, CubeFilter::All)
            .unwrap();
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                m[(r, c)] *= b[r % 2].sqrt() / a[c % 2].sqrt();
            }
        }
        let exact = dyadic_testing::operators::top_singular_value(&m);
        let found = operator_norm(&inst, &AscentOptions::with_seed(3), &[]);
        assert_eq!(found.method, Method::LowerBound);
        assert!(found.value <= exact * (1.0 + 1e-9));
        assert!(found.value >= exact * (1.0 - 1e-6), "{} vs {}", found.value, exact);
    }
}

#[test]
fn zero_kernel_everything_vanishes() {
    let inst = random_instance(&InstanceConfig::default(), &mut rng_for(1, 0)).unwrap();
    let zero = PositiveKernel::zero(LatticeSpace::scalar(), LatticeSpace::scalar());
    let inst: ProblemInstance = inst.with_kernel(zero);
    let all = testing_constants(&inst, &quick());
    assert_eq!(all.norm.value, 0.0);
    assert_eq!(all.direct.value, 0.0);
    assert_eq!(all.dual.value, 0.0);
    assert_eq!(all.pairing.value, 0.0);
}
