use std::sync::OnceLock;

use dyadic_testing::bellman::{
    bellman_limit, bellman_maximal_bound, bellman_sequence, monotonicity_violations, verify_bellman_properties,
    BellmanGrid, BellmanTable, INTERPOLATION_TOLERANCE,
};
use dyadic_testing::generate::{random_function, random_weight, rng_for, WeightMode};
use dyadic_testing::{DyadicSystem, Exponent};

fn two() -> Exponent {
    Exponent::new(2.0).unwrap()
}

fn coarse() -> &'static BellmanTable {
    static TABLE: OnceLock<BellmanTable> = OnceLock::new();
    TABLE.get_or_init(|| bellman_limit(two(), BellmanGrid::with_nodes(two(), 24, 9)).unwrap())
}

fn fine() -> &'static BellmanTable {
    static TABLE: OnceLock<BellmanTable> = OnceLock::new();
    TABLE.get_or_init(|| bellman_limit(two(), BellmanGrid::with_nodes(two(), 32, 13)).unwrap())
}

/// `B(f, F, f)` at `p = 2`: `F z²` with `z = 1 + √(1 − f²/F)`.
fn exact_diagonal(f: f64, big_f: f64) -> f64 {
    let z = 1.0 + (1.0 - f * f / big_f).sqrt();
    big_f * z * z
}

#[test]
fn limit_properties_hold_at_two_resolutions() {
    for table in [coarse(), fine()] {
        assert!(table.stationary_at().is_some());
        let r = verify_bellman_properties(table, 2.0, 3000, 7);
        assert_eq!(r.lower_violations, 0);
        assert_eq!(r.invariance_violations, 0);
        assert!(r.upper_holds, "{}", r.upper_ratio);
        assert!(r.concavity_defect <= INTERPOLATION_TOLERANCE, "{:?}", r.worst_concavity);
        assert!(r.passed());
    }
}

#[test]
fn depth_tables_increase_towards_the_limit() {
    let grid = BellmanGrid::with_nodes(two(), 24, 9);
    let seq = bellman_sequence(two(), 6, grid).unwrap();
    for pair in seq.windows(2) {
        assert_eq!(monotonicity_violations(&pair[0], &pair[1]).unwrap(), 0);
    }
    let limit = coarse();
    for table in &seq {
        for (b, lim) in table.values().iter().zip(limit.values()) {
            assert!(*b <= lim * (1.0 + 1e-12), "{b} > {lim}");
        }
    }
    assert!(seq[6].value(0.1, 1.0, 0.0) > seq[1].value(0.1, 1.0, 0.0));
}

#[test]
fn constant_and_zero_data_are_exact() {
    for table in [coarse(), fine()] {
        for l in [0.0, 0.3, 1.0, 2.5] {
            assert_eq!(table.value(0.0, 0.0, l), l * l);
        }
        for f in [0.2, 1.0, 3.0] {
            let b = table.value(f, f * f, 0.0);
            assert!((b - f * f).abs() <= 1e-12 * f * f);
        }
    }
}

#[test]
fn limit_stays_below_the_exact_diagonal_values() {
    for table in [coarse(), fine()] {
        for (f, big_f) in [(0.1, 1.0), (0.5, 1.0), (0.9, 1.0), (1.0, 3.0), (0.2, 0.05)] {
            let exact = exact_diagonal(f, big_f);
            let b = table.value(f, big_f, f);
            assert!(b <= exact * (1.0 + 1e-9), "{f} {big_f}: {b} > {exact}");
            assert!(b >= 0.85 * exact, "{f} {big_f}: {b} vs {exact}");
        }
    }
    let (c, f) = (coarse().value(0.1, 1.0, 0.0), fine().value(0.1, 1.0, 0.0));
    assert!(f > c, "refining the grid should not lower the value: {c} {f}");
}

#[test]
fn maximal_bound_holds_on_random_weights() {
    let sys = DyadicSystem::new(4, 2).unwrap();
    let table = fine();
    for seed in 0..120 {
        let mut rng = rng_for(seed, 5);
        let mode = match seed % 3 {
            0 => WeightMode::Adversarial,
            1 => WeightMode::Lognormal,
            _ => WeightMode::Uniform,
        };
        let w = random_weight(&sys, mode, &mut rng);
        let f = random_function(sys.num_leaves(), 1, &mut rng);
        let r = bellman_maximal_bound(table, &sys, &w, &f).unwrap();
        assert!(r.holds, "{seed}: {} > {}", r.lhs, r.bound);
        assert!(r.worst_step_excess <= INTERPOLATION_TOLERANCE, "{seed}: {}", r.worst_step_excess);
        assert!(r.universal_ratio <= 4.0 * (1.0 + 1e-9));
    }
}

#[test]
fn export_has_the_documented_shape() {
    let table = coarse();
    let json = table.to_json();
    let n = table.grid().nodes;
    assert_eq!(json["p"], 2.0);
    assert!(json["depth"].is_null());
    for axis in ["f", "F", "L"] {
        assert_eq!(json["axes"][axis].as_array().unwrap().len(), n);
    }
    let values = json["values"].as_array().unwrap();
    assert_eq!(values.len(), n);
    assert_eq!(values[3].as_array().unwrap()[5].as_array().unwrap().len(), n);
    assert_eq!(values[3][5][7].as_f64().unwrap(), table.node(3, 5, 7));
}
