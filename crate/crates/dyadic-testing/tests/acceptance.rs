//! Acceptance run: one PASS/FAIL line per criterion, exit status 1 on any failure.

use std::process::ExitCode;
use std::time::Instant;

use dyadic_testing::bellman::{BellmanGrid, INTERPOLATION_TOLERANCE};
use dyadic_testing::constants::{a_infinity, carleson_characteristic, maximal_ratio, Method};
use dyadic_testing::experiments::{
    bellman_experiment, compare_instance, duality_check, ntv_embedding, BellmanConfig,
};
use dyadic_testing::generate::{
    random_coefficients, random_function, random_instance, random_weight, rng_for, InstanceConfig, KernelMode,
    WeightMode,
};
use dyadic_testing::optimize::AscentOptions;
use dyadic_testing::report::{Check, CheckSummary, EXACT_SLACK};
use dyadic_testing::stopping::{
    build_family, carleson_embedding_check, decomposition_check, lsmp_check, parallel_decomposition,
    pythagoras_check, split_pieces, verify_family, LemmaCheck, StoppingInput, StoppingTag,
};
use dyadic_testing::{CubeFunction, DyadicSystem, Exponent, LatticeSpace, ProblemInstance};
use serde::Serialize;

const SEED: u64 = 2024;

fn opts() -> AscentOptions {
    AscentOptions {
        starts: 8,
        max_iterations: 1000,
        ..AscentOptions::with_seed(SEED)
    }
}

fn exp(v: f64) -> Exponent {
    Exponent::new(v).unwrap()
}

const MODES: [WeightMode; 3] = [WeightMode::Lognormal, WeightMode::Adversarial, WeightMode::Uniform];

#[derive(Serialize)]
struct Criterion {
    number: usize,
    title: &'static str,
    cases: usize,
    required: usize,
    summary: CheckSummary,
    checks: Vec<Check>,
}

impl Criterion {
    fn new(number: usize, title: &'static str, cases: usize, required: usize, checks: &[Check]) -> Self {
        Criterion {
            number,
            title,
            cases,
            required,
            summary: CheckSummary::from_checks(checks),
            checks: checks.to_vec(),
        }
    }

    fn passed(&self) -> bool {
        self.cases >= self.required && self.summary.total > 0 && self.summary.passed()
    }
}

fn lemma(check: &LemmaCheck, subject: &str) -> Check {
    Check::new(&check.name, subject, check.lhs, check.rhs, check.holds())
}

/// Everything touched by the suite, with the duality checks collected on the side.
struct Suite {
    criteria: Vec<Criterion>,
    duality: Vec<Check>,
}

fn embedding_identity(suite: &mut Suite) {
    let mut checks = Vec::new();
    let cases = 50;
    for i in 0..cases {
        let depth = 1 + i % 5;
        let sys = DyadicSystem::new(depth, 2).unwrap();
        let mut rng = rng_for(SEED + i as u64, 1);
        let mu = random_weight(&sys, MODES[i % 3], &mut rng);
        let betas = random_coefficients(&sys, 0.7, &mut rng);
        let (s, p0) = [(2.0, 3.0), (3.0, 2.0), (1.5, 2.0)][i % 3];
        let (_, c) = ntv_embedding(&sys, &mu, &betas, exp(s), exp(p0), &opts(), i).unwrap();
        let (dual, rest): (Vec<_>, Vec<_>) = c.into_iter().partition(|c| c.label == "duality identity");
        suite.duality.extend(dual);
        checks.extend(rest);
    }
    suite
        .criteria
        .push(Criterion::new(1, "testing constant of the sequence embedding equals the Carleson root", cases, 50, &checks));
}

fn compare_instances() -> Vec<ProblemInstance> {
    let configs = [
        InstanceConfig::default(),
        InstanceConfig {
            equal_weights: true,
            ..Default::default()
        },
        InstanceConfig {
            dim: 2,
            kernel: KernelMode::DenseNonneg,
            ..Default::default()
        },
        InstanceConfig {
            dim: 2,
            kernel: KernelMode::Diagonal,
            weights: WeightMode::Adversarial,
            equal_weights: true,
            ..Default::default()
        },
    ];
    let mut out = Vec::new();
    for (c, cfg) in configs.iter().enumerate() {
        for i in 0..25 {
            let cfg = InstanceConfig {
                depth: 2 + i % 3,
                ..*cfg
            };
            out.push(random_instance(&cfg, &mut rng_for(SEED + i as u64, 10 + c as u64)).unwrap());
        }
    }
    out
}

fn theorem_bounds(suite: &mut Suite) {
    let instances = compare_instances();
    let (mut lower, mut upper1, mut upper2) = (Vec::new(), Vec::new(), Vec::new());
    let mut constants = Vec::new();
    let mut exact = 0;
    for (i, inst) in instances.iter().enumerate() {
        let exponents = if inst.sigma == inst.omega { &[Exponent::TWO, exp(3.0)][..] } else { &[] };
        let (row, c, checks) = compare_instance(inst, &opts(), i, exponents).unwrap();
        exact += usize::from(row.norm_exact);
        constants.push(c);
        for check in checks {
            match check.label.as_str() {
                "testing lower bound" => lower.push(check),
                "K1 upper bound" => upper1.push(check),
                "K2 upper bound" | "K2 bound from one pairing constant" | "pairing constant independent of p" => {
                    upper2.push(check)
                }
                "duality identity" => suite.duality.push(check),
                _ => {}
            }
        }
    }
    suite.criteria.push(Criterion::new(2, "max(T, T*) at most the exact norm", exact, 100, &lower));
    suite.criteria.push(Criterion::new(3, "norm at most the K1 bound", instances.len(), 100, &upper1));
    suite
        .criteria
        .push(Criterion::new(4, "norm at most the K2 bound with exact A-infinity characteristics", instances.len(), 100, &upper2));

    let mut chain = Vec::new();
    let mut cases = 0;
    for (i, (inst, c)) in instances.iter().zip(&constants).enumerate().filter(|(i, _)| i % 2 == 0) {
        let n = inst.system.num_leaves();
        let f = random_function(n, inst.kernel.domain().dim(), &mut rng_for(SEED + i as u64, 30));
        let g = random_function(n, inst.kernel.range().dim(), &mut rng_for(SEED + i as u64, 31));
        let d = parallel_decomposition(
            inst,
            &f,
            &g,
            Some((c.direct.value, c.direct.method == Method::Exact)),
            Some((c.dual.value, c.dual.method == Method::Exact)),
        )
        .unwrap();
        cases += 1;
        let subject = format!("instance {i}");
        for s in &d.steps {
            chain.push(Check::new(&s.label, &subject, s.lhs, s.rhs, s.holds));
        }
        for v in &d.log.violations {
            chain.push(Check::new(&v.check, &subject, v.lhs, v.rhs, false));
        }
        chain.push(Check::new("family estimates", &subject, d.log.checks as f64, 0.0, d.log.passed()));
        chain.push(Check::close("pairing splits into both halves", &subject, d.inside + d.outside, d.pairing, EXACT_SLACK));
    }
    suite.criteria.push(Criterion::new(7, "parallel stopping decomposition chain", cases, 50, &chain));
}

fn lemma_constants(suite: &mut Suite) {
    let mut checks = Vec::new();
    let cases = 100;
    let ps = [1.5, 2.0, 3.0];
    for i in 0..cases {
        let sys = DyadicSystem::new(4, 2).unwrap();
        let mut rng = rng_for(SEED + i as u64, 40);
        let w = random_weight(&sys, MODES[i % 3], &mut rng);
        let h = random_function(sys.num_leaves(), 1, &mut rng);
        let subject = format!("case {i}");
        for p in ps {
            let p = exp(p);
            let r = maximal_ratio(&LatticeSpace::scalar(), &sys, &w, p, &h);
            checks.push(Check::at_most("real maximal bound", &subject, r, p.conjugate().value(), EXACT_SLACK));
        }

        let cfg = InstanceConfig {
            kernel: KernelMode::DenseNonneg,
            weights: MODES[i % 3],
            dim: 3,
            equal_weights: true,
            ..Default::default()
        };
        let inst = random_instance(&cfg, &mut rng_for(SEED + i as u64, 41)).unwrap();
        suite.duality.push(duality_check(&inst, SEED + i as u64, &subject));
        let values = random_function(inst.system.num_leaves(), 3, &mut rng_for(SEED + i as u64, 42));
        let f = CubeFunction::for_system(&inst.system, inst.kernel.domain().clone(), values).unwrap();
        let (sys3, w3) = (&inst.system, &inst.sigma);
        let input = StoppingInput {
            sys: sys3,
            w: w3,
            f: &f,
            kernel: None,
        };
        let family = build_family(StoppingTag::Lemma31, &input).unwrap();
        let p = exp(ps[i % 3]);
        checks.push(lemma(&carleson_embedding_check(&family, &f, w3, sys3, p).unwrap(), &subject));
        let pieces = split_pieces(&family, &f, w3, sys3);
        checks.push(lemma(&pythagoras_check(&family, &pieces, w3, sys3, p).unwrap(), &subject));
        checks.push(lemma(&decomposition_check(&family, &f, w3, sys3, p).unwrap(), &subject));

        let principal = build_family(
            StoppingTag::Principal,
            &StoppingInput {
                sys: &sys,
                w: &w,
                f: &CubeFunction::scalar(h.clone()),
                kernel: None,
            },
        )
        .unwrap();
        let cubes = principal.children_of(0).to_vec();
        checks.push(lemma(&lsmp_check(&cubes, &h, &w, &sys, p).unwrap(), &subject));

        let small = DyadicSystem::new(3, 2).unwrap();
        let mut rng = rng_for(SEED + i as u64, 43);
        let sigma = random_weight(&small, MODES[i % 3], &mut rng);
        let omega = random_weight(&small, MODES[(i / 3) % 3], &mut rng);
        let a = a_infinity(&sigma, &omega, &small);
        let car = carleson_characteristic(&sigma, &omega, &small).unwrap();
        checks.push(Check::at_most("Carleson characteristic at most 8 A-infinity", &subject, car, 8.0 * a, EXACT_SLACK));
        checks.push(Check::at_most("A-infinity at most 2 Carleson characteristic", &subject, a, 2.0 * car, EXACT_SLACK));
    }
    suite.criteria.push(Criterion::new(5, "explicit lemma constants", cases, 100, &checks));
}

fn stopping_families(suite: &mut Suite) {
    let mut checks = Vec::new();
    let cases = 100;
    let kernels = [KernelMode::Scalar, KernelMode::DenseNonneg, KernelMode::Diagonal];
    for i in 0..cases {
        let cfg = InstanceConfig {
            depth: 2 + i % 4,
            kernel: kernels[i % 3],
            weights: MODES[(i / 3) % 3],
            dim: 2,
            equal_weights: true,
            ..Default::default()
        };
        let inst = random_instance(&cfg, &mut rng_for(SEED + i as u64, 50)).unwrap();
        let subject = format!("instance {i}");
        suite.duality.push(duality_check(&inst, SEED + i as u64, &subject));
        let d = inst.kernel.domain().dim();
        let values = random_function(inst.system.num_leaves(), d, &mut rng_for(SEED + i as u64, 51));
        let f = CubeFunction::for_system(&inst.system, inst.kernel.domain().clone(), values).unwrap();
        let input = StoppingInput {
            sys: &inst.system,
            w: &inst.sigma,
            f: &f,
            kernel: Some(&inst.kernel),
        };
        for tag in StoppingTag::FUNCTION_TAGS {
            let family = build_family(tag, &input).unwrap();
            let log = verify_family(&family, &input, exp(4.0)).unwrap();
            let subject = format!("{subject} {tag}");
            for v in &log.violations {
                checks.push(Check::new(&v.check, &subject, v.lhs, v.rhs, false));
            }
            checks.push(Check::new("family estimates", &subject, log.checks as f64, 0.0, log.passed()));
        }
    }
    suite.criteria.push(Criterion::new(6, "stopping families for every tag", cases, 100, &checks));
}

fn bellman(suite: &mut Suite) {
    let cfg = BellmanConfig {
        p: Exponent::TWO,
        grid: BellmanGrid::with_nodes(Exponent::TWO, 32, 13),
        depth: 4,
        weights: 120,
        sequence_depth: 4,
        samples: 3000,
        seed: SEED,
    };
    let (report, _) = bellman_experiment(&cfg).unwrap();
    let mut checks = Vec::new();
    let b = &report.body;
    checks.push(Check::at_most_abs("lower bound at every node", "limit", b.properties.lower_violations as f64, 0.0, 0.0));
    checks.push(Check::at_most_abs("invariance in L", "limit", b.properties.invariance_violations as f64, 0.0, 0.0));
    checks.push(Check::at_most_abs("midpoint concavity", "limit", b.properties.concavity_defect, 0.0, INTERPOLATION_TOLERANCE));
    for (k, v) in b.monotonicity_violations.iter().enumerate() {
        checks.push(Check::at_most_abs("monotone in depth", format!("depth {k}"), *v as f64, 0.0, 0.0));
    }
    for r in &b.maximal_bound {
        let subject = format!("weight {}", r.index);
        checks.push(Check::at_most("maximal bound", &subject, r.lhs, r.bound, INTERPOLATION_TOLERANCE));
        checks.push(Check::at_most_abs("telescoping steps", &subject, r.worst_step_excess, 0.0, INTERPOLATION_TOLERANCE));
    }
    let cases = b.maximal_bound.len();
    suite.criteria.push(Criterion::new(8, "Bellman function properties and maximal bound", cases, 100, &checks));
}

fn run() -> Suite {
    let mut suite = Suite {
        criteria: Vec::new(),
        duality: Vec::new(),
    };
    let stages: [(&str, fn(&mut Suite)); 5] = [
        ("embedding", embedding_identity),
        ("theorems", theorem_bounds),
        ("lemmas", lemma_constants),
        ("stopping", stopping_families),
        ("bellman", bellman),
    ];
    for (name, stage) in stages {
        let start = Instant::now();
        stage(&mut suite);
        eprintln!("  {name}: {:.1}s", start.elapsed().as_secs_f64());
    }
    let touched = suite.duality.len();
    let duality = Criterion::new(9, "adjoint identity on every touched instance", touched, 1, &suite.duality);
    suite.criteria.push(duality);
    suite.criteria.sort_by_key(|c| c.number);
    suite
}

fn line(c: &Criterion) -> String {
    let status = if c.passed() { "PASS" } else { "FAIL" };
    let worst = c
        .summary
        .failures
        .first()
        .map(|f| format!("; first failure: {} [{}] {} vs {}", f.label, f.subject, f.lhs, f.rhs))
        .unwrap_or_default();
    format!(
        "{status} {:>2} {}: {} cases, {} checks, {} failed{worst}",
        c.number, c.title, c.cases, c.summary.total, c.summary.failed
    )
}

fn main() -> ExitCode {
    let first = run();
    let second = run();
    let bytes = |s: &Suite| serde_json::to_string(&s.criteria).expect("criteria serialize");
    let (a, b) = (bytes(&first), bytes(&second));
    let mut all = true;
    for c in &first.criteria {
        all &= c.passed();
        println!("{}", line(c));
    }
    let same = a == b;
    all &= same;
    println!(
        "{} 10 identical reports from two runs with seed {SEED}: {} bytes, {}",
        if same { "PASS" } else { "FAIL" },
        a.len(),
        if same { "identical" } else { "different" }
    );
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
