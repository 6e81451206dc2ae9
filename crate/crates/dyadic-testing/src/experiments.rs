//! Experiment drivers shared by the command line, the acceptance run and the web page.
//!
//! Every driver returns its rows together with the inequality checks it evaluated, so
//! that callers decide how to aggregate and report them.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::Serialize;
use thiserror::Error;

use crate::bellman::{
    bellman_limit, bellman_maximal_bound, bellman_sequence, monotonicity_violations, verify_bellman_properties,
    BellmanError, BellmanGrid, BellmanTable, PropertyReport, INTERPOLATION_TOLERANCE,
};
use crate::constants::{
    a_infinity, dual_pairing_testing, duality_gap, endpoint_direct, evaluate_witness, direct_testing, k1, k2,
    k_depolarisation, k_john_nirenberg, k_maximal_testing, k_ntv, lattice_maximal_norm, maximal_endpoint_testing,
    operator_norm, sawyer_constants, testing_constants, ConstantReport, ConstantsError, Method,
    TestingConstants, Witness,
};
use crate::dyadic::{CubeId, DyadicError, DyadicSystem, Weight};
use crate::generate::{
    random_coefficients, random_function, random_symmetric_blocks, random_weight, rng_for, WeightMode,
};
use crate::instance::{InstanceError, ProblemInstance};
use crate::lattice::{Exponent, LatticeError, LatticeSpace};
use crate::operators::{build_sequence_operator, OperatorError, PositiveKernel, SequenceKernelSpec};
use crate::optimize::{maximize, AscentOptions, Objective, PointwiseSphere};
use crate::report::{cell, opt_cell, Check, Report, Table, Tabular, EXACT_SLACK};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Dyadic(#[from] DyadicError),
    #[error(transparent)]
    Constants(#[from] ConstantsError),
    #[error(transparent)]
    Bellman(#[from] BellmanError),
}

/// Relative tolerance of the adjoint identity.
pub const DUALITY_TOLERANCE: f64 = 1e-10;

const DUALITY_STREAM: u64 = 0xd0a1;

/// `|∫ g T(fσ) dω − ∫ T*(gω) f dσ|` for seeded random `f, g`, relative to the sum of
/// absolute terms, as a check against [`DUALITY_TOLERANCE`].
pub fn duality_check(inst: &ProblemInstance, seed: u64, subject: &str) -> Check {
    let n = inst.system.num_leaves();
    let mut rng = rng_for(seed, DUALITY_STREAM);
    let f = random_function(n, inst.kernel.domain().dim(), &mut rng);
    let g = random_function(n, inst.kernel.range().dim(), &mut rng);
    Check::at_most_abs("duality identity", subject, duality_gap(inst, &f, &g), 0.0, DUALITY_TOLERANCE)
}

fn salted(opts: &AscentOptions, salt: u64) -> AscentOptions {
    AscentOptions {
        seed: opts.seed.wrapping_mul(0x9e37_79b9).wrapping_add(salt),
        ..*opts
    }
}

fn exponent(v: f64) -> Exponent {
    Exponent::new(v).expect("valid exponent")
}

// ---------------------------------------------------------------------------
// Constants of one instance

#[derive(Clone, Debug, Serialize)]
pub struct InstanceConstants {
    pub constants: TestingConstants,
    /// Closed-form `(𝔗, 𝔗*)` for scalar kernels.
    pub sawyer: Option<(f64, f64)>,
    /// `[σ]_{A∞(ω)}`.
    pub a_infinity_sigma: f64,
    /// `[ω]_{A∞(σ)}`.
    pub a_infinity_omega: f64,
    /// `‖M̄‖` on `L^p_C(σ)`.
    pub maximal_domain: ConstantReport,
    /// `‖M̄‖` on `L^{q′}_{D*}(ω)`.
    pub maximal_dual_range: ConstantReport,
}

impl InstanceConstants {
    fn reports(&self) -> [&ConstantReport; 10] {
        let c = &self.constants;
        [
            &c.norm,
            &c.direct,
            &c.dual,
            &c.pairing,
            &c.lt,
            &c.endpoint_direct,
            &c.endpoint_lt,
            &c.constant_function,
            &self.maximal_domain,
            &self.maximal_dual_range,
        ]
    }
}

/// All constants of `inst` with the ordering chain
/// `𝔅 ≤ 𝔗 ≤ 𝔗_t ≤ ‖T‖`, `𝔅 ≤ 𝔗* ≤ ‖T‖` and witness re-evaluation checks.
pub fn instance_constants(inst: &ProblemInstance, opts: &AscentOptions, subject: &str) -> (InstanceConstants, Vec<Check>) {
    let constants = testing_constants(inst, opts);
    let sys = &inst.system;
    let k = &inst.kernel;
    let maximal_domain = lattice_maximal_norm(k.domain(), sys, &inst.sigma, inst.p, opts, &[]);
    let maximal_dual_range = lattice_maximal_norm(&k.range().dual(), sys, &inst.omega, inst.q.conjugate(), opts, &[]);
    let out = InstanceConstants {
        sawyer: sawyer_constants(inst).ok(),
        a_infinity_sigma: a_infinity(&inst.sigma, &inst.omega, sys),
        a_infinity_omega: a_infinity(&inst.omega, &inst.sigma, sys),
        constants,
        maximal_domain,
        maximal_dual_range,
    };
    let c = &out.constants;
    let mut checks = Vec::new();
    for r in &out.reports()[..8] {
        if let Ok(v) = evaluate_witness(inst, r) {
            checks.push(Check::close("witness reproduces the value", format!("{subject} {}", r.name), v, r.value, EXACT_SLACK));
        }
    }
    let chain = [
        ("pairing at most direct testing", &c.pairing, &c.direct),
        ("pairing at most dual testing", &c.pairing, &c.dual),
        ("constant functions at most direct testing", &c.constant_function, &c.direct),
        ("direct testing at most L^t testing", &c.direct, &c.lt),
        ("L^t testing at most the norm", &c.lt, &c.norm),
        ("dual testing at most the norm", &c.dual, &c.norm),
    ];
    for (label, lhs, rhs) in chain {
        checks.push(Check::at_most(label, subject, lhs.value, rhs.value, EXACT_SLACK));
    }
    if let Some((direct, dual)) = out.sawyer {
        checks.push(Check::close("closed-form direct testing", subject, c.direct.value, direct, EXACT_SLACK));
        checks.push(Check::close("closed-form dual testing", subject, c.dual.value, dual, EXACT_SLACK));
    }
    if k.domain().is_scalar() {
        let pc = inst.p.conjugate().value();
        checks.push(Check::at_most("real maximal bound", subject, out.maximal_domain.value, pc, EXACT_SLACK));
    }
    if k.range().is_scalar() {
        checks.push(Check::at_most("real maximal bound", subject, out.maximal_dual_range.value, inst.q.value(), EXACT_SLACK));
    }
    (out, checks)
}

impl Tabular for InstanceConstants {
    fn table(&self) -> Table {
        let mut t = Table::new(&["constant", "value", "method"]);
        for r in self.reports() {
            let method = match r.method {
                Method::Exact => "exact",
                Method::LowerBound => "lower_bound",
            };
            t.push(vec![r.name.to_string(), cell(r.value), method.into()]);
        }
        for (name, v) in [
            ("a_infinity_sigma", self.a_infinity_sigma),
            ("a_infinity_omega", self.a_infinity_omega),
        ] {
            t.push(vec![name.into(), cell(v), "exact".into()]);
        }
        if let Some((d, s)) = self.sawyer {
            t.push(vec!["sawyer_direct".into(), cell(d), "exact".into()]);
            t.push(vec!["sawyer_dual".into(), cell(s), "exact".into()]);
        }
        t
    }
}

/// `constants` over several instances.
#[derive(Clone, Debug, Serialize)]
pub struct ConstantsBody {
    pub instances: Vec<InstanceConstants>,
}

pub fn constants_report(instances: &[ProblemInstance], opts: &AscentOptions) -> Report<ConstantsBody> {
    let mut checks = Vec::new();
    let mut rows = Vec::new();
    for (i, inst) in instances.iter().enumerate() {
        let subject = format!("instance {i}");
        let (row, c) = instance_constants(inst, opts, &subject);
        checks.extend(c);
        checks.push(duality_check(inst, opts.seed.wrapping_add(i as u64), &subject));
        rows.push(row);
    }
    Report::new("constants", opts.seed, &checks, Vec::new(), ConstantsBody { instances: rows })
}

impl Tabular for ConstantsBody {
    fn table(&self) -> Table {
        let mut t = Table::new(&["instance", "constant", "value", "method"]);
        for (i, inst) in self.instances.iter().enumerate() {
            for row in inst.table().rows {
                let mut r = vec![i.to_string()];
                r.extend(row);
                t.push(r);
            }
        }
        t
    }
}

// ---------------------------------------------------------------------------
// Two-sided bounds

/// The `A∞` bound on the unweighted copy `(σ, σ)` at one exponent `p = q`.
#[derive(Clone, Debug, Serialize)]
pub struct ExponentRow {
    pub p: f64,
    pub norm: f64,
    pub norm_exact: bool,
    pub pairing: f64,
    pub maximal_domain: f64,
    pub maximal_dual_range: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CompareRow {
    pub index: usize,
    pub norm: f64,
    pub norm_exact: bool,
    pub direct: f64,
    pub dual: f64,
    pub pairing: f64,
    pub a_infinity_sigma: f64,
    pub a_infinity_omega: f64,
    pub maximal_domain: f64,
    pub maximal_dual_range: f64,
    pub k1_bound: f64,
    pub k2_bound: f64,
    pub duality_gap: f64,
    pub exponents: Vec<ExponentRow>,
}

/// Compares `‖T‖` with `max(𝔗, 𝔗*)` from below and with the `K₁` and `K₂` bounds
/// from above; with `exponents` nonempty, also bounds the unweighted copy at each
/// `p` from a single pairing constant computed at `p = 2`.
pub fn compare_instance(
    inst: &ProblemInstance,
    opts: &AscentOptions,
    index: usize,
    exponents: &[Exponent],
) -> Result<(CompareRow, TestingConstants, Vec<Check>), ExperimentError> {
    let subject = format!("instance {index}");
    let (all, mut checks) = instance_constants(inst, opts, &subject);
    let c = &all.constants;
    let norm_exact = c.norm.method == Method::Exact;
    let lower = c.direct.value.max(c.dual.value);
    checks.push(if norm_exact {
        Check::at_most_abs("testing lower bound", &subject, lower, c.norm.value, 1e-9)
    } else {
        Check::at_most("testing lower bound", &subject, lower, c.norm.value, EXACT_SLACK)
    });
    let (mc, md) = (all.maximal_domain.value, all.maximal_dual_range.value);
    let k1_bound = k1(inst.p, inst.q).value * (mc * c.direct.value + md * c.dual.value);
    checks.push(Check::at_most("K1 upper bound", &subject, c.norm.value, k1_bound, 0.0));
    let a = all.a_infinity_sigma.powf(inst.p.reciprocal()) + all.a_infinity_omega.powf(inst.q.conjugate().reciprocal());
    let k2_bound = k2(inst.p, inst.q).value * mc * md * a * c.pairing.value;
    checks.push(Check::at_most("K2 upper bound", &subject, c.norm.value, k2_bound, 0.0));
    let duality = duality_check(inst, opts.seed.wrapping_add(index as u64), &subject);
    let gap = duality.lhs;
    checks.push(duality);

    let mut rows = Vec::new();
    if !exponents.is_empty() {
        let sys = &inst.system;
        let base = ProblemInstance::new(
            sys.clone(),
            inst.sigma.clone(),
            inst.sigma.clone(),
            inst.kernel.clone(),
            Exponent::TWO,
            Exponent::TWO,
            Exponent::INFINITY,
        )?;
        let pairing = dual_pairing_testing(&base, opts, &[]);
        let subject = format!("{subject} unweighted");
        for &p in exponents {
            let at_p = base.with_exponents(p, p, Exponent::INFINITY)?;
            let again = evaluate_witness(&at_p, &pairing)?;
            checks.push(Check::close("pairing constant independent of p", &subject, again, pairing.value, EXACT_SLACK));
            let norm = operator_norm(&at_p, opts, &[]);
            let mc = lattice_maximal_norm(base.kernel.domain(), sys, &base.sigma, p, opts, &[]).value;
            let md = lattice_maximal_norm(&base.kernel.range().dual(), sys, &base.sigma, p.conjugate(), opts, &[]).value;
            let bound = k2(p, p).value * mc * md * 2.0 * pairing.value;
            checks.push(Check::at_most("K2 bound from one pairing constant", format!("{subject} p={p}"), norm.value, bound, 0.0));
            rows.push(ExponentRow {
                p: p.value(),
                norm: norm.value,
                norm_exact: norm.method == Method::Exact,
                pairing: pairing.value,
                maximal_domain: mc,
                maximal_dual_range: md,
                bound,
            });
        }
    }
    let row = CompareRow {
        index,
        norm: c.norm.value,
        norm_exact,
        direct: c.direct.value,
        dual: c.dual.value,
        pairing: c.pairing.value,
        a_infinity_sigma: all.a_infinity_sigma,
        a_infinity_omega: all.a_infinity_omega,
        maximal_domain: mc,
        maximal_dual_range: md,
        k1_bound,
        k2_bound,
        duality_gap: gap,
        exponents: rows,
    };
    Ok((row, all.constants, checks))
}

#[derive(Clone, Debug, Serialize)]
pub struct CompareBody {
    pub rows: Vec<CompareRow>,
}

/// Runs [`compare_instance`] on every instance; also returns the testing constants.
pub fn compare(
    instances: &[ProblemInstance],
    opts: &AscentOptions,
    exponents: &[Exponent],
) -> Result<(Report<CompareBody>, Vec<TestingConstants>), ExperimentError> {
    let mut checks = Vec::new();
    let mut rows = Vec::new();
    let mut constants = Vec::new();
    let mut assembled = BTreeMap::new();
    for (i, inst) in instances.iter().enumerate() {
        let (row, c, ch) = compare_instance(inst, opts, i, exponents)?;
        rows.push(row);
        constants.push(c);
        checks.extend(ch);
        for (name, mut k) in [("K1", k1(inst.p, inst.q)), ("K2", k2(inst.p, inst.q))] {
            k.name = format!("{name}(p={}, q={})", inst.p, inst.q);
            assembled.entry(k.name.clone()).or_insert(k);
        }
    }
    for &p in exponents {
        let mut k = k2(p, p);
        k.name = format!("K2(p={p}, q={p})");
        assembled.entry(k.name.clone()).or_insert(k);
    }
    let report = Report::new("compare", opts.seed, &checks, assembled.into_values().collect(), CompareBody { rows });
    Ok((report, constants))
}

impl Tabular for CompareBody {
    fn table(&self) -> Table {
        let mut t = Table::new(&[
            "instance",
            "norm",
            "norm_exact",
            "direct",
            "dual",
            "pairing",
            "a_infinity_sigma",
            "a_infinity_omega",
            "maximal_domain",
            "maximal_dual_range",
            "k1_bound",
            "k2_bound",
            "duality_gap",
        ]);
        for r in &self.rows {
            t.push(vec![
                r.index.to_string(),
                cell(r.norm),
                r.norm_exact.to_string(),
                cell(r.direct),
                cell(r.dual),
                cell(r.pairing),
                cell(r.a_infinity_sigma),
                cell(r.a_infinity_omega),
                cell(r.maximal_domain),
                cell(r.maximal_dual_range),
                cell(r.k1_bound),
                cell(r.k2_bound),
                cell(r.duality_gap),
            ]);
        }
        t
    }
}

// ---------------------------------------------------------------------------
// Corollaries

/// `max_R μ(R)^{-1} Σ_{Q ⊆ R} c_Q μ(Q)` over active cubes of positive mass.
pub fn carleson_sum(sys: &DyadicSystem, mu: &Weight, coefficients: &BTreeMap<CubeId, f64>) -> f64 {
    sys.active_list_positions()
        .into_iter()
        .filter(|&r| mu.mass(r) > 0.0)
        .map(|r| {
            let s: f64 = sys
                .active_subcubes(r)
                .into_iter()
                .map(|q| coefficients.get(&sys.cube(q)).copied().unwrap_or(0.0) * mu.mass(q))
                .sum();
            s / mu.mass(r)
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, Serialize)]
pub struct NtvRow {
    pub index: usize,
    pub depth: usize,
    pub s: f64,
    pub p0: f64,
    /// `𝔠 = max_R μ(R)^{-1} Σ_{Q⊆R} β_Q μ(Q)`.
    pub carleson: f64,
    /// `𝔗^s_s`.
    pub testing: f64,
    /// `𝔗^{p₀}_s`.
    pub testing_p0: f64,
    pub pairing: f64,
    /// `‖T‖_{L^s → L^s_{ℓ^s}}`.
    pub norm: f64,
    pub constant: f64,
}

/// The embedding `f ↦ {β_Q^{1/s} ⟨f⟩_Q 1_Q}_Q` into `ℓ^s` as a kernel.
pub fn ntv_kernel(
    sys: &DyadicSystem,
    mu: &Weight,
    betas: &BTreeMap<CubeId, f64>,
    s: Exponent,
) -> Result<PositiveKernel, ExperimentError> {
    let mut spec = SequenceKernelSpec::default();
    for (&cube, &b) in betas {
        let m = mu.measure(sys, cube)?;
        if m > 0.0 && b > 0.0 {
            spec.betas.insert(cube, b.powf(s.reciprocal()) / m);
        }
    }
    Ok(build_sequence_operator(sys, &spec, s)?)
}

pub fn ntv_embedding(
    sys: &DyadicSystem,
    mu: &Weight,
    betas: &BTreeMap<CubeId, f64>,
    s: Exponent,
    p0: Exponent,
    opts: &AscentOptions,
    index: usize,
) -> Result<(NtvRow, Vec<Check>), ExperimentError> {
    let subject = format!("embedding {index}");
    let kernel = ntv_kernel(sys, mu, betas, s)?;
    let at_s = ProblemInstance::new(sys.clone(), mu.clone(), mu.clone(), kernel, s, s, Exponent::INFINITY)?;
    let at_p0 = at_s.with_exponents(p0, p0, Exponent::INFINITY)?;
    let carleson = carleson_sum(sys, mu, betas);
    let testing = direct_testing(&at_s, opts, &[]);
    let testing_p0 = direct_testing(&at_p0, opts, std::slice::from_ref(&testing.witness));
    let pairing = dual_pairing_testing(&at_s, opts, &[]);
    let norm = operator_norm(
        &at_s,
        opts,
        &[Witness {
            f: testing.witness.f.clone(),
            ..Default::default()
        }],
    );
    let constant = k_ntv(s).value;
    let root = carleson.powf(s.reciprocal());
    let checks = vec![
        Check::close("testing constant equals the Carleson root", &subject, testing.value, root, 1e-10),
        Check::at_most("pairing at most testing", &subject, pairing.value, testing.value, EXACT_SLACK),
        Check::at_most("pairing at most testing at p0", &subject, pairing.value, testing_p0.value, EXACT_SLACK),
        Check::at_most("testing at most the norm", &subject, testing.value, norm.value, EXACT_SLACK),
        Check::at_most("norm at most K_ntv pairing", &subject, norm.value, constant * pairing.value, 0.0),
        Check::at_most("Carleson root at most K_ntv testing at p0", &subject, root, constant * testing_p0.value, 0.0),
        duality_check(&at_s, opts.seed.wrapping_add(index as u64), &subject),
    ];
    let row = NtvRow {
        index,
        depth: sys.depth(),
        s: s.value(),
        p0: p0.value(),
        carleson,
        testing: testing.value,
        testing_p0: testing_p0.value,
        pairing: pairing.value,
        norm: norm.value,
        constant,
    };
    Ok((row, checks))
}

#[derive(Clone, Debug, Serialize)]
pub struct JohnNirenbergRow {
    pub index: usize,
    pub depth: usize,
    pub p: f64,
    /// `max_R μ(R)^{-1} ‖Σ_{Q⊆R} λ_Q 1_Q‖_1`, in closed form.
    pub closed_form: f64,
    pub endpoint: f64,
    pub pairing: f64,
    /// `max_R μ(R)^{-1/p} ‖Σ_{Q⊆R} λ_Q 1_Q‖_p`.
    pub testing: f64,
    pub constant: f64,
}

/// The kernel `λ_Q / μ(Q)`, so that `T(1_R μ) ⊇ Σ_{Q⊆R} λ_Q 1_Q`.
pub fn averaging_kernel(
    sys: &DyadicSystem,
    mu: &Weight,
    lambdas: &BTreeMap<CubeId, f64>,
) -> Result<PositiveKernel, ExperimentError> {
    let mut k = PositiveKernel::zero(LatticeSpace::scalar(), LatticeSpace::scalar());
    for (&cube, &l) in lambdas {
        let m = mu.measure(sys, cube)?;
        if m > 0.0 && l > 0.0 {
            k.insert(cube, vec![l / m])?;
        }
    }
    Ok(k)
}

pub fn john_nirenberg(
    sys: &DyadicSystem,
    mu: &Weight,
    lambdas: &BTreeMap<CubeId, f64>,
    p: Exponent,
    opts: &AscentOptions,
    index: usize,
) -> Result<(JohnNirenbergRow, Vec<Check>), ExperimentError> {
    let subject = format!("sum {index}");
    let kernel = averaging_kernel(sys, mu, lambdas)?;
    let inst = ProblemInstance::new(sys.clone(), mu.clone(), mu.clone(), kernel, p, p, Exponent::INFINITY)?;
    let closed_form = carleson_sum(sys, mu, lambdas);
    let pairing = dual_pairing_testing(&inst, opts, &[]);
    let endpoint = endpoint_direct(&inst, opts, std::slice::from_ref(&pairing.witness));
    let testing = direct_testing(&inst, opts, std::slice::from_ref(&pairing.witness));
    let constant = k_john_nirenberg(p).value;
    let checks = vec![
        Check::close("endpoint constant in closed form", &subject, endpoint.value, closed_form, 1e-10),
        Check::close("pairing equals the endpoint constant", &subject, pairing.value, closed_form, 1e-10),
        Check::at_most("L1 side at most Lp side", &subject, closed_form, testing.value, EXACT_SLACK),
        Check::at_most("Lp side at most K_JN L1 side", &subject, testing.value, constant * closed_form, 0.0),
        duality_check(&inst, opts.seed.wrapping_add(index as u64), &subject),
    ];
    let row = JohnNirenbergRow {
        index,
        depth: sys.depth(),
        p: p.value(),
        closed_form,
        endpoint: endpoint.value,
        pairing: pairing.value,
        testing: testing.value,
        constant,
    };
    Ok((row, checks))
}

/// `B(f, g) = Σ_Q ⟨g⟩_Qᵀ λ_Q ⟨f⟩_Q` for symmetric blocks on `ℓ²(n)`.
struct BilinearForm<'a> {
    sys: &'a DyadicSystem,
    mu: &'a Weight,
    dim: usize,
    blocks: Vec<(usize, &'a [f64])>,
}

impl<'a> BilinearForm<'a> {
    fn new(sys: &'a DyadicSystem, mu: &'a Weight, dim: usize, blocks: &'a BTreeMap<CubeId, Vec<f64>>) -> Result<Self, ExperimentError> {
        let mut out = Vec::new();
        for (&cube, b) in blocks {
            let pos = sys.position(cube)?;
            if mu.mass(pos) > 0.0 {
                out.push((pos, b.as_slice()));
            }
        }
        Ok(BilinearForm { sys, mu, dim, blocks: out })
    }

    fn averages(&self, x: &[f64]) -> Vec<f64> {
        let (sys, d) = (self.sys, self.dim);
        let mut ints = vec![0.0; sys.num_cubes() * d];
        let first = sys.leaf_position(0);
        for (leaf, m) in self.mu.leaf_masses().iter().enumerate() {
            for k in 0..d {
                ints[(first + leaf) * d + k] = m * x[leaf * d + k];
            }
        }
        for pos in (0..first).rev() {
            for c in sys.children(pos) {
                for k in 0..d {
                    ints[pos * d + k] += ints[c * d + k];
                }
            }
        }
        for (pos, chunk) in ints.chunks_mut(d).enumerate() {
            let m = self.mu.mass(pos);
            chunk.iter_mut().for_each(|v| *v = if m > 0.0 { *v / m } else { 0.0 });
        }
        ints
    }

    /// `B_R(f, g) / μ(R)` with blocks restricted to subcubes of `R`.
    fn local(&self, r: usize, f: &[f64], g: &[f64]) -> f64 {
        let (af, ag) = (self.averages(f), self.averages(g));
        let d = self.dim;
        let mut s = 0.0;
        for &(q, b) in &self.blocks {
            if !self.sys.is_subcube(q, r) {
                continue;
            }
            let (fq, gq) = (&af[q * d..(q + 1) * d], &ag[q * d..(q + 1) * d]);
            for i in 0..d {
                for j in 0..d {
                    s += gq[i] * b[i * d + j] * fq[j];
                }
            }
        }
        s / self.mu.mass(r)
    }

    /// The dense matrix of `B` after the isometry `f ↦ √μ f`.
    fn matrix(&self) -> DMatrix<f64> {
        let (sys, d) = (self.sys, self.dim);
        let n = sys.num_leaves() * d;
        let m = self.mu.leaf_masses();
        let mut a = DMatrix::zeros(n, n);
        for &(q, b) in &self.blocks {
            let mq = self.mu.mass(q);
            let leaves = sys.leaf_range(q);
            for x in leaves.clone() {
                for y in leaves.clone() {
                    let s = (m[x] * m[y]).sqrt() / (mq * mq);
                    for i in 0..d {
                        for j in 0..d {
                            a[(x * d + i, y * d + j)] += s * b[i * d + j];
                        }
                    }
                }
            }
        }
        a
    }
}

struct LocalQuadratic<'a> {
    form: &'a BilinearForm<'a>,
    r: usize,
}

impl Objective for LocalQuadratic<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        self.form.local(self.r, x, x)
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        let form = self.form;
        let (sys, d) = (form.sys, form.dim);
        let avg = form.averages(x);
        let mut down = vec![0.0; sys.num_cubes() * d];
        for &(q, b) in &form.blocks {
            if !sys.is_subcube(q, self.r) {
                continue;
            }
            let mq = form.mu.mass(q);
            for i in 0..d {
                let v: f64 = (0..d).map(|j| b[i * d + j] * avg[q * d + j]).sum();
                down[q * d + i] += 2.0 * v / mq;
            }
        }
        for pos in 1..sys.num_cubes() {
            let parent = sys.parent(pos).expect("non-root");
            for k in 0..d {
                down[pos * d + k] += down[parent * d + k];
            }
        }
        let first = sys.leaf_position(0);
        let scale = 1.0 / form.mu.mass(self.r);
        for (leaf, m) in form.mu.leaf_masses().iter().enumerate() {
            for k in 0..d {
                grad[leaf * d + k] = scale * m * down[(first + leaf) * d + k];
            }
        }
    }
}

fn support_of(sys: &DyadicSystem, pos: usize) -> Vec<bool> {
    let range = sys.leaf_range(pos);
    (0..sys.num_leaves()).map(|l| range.contains(&l)).collect()
}

/// `sup_R sup_{‖f‖_∞ ≤ 1} B_R(f, f)/μ(R)` by ascent on every cube, with warm starts.
fn quadratic_testing(form: &BilinearForm, opts: &AscentOptions, warm: &[(usize, Vec<f64>)]) -> (f64, usize, Vec<f64>) {
    let (sys, d) = (form.sys, form.dim);
    let space = LatticeSpace::euclidean(d).expect("positive dimension");
    let mut best = (0.0, 0, vec![0.0; sys.num_leaves() * d]);
    for r in sys.active_list_positions() {
        if form.mu.mass(r) <= 0.0 {
            continue;
        }
        let support = support_of(sys, r);
        let unit = space.unit_positive();
        let mut starts: Vec<Vec<f64>> = warm.iter().filter(|(p, _)| *p == r).map(|(_, x)| x.clone()).collect();
        starts.push(support.iter().flat_map(|&s| unit.iter().map(move |u| if s { *u } else { 0.0 })).collect());
        let objective = LocalQuadratic { form, r };
        let res = maximize(&objective, &PointwiseSphere::new(space.clone(), support), &starts, &salted(opts, r as u64));
        if res.value > best.0 {
            best = (res.value, r, res.point);
        }
    }
    best
}

fn sup_norm_on(sys: &DyadicSystem, x: &[f64], d: usize, r: usize) -> f64 {
    sys.leaf_range(r)
        .map(|l| x[l * d..(l + 1) * d].iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, Serialize)]
pub struct DepolarisationRow {
    pub index: usize,
    pub depth: usize,
    pub dim: usize,
    /// `sup_R sup_f B_R(f, f)/(‖f‖²_∞ μ(R))`.
    pub quadratic: f64,
    /// `sup_R sup_{f,g} B_R(f, g)/(‖f‖_∞ ‖g‖_∞ μ(R))`.
    pub bilinear: f64,
    /// `sup_f B(f, f)/‖f‖²_{L²}`.
    pub form_norm: f64,
    pub operator_norm: f64,
    pub constant: f64,
}

/// The matrix Carleson embedding for symmetric nonnegative blocks `λ_Q` on `ℓ²(n)`.
pub fn depolarisation(
    sys: &DyadicSystem,
    mu: &Weight,
    dim: usize,
    blocks: &BTreeMap<CubeId, Vec<f64>>,
    opts: &AscentOptions,
    index: usize,
) -> Result<(DepolarisationRow, Vec<Check>), ExperimentError> {
    let subject = format!("form {index}");
    let space = LatticeSpace::euclidean(dim)?;
    let mut kernel = PositiveKernel::zero(space.clone(), space);
    for (&cube, b) in blocks {
        let m = mu.measure(sys, cube)?;
        if m > 0.0 {
            kernel.insert(cube, b.iter().map(|v| v / (m * m)).collect())?;
        }
    }
    let inst = ProblemInstance::new(sys.clone(), mu.clone(), mu.clone(), kernel, Exponent::TWO, Exponent::TWO, Exponent::INFINITY)?;
    let form = BilinearForm::new(sys, mu, dim, blocks)?;

    let (q0, r0, f0) = quadratic_testing(&form, opts, &[]);
    let mut pairing = dual_pairing_testing(
        &inst,
        opts,
        &[Witness {
            cube: Some(sys.cube(r0)),
            f: Some(f0.clone()),
            g: Some(f0.clone()),
            e: None,
        }],
    );
    let mut checks = Vec::new();
    let mut quadratic = q0;
    if let (Some(cube), Some(f), Some(g)) = (pairing.witness.cube, &pairing.witness.f, &pairing.witness.g) {
        let r = sys.position(cube)?;
        let (fs, gs) = (sup_norm_on(sys, f, dim, r), sup_norm_on(sys, g, dim, r));
        let h: Vec<f64> = f.iter().zip(g).map(|(a, b)| a / fs + b / gs).collect();
        let lhs = form.local(r, f, g) / (fs * gs);
        let rhs = 0.5 * form.local(r, &h, &h);
        checks.push(Check::at_most("depolarisation", &subject, lhs, rhs, EXACT_SLACK));
        let hs = sup_norm_on(sys, &h, dim, r);
        let h: Vec<f64> = h.iter().map(|v| v / hs).collect();
        let (q1, r1, f1) = quadratic_testing(&form, opts, &[(r, h)]);
        if q1 > quadratic {
            quadratic = q1;
            let again = dual_pairing_testing(
                &inst,
                opts,
                &[
                    pairing.witness.clone(),
                    Witness {
                        cube: Some(sys.cube(r1)),
                        f: Some(f1.clone()),
                        g: Some(f1),
                        e: None,
                    },
                ],
            );
            if again.value > pairing.value {
                pairing = again;
            }
        }
    }
    let a = form.matrix();
    let form_norm = SymmetricEigen::new(a).eigenvalues.iter().fold(0.0f64, |m, v| m.max(*v));
    let norm = operator_norm(&inst, opts, &[]);
    let constant = k_depolarisation().value;
    checks.extend([
        Check::at_most("quadratic at most bilinear testing", &subject, quadratic, pairing.value, EXACT_SLACK),
        Check::at_most("bilinear at most twice quadratic testing", &subject, pairing.value, 2.0 * quadratic, EXACT_SLACK),
        Check::at_most("quadratic testing at most the form norm", &subject, quadratic, form_norm, EXACT_SLACK),
        Check::close("form norm equals the operator norm", &subject, form_norm, norm.value, EXACT_SLACK),
        Check::at_most("form norm at most K_dep quadratic testing", &subject, form_norm, constant * quadratic, 0.0),
        duality_check(&inst, opts.seed.wrapping_add(index as u64), &subject),
    ]);
    let row = DepolarisationRow {
        index,
        depth: sys.depth(),
        dim,
        quadratic,
        bilinear: pairing.value,
        form_norm,
        operator_norm: norm.value,
        constant,
    };
    Ok((row, checks))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CorollaryConfig {
    pub seed: u64,
    pub instances: usize,
    /// Depths cycle through `1..=depth`.
    pub depth: usize,
    pub branching: usize,
    /// Lattice exponent of the embedding.
    pub s: Exponent,
    /// Second exponent of the embedding chain; also the exponent of the sums.
    pub p: Exponent,
    /// Dimension of the matrix blocks.
    pub dim: usize,
    pub weights: WeightMode,
    pub density: f64,
}

impl Default for CorollaryConfig {
    fn default() -> Self {
        CorollaryConfig {
            seed: 0,
            instances: 10,
            depth: 3,
            branching: 2,
            s: Exponent::TWO,
            p: exponent(3.0),
            dim: 2,
            weights: WeightMode::Lognormal,
            density: 0.7,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CorollaryBody {
    pub embedding: Vec<NtvRow>,
    pub john_nirenberg: Vec<JohnNirenbergRow>,
    pub depolarisation: Vec<DepolarisationRow>,
}

fn corollary_setup(cfg: &CorollaryConfig, i: usize, stream: u64) -> Result<(DyadicSystem, Weight, ChaCha8Rng), ExperimentError> {
    let depth = 1 + i % cfg.depth.max(1);
    let sys = DyadicSystem::new(depth, cfg.branching)?;
    let mut rng = rng_for(cfg.seed.wrapping_add(i as u64), stream);
    let mu = random_weight(&sys, cfg.weights, &mut rng);
    Ok((sys, mu, rng))
}

pub fn corollaries(cfg: &CorollaryConfig, opts: &AscentOptions) -> Result<Report<CorollaryBody>, ExperimentError> {
    let mut checks = Vec::new();
    let mut body = CorollaryBody {
        embedding: Vec::new(),
        john_nirenberg: Vec::new(),
        depolarisation: Vec::new(),
    };
    for i in 0..cfg.instances {
        let (sys, mu, mut rng) = corollary_setup(cfg, i, 11)?;
        let betas = random_coefficients(&sys, cfg.density, &mut rng);
        let (row, c) = ntv_embedding(&sys, &mu, &betas, cfg.s, cfg.p, opts, i)?;
        body.embedding.push(row);
        checks.extend(c);

        let (sys, mu, mut rng) = corollary_setup(cfg, i, 12)?;
        let lambdas = random_coefficients(&sys, cfg.density, &mut rng);
        let (row, c) = john_nirenberg(&sys, &mu, &lambdas, cfg.p, opts, i)?;
        body.john_nirenberg.push(row);
        checks.extend(c);

        let (sys, mu, mut rng) = corollary_setup(cfg, i, 13)?;
        let blocks = random_symmetric_blocks(&sys, cfg.dim, cfg.density, &mut rng);
        let (row, c) = depolarisation(&sys, &mu, cfg.dim, &blocks, opts, i)?;
        body.depolarisation.push(row);
        checks.extend(c);
    }
    let assembled = vec![k_ntv(cfg.s), k_john_nirenberg(cfg.p), k_depolarisation()];
    Ok(Report::new("corollaries", cfg.seed, &checks, assembled, body))
}

impl Tabular for CorollaryBody {
    fn table(&self) -> Table {
        let mut t = Table::new(&["corollary", "index", "depth", "lhs", "rhs", "constant"]);
        for r in &self.embedding {
            t.push(vec!["embedding".into(), r.index.to_string(), r.depth.to_string(), cell(r.norm), cell(r.pairing), cell(r.constant)]);
        }
        for r in &self.john_nirenberg {
            t.push(vec!["john_nirenberg".into(), r.index.to_string(), r.depth.to_string(), cell(r.testing), cell(r.closed_form), cell(r.constant)]);
        }
        for r in &self.depolarisation {
            t.push(vec!["depolarisation".into(), r.index.to_string(), r.depth.to_string(), cell(r.form_norm), cell(r.quadratic), cell(r.constant)]);
        }
        t
    }
}

// ---------------------------------------------------------------------------
// Maximal operator against its endpoint testing constant

#[derive(Clone, Debug, Serialize)]
pub struct MaximalRow {
    pub p: f64,
    pub norm: f64,
    pub constant: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MaximalBody {
    pub depth: usize,
    pub branching: usize,
    pub space: LatticeSpace,
    pub endpoint: ConstantReport,
    pub scalar_endpoint: f64,
    pub rows: Vec<MaximalRow>,
}

/// `𝔐 ≤ ‖M̄‖_{L^p_E} ≤ K_mt(p, b) 𝔐` under uniform masses.
pub fn maximal_testing(sys: &DyadicSystem, space: &LatticeSpace, ps: &[Exponent], opts: &AscentOptions) -> Report<MaximalBody> {
    let w = Weight::uniform(sys);
    let endpoint = maximal_endpoint_testing(space, sys, &w, opts);
    let scalar_endpoint = maximal_endpoint_testing(&LatticeSpace::scalar(), sys, &w, opts).value;
    let warm: Vec<Vec<f64>> = endpoint.witness.f.iter().cloned().collect();
    let mut checks = Vec::new();
    let mut rows = Vec::new();
    let mut assembled = Vec::new();
    if !space.is_scalar() {
        checks.push(Check::at_most("scalar endpoint at most lattice endpoint", "endpoint", scalar_endpoint, endpoint.value, EXACT_SLACK));
    }
    for &p in ps {
        let subject = format!("p={p}");
        let norm = lattice_maximal_norm(space, sys, &w, p, opts, &warm).value;
        let mut k = k_maximal_testing(p, sys.branching());
        k.name = format!("K_mt(p={p}, b={})", sys.branching());
        let bound = k.value * endpoint.value;
        checks.push(Check::at_most("endpoint testing at most the norm", &subject, endpoint.value, norm, EXACT_SLACK));
        checks.push(Check::at_most("norm at most K_mt endpoint testing", &subject, norm, bound, 0.0));
        if space.is_scalar() {
            checks.push(Check::at_most("real maximal bound", &subject, norm, p.conjugate().value(), EXACT_SLACK));
        }
        rows.push(MaximalRow {
            p: p.value(),
            norm,
            constant: k.value,
            bound,
        });
        assembled.push(k);
    }
    let body = MaximalBody {
        depth: sys.depth(),
        branching: sys.branching(),
        space: space.clone(),
        endpoint,
        scalar_endpoint,
        rows,
    };
    Report::new("maximal-testing", opts.seed, &checks, assembled, body)
}

impl Tabular for MaximalBody {
    fn table(&self) -> Table {
        let mut t = Table::new(&["p", "endpoint", "norm", "constant", "bound"]);
        for r in &self.rows {
            t.push(vec![cell(r.p), cell(self.endpoint.value), cell(r.norm), cell(r.constant), cell(r.bound)]);
        }
        t
    }
}

// ---------------------------------------------------------------------------
// Bellman function

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BellmanConfig {
    pub p: Exponent,
    pub grid: BellmanGrid,
    /// Depth of the random trees of the maximal bound.
    pub depth: usize,
    pub weights: usize,
    /// Depth of the finite-depth sequence checked for monotonicity; 0 skips it.
    pub sequence_depth: usize,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MaximalBoundRow {
    pub index: usize,
    pub weights: WeightMode,
    pub lhs: f64,
    pub bound: f64,
    pub worst_step_excess: f64,
    pub extrapolated: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct BellmanBody {
    pub p: f64,
    pub grid: BellmanGrid,
    pub stationary_at: Option<usize>,
    pub properties: PropertyReport,
    /// Nodes where the depth-`k+1` table is below the depth-`k` one.
    pub monotonicity_violations: Vec<usize>,
    pub maximal_bound: Vec<MaximalBoundRow>,
}

pub fn bellman_experiment(cfg: &BellmanConfig) -> Result<(Report<BellmanBody>, BellmanTable), ExperimentError> {
    let table = bellman_limit(cfg.p, cfg.grid)?;
    let bound = cfg.p.conjugate().value();
    let properties = verify_bellman_properties(&table, bound, cfg.samples, cfg.seed);
    let mut checks = vec![
        Check::at_most_abs("lower bound at every node", "limit", properties.lower_violations as f64, 0.0, 0.0),
        Check::at_most_abs("invariance in L", "limit", properties.invariance_violations as f64, 0.0, 0.0),
        Check::new("upper bound", "limit", properties.upper_ratio, 1.0, properties.upper_holds),
        Check::at_most_abs("midpoint concavity", "limit", properties.concavity_defect, 0.0, INTERPOLATION_TOLERANCE),
    ];
    let mut monotone = Vec::new();
    if cfg.sequence_depth > 0 {
        let seq = bellman_sequence(cfg.p, cfg.sequence_depth, cfg.grid)?;
        for (k, pair) in seq.windows(2).enumerate() {
            let v = monotonicity_violations(&pair[0], &pair[1])?;
            checks.push(Check::at_most_abs("monotone in depth", format!("depth {k}"), v as f64, 0.0, 0.0));
            monotone.push(v);
        }
    }
    let sys = DyadicSystem::new(cfg.depth, 2)?;
    let mut rows = Vec::new();
    for i in 0..cfg.weights {
        let mut rng = rng_for(cfg.seed.wrapping_add(i as u64), 21);
        let mode = [WeightMode::Adversarial, WeightMode::Lognormal, WeightMode::Uniform][i % 3];
        let w = random_weight(&sys, mode, &mut rng);
        let f = random_function(sys.num_leaves(), 1, &mut rng);
        let r = bellman_maximal_bound(&table, &sys, &w, &f)?;
        let subject = format!("weight {i}");
        checks.push(Check::new("maximal bound", &subject, r.lhs, r.bound, r.holds));
        checks.push(Check::at_most_abs("telescoping steps", &subject, r.worst_step_excess, 0.0, INTERPOLATION_TOLERANCE));
        rows.push(MaximalBoundRow {
            index: i,
            weights: mode,
            lhs: r.lhs,
            bound: r.bound,
            worst_step_excess: r.worst_step_excess,
            extrapolated: r.extrapolated,
        });
    }
    let body = BellmanBody {
        p: cfg.p.value(),
        grid: cfg.grid,
        stationary_at: table.stationary_at(),
        properties,
        monotonicity_violations: monotone,
        maximal_bound: rows,
    };
    Ok((Report::new("bellman", cfg.seed, &checks, vec![crate::constants::k4()], body), table))
}

impl Tabular for BellmanBody {
    fn table(&self) -> Table {
        let mut t = Table::new(&["weight", "mode", "lhs", "bound", "worst_step_excess"]);
        for r in &self.maximal_bound {
            let mode = serde_json::to_value(r.weights).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
            t.push(vec![r.index.to_string(), mode, cell(r.lhs), cell(r.bound), cell(r.worst_step_excess)]);
        }
        t
    }
}

// ---------------------------------------------------------------------------
// Search for large norm-to-testing ratios

/// The four quantities of a symmetric nonnegative kernel on `ℓ²(n)` with uniform
/// masses, with `λ_Q/μ(Q)` as the operator kernel and `λ_Q/μ(Q)²` as the form kernel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GapRatios {
    /// `‖T‖_{L² → L²}`.
    pub norm: f64,
    /// `𝔖 = max_R sup_{|e|=1} μ(R)^{-1/2} ‖T_R(e 1_R)‖_{L²}`.
    pub constant_testing: f64,
    /// `sup_f Σ_Q ⟨f⟩ᵀ λ_Q ⟨f⟩ / ‖f‖²`.
    pub form_norm: f64,
    /// `max_R μ(R)^{-1} ‖Σ_{Q⊆R} λ_Q‖`.
    pub carleson_testing: f64,
}

impl GapRatios {
    pub fn norm_ratio(&self) -> Option<f64> {
        (self.constant_testing > 0.0).then(|| self.norm / self.constant_testing)
    }

    pub fn form_ratio(&self) -> Option<f64> {
        (self.carleson_testing > 0.0).then(|| self.form_norm / self.carleson_testing)
    }
}

fn largest_eigenvalue(m: DMatrix<f64>) -> f64 {
    m.symmetric_eigenvalues().iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// Blocks indexed by cube position on a full system; `None` is the zero block.
pub fn gap_ratios(sys: &DyadicSystem, dim: usize, blocks: &[Option<Vec<f64>>]) -> GapRatios {
    let d = dim;
    let n = sys.num_leaves();
    let m = 1.0 / n as f64;
    let mass = |pos: usize| sys.leaf_range(pos).len() as f64 * m;
    let mut op = DMatrix::zeros(n * d, n * d);
    let mut form = DMatrix::zeros(n * d, n * d);
    for (q, b) in blocks.iter().enumerate() {
        let Some(b) = b else { continue };
        let mq = mass(q);
        for x in sys.leaf_range(q) {
            for y in sys.leaf_range(q) {
                for i in 0..d {
                    for j in 0..d {
                        op[(x * d + i, y * d + j)] += b[i * d + j] * m / mq;
                        form[(x * d + i, y * d + j)] += b[i * d + j] * m / (mq * mq);
                    }
                }
            }
        }
    }
    let mut constant_testing = 0.0f64;
    let mut carleson_testing = 0.0f64;
    for r in 0..sys.num_cubes() {
        let mut sum = DMatrix::<f64>::zeros(d, d);
        let mut paths = vec![DMatrix::<f64>::zeros(d, d); sys.num_cubes()];
        let mut gram = DMatrix::<f64>::zeros(d, d);
        let leaf_start = sys.leaf_position(0);
        for q in r..sys.num_cubes() {
            if q != r && !sys.is_subcube(q, r) {
                continue;
            }
            let above = if q == r {
                DMatrix::zeros(d, d)
            } else {
                paths[sys.parent(q).expect("non-root")].clone()
            };
            let own = blocks[q].as_ref().map(|b| DMatrix::from_row_slice(d, d, b));
            paths[q] = match &own {
                Some(b) => above + b,
                None => above,
            };
            if let Some(b) = own {
                sum += b;
            }
            if q >= leaf_start {
                gram += m * paths[q].transpose() * &paths[q];
            }
        }
        let mr = mass(r);
        constant_testing = constant_testing.max((largest_eigenvalue(gram) / mr).sqrt());
        carleson_testing = carleson_testing.max(largest_eigenvalue(sum) / mr);
    }
    GapRatios {
        norm: largest_eigenvalue(op),
        constant_testing,
        form_norm: largest_eigenvalue(form),
        carleson_testing,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GapConfig {
    pub seed: u64,
    pub dims: Vec<usize>,
    pub depths: Vec<usize>,
    pub branching: usize,
    pub iterations: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct GapCell {
    pub dim: usize,
    pub depth: usize,
    pub norm_ratio: f64,
    pub norm_ratios: GapRatios,
    pub norm_kernel: BTreeMap<CubeId, Vec<f64>>,
    pub form_ratio: f64,
    pub form_ratios: GapRatios,
    pub form_kernel: BTreeMap<CubeId, Vec<f64>>,
    /// The assembled bounds on both ratios, where they apply (`n = 1`).
    pub norm_ceiling: Option<f64>,
    pub form_ceiling: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GapBody {
    pub cells: Vec<GapCell>,
}

fn perturb(blocks: &mut [Option<Vec<f64>>], d: usize, rng: &mut ChaCha8Rng) {
    let pos = rng.random_range(0..blocks.len());
    let lognormal = LogNormal::new(0.0, 1.0).expect("valid parameters");
    let jitter = Normal::<f64>::new(0.0, 0.5).expect("valid parameters");
    let block = blocks[pos].get_or_insert_with(|| vec![0.0; d * d]);
    if rng.random_bool(0.15) {
        let s = (2.0 * jitter.sample(rng)).exp();
        block.iter_mut().for_each(|v| *v *= s);
        return;
    }
    let (i, j) = (rng.random_range(0..d), rng.random_range(0..d));
    let old = block[i * d + j];
    let new = if rng.random_bool(0.2) {
        0.0
    } else if old == 0.0 {
        lognormal.sample(rng)
    } else {
        old * jitter.sample(rng).exp()
    };
    block[i * d + j] = new;
    block[j * d + i] = new;
    if block.iter().all(|v| *v == 0.0) {
        blocks[pos] = None;
    }
}

fn climb(
    sys: &DyadicSystem,
    d: usize,
    start: &[Option<Vec<f64>>],
    iterations: usize,
    rng: &mut ChaCha8Rng,
    ratio: impl Fn(&GapRatios) -> Option<f64>,
) -> (f64, GapRatios, Vec<Option<Vec<f64>>>) {
    let mut blocks = start.to_vec();
    let mut r = gap_ratios(sys, d, &blocks);
    let mut best = ratio(&r).unwrap_or(0.0);
    for _ in 0..iterations {
        let mut candidate = blocks.clone();
        perturb(&mut candidate, d, rng);
        let rc = gap_ratios(sys, d, &candidate);
        if let Some(v) = ratio(&rc).filter(|v| v.is_finite() && *v > best) {
            best = v;
            r = rc;
            blocks = candidate;
        }
    }
    (best, r, blocks)
}

fn named(sys: &DyadicSystem, blocks: &[Option<Vec<f64>>]) -> BTreeMap<CubeId, Vec<f64>> {
    blocks
        .iter()
        .enumerate()
        .filter_map(|(pos, b)| b.clone().map(|b| (sys.cube(pos), b)))
        .collect()
}

/// Hill climbing on both ratios in every `(n, N)` cell. Only observed ratios are
/// reported; for `n = 1` they are checked against the assembled scalar bounds.
pub fn gap_search(cfg: &GapConfig) -> Result<Report<GapBody>, ExperimentError> {
    let mut cells = Vec::new();
    let mut checks = Vec::new();
    let k_norm = 4.0 * k1(Exponent::TWO, Exponent::TWO).value;
    let k_form = k_depolarisation().value;
    for &d in &cfg.dims {
        for &depth in &cfg.depths {
            let sys = DyadicSystem::new(depth, cfg.branching)?;
            let mut rng = rng_for(cfg.seed, ((d as u64) << 16) | depth as u64);
            let start: Vec<Option<Vec<f64>>> = {
                let blocks = random_symmetric_blocks(&sys, d, 0.5, &mut rng);
                (0..sys.num_cubes()).map(|pos| blocks.get(&sys.cube(pos)).cloned()).collect()
            };
            let (norm_ratio, norm_ratios, norm_blocks) = climb(&sys, d, &start, cfg.iterations, &mut rng, GapRatios::norm_ratio);
            let (form_ratio, form_ratios, form_blocks) = climb(&sys, d, &start, cfg.iterations, &mut rng, GapRatios::form_ratio);
            let scalar = d == 1;
            if scalar {
                let subject = format!("depth {depth}");
                checks.push(Check::at_most("scalar norm ratio below 4 K1", &subject, norm_ratio, k_norm, 0.0));
                checks.push(Check::at_most("scalar form ratio below K_dep", &subject, form_ratio, k_form, 0.0));
            }
            cells.push(GapCell {
                dim: d,
                depth,
                norm_ratio,
                norm_ratios,
                norm_kernel: named(&sys, &norm_blocks),
                form_ratio,
                form_ratios,
                form_kernel: named(&sys, &form_blocks),
                norm_ceiling: scalar.then_some(k_norm),
                form_ceiling: scalar.then_some(k_form),
            });
        }
    }
    let mut kn = k1(Exponent::TWO, Exponent::TWO);
    kn.name = "K1(p=2, q=2)".into();
    Ok(Report::new("gap-search", cfg.seed, &checks, vec![kn, k_depolarisation()], GapBody { cells }))
}

impl Tabular for GapBody {
    fn table(&self) -> Table {
        let mut t = Table::new(&["dim", "depth", "norm_ratio", "form_ratio", "norm_ceiling", "form_ceiling"]);
        for c in &self.cells {
            t.push(vec![
                c.dim.to_string(),
                c.depth.to_string(),
                cell(c.norm_ratio),
                cell(c.form_ratio),
                opt_cell(c.norm_ceiling),
                opt_cell(c.form_ceiling),
            ]);
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> AscentOptions {
        AscentOptions {
            starts: 3,
            max_iterations: 300,
            ..AscentOptions::with_seed(1)
        }
    }

    #[test]
    fn embedding_with_unit_coefficients_has_depth_plus_one() {
        for depth in 1..=3 {
            let sys = DyadicSystem::new(depth, 2).unwrap();
            let mu = Weight::uniform(&sys);
            let betas = (0..sys.num_cubes()).map(|p| (sys.cube(p), 1.0)).collect();
            let s = exponent(3.0);
            let (row, checks) = ntv_embedding(&sys, &mu, &betas, s, Exponent::TWO, &quick(), 0).unwrap();
            assert!((row.carleson - (depth + 1) as f64).abs() < 1e-12);
            assert!((row.testing - ((depth + 1) as f64).powf(1.0 / 3.0)).abs() < 1e-10);
            assert!(checks.iter().all(|c| c.holds), "{checks:?}");
        }
    }

    #[test]
    fn single_cube_sums_have_equal_sides() {
        let sys = DyadicSystem::new(2, 2).unwrap();
        let mu = Weight::uniform(&sys);
        let lambdas = BTreeMap::from([(CubeId::new(1, 1), 0.7)]);
        let (row, checks) = john_nirenberg(&sys, &mu, &lambdas, exponent(3.0), &quick(), 0).unwrap();
        assert!((row.testing - row.closed_form).abs() < 1e-12);
        assert!((row.closed_form - 0.7).abs() < 1e-12);
        assert!(checks.iter().all(|c| c.holds), "{checks:?}");
    }

    #[test]
    fn depolarisation_chain_on_a_random_form() {
        let sys = DyadicSystem::new(2, 2).unwrap();
        let mut rng = rng_for(3, 0);
        let mu = random_weight(&sys, WeightMode::Lognormal, &mut rng);
        let blocks = random_symmetric_blocks(&sys, 2, 0.7, &mut rng);
        let (row, checks) = depolarisation(&sys, &mu, 2, &blocks, &quick(), 0).unwrap();
        assert!(checks.iter().all(|c| c.holds), "{checks:?}");
        assert!(row.quadratic <= row.bilinear * (1.0 + 1e-9));
    }

    #[test]
    fn root_identity_is_captured_by_constant_testing() {
        let sys = DyadicSystem::new(3, 2).unwrap();
        let mut blocks = vec![None; sys.num_cubes()];
        blocks[0] = Some(vec![1.0, 0.0, 0.0, 1.0]);
        let r = gap_ratios(&sys, 2, &blocks);
        assert!((r.norm_ratio().unwrap() - 1.0).abs() < 1e-12);
        assert!((r.form_ratio().unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(gap_ratios(&sys, 2, &vec![None; sys.num_cubes()]).norm_ratio(), None);
    }

    #[test]
    fn scalar_gap_ratios_agree_with_the_instance_constants() {
        let sys = DyadicSystem::new(3, 2).unwrap();
        let mu = Weight::uniform(&sys);
        let mut rng = rng_for(5, 0);
        let lambdas = random_coefficients(&sys, 0.6, &mut rng);
        let blocks: Vec<_> = (0..sys.num_cubes()).map(|p| lambdas.get(&sys.cube(p)).map(|v| vec![*v])).collect();
        let r = gap_ratios(&sys, 1, &blocks);
        let k = averaging_kernel(&sys, &mu, &lambdas).unwrap();
        let inst = ProblemInstance::new(sys.clone(), mu.clone(), mu, k, Exponent::TWO, Exponent::TWO, Exponent::INFINITY).unwrap();
        let (direct, _) = sawyer_constants(&inst).unwrap();
        let norm = operator_norm(&inst, &quick(), &[]).value;
        assert!((r.constant_testing - direct).abs() < 1e-10 * direct);
        assert!((r.norm - norm).abs() < 1e-10 * norm);
    }

    #[test]
    fn trivial_tree_maximal_constants_are_one() {
        let sys = DyadicSystem::new(0, 2).unwrap();
        let report = maximal_testing(&sys, &LatticeSpace::scalar(), &[Exponent::TWO], &quick());
        assert_eq!(report.body.endpoint.value, 1.0);
        assert!((report.body.rows[0].norm - 1.0).abs() < 1e-12);
        assert!(report.passed);
    }
}
