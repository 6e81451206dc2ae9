//! Operator norms, testing constants, maximal function norms and the A∞/Carleson
//! characteristics, each reported with a witness that reproduces its value.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dyadic::{weighted_lp, CubeId, DyadicSystem, Weight};
use crate::instance::ProblemInstance;
use crate::lattice::{Exponent, LatticeSpace};
use crate::operators::{top_right_singular_vector, CubeFilter, OperatorError, PositiveKernel};
use crate::optimize::{maximize, AscentOptions, LtSphere, Objective, PointwiseSphere, UnitSphere};

#[derive(Debug, Error)]
pub enum ConstantsError {
    #[error("this constant needs scalar lattices on both sides")]
    NotScalar,
    #[error("witness is missing its {0}")]
    IncompleteWitness(&'static str),
    #[error("witness has {got} values, expected {expected}")]
    WitnessLength { expected: usize, got: usize },
    #[error("{0} is not a reported testing constant")]
    NotEvaluable(ConstantKind),
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantKind {
    OperatorNorm,
    AdjointNorm,
    DirectTesting,
    DualTesting,
    DualPairing,
    LtTesting,
    EndpointDirect,
    EndpointLt,
    ConstantFunction,
    MaximalNorm,
    MaximalEndpoint,
}

impl ConstantKind {
    pub fn name(self) -> &'static str {
        match self {
            ConstantKind::OperatorNorm => "operator_norm",
            ConstantKind::AdjointNorm => "adjoint_norm",
            ConstantKind::DirectTesting => "direct_testing",
            ConstantKind::DualTesting => "dual_testing",
            ConstantKind::DualPairing => "dual_pairing",
            ConstantKind::LtTesting => "lt_testing",
            ConstantKind::EndpointDirect => "endpoint_direct",
            ConstantKind::EndpointLt => "endpoint_lt",
            ConstantKind::ConstantFunction => "constant_function",
            ConstantKind::MaximalNorm => "maximal_norm",
            ConstantKind::MaximalEndpoint => "maximal_endpoint",
        }
    }

    fn salt(self) -> u64 {
        self as u64 + 1
    }
}

impl std::fmt::Display for ConstantKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    LowerBound,
}

/// The data at which a constant's supremum was (approximately) attained.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cube: Option<CubeId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantReport {
    pub name: ConstantKind,
    pub value: f64,
    pub method: Method,
    pub witness: Witness,
    pub seed: u64,
    pub starts: usize,
    pub iterations: usize,
}

impl ConstantReport {
    fn zero(name: ConstantKind, opts: &AscentOptions) -> Self {
        ConstantReport {
            name,
            value: 0.0,
            method: Method::Exact,
            witness: Witness::default(),
            seed: opts.seed,
            starts: 0,
            iterations: 0,
        }
    }
}

fn seeded(opts: &AscentOptions, kind: ConstantKind, pos: usize) -> AscentOptions {
    AscentOptions {
        seed: opts
            .seed
            .wrapping_mul(1_000_003)
            .wrapping_add(kind.salt() << 32)
            .wrapping_add(pos as u64),
        ..*opts
    }
}

/// `x ↦ scale · ‖K x‖_{L^r_out}` for the kernel applied forwards or transposed.
struct LinearMapObjective<'a> {
    sys: &'a DyadicSystem,
    kernel: &'a PositiveKernel,
    in_masses: &'a [f64],
    out_masses: &'a [f64],
    out_space: LatticeSpace,
    exponent: Exponent,
    transpose: bool,
    filter: CubeFilter,
    scale: f64,
}

impl LinearMapObjective<'_> {
    fn out_dim(&self) -> usize {
        self.out_space.dim()
    }

    fn image(&self, x: &[f64]) -> Vec<f64> {
        self.kernel
            .apply_raw(self.sys, x, self.in_masses, self.transpose, self.filter)
    }
}

fn output_norm(u: &[f64], space: &LatticeSpace, masses: &[f64], r: Exponent) -> f64 {
    let norms: Vec<f64> = u.chunks(space.dim()).map(|c| space.norm(c)).collect();
    weighted_lp(&norms, masses, r)
}

/// The outer derivative of `u ↦ ‖u‖_{L^r_E(m)}` at `u`.
fn output_norm_gradient(u: &[f64], space: &LatticeSpace, masses: &[f64], r: Exponent) -> Vec<f64> {
    let d = space.dim();
    let total = output_norm(u, space, masses, r);
    let mut du = vec![0.0; u.len()];
    if total == 0.0 {
        return du;
    }
    for ((uc, dc), m) in u.chunks(d).zip(du.chunks_mut(d)).zip(masses) {
        if *m == 0.0 {
            continue;
        }
        let local = space.norm(uc);
        if local == 0.0 {
            continue;
        }
        let factor = m * (local / total).powf(r.value() - 1.0);
        space.norm_gradient(uc, dc);
        dc.iter_mut().for_each(|v| *v *= factor);
    }
    du
}

impl Objective for LinearMapObjective<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        let u = self.image(x);
        self.scale * output_norm(&u, &self.out_space, self.out_masses, self.exponent)
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        let u = self.image(x);
        debug_assert_eq!(u.len() % self.out_dim(), 0);
        let du = output_norm_gradient(&u, &self.out_space, self.out_masses, self.exponent);
        let ones = vec![1.0; self.in_masses.len()];
        let back = self
            .kernel
            .apply_raw(self.sys, &du, &ones, !self.transpose, self.filter);
        let din = x.len() / self.in_masses.len();
        for (y, (gc, bc)) in grad.chunks_mut(din).zip(back.chunks(din)).enumerate() {
            let m = self.in_masses[y];
            gc.iter_mut()
                .zip(bc)
                .for_each(|(g, b)| *g = self.scale * m * b);
        }
    }
}

/// A single vector spread over the leaves of a cube.
struct Expanded<'a> {
    inner: LinearMapObjective<'a>,
    leaves: std::ops::Range<usize>,
    num_leaves: usize,
}

impl Expanded<'_> {
    fn expand(&self, e: &[f64]) -> Vec<f64> {
        let d = e.len();
        let mut x = vec![0.0; self.num_leaves * d];
        for leaf in self.leaves.clone() {
            x[leaf * d..(leaf + 1) * d].copy_from_slice(e);
        }
        x
    }
}

impl Objective for Expanded<'_> {
    fn value(&self, e: &[f64]) -> f64 {
        self.inner.value(&self.expand(e))
    }

    fn gradient(&self, e: &[f64], grad: &mut [f64]) {
        let x = self.expand(e);
        let mut full = vec![0.0; x.len()];
        self.inner.gradient(&x, &mut full);
        let d = e.len();
        grad.iter_mut().for_each(|g| *g = 0.0);
        for leaf in self.leaves.clone() {
            for k in 0..d {
                grad[k] += full[leaf * d + k];
            }
        }
    }
}

fn support_of(sys: &DyadicSystem, pos: usize) -> Vec<bool> {
    let range = sys.leaf_range(pos);
    (0..sys.num_leaves()).map(|l| range.contains(&l)).collect()
}

fn restricted_masses(sys: &DyadicSystem, w: &Weight, pos: usize) -> Vec<f64> {
    let range = sys.leaf_range(pos);
    w.leaf_masses()
        .iter()
        .enumerate()
        .map(|(l, m)| if range.contains(&l) { *m } else { 0.0 })
        .collect()
}

fn top_on(sys: &DyadicSystem, space: &LatticeSpace, top: &[f64], pos: usize) -> Vec<f64> {
    let d = space.dim();
    let mut x = vec![0.0; sys.num_leaves() * d];
    for leaf in sys.leaf_range(pos) {
        x[leaf * d..(leaf + 1) * d].copy_from_slice(top);
    }
    x
}

fn pointwise_sup(x: &[f64], space: &LatticeSpace, masses: &[f64], support: &[bool]) -> f64 {
    x.chunks(space.dim())
        .zip(masses)
        .zip(support)
        .filter(|((_, m), s)| **m > 0.0 && **s)
        .fold(0.0, |acc, ((c, _), _)| acc.max(space.norm(c)))
}

fn sup_on_cube(sys: &DyadicSystem, x: &[f64], space: &LatticeSpace, w: &Weight, pos: usize) -> f64 {
    pointwise_sup(x, space, w.leaf_masses(), &support_of(sys, pos))
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn check_len(x: &[f64], expected: usize) -> Result<(), ConstantsError> {
    if x.len() != expected {
        return Err(ConstantsError::WitnessLength {
            expected,
            got: x.len(),
        });
    }
    Ok(())
}

/// Ratio evaluations shared by the optimizers and [`evaluate_witness`].
pub mod ratios {
    use super::*;

    /// `‖T(fσ)‖_{L^q_D(ω)} / ‖f‖_{L^p_C(σ)}`.
    pub fn operator(inst: &ProblemInstance, f: &[f64]) -> f64 {
        let k = &inst.kernel;
        let u = k.apply_raw(&inst.system, f, inst.sigma.leaf_masses(), false, CubeFilter::All);
        let num = output_norm(&u, k.range(), inst.omega.leaf_masses(), inst.q);
        let den = output_norm(f, k.domain(), inst.sigma.leaf_masses(), inst.p);
        ratio(num, den)
    }

    /// `‖T*(gω)‖_{L^{p′}_{C*}(σ)} / ‖g‖_{L^{q′}_{D*}(ω)}`.
    pub fn adjoint(inst: &ProblemInstance, g: &[f64]) -> f64 {
        let k = &inst.kernel;
        let u = k.apply_raw(&inst.system, g, inst.omega.leaf_masses(), true, CubeFilter::All);
        let num = output_norm(
            &u,
            &k.domain().dual(),
            inst.sigma.leaf_masses(),
            inst.p.conjugate(),
        );
        let den = output_norm(g, &k.range().dual(), inst.omega.leaf_masses(), inst.q.conjugate());
        ratio(num, den)
    }

    /// `‖T_R(fσ)‖_{L^r_D(ω)}` for `f` restricted to `R`.
    fn localized_norm(inst: &ProblemInstance, pos: usize, f: &[f64], r: Exponent) -> f64 {
        let k = &inst.kernel;
        let u = k.apply_raw(
            &inst.system,
            f,
            &restricted_masses(&inst.system, &inst.sigma, pos),
            false,
            CubeFilter::Within(pos),
        );
        output_norm(&u, k.range(), inst.omega.leaf_masses(), r)
    }

    pub fn direct(inst: &ProblemInstance, pos: usize, f: &[f64]) -> f64 {
        let sys = &inst.system;
        let num = localized_norm(inst, pos, f, inst.q);
        let sup = sup_on_cube(sys, f, inst.kernel.domain(), &inst.sigma, pos);
        ratio(num, sup * inst.sigma.mass(pos).powf(inst.p.reciprocal()))
    }

    pub fn dual(inst: &ProblemInstance, pos: usize, g: &[f64]) -> f64 {
        let sys = &inst.system;
        let k = &inst.kernel;
        let u = k.apply_raw(
            sys,
            g,
            &restricted_masses(sys, &inst.omega, pos),
            true,
            CubeFilter::Within(pos),
        );
        let num = output_norm(&u, &k.domain().dual(), inst.sigma.leaf_masses(), inst.p.conjugate());
        let sup = sup_on_cube(sys, g, &k.range().dual(), &inst.omega, pos);
        ratio(
            num,
            sup * inst.omega.mass(pos).powf(inst.q.conjugate().reciprocal()),
        )
    }

    pub fn pairing(inst: &ProblemInstance, pos: usize, f: &[f64], g: &[f64]) -> f64 {
        let sys = &inst.system;
        let k = &inst.kernel;
        let u = k.apply_raw(
            sys,
            f,
            &restricted_masses(sys, &inst.sigma, pos),
            false,
            CubeFilter::Within(pos),
        );
        let dd = k.range().dim();
        let om = inst.omega.leaf_masses();
        let num: f64 = sys
            .leaf_range(pos)
            .map(|x| {
                let dot: f64 = u[x * dd..(x + 1) * dd]
                    .iter()
                    .zip(&g[x * dd..(x + 1) * dd])
                    .map(|(a, b)| a * b)
                    .sum();
                om[x] * dot
            })
            .sum();
        let fs = sup_on_cube(sys, f, k.domain(), &inst.sigma, pos);
        let gs = sup_on_cube(sys, g, &k.range().dual(), &inst.omega, pos);
        ratio(num, fs * gs * pairing_scale(inst, pos))
    }

    pub fn lt(inst: &ProblemInstance, pos: usize, f: &[f64]) -> f64 {
        if inst.t.is_infinite() {
            return direct(inst, pos, f);
        }
        let num = localized_norm(inst, pos, f, inst.q);
        let den = output_norm(
            f,
            inst.kernel.domain(),
            &restricted_masses(&inst.system, &inst.sigma, pos),
            inst.t,
        ) * inst
            .sigma
            .mass(pos)
            .powf(inst.p.reciprocal() - inst.t.reciprocal());
        ratio(num, den)
    }

    pub fn endpoint_direct(inst: &ProblemInstance, pos: usize, f: &[f64]) -> f64 {
        let num = localized_norm(inst, pos, f, Exponent::ONE);
        let sup = sup_on_cube(&inst.system, f, inst.kernel.domain(), &inst.sigma, pos);
        ratio(num, sup * pairing_scale(inst, pos))
    }

    pub fn endpoint_lt(inst: &ProblemInstance, pos: usize, f: &[f64]) -> f64 {
        if inst.t.is_infinite() {
            return endpoint_direct(inst, pos, f);
        }
        let num = localized_norm(inst, pos, f, Exponent::ONE);
        let den = output_norm(
            f,
            inst.kernel.domain(),
            &restricted_masses(&inst.system, &inst.sigma, pos),
            inst.t,
        ) * inst
            .sigma
            .mass(pos)
            .powf(inst.p.reciprocal() - inst.t.reciprocal())
            * inst.omega.mass(pos).powf(inst.q.conjugate().reciprocal());
        ratio(num, den)
    }

    pub fn constant_function(inst: &ProblemInstance, pos: usize, e: &[f64]) -> f64 {
        let f = top_on(&inst.system, inst.kernel.domain(), e, pos);
        let num = localized_norm(inst, pos, &f, inst.q);
        ratio(
            num,
            inst.kernel.domain().norm(e) * inst.sigma.mass(pos).powf(inst.p.reciprocal()),
        )
    }

    pub(super) fn pairing_scale(inst: &ProblemInstance, pos: usize) -> f64 {
        inst.sigma.mass(pos).powf(inst.p.reciprocal())
            * inst.omega.mass(pos).powf(inst.q.conjugate().reciprocal())
    }
}

/// Re-evaluates a report's value from its witness alone.
pub fn evaluate_witness(inst: &ProblemInstance, report: &ConstantReport) -> Result<f64, ConstantsError> {
    let w = &report.witness;
    let sys = &inst.system;
    let n = sys.num_leaves();
    let (dc, dd) = (inst.kernel.domain().dim(), inst.kernel.range().dim());
    if report.value == 0.0 && w.cube.is_none() && w.f.is_none() && w.g.is_none() {
        return Ok(0.0);
    }
    let cube = || -> Result<usize, ConstantsError> {
        let c = w.cube.ok_or(ConstantsError::IncompleteWitness("cube"))?;
        sys.position(c)
            .map_err(|e| ConstantsError::Operator(OperatorError::Dyadic(e)))
    };
    let f = || -> Result<&Vec<f64>, ConstantsError> {
        let f = w.f.as_ref().ok_or(ConstantsError::IncompleteWitness("f"))?;
        check_len(f, n * dc)?;
        Ok(f)
    };
    let g = || -> Result<&Vec<f64>, ConstantsError> {
        let g = w.g.as_ref().ok_or(ConstantsError::IncompleteWitness("g"))?;
        check_len(g, n * dd)?;
        Ok(g)
    };
    Ok(match report.name {
        ConstantKind::OperatorNorm | ConstantKind::AdjointNorm => match (&w.f, &w.g) {
            (Some(_), _) => ratios::operator(inst, f()?),
            (None, Some(_)) => ratios::adjoint(inst, g()?),
            _ => return Err(ConstantsError::IncompleteWitness("f or g")),
        },
        ConstantKind::DirectTesting => ratios::direct(inst, cube()?, f()?),
        ConstantKind::DualTesting => ratios::dual(inst, cube()?, g()?),
        ConstantKind::DualPairing => ratios::pairing(inst, cube()?, f()?, g()?),
        ConstantKind::LtTesting => ratios::lt(inst, cube()?, f()?),
        ConstantKind::EndpointDirect => ratios::endpoint_direct(inst, cube()?, f()?),
        ConstantKind::EndpointLt => ratios::endpoint_lt(inst, cube()?, f()?),
        ConstantKind::ConstantFunction => {
            let e = w.e.as_ref().ok_or(ConstantsError::IncompleteWitness("e"))?;
            check_len(e, dc)?;
            ratios::constant_function(inst, cube()?, e)
        }
        kind @ (ConstantKind::MaximalNorm | ConstantKind::MaximalEndpoint) => {
            return Err(ConstantsError::NotEvaluable(kind))
        }
    })
}

/// Testing cubes: active cubes of positive `σ` mass (and `ω` mass when required).
fn testing_cubes(inst: &ProblemInstance, need_sigma: bool, need_omega: bool) -> Vec<usize> {
    inst.system
        .active_list_positions()
        .into_iter()
        .filter(|&p| !need_sigma || inst.sigma.mass(p) > 0.0)
        .filter(|&p| !need_omega || inst.omega.mass(p) > 0.0)
        .collect()
}

struct Best {
    value: f64,
    witness: Witness,
    iterations: usize,
    starts: usize,
}

impl Best {
    fn new() -> Self {
        Best {
            value: 0.0,
            witness: Witness::default(),
            iterations: 0,
            starts: 0,
        }
    }

    fn offer(&mut self, value: f64, witness: Witness) {
        if value > self.value || (self.witness.cube.is_none() && self.witness.f.is_none() && self.witness.e.is_none() && self.witness.g.is_none()) {
            self.value = value;
            self.witness = witness;
        }
    }

    fn report(self, kind: ConstantKind, method: Method, opts: &AscentOptions) -> ConstantReport {
        ConstantReport {
            name: kind,
            value: self.value,
            method,
            witness: self.witness,
            seed: opts.seed,
            starts: self.starts,
            iterations: self.iterations,
        }
    }
}

fn warm_for(warm: &[Witness], pos: usize, sys: &DyadicSystem, pick: impl Fn(&Witness) -> Option<&Vec<f64>>) -> Vec<Vec<f64>> {
    warm.iter()
        .filter(|w| w.cube.map(|c| sys.position(c).ok() == Some(pos)).unwrap_or(false))
        .filter_map(|w| pick(w).cloned())
        .collect()
}

/// Which form of normalization a pointwise-sphere testing constant uses.
#[derive(Clone, Copy)]
enum PointwiseKind {
    Direct,
    EndpointDirect,
}

fn pointwise_testing(
    inst: &ProblemInstance,
    kind: PointwiseKind,
    opts: &AscentOptions,
    warm: &[Witness],
) -> ConstantReport {
    let (ckind, exponent) = match kind {
        PointwiseKind::Direct => (ConstantKind::DirectTesting, inst.q),
        PointwiseKind::EndpointDirect => (ConstantKind::EndpointDirect, Exponent::ONE),
    };
    let sys = &inst.system;
    let domain = inst.kernel.domain();
    let top = domain.top_element();
    let need_omega = matches!(kind, PointwiseKind::EndpointDirect);
    let evaluate = |pos: usize, f: &[f64]| match kind {
        PointwiseKind::Direct => ratios::direct(inst, pos, f),
        PointwiseKind::EndpointDirect => ratios::endpoint_direct(inst, pos, f),
    };
    let mut best = Best::new();
    for pos in testing_cubes(inst, true, need_omega) {
        if let Some(top) = &top {
            let f = top_on(sys, domain, top, pos);
            best.offer(
                evaluate(pos, &f),
                Witness {
                    cube: Some(sys.cube(pos)),
                    f: Some(f),
                    ..Default::default()
                },
            );
            continue;
        }
        let masses = restricted_masses(sys, &inst.sigma, pos);
        let scale = match kind {
            PointwiseKind::Direct => inst.sigma.mass(pos).powf(-inst.p.reciprocal()),
            PointwiseKind::EndpointDirect => 1.0 / ratios::pairing_scale(inst, pos),
        };
        let objective = LinearMapObjective {
            sys,
            kernel: &inst.kernel,
            in_masses: &masses,
            out_masses: inst.omega.leaf_masses(),
            out_space: inst.kernel.range().clone(),
            exponent,
            transpose: false,
            filter: CubeFilter::Within(pos),
            scale,
        };
        let sphere = PointwiseSphere::new(domain.clone(), support_of(sys, pos));
        let mut starts = warm_for(warm, pos, sys, |w| w.f.as_ref());
        starts.push(top_on(sys, domain, &domain.unit_positive(), pos));
        let run_opts = seeded(opts, ckind, pos);
        let res = maximize(&objective, &sphere, &starts, &run_opts);
        best.iterations += res.iterations;
        best.starts += starts.len() + run_opts.starts;
        best.offer(
            evaluate(pos, &res.point),
            Witness {
                cube: Some(sys.cube(pos)),
                f: Some(res.point),
                ..Default::default()
            },
        );
    }
    let method = if top.is_some() {
        Method::Exact
    } else {
        Method::LowerBound
    };
    best.report(ckind, method, opts)
}

/// `𝔗`: the direct L∞ testing constant.
pub fn direct_testing(inst: &ProblemInstance, opts: &AscentOptions, warm: &[Witness]) -> ConstantReport {
    pointwise_testing(inst, PointwiseKind::Direct, opts, warm)
}

/// The endpoint direct L∞ testing constant, normalized by `σ(R)^{1/p} ω(R)^{1/q′}`.
pub fn endpoint_direct(inst: &ProblemInstance, opts: &AscentOptions, warm: &[Witness]) -> ConstantReport {
    let mut report = pointwise_testing(inst, PointwiseKind::EndpointDirect, opts, warm);
    // By duality this equals the dual pairing constant, which is exact once D* has a top element.
    if inst.kernel.range().dual().top_element().is_some() && !warm.is_empty() {
        report.method = Method::Exact;
    }
    report
}

/// `𝔗*`: the dual L∞ testing constant.
pub fn dual_testing(inst: &ProblemInstance, opts: &AscentOptions, warm: &[Witness]) -> ConstantReport {
    let kind = ConstantKind::DualTesting;
    let sys = &inst.system;
    let dual_range = inst.kernel.range().dual();
    let top = dual_range.top_element();
    let mut best = Best::new();
    for pos in testing_cubes(inst, false, true) {
        if let Some(top) = &top {
            let g = top_on(sys, &dual_range, top, pos);
            best.offer(
                ratios::dual(inst, pos, &g),
                Witness {
                    cube: Some(sys.cube(pos)),
                    g: Some(g),
                    ..Default::default()
                },
            );
            continue;
        }
        let masses = restricted_masses(sys, &inst.omega, pos);
        let objective = LinearMapObjective {
            sys,
            kernel: &inst.kernel,
            in_masses: &masses,
            out_masses: inst.sigma.leaf_masses(),
            out_space: inst.kernel.domain().dual(),
            exponent: inst.p.conjugate(),
            transpose: true,
            filter: CubeFilter::Within(pos),
            scale: inst.omega.mass(pos).powf(-inst.q.conjugate().reciprocal()),
        };
        let sphere = PointwiseSphere::new(dual_range.clone(), support_of(sys, pos));
        let mut starts = warm_for(warm, pos, sys, |w| w.g.as_ref());
        starts.push(top_on(sys, &dual_range, &dual_range.unit_positive(), pos));
        let run_opts = seeded(opts, kind, pos);
        let res = maximize(&objective, &sphere, &starts, &run_opts);
        best.iterations += res.iterations;
        best.starts += starts.len() + run_opts.starts;
        best.offer(
            ratios::dual(inst, pos, &res.point),
            Witness {
                cube: Some(sys.cube(pos)),
                g: Some(res.point),
                ..Default::default()
            },
        );
    }
    let method = if top.is_some() {
        Method::Exact
    } else {
        Method::LowerBound
    };
    best.report(kind, method, opts)
}

/// Per-leaf dual maximizers of `h` on the leaves of `pos`, zero elsewhere.
fn leafwise_dual_maximizer(sys: &DyadicSystem, space: &LatticeSpace, h: &[f64], pos: usize) -> Vec<f64> {
    let d = space.dim();
    let mut x = vec![0.0; h.len()];
    for leaf in sys.leaf_range(pos) {
        let v = space.dual_maximizer(&h[leaf * d..(leaf + 1) * d]);
        x[leaf * d..(leaf + 1) * d].copy_from_slice(&v);
    }
    x
}

/// `𝔅`: the L∞ dual pairing testing constant, by alternating closed-form maximization.
pub fn dual_pairing_testing(inst: &ProblemInstance, opts: &AscentOptions, warm: &[Witness]) -> ConstantReport {
    let kind = ConstantKind::DualPairing;
    let sys = &inst.system;
    let k = &inst.kernel;
    let domain = k.domain();
    let dual_range = k.range().dual();
    let c_top = domain.top_element();
    let d_top = dual_range.top_element();
    let exact = c_top.is_some() || d_top.is_some();
    let mut best = Best::new();
    for pos in testing_cubes(inst, true, true) {
        let sig = restricted_masses(sys, &inst.sigma, pos);
        let om = restricted_masses(sys, &inst.omega, pos);
        let g_step = |f: &[f64]| {
            let u = k.apply_raw(sys, f, &sig, false, CubeFilter::Within(pos));
            leafwise_dual_maximizer(sys, &dual_range, &u, pos)
        };
        let f_step = |g: &[f64]| {
            let h = k.apply_raw(sys, g, &om, true, CubeFilter::Within(pos));
            leafwise_dual_maximizer(sys, domain, &h, pos)
        };
        let mut starts: Vec<Vec<f64>> = Vec::new();
        if let Some(top) = &c_top {
            starts.push(top_on(sys, domain, top, pos));
        } else if let Some(top) = &d_top {
            starts.push(f_step(&top_on(sys, &dual_range, top, pos)));
        } else {
            starts.extend(warm_for(warm, pos, sys, |w| w.f.as_ref()));
            starts.push(top_on(sys, domain, &domain.unit_positive(), pos));
            let run_opts = seeded(opts, kind, pos);
            let sphere = PointwiseSphere::new(domain.clone(), support_of(sys, pos));
            for s in 0..run_opts.starts {
                let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(
                    run_opts.seed.wrapping_add(s as u64),
                );
                starts.push(crate::optimize::Retraction::random_point(&sphere, &mut rng));
            }
        }
        best.starts += starts.len();
        for f0 in starts {
            let mut f = f0;
            let mut g = g_step(&f);
            let mut value = ratios::pairing(inst, pos, &f, &g);
            for _ in 0..opts.max_iterations {
                best.iterations += 1;
                if c_top.is_some() {
                    break;
                }
                let f_new = f_step(&g);
                let g_new = g_step(&f_new);
                let v = ratios::pairing(inst, pos, &f_new, &g_new);
                if v <= value * (1.0 + opts.tolerance) {
                    if v > value {
                        f = f_new;
                        g = g_new;
                        value = v;
                    }
                    break;
                }
                f = f_new;
                g = g_new;
                value = v;
            }
            best.offer(
                value,
                Witness {
                    cube: Some(sys.cube(pos)),
                    f: Some(f),
                    g: Some(g),
                    ..Default::default()
                },
            );
        }
    }
    let method = if exact { Method::Exact } else { Method::LowerBound };
    best.report(kind, method, opts)
}

fn lt_sphere_testing(
    inst: &ProblemInstance,
    kind: ConstantKind,
    opts: &AscentOptions,
    warm: &[Witness],
) -> ConstantReport {
    let sys = &inst.system;
    let domain = inst.kernel.domain();
    let endpoint = kind == ConstantKind::EndpointLt;
    let mut best = Best::new();
    for pos in testing_cubes(inst, true, endpoint) {
        let masses = restricted_masses(sys, &inst.sigma, pos);
        let mut scale = inst
            .sigma
            .mass(pos)
            .powf(-(inst.p.reciprocal() - inst.t.reciprocal()));
        let exponent = if endpoint {
            scale /= inst.omega.mass(pos).powf(inst.q.conjugate().reciprocal());
            Exponent::ONE
        } else {
            inst.q
        };
        let objective = LinearMapObjective {
            sys,
            kernel: &inst.kernel,
            in_masses: &masses,
            out_masses: inst.omega.leaf_masses(),
            out_space: inst.kernel.range().clone(),
            exponent,
            transpose: false,
            filter: CubeFilter::Within(pos),
            scale,
        };
        let sphere = LtSphere::new(domain.clone(), masses.clone(), inst.t);
        let mut starts = warm_for(warm, pos, sys, |w| w.f.as_ref());
        starts.push(top_on(sys, domain, &domain.unit_positive(), pos));
        let run_opts = seeded(opts, kind, pos);
        let res = maximize(&objective, &sphere, &starts, &run_opts);
        best.iterations += res.iterations;
        best.starts += starts.len() + run_opts.starts;
        let value = if endpoint {
            ratios::endpoint_lt(inst, pos, &res.point)
        } else {
            ratios::lt(inst, pos, &res.point)
        };
        best.offer(
            value,
            Witness {
                cube: Some(sys.cube(pos)),
                f: Some(res.point),
                ..Default::default()
            },
        );
    }
    best.report(kind, Method::LowerBound, opts)
}

/// `𝔗_t`: the direct L^t testing constant; `t = ∞` gives `𝔗`.
pub fn lt_testing(inst: &ProblemInstance, opts: &AscentOptions, warm: &[Witness]) -> ConstantReport {
    if inst.t.is_infinite() {
        let mut r = direct_testing(inst, opts, warm);
        r.name = ConstantKind::LtTesting;
        return r;
    }
    lt_sphere_testing(inst, ConstantKind::LtTesting, opts, warm)
}

/// `𝔅_t`: the endpoint direct L^t testing constant; `t = ∞` gives the endpoint L∞ constant.
pub fn endpoint_lt(inst: &ProblemInstance, opts: &AscentOptions, warm: &[Witness]) -> ConstantReport {
    if inst.t.is_infinite() {
        let mut r = endpoint_direct(inst, opts, warm);
        r.name = ConstantKind::EndpointLt;
        return r;
    }
    lt_sphere_testing(inst, ConstantKind::EndpointLt, opts, warm)
}

/// `𝔖`: the constant function testing constant.
pub fn constant_function_testing(inst: &ProblemInstance, opts: &AscentOptions, warm: &[Witness]) -> ConstantReport {
    let kind = ConstantKind::ConstantFunction;
    let sys = &inst.system;
    let k = &inst.kernel;
    let domain = k.domain();
    let top = domain.top_element();
    let svd = domain.is_euclidean() && k.range().is_euclidean() && inst.q == Exponent::TWO;
    let mut best = Best::new();
    for pos in testing_cubes(inst, true, false) {
        let e = if let Some(top) = &top {
            top.clone()
        } else if svd {
            let a = constant_function_matrix(inst, pos);
            let (_, v) = top_right_singular_vector(&a);
            v
        } else {
            let masses = restricted_masses(sys, &inst.sigma, pos);
            let objective = Expanded {
                inner: LinearMapObjective {
                    sys,
                    kernel: k,
                    in_masses: &masses,
                    out_masses: inst.omega.leaf_masses(),
                    out_space: k.range().clone(),
                    exponent: inst.q,
                    transpose: false,
                    filter: CubeFilter::Within(pos),
                    scale: inst.sigma.mass(pos).powf(-inst.p.reciprocal()),
                },
                leaves: sys.leaf_range(pos),
                num_leaves: sys.num_leaves(),
            };
            let mut starts: Vec<Vec<f64>> = warm_for(warm, pos, sys, |w| w.e.as_ref());
            starts.push(domain.unit_positive());
            let run_opts = seeded(opts, kind, pos);
            let res = maximize(&objective, &UnitSphere::new(domain.clone()), &starts, &run_opts);
            best.iterations += res.iterations;
            best.starts += starts.len() + run_opts.starts;
            res.point
        };
        best.offer(
            ratios::constant_function(inst, pos, &e),
            Witness {
                cube: Some(sys.cube(pos)),
                e: Some(e),
                ..Default::default()
            },
        );
    }
    let method = if top.is_some() || svd {
        Method::Exact
    } else {
        Method::LowerBound
    };
    best.report(kind, method, opts)
}

/// The matrix of `e ↦ √ω T_R(e 1_R σ) σ(R)^{-1/p}` for Euclidean lattices and `q = 2`.
fn constant_function_matrix(inst: &ProblemInstance, pos: usize) -> nalgebra::DMatrix<f64> {
    let sys = &inst.system;
    let k = &inst.kernel;
    let (dc, dd) = (k.domain().dim(), k.range().dim());
    let masses = restricted_masses(sys, &inst.sigma, pos);
    let scale = inst.sigma.mass(pos).powf(-inst.p.reciprocal());
    let mut a = nalgebra::DMatrix::zeros(sys.num_leaves() * dd, dc);
    for c in 0..dc {
        let mut e = vec![0.0; dc];
        e[c] = 1.0;
        let x = top_on(sys, k.domain(), &e, pos);
        let u = k.apply_raw(sys, &x, &masses, false, CubeFilter::Within(pos));
        for (row, v) in u.iter().enumerate() {
            a[(row, c)] = scale * inst.omega.leaf_masses()[row / dd].sqrt() * v;
        }
    }
    a
}

/// The exact norm is available for `p = q = 2` with Euclidean lattices.
pub fn norm_is_exact(inst: &ProblemInstance) -> bool {
    inst.p == Exponent::TWO
        && inst.q == Exponent::TWO
        && inst.kernel.domain().is_euclidean()
        && inst.kernel.range().is_euclidean()
}

/// `‖T(·σ)‖_{L^p_C(σ) → L^q_D(ω)}`: exact via the top singular value when
/// available, otherwise a lower bound from both `T` and `T*`.
pub fn operator_norm(inst: &ProblemInstance, opts: &AscentOptions, warm: &[Witness]) -> ConstantReport {
    let kind = ConstantKind::OperatorNorm;
    let sys = &inst.system;
    let k = &inst.kernel;
    if k.is_zero() || inst.sigma.total() == 0.0 {
        return ConstantReport::zero(kind, opts);
    }
    if norm_is_exact(inst) {
        let a = k
            .assemble_linear_map(sys, &inst.sigma, &inst.omega, CubeFilter::All)
            .expect("Euclidean lattices");
        let (value, v) = top_right_singular_vector(&a);
        let dc = k.domain().dim();
        let f: Vec<f64> = v
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let s = inst.sigma.leaf_masses()[i / dc];
                if s > 0.0 {
                    x / s.sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        return ConstantReport {
            name: kind,
            value,
            method: Method::Exact,
            witness: Witness {
                f: Some(f),
                ..Default::default()
            },
            seed: opts.seed,
            starts: 0,
            iterations: 0,
        };
    }
    let objective = LinearMapObjective {
        sys,
        kernel: k,
        in_masses: inst.sigma.leaf_masses(),
        out_masses: inst.omega.leaf_masses(),
        out_space: k.range().clone(),
        exponent: inst.q,
        transpose: false,
        filter: CubeFilter::All,
        scale: 1.0,
    };
    let sphere = LtSphere::new(k.domain().clone(), inst.sigma.leaf_masses().to_vec(), inst.p);
    let mut starts: Vec<Vec<f64>> = warm.iter().filter_map(|w| w.f.clone()).collect();
    starts.push(vec![1.0; sys.num_leaves() * k.domain().dim()]);
    let run_opts = seeded(opts, kind, 0);
    let primal = maximize(&objective, &sphere, &starts, &run_opts);
    let mut best = Best::new();
    best.iterations = primal.iterations;
    best.starts = starts.len() + run_opts.starts;
    best.offer(
        ratios::operator(inst, &primal.point),
        Witness {
            f: Some(primal.point),
            ..Default::default()
        },
    );
    let dual = adjoint_lower_bound(inst, opts, warm);
    best.iterations += dual.iterations;
    best.starts += dual.starts;
    best.offer(dual.value, dual.witness);
    best.report(kind, Method::LowerBound, opts)
}

/// `‖T*(·ω)‖_{L^{q′}_{D*}(ω) → L^{p′}_{C*}(σ)}` by projected ascent.
pub fn adjoint_lower_bound(inst: &ProblemInstance, opts: &AscentOptions, warm: &[Witness]) -> ConstantReport {
    let kind = ConstantKind::AdjointNorm;
    let sys = &inst.system;
    let k = &inst.kernel;
    if k.is_zero() || inst.omega.total() == 0.0 {
        return ConstantReport::zero(kind, opts);
    }
    let objective = LinearMapObjective {
        sys,
        kernel: k,
        in_masses: inst.omega.leaf_masses(),
        out_masses: inst.sigma.leaf_masses(),
        out_space: k.domain().dual(),
        exponent: inst.p.conjugate(),
        transpose: true,
        filter: CubeFilter::All,
        scale: 1.0,
    };
    let sphere = LtSphere::new(
        k.range().dual(),
        inst.omega.leaf_masses().to_vec(),
        inst.q.conjugate(),
    );
    let mut starts: Vec<Vec<f64>> = warm.iter().filter_map(|w| w.g.clone()).collect();
    starts.push(vec![1.0; sys.num_leaves() * k.range().dim()]);
    let run_opts = seeded(opts, kind, 0);
    let res = maximize(&objective, &sphere, &starts, &run_opts);
    ConstantReport {
        name: kind,
        value: ratios::adjoint(inst, &res.point),
        method: Method::LowerBound,
        witness: Witness {
            g: Some(res.point),
            ..Default::default()
        },
        seed: opts.seed,
        starts: starts.len() + run_opts.starts,
        iterations: res.iterations,
    }
}

/// The Sawyer constants `(𝔗, 𝔗*)` of a scalar instance, in closed form.
pub fn sawyer_constants(inst: &ProblemInstance) -> Result<(f64, f64), ConstantsError> {
    let k = &inst.kernel;
    if !k.domain().is_scalar() || !k.range().is_scalar() {
        return Err(ConstantsError::NotScalar);
    }
    let sys = &inst.system;
    let mut direct = 0.0f64;
    for pos in testing_cubes(inst, true, false) {
        let ones = top_on(sys, k.domain(), &[1.0], pos);
        direct = direct.max(ratios::direct(inst, pos, &ones));
    }
    let mut dual = 0.0f64;
    for pos in testing_cubes(inst, false, true) {
        let ones = top_on(sys, k.domain(), &[1.0], pos);
        dual = dual.max(ratios::dual(inst, pos, &ones));
    }
    Ok((direct, dual))
}

/// All testing constants of one instance, computed along the chain
/// `𝔅 ≤ 𝔗 ≤ 𝔗_t ≤ ‖T‖` with each witness warm-starting the next constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestingConstants {
    pub norm: ConstantReport,
    pub direct: ConstantReport,
    pub dual: ConstantReport,
    pub pairing: ConstantReport,
    pub lt: ConstantReport,
    pub endpoint_direct: ConstantReport,
    pub endpoint_lt: ConstantReport,
    pub constant_function: ConstantReport,
}

pub fn testing_constants(inst: &ProblemInstance, opts: &AscentOptions) -> TestingConstants {
    let pairing = dual_pairing_testing(inst, opts, &[]);
    let constant_function = constant_function_testing(inst, opts, &[]);
    let e_as_f = constant_function.witness.e.as_ref().and_then(|e| {
        let pos = inst.system.position(constant_function.witness.cube?).ok()?;
        Some(Witness {
            cube: constant_function.witness.cube,
            f: Some(top_on(&inst.system, inst.kernel.domain(), e, pos)),
            ..Default::default()
        })
    });
    let mut direct_warm = vec![pairing.witness.clone()];
    direct_warm.extend(e_as_f);
    let direct = direct_testing(inst, opts, &direct_warm);
    let dual = dual_testing(inst, opts, std::slice::from_ref(&pairing.witness));
    let lt = lt_testing(inst, opts, std::slice::from_ref(&direct.witness));
    let endpoint_direct = endpoint_direct(inst, opts, std::slice::from_ref(&pairing.witness));
    let endpoint_lt = endpoint_lt(inst, opts, std::slice::from_ref(&endpoint_direct.witness));
    let norm_warm = [
        embed_on_cube(inst, &lt.witness),
        embed_on_cube(inst, &direct.witness),
        Witness {
            g: embed_g_on_cube(inst, &dual.witness),
            ..Default::default()
        },
    ];
    let norm = operator_norm(inst, opts, &norm_warm);
    TestingConstants {
        norm,
        direct,
        dual,
        pairing,
        lt,
        endpoint_direct,
        endpoint_lt,
        constant_function,
    }
}

fn restrict(sys: &DyadicSystem, x: &[f64], pos: usize) -> Vec<f64> {
    let d = x.len() / sys.num_leaves();
    let range = sys.leaf_range(pos);
    x.chunks(d)
        .enumerate()
        .flat_map(|(l, c)| {
            let keep = range.contains(&l);
            c.iter().map(move |v| if keep { *v } else { 0.0 })
        })
        .collect()
}

fn embed_on_cube(inst: &ProblemInstance, w: &Witness) -> Witness {
    let f = match (w.cube, &w.f) {
        (Some(c), Some(f)) => inst
            .system
            .position(c)
            .ok()
            .map(|pos| restrict(&inst.system, f, pos)),
        _ => None,
    };
    Witness {
        f,
        ..Default::default()
    }
}

fn embed_g_on_cube(inst: &ProblemInstance, w: &Witness) -> Option<Vec<f64>> {
    let pos = inst.system.position(w.cube?).ok()?;
    Some(restrict(&inst.system, w.g.as_ref()?, pos))
}

/// Which cubes a maximal supremum ranges over.
#[derive(Clone, Copy)]
enum Scope {
    All,
    Within(usize),
}

/// `f ↦ scale · ‖M̄ f‖_{L^r_E(w)}` (or its localization), with a subgradient
/// obtained by selecting one maximizing cube per leaf and coordinate.
struct MaximalObjective<'a> {
    sys: &'a DyadicSystem,
    w: &'a Weight,
    space: &'a LatticeSpace,
    exponent: Exponent,
    scope: Scope,
    scale: f64,
}

impl MaximalObjective<'_> {
    /// Leaf values of the maximal function and the maximizing cube per entry.
    fn evaluate(&self, f: &[f64]) -> (Vec<f64>, Vec<Option<usize>>) {
        let sys = self.sys;
        let d = self.space.dim();
        let n = sys.num_cubes();
        let first_leaf = sys.leaf_position(0);
        let mut integrals = vec![0.0; n * d];
        for leaf in 0..sys.num_leaves() {
            let m = self.w.leaf_masses()[leaf];
            for k in 0..d {
                integrals[(first_leaf + leaf) * d + k] = m * f[leaf * d + k];
            }
        }
        for pos in (0..first_leaf).rev() {
            for c in sys.children(pos) {
                for k in 0..d {
                    integrals[pos * d + k] += integrals[c * d + k];
                }
            }
        }
        let (root_level, leaves) = match self.scope {
            Scope::All => (0, 0..sys.num_leaves()),
            Scope::Within(r) => (sys.level_of(r), sys.leaf_range(r)),
        };
        let mut values = vec![0.0; f.len()];
        let mut argmax = vec![None; f.len()];
        for leaf in leaves {
            for level in root_level..=sys.depth() {
                let pos = sys.leaf_ancestor(leaf, level);
                let mass = self.w.mass(pos);
                if !sys.is_active(pos) || mass <= 0.0 {
                    continue;
                }
                for k in 0..d {
                    let avg = integrals[pos * d + k] / mass;
                    let idx = leaf * d + k;
                    if argmax[idx].is_none() || avg > values[idx] {
                        values[idx] = avg;
                        argmax[idx] = Some(pos);
                    }
                }
            }
        }
        (values, argmax)
    }
}

impl Objective for MaximalObjective<'_> {
    fn value(&self, f: &[f64]) -> f64 {
        let (u, _) = self.evaluate(f);
        self.scale * output_norm(&u, self.space, self.w.leaf_masses(), self.exponent)
    }

    fn gradient(&self, f: &[f64], grad: &mut [f64]) {
        let sys = self.sys;
        let d = self.space.dim();
        let (u, argmax) = self.evaluate(f);
        let du = output_norm_gradient(&u, self.space, self.w.leaf_masses(), self.exponent);
        let mut acc = vec![0.0; sys.num_cubes() * d];
        for (idx, q) in argmax.iter().enumerate() {
            if let Some(pos) = q {
                acc[pos * d + idx % d] += du[idx] / self.w.mass(*pos);
            }
        }
        for pos in 1..sys.num_cubes() {
            let parent = sys.parent(pos).expect("non-root");
            for k in 0..d {
                acc[pos * d + k] += acc[parent * d + k];
            }
        }
        let first_leaf = sys.leaf_position(0);
        for leaf in 0..sys.num_leaves() {
            let m = self.w.leaf_masses()[leaf];
            for k in 0..d {
                grad[leaf * d + k] = self.scale * m * acc[(first_leaf + leaf) * d + k];
            }
        }
    }
}

/// `‖M̄ f‖_{L^p_E(w)} / ‖f‖_{L^p_E(w)}`.
pub fn maximal_ratio(space: &LatticeSpace, sys: &DyadicSystem, w: &Weight, p: Exponent, f: &[f64]) -> f64 {
    let obj = MaximalObjective {
        sys,
        w,
        space,
        exponent: p,
        scope: Scope::All,
        scale: 1.0,
    };
    ratio(obj.value(f), output_norm(f, space, w.leaf_masses(), p))
}

/// `‖M̄_R f‖_{L¹_E(w)} / (‖f‖_{L∞_E(R,w)} w(R))`.
pub fn maximal_endpoint_ratio(space: &LatticeSpace, sys: &DyadicSystem, w: &Weight, pos: usize, f: &[f64]) -> f64 {
    let obj = MaximalObjective {
        sys,
        w,
        space,
        exponent: Exponent::ONE,
        scope: Scope::Within(pos),
        scale: 1.0,
    };
    let sup = sup_on_cube(sys, f, space, w, pos);
    ratio(obj.value(f), sup * w.mass(pos))
}

/// Lower bound on `‖M̄‖_{L^p_E(w) → L^p_E(w)}`.
pub fn lattice_maximal_norm(
    space: &LatticeSpace,
    sys: &DyadicSystem,
    w: &Weight,
    p: Exponent,
    opts: &AscentOptions,
    warm: &[Vec<f64>],
) -> ConstantReport {
    let kind = ConstantKind::MaximalNorm;
    if w.total() == 0.0 {
        return ConstantReport::zero(kind, opts);
    }
    let objective = MaximalObjective {
        sys,
        w,
        space,
        exponent: p,
        scope: Scope::All,
        scale: 1.0,
    };
    let sphere = LtSphere::new(space.clone(), w.leaf_masses().to_vec(), p);
    let mut starts = warm.to_vec();
    let d = space.dim();
    // Point masses at single leaves are the classical near-extremals.
    for leaf in 0..sys.num_leaves() {
        if w.leaf_masses()[leaf] > 0.0 {
            let mut x = vec![0.0; sys.num_leaves() * d];
            x[leaf * d..(leaf + 1) * d].copy_from_slice(&space.unit_positive());
            starts.push(x);
        }
    }
    let run_opts = seeded(opts, kind, 0);
    let res = maximize(&objective, &sphere, &starts, &run_opts);
    ConstantReport {
        name: kind,
        value: maximal_ratio(space, sys, w, p, &res.point),
        method: if sys.depth() == 0 {
            Method::Exact
        } else {
            Method::LowerBound
        },
        witness: Witness {
            f: Some(res.point),
            ..Default::default()
        },
        seed: opts.seed,
        starts: starts.len() + run_opts.starts,
        iterations: res.iterations,
    }
}

/// `𝔐`: the endpoint L∞ testing constant of the lattice maximal operator.
pub fn maximal_endpoint_testing(
    space: &LatticeSpace,
    sys: &DyadicSystem,
    w: &Weight,
    opts: &AscentOptions,
) -> ConstantReport {
    let kind = ConstantKind::MaximalEndpoint;
    let top = space.top_element();
    let mut best = Best::new();
    for pos in sys.active_list_positions() {
        if w.mass(pos) <= 0.0 {
            continue;
        }
        let f = if let Some(top) = &top {
            top_on(sys, space, top, pos)
        } else {
            let objective = MaximalObjective {
                sys,
                w,
                space,
                exponent: Exponent::ONE,
                scope: Scope::Within(pos),
                scale: 1.0 / w.mass(pos),
            };
            let sphere = PointwiseSphere::new(space.clone(), support_of(sys, pos));
            let starts = vec![top_on(sys, space, &space.unit_positive(), pos)];
            let run_opts = seeded(opts, kind, pos);
            let res = maximize(&objective, &sphere, &starts, &run_opts);
            best.iterations += res.iterations;
            best.starts += starts.len() + run_opts.starts;
            res.point
        };
        best.offer(
            maximal_endpoint_ratio(space, sys, w, pos, &f),
            Witness {
                cube: Some(sys.cube(pos)),
                f: Some(f),
                ..Default::default()
            },
        );
    }
    let method = if top.is_some() {
        Method::Exact
    } else {
        Method::LowerBound
    };
    best.report(kind, method, opts)
}

/// `[σ]_{A∞(ω)} = sup_R σ(R)^{-1} ∫ M^ω_R(σ) dω` over active cubes with `σ(R) > 0`.
pub fn a_infinity(sigma: &Weight, omega: &Weight, sys: &DyadicSystem) -> f64 {
    sys.active_list_positions()
        .into_iter()
        .filter(|&r| sigma.mass(r) > 0.0)
        .map(|r| {
            let m = crate::dyadic::ratio_maximal(sigma, omega, sys, r);
            let integral: f64 = m.iter().zip(omega.leaf_masses()).map(|(a, b)| a * b).sum();
            integral / sigma.mass(r)
        })
        .fold(0.0, f64::max)
}

/// `max_{G ∈ 𝒢} μ(G)^{-1} Σ_{G′ ∈ 𝒢, G′ ⊆ G} μ(G′)` over members of positive mass.
pub fn carleson_constant(collection: &[usize], mu: &Weight, sys: &DyadicSystem) -> f64 {
    collection
        .iter()
        .filter(|&&g| mu.mass(g) > 0.0)
        .map(|&g| {
            let sum: f64 = collection
                .iter()
                .filter(|&&h| sys.is_subcube(h, g))
                .map(|&h| mu.mass(h))
                .sum();
            sum / mu.mass(g)
        })
        .fold(0.0, f64::max)
}

/// Whether `Σ_{G′ ⊆ G} μ(G′) ≤ c μ(G)` for every member `G`.
pub fn is_carleson(collection: &[usize], mu: &Weight, sys: &DyadicSystem, c: f64) -> bool {
    collection.iter().all(|&g| {
        let sum: f64 = collection
            .iter()
            .filter(|&&h| sys.is_subcube(h, g))
            .map(|&h| mu.mass(h))
            .sum();
        sum <= c * mu.mass(g) * (1.0 + 1e-12)
    })
}

/// Largest number of active cubes for which the Carleson characteristic is
/// computed by exhausting all subcollections.
pub const CARLESON_EXHAUSTIVE_LIMIT: usize = 15;

/// `[σ]_Car(ω)`: the sup of the σ-Carleson constant over all ω-Carleson
/// (constant 2) subcollections of active cubes, by exhaustive search.
pub fn carleson_characteristic(sigma: &Weight, omega: &Weight, sys: &DyadicSystem) -> Option<f64> {
    let cubes = sys.active_list_positions();
    let n = cubes.len();
    if n > CARLESON_EXHAUSTIVE_LIMIT {
        return None;
    }
    let sub: Vec<u32> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| sys.is_subcube(cubes[j], cubes[i]))
                .fold(0u32, |m, j| m | (1 << j))
        })
        .collect();
    let om: Vec<f64> = cubes.iter().map(|&c| omega.mass(c)).collect();
    let sg: Vec<f64> = cubes.iter().map(|&c| sigma.mass(c)).collect();
    let masked_sum = |mask: u32, m: &[f64]| -> f64 {
        let mut s = 0.0;
        let mut bits = mask;
        while bits != 0 {
            let j = bits.trailing_zeros() as usize;
            s += m[j];
            bits &= bits - 1;
        }
        s
    };
    let mut best = 0.0f64;
    for mask in 1u32..(1u32 << n) {
        let members = (0..n).filter(|&i| mask & (1 << i) != 0);
        let mut carleson = true;
        let mut value = 0.0f64;
        for i in members {
            let inside = mask & sub[i];
            if masked_sum(inside, &om) > 2.0 * om[i] * (1.0 + 1e-12) {
                carleson = false;
                break;
            }
            if sg[i] > 0.0 {
                value = value.max(masked_sum(inside, &sg) / sg[i]);
            }
        }
        if carleson {
            best = best.max(value);
        }
    }
    Some(best)
}

/// Factor of an assembled constant, tagged with the estimate it comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub label: String,
    pub origin: String,
    pub value: f64,
}

impl Factor {
    fn new(label: &str, origin: &str, value: f64) -> Self {
        Factor {
            label: label.into(),
            origin: origin.into(),
            value,
        }
    }
}

/// A product of factors per group; the constant is the largest group product.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorGroup {
    pub label: String,
    pub factors: Vec<Factor>,
}

impl FactorGroup {
    pub fn product(&self) -> f64 {
        self.factors.iter().map(|f| f.value).product()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssembledConstant {
    pub name: String,
    pub value: f64,
    pub groups: Vec<FactorGroup>,
}

impl AssembledConstant {
    fn from_groups(name: &str, groups: Vec<FactorGroup>) -> Self {
        let value = groups.iter().map(FactorGroup::product).fold(0.0, f64::max);
        AssembledConstant {
            name: name.into(),
            value,
            groups,
        }
    }
}

fn group(label: &str, factors: Vec<Factor>) -> FactorGroup {
    FactorGroup {
        label: label.into(),
        factors,
    }
}

/// `K₁(p,q)` in `‖T‖ ≤ K₁ (‖M̄_C‖ 𝔗 + ‖M̄_{D*}‖ 𝔗*)`.
pub fn k1(p: Exponent, q: Exponent) -> AssembledConstant {
    let (p, pc, q, qc) = (
        p.value(),
        p.conjugate().value(),
        q.value(),
        q.conjugate().value(),
    );
    AssembledConstant::from_groups(
        "K1",
        vec![
            group(
                "half with G inside F",
                vec![
                    Factor::new("2", "sup-stopping L-infinity estimate", 2.0),
                    Factor::new("2p'", "sparse Carleson embedding at p", 2.0 * pc),
                    Factor::new("3q'", "Pythagoras for sparse sums at q'", 3.0 * qc),
                    Factor::new("3q", "sparse decomposition at q'", 3.0 * q),
                ],
            ),
            group(
                "half with F inside G",
                vec![
                    Factor::new("2", "sup-stopping L-infinity estimate", 2.0),
                    Factor::new("2q", "sparse Carleson embedding at q'", 2.0 * q),
                    Factor::new("3p", "Pythagoras for sparse sums at p", 3.0 * p),
                    Factor::new("3p'", "sparse decomposition at p", 3.0 * pc),
                ],
            ),
        ],
    )
}

fn k2_factors(p: Exponent, q: Exponent) -> Vec<Factor> {
    let (pc, q) = (p.conjugate().value(), q.value());
    vec![
        Factor::new("8", "A-infinity to Carleson transfer", 8.0),
        Factor::new("2", "sup-stopping L-infinity estimate for f", 2.0),
        Factor::new("2p'", "sparse Carleson embedding at p", 2.0 * pc),
        Factor::new("2", "sup-stopping L-infinity estimate for g", 2.0),
        Factor::new("2q", "sparse Carleson embedding at q'", 2.0 * q),
    ]
}

/// `K₂(p,q)` in `‖T‖ ≤ K₂ ‖M̄_C‖ ‖M̄_{D*}‖ ([σ]^{1/p}_{A∞(ω)} + [ω]^{1/q′}_{A∞(σ)}) 𝔅`.
pub fn k2(p: Exponent, q: Exponent) -> AssembledConstant {
    AssembledConstant::from_groups("K2", vec![group("either half", k2_factors(p, q))])
}

/// `K₂(p,p)` with both A∞ characteristics equal to 1 and the given maximal bounds.
fn unweighted_k2(name: &str, p: Exponent, maximal: [Factor; 2], extra: Option<Factor>) -> AssembledConstant {
    let mut factors = k2_factors(p, p);
    factors.extend(maximal);
    factors.push(Factor::new("2", "both A-infinity characteristics of a measure against itself are 1", 2.0));
    factors.extend(extra);
    AssembledConstant::from_groups(name, vec![group("unweighted dual pairing bound", factors)])
}

/// `K_JN(p)` in `sup_R μ(R)^{-1/p} ‖Σ_{Q⊆R} λ_Q 1_Q‖_p ≤ K_JN sup_R μ(R)^{-1} ‖Σ_{Q⊆R} λ_Q 1_Q‖_1`.
pub fn k_john_nirenberg(p: Exponent) -> AssembledConstant {
    let (pv, pc) = (p.value(), p.conjugate().value());
    unweighted_k2(
        "K_JN",
        p,
        [
            Factor::new("p'", "real dyadic maximal bound at p", pc),
            Factor::new("p", "real dyadic maximal bound at p'", pv),
        ],
        None,
    )
}

/// `K_ntv(s)` in `‖T‖_{L^s → L^s_{ℓ^s(β)}} ≤ K_ntv 𝔓_s` for the averaging embedding.
pub fn k_ntv(s: Exponent) -> AssembledConstant {
    let (sv, sc) = (s.value(), s.conjugate().value());
    unweighted_k2(
        "K_ntv",
        s,
        [
            Factor::new("s'", "real dyadic maximal bound at s", sc),
            Factor::new("s", "coordinatewise maximal bound on l^(s') at s'", sv),
        ],
        None,
    )
}

/// `K_dep` in `sup_f B(f,f)/‖f‖² ≤ K_dep sup_R sup_f B_R(f,f)/(‖f‖²_∞ μ(R))` for symmetric
/// blocks with nonnegative entries on `ℓ²`.
pub fn k_depolarisation() -> AssembledConstant {
    unweighted_k2(
        "K_dep",
        Exponent::TWO,
        [
            Factor::new("2", "coordinatewise maximal bound on l^2 at 2", 2.0),
            Factor::new("2", "coordinatewise maximal bound on l^2 at 2", 2.0),
        ],
        Some(Factor::new("2", "depolarisation of the bilinear testing constant", 2.0)),
    )
}

/// `c_p^{1/p}` with `c_r = r c_{r-1}` and `c_r = 1` for `r ≤ 1`.
pub fn k_lsmp(p: Exponent) -> f64 {
    let p = p.value();
    let mut c = 1.0;
    let mut r = p;
    while r > 1.0 {
        c *= r;
        r -= 1.0;
    }
    c.powf(1.0 / p)
}

/// The alternative assumption used in the reduction bound.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReductionCase {
    /// Lattice sup stopping with the kernel condition; `I = M̄`.
    HardyLittlewood,
    /// Average stopping with the kernel condition; the bound carries the child mass ratio.
    Doubling,
    /// Average stopping with parent-spread auxiliary functions and an L^t endpoint.
    LtEndpoint,
}

/// `K₃` in `‖T(fμ)‖_{L^p} ≤ K₃ 𝔅_t ‖I f‖_{L^p}`.
pub fn k3(p: Exponent, t: Exponent, case: ReductionCase, mass_ratio: f64) -> AssembledConstant {
    let (pv, pc) = (p.value(), p.conjugate().value());
    let aux = match case {
        ReductionCase::HardyLittlewood => Factor::new("4", "lattice sup stopping estimate", 4.0),
        ReductionCase::Doubling => Factor::new(
            "4 sup mu(F^)/mu(F')",
            "average stopping estimate with child mass ratio",
            4.0 * mass_ratio,
        ),
        ReductionCase::LtEndpoint => Factor::new(
            "4^(1/t') K_lsmp(t) + 4",
            "parent-spread estimate plus the remainder",
            4f64.powf(t.conjugate().reciprocal()) * k_lsmp(t) + 4.0,
        ),
    };
    AssembledConstant::from_groups(
        "K3",
        vec![group(
            "reduction chain",
            vec![
                Factor::new("(3p)^p", "Pythagoras for sparse sums at p", (3.0 * pv).powf(pv)),
                Factor::new("(2p')^p", "sparse Carleson embedding at p", (2.0 * pc).powf(pv)),
                Factor::new("4^(p-1)", "kernel stopping estimate", 4f64.powf(pv - 1.0)),
                aux,
            ],
        )],
    )
}

/// `K_mt` in `‖M̄‖_{L^p} ≤ K_mt 𝔐` for a system of branching `b` with uniform masses.
pub fn k_maximal_testing(p: Exponent, branching: usize) -> AssembledConstant {
    let (pv, pc) = (p.value(), p.conjugate().value());
    AssembledConstant::from_groups(
        "K_mt",
        vec![group(
            "stopping chain",
            vec![
                Factor::new("(3p)^p", "Pythagoras for sparse sums at p", (3.0 * pv).powf(pv)),
                Factor::new("(2p')^p", "sparse Carleson embedding at p", (2.0 * pc).powf(pv)),
                Factor::new("4^(p-1)", "lattice sup stopping estimate", 4f64.powf(pv - 1.0)),
                Factor::new("4b", "average stopping estimate under uniform masses", 4.0 * branching as f64),
            ],
        )],
    )
}

/// `K₄` in `B(f,F,L) ≤ K₄ 𝔅^p (F + L^p)` with `𝔅 = p′`.
pub fn k4() -> AssembledConstant {
    AssembledConstant::from_groups(
        "K4",
        vec![group(
            "upper bound",
            vec![Factor::new("1", "maximal bound plus the constant L", 1.0)],
        )],
    )
}

/// Relative gap in `∫ g T(fσ) dω = ∫ T*(gω) f dσ`.
pub fn duality_gap(inst: &ProblemInstance, f: &[f64], g: &[f64]) -> f64 {
    let sys = &inst.system;
    let k = &inst.kernel;
    let tf = k.apply_raw(sys, f, inst.sigma.leaf_masses(), false, CubeFilter::All);
    let tg = k.apply_raw(sys, g, inst.omega.leaf_masses(), true, CubeFilter::All);
    let pair = |a: &[f64], b: &[f64], m: &[f64]| -> (f64, f64) {
        let d = a.len() / m.len();
        let mut s = 0.0;
        let mut abs = 0.0;
        for (l, mass) in m.iter().enumerate() {
            for k in 0..d {
                let t = mass * a[l * d + k] * b[l * d + k];
                s += t;
                abs += t.abs();
            }
        }
        (s, abs)
    };
    let (left, la) = pair(g, &tf, inst.omega.leaf_masses());
    let (right, ra) = pair(&tg, f, inst.sigma.leaf_masses());
    let scale = la.max(ra);
    if scale == 0.0 {
        0.0
    } else {
        (left - right).abs() / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::DyadicSystem;

    fn one_cube(kernel_value: f64) -> ProblemInstance {
        let sys = DyadicSystem::new(0, 2).unwrap();
        let w = Weight::uniform(&sys);
        let mut k = PositiveKernel::zero(LatticeSpace::scalar(), LatticeSpace::scalar());
        if kernel_value != 0.0 {
            k.insert(CubeId::ROOT, vec![kernel_value]).unwrap();
        }
        ProblemInstance::new(sys, w.clone(), w, k, Exponent::TWO, Exponent::TWO, Exponent::INFINITY).unwrap()
    }

    #[test]
    fn single_cube_constants_are_one() {
        let inst = one_cube(1.0);
        let opts = AscentOptions::with_seed(1);
        let all = testing_constants(&inst, &opts);
        for r in [
            &all.norm,
            &all.direct,
            &all.dual,
            &all.pairing,
            &all.lt,
            &all.endpoint_direct,
            &all.constant_function,
        ] {
            assert!((r.value - 1.0).abs() < 1e-12, "{}: {}", r.name, r.value);
            assert_eq!(r.method, Method::Exact, "{}", r.name);
        }
        assert_eq!(sawyer_constants(&inst).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn zero_kernel_gives_zero() {
        let inst = one_cube(0.0);
        let all = testing_constants(&inst, &AscentOptions::with_seed(1));
        assert_eq!(all.norm.value, 0.0);
        assert_eq!(all.direct.value, 0.0);
        assert_eq!(all.pairing.value, 0.0);
    }

    #[test]
    fn sawyer_single_leaf() {
        let sys = DyadicSystem::new(1, 2).unwrap();
        let sigma = Weight::new(&sys, vec![0.3, 0.2]).unwrap();
        let omega = Weight::new(&sys, vec![0.5, 0.7]).unwrap();
        let mut k = PositiveKernel::zero(LatticeSpace::scalar(), LatticeSpace::scalar());
        k.insert(CubeId::new(1, 1), vec![2.0]).unwrap();
        let q = Exponent::new(3.0).unwrap();
        let p = Exponent::TWO;
        let inst = ProblemInstance::new(sys, sigma, omega, k, p, q, Exponent::INFINITY).unwrap();
        let (direct, _) = sawyer_constants(&inst).unwrap();
        let expected = 2.0 * 0.2 * 0.7f64.powf(1.0 / 3.0) / 0.2f64.sqrt();
        assert!((direct - expected).abs() < 1e-12);
    }

    #[test]
    fn a_infinity_of_self_is_one_and_carleson_example() {
        let sys = DyadicSystem::new(2, 2).unwrap();
        let w = Weight::uniform(&sys);
        assert!((a_infinity(&w, &w, &sys) - 1.0).abs() < 1e-12);
        let all: Vec<usize> = (0..sys.num_cubes()).collect();
        assert!((carleson_constant(&all, &w, &sys) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn lsmp_constant_values() {
        assert_eq!(k_lsmp(Exponent::TWO), 2f64.sqrt());
        assert!((k_lsmp(Exponent::new(3.0).unwrap()) - 6f64.powf(1.0 / 3.0)).abs() < 1e-15);
        assert!((k2(Exponent::TWO, Exponent::TWO).value - 512.0).abs() < 1e-12);
    }

    #[test]
    fn maximal_norm_trivial_system() {
        let sys = DyadicSystem::new(0, 2).unwrap();
        let w = Weight::uniform(&sys);
        let r = lattice_maximal_norm(
            &LatticeSpace::scalar(),
            &sys,
            &w,
            Exponent::TWO,
            &AscentOptions::with_seed(0),
            &[],
        );
        assert!((r.value - 1.0).abs() < 1e-12);
    }
}
