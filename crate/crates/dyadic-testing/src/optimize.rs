//! Multi-start projected gradient ascent on products of simple constraint sets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::lattice::{Exponent, LatticeSpace};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AscentOptions {
    pub starts: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for AscentOptions {
    fn default() -> Self {
        AscentOptions {
            starts: 32,
            max_iterations: 5000,
            tolerance: 1e-10,
            seed: 0,
        }
    }
}

impl AscentOptions {
    pub fn with_seed(seed: u64) -> Self {
        AscentOptions {
            seed,
            ..Default::default()
        }
    }
}

/// A function to maximize together with a (super)gradient.
pub trait Objective {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], grad: &mut [f64]);
}

/// A constraint set with a map back onto it and a source of random points.
pub trait Retraction {
    fn dim(&self) -> usize;
    fn retract(&self, x: &mut [f64]);
    fn random_point(&self, rng: &mut ChaCha8Rng) -> Vec<f64>;

    /// Removes from `grad` its component normal to the set at `x`.
    fn project_tangent(&self, _x: &[f64], _grad: &mut [f64]) {}

    /// A point of the set maximizing `⟨grad, ·⟩`, when available in closed form.
    fn linear_maximizer(&self, _grad: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

fn remove_normal(grad: &mut [f64], normal: &[f64]) {
    let nn: f64 = normal.iter().map(|v| v * v).sum();
    if nn > 0.0 {
        let c = grad.iter().zip(normal).map(|(g, n)| g * n).sum::<f64>() / nn;
        grad.iter_mut().zip(normal).for_each(|(g, n)| *g -= c * n);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AscentResult {
    pub value: f64,
    pub point: Vec<f64>,
    pub iterations: usize,
    pub start: usize,
}

fn climb<O: Objective, R: Retraction>(
    objective: &O,
    retraction: &R,
    mut x: Vec<f64>,
    opts: &AscentOptions,
) -> (f64, Vec<f64>, usize) {
    retraction.retract(&mut x);
    let mut value = objective.value(&x);
    let mut grad = vec![0.0; x.len()];
    let mut candidate = vec![0.0; x.len()];
    let mut step = 0.5;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        objective.gradient(&x, &mut grad);
        // For convex objectives the linearization step alone never decreases the value.
        if let Some(y) = retraction.linear_maximizer(&grad) {
            let v = objective.value(&y);
            if v > value {
                let gain = v - value;
                x = y;
                value = v;
                if gain > opts.tolerance * value.abs().max(f64::MIN_POSITIVE) {
                    continue;
                }
                objective.gradient(&x, &mut grad);
            }
        }
        retraction.project_tangent(&x, &mut grad);
        let scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if scale == 0.0 || !scale.is_finite() {
            break;
        }
        let mut improved = false;
        while step > 1e-14 {
            for ((c, xi), g) in candidate.iter_mut().zip(&x).zip(&grad) {
                *c = xi + step * g / scale;
            }
            retraction.retract(&mut candidate);
            let v = objective.value(&candidate);
            if v > value {
                let gain = v - value;
                std::mem::swap(&mut x, &mut candidate);
                value = v;
                improved = gain > opts.tolerance * value.abs().max(f64::MIN_POSITIVE);
                step = (step * 2.0).min(4.0);
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (value, x, iterations)
}

/// Maximizes `objective` over the set described by `retraction` from the warm
/// starts followed by seeded random starts; ties keep the earliest start.
pub fn maximize<O: Objective, R: Retraction>(
    objective: &O,
    retraction: &R,
    warm_starts: &[Vec<f64>],
    opts: &AscentOptions,
) -> AscentResult {
    let mut best: Option<AscentResult> = None;
    let total = warm_starts.len() + opts.starts;
    for start in 0..total {
        let x0 = if start < warm_starts.len() {
            warm_starts[start].clone()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(
                opts.seed
                    .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                    .wrapping_add(start as u64),
            );
            retraction.random_point(&mut rng)
        };
        let (value, point, iterations) = climb(objective, retraction, x0, opts);
        if best.as_ref().is_none_or(|b| value > b.value) {
            best = Some(AscentResult {
                value,
                point,
                iterations,
                start,
            });
        }
    }
    best.unwrap_or(AscentResult {
        value: 0.0,
        point: vec![0.0; retraction.dim()],
        iterations: 0,
        start: 0,
    })
}

fn random_positive(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            // Occasional exact zeros let the search reach faces of the cone.
            if rng.random_bool(0.15) {
                0.0
            } else {
                rng.random::<f64>()
            }
        })
        .collect()
}

/// Leaf-major vectors that are positive with unit lattice norm at every support
/// leaf and zero elsewhere.
#[derive(Clone, Debug)]
pub struct PointwiseSphere {
    space: LatticeSpace,
    support: Vec<bool>,
}

impl PointwiseSphere {
    pub fn new(space: LatticeSpace, support: Vec<bool>) -> Self {
        PointwiseSphere { space, support }
    }
}

impl Retraction for PointwiseSphere {
    fn dim(&self) -> usize {
        self.support.len() * self.space.dim()
    }

    fn retract(&self, x: &mut [f64]) {
        let d = self.space.dim();
        for (leaf, chunk) in x.chunks_mut(d).enumerate() {
            if self.support[leaf] {
                self.space.normalize_positive(chunk);
            } else {
                chunk.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    fn random_point(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut x = random_positive(rng, self.dim());
        self.retract(&mut x);
        x
    }

    fn project_tangent(&self, x: &[f64], grad: &mut [f64]) {
        let d = self.space.dim();
        let mut normal = vec![0.0; d];
        for (xc, gc) in x.chunks(d).zip(grad.chunks_mut(d)) {
            self.space.norm_gradient(xc, &mut normal);
            remove_normal(gc, &normal);
        }
    }

    fn linear_maximizer(&self, grad: &[f64]) -> Option<Vec<f64>> {
        let d = self.space.dim();
        let mut x = vec![0.0; grad.len()];
        for (leaf, (xc, gc)) in x.chunks_mut(d).zip(grad.chunks(d)).enumerate() {
            if self.support[leaf] {
                xc.copy_from_slice(&self.space.dual_maximizer(gc));
            }
        }
        Some(x)
    }
}

/// Positive leaf-major functions with `‖f‖_{L^t_E(m)} = 1`, supported on the
/// support leaves of positive mass.
#[derive(Clone, Debug)]
pub struct LtSphere {
    space: LatticeSpace,
    masses: Vec<f64>,
    t: Exponent,
}

impl LtSphere {
    /// `masses` should already be zero off the support.
    pub fn new(space: LatticeSpace, masses: Vec<f64>, t: Exponent) -> Self {
        LtSphere { space, masses, t }
    }

    fn norm(&self, x: &[f64]) -> f64 {
        let d = self.space.dim();
        let norms: Vec<f64> = x.chunks(d).map(|c| self.space.norm(c)).collect();
        crate::dyadic::weighted_lp(&norms, &self.masses, self.t)
    }

    fn norm_gradient(&self, x: &[f64], out: &mut [f64]) {
        let d = self.space.dim();
        let total = self.norm(x);
        out.iter_mut().for_each(|v| *v = 0.0);
        if total == 0.0 {
            return;
        }
        for ((xc, oc), m) in x.chunks(d).zip(out.chunks_mut(d)).zip(&self.masses) {
            if *m == 0.0 {
                continue;
            }
            let local = self.space.norm(xc);
            let factor = if self.t.is_infinite() {
                if local < total * (1.0 - 1e-12) {
                    continue;
                }
                1.0
            } else {
                m * (local / total).powf(self.t.value() - 1.0)
            };
            self.space.norm_gradient(xc, oc);
            oc.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

impl Retraction for LtSphere {
    fn dim(&self) -> usize {
        self.masses.len() * self.space.dim()
    }

    fn retract(&self, x: &mut [f64]) {
        let d = self.space.dim();
        for (chunk, m) in x.chunks_mut(d).zip(&self.masses) {
            if *m > 0.0 {
                chunk.iter_mut().for_each(|v| *v = v.max(0.0));
            } else {
                chunk.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let n = self.norm(x);
        if n > 0.0 && n.is_finite() {
            x.iter_mut().for_each(|v| *v /= n);
        } else {
            let unit = self.space.unit_positive();
            for (chunk, m) in x.chunks_mut(d).zip(&self.masses) {
                if *m > 0.0 {
                    chunk.copy_from_slice(&unit);
                }
            }
            let n = self.norm(x);
            if n > 0.0 {
                x.iter_mut().for_each(|v| *v /= n);
            }
        }
    }

    fn random_point(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut x = random_positive(rng, self.dim());
        self.retract(&mut x);
        x
    }

    fn project_tangent(&self, x: &[f64], grad: &mut [f64]) {
        let mut normal = vec![0.0; x.len()];
        self.norm_gradient(x, &mut normal);
        remove_normal(grad, &normal);
    }

    fn linear_maximizer(&self, grad: &[f64]) -> Option<Vec<f64>> {
        let d = self.space.dim();
        let dual = self.space.dual();
        let mut x = vec![0.0; grad.len()];
        // On a leaf of mass m the functional is m⟨h, x⟩ with h = grad/m.
        let mut sizes = vec![0.0; self.masses.len()];
        for (leaf, (xc, gc)) in x.chunks_mut(d).zip(grad.chunks(d)).enumerate() {
            let m = self.masses[leaf];
            if m <= 0.0 {
                continue;
            }
            let h: Vec<f64> = gc.iter().map(|g| (g / m).max(0.0)).collect();
            xc.copy_from_slice(&self.space.dual_maximizer(&h));
            sizes[leaf] = dual.norm(&h);
        }
        let t = self.t;
        for (leaf, xc) in x.chunks_mut(d).enumerate() {
            let a = if t.is_infinite() {
                1.0
            } else if t.value() == 1.0 {
                0.0
            } else {
                sizes[leaf].powf(t.conjugate().value() - 1.0)
            };
            xc.iter_mut().for_each(|v| *v *= a);
        }
        if t.value() == 1.0 {
            let best = (0..self.masses.len())
                .filter(|&l| self.masses[l] > 0.0)
                .max_by(|&a, &b| sizes[a].total_cmp(&sizes[b]).then(b.cmp(&a)))?;
            let unit = self.space.dual_maximizer(&grad[best * d..(best + 1) * d]);
            x[best * d..(best + 1) * d].copy_from_slice(&unit);
        }
        self.retract(&mut x);
        Some(x)
    }
}

/// Positive unit vectors of a single lattice.
#[derive(Clone, Debug)]
pub struct UnitSphere {
    space: LatticeSpace,
}

impl UnitSphere {
    pub fn new(space: LatticeSpace) -> Self {
        UnitSphere { space }
    }
}

impl Retraction for UnitSphere {
    fn dim(&self) -> usize {
        self.space.dim()
    }

    fn retract(&self, x: &mut [f64]) {
        self.space.normalize_positive(x);
    }

    fn random_point(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut x = random_positive(rng, self.dim());
        self.retract(&mut x);
        x
    }

    fn project_tangent(&self, x: &[f64], grad: &mut [f64]) {
        let mut normal = vec![0.0; x.len()];
        self.space.norm_gradient(x, &mut normal);
        remove_normal(grad, &normal);
    }

    fn linear_maximizer(&self, grad: &[f64]) -> Option<Vec<f64>> {
        Some(self.space.dual_maximizer(grad))
    }
}
