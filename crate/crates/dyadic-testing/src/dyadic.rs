//! Truncated dyadic systems, weights, leaf-constant functions and maximal operators.
//!
//! Cubes of a complete `b`-ary tree of depth `N` are stored in canonical
//! (level, index) order: the flat position of `L:I` is `(b^L - 1)/(b - 1) + I`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::lattice::{Exponent, LatticeError, LatticeSpace};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DyadicError {
    #[error("branching must be at least 2, got {0}")]
    InvalidBranching(usize),
    #[error("tree with depth {depth} and branching {branching} is too large")]
    TooLarge { depth: usize, branching: usize },
    #[error("cube {0} is not in the system")]
    UnknownCube(CubeId),
    #[error("malformed cube id `{0}`")]
    MalformedCubeId(String),
    #[error("active set must contain at least one cube")]
    EmptyActiveSet,
    #[error("expected {expected} leaf masses, got {got}")]
    LeafCount { expected: usize, got: usize },
    #[error("leaf masses must be finite and nonnegative")]
    InvalidMass,
    #[error("function has {got} values, expected {expected}")]
    ValueCount { expected: usize, got: usize },
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

/// A dyadic cube identified by its level and its index within the level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CubeId {
    pub level: usize,
    pub index: usize,
}

impl CubeId {
    pub const ROOT: CubeId = CubeId { level: 0, index: 0 };

    pub fn new(level: usize, index: usize) -> Self {
        CubeId { level, index }
    }
}

impl fmt::Display for CubeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.level, self.index)
    }
}

impl FromStr for CubeId {
    type Err = DyadicError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let malformed = || DyadicError::MalformedCubeId(s.to_string());
        let (level, index) = s.split_once(':').ok_or_else(malformed)?;
        Ok(CubeId {
            level: level.trim().parse().map_err(|_| malformed())?,
            index: index.trim().parse().map_err(|_| malformed())?,
        })
    }
}

impl Serialize for CubeId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CubeId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

const MAX_CUBES: usize = 1 << 22;

/// A complete `b`-ary tree of depth `N` with a mask of active cubes.
#[derive(Clone, Debug, PartialEq)]
pub struct DyadicSystem {
    depth: usize,
    branching: usize,
    active: Vec<bool>,
    level_offsets: Vec<usize>,
    levels: Vec<usize>,
}

impl DyadicSystem {
    /// The truncated system with every cube active.
    pub fn new(depth: usize, branching: usize) -> Result<Self, DyadicError> {
        if branching < 2 {
            return Err(DyadicError::InvalidBranching(branching));
        }
        let mut level_offsets = Vec::with_capacity(depth + 2);
        let mut total = 0usize;
        let mut width = 1usize;
        for _ in 0..=depth {
            level_offsets.push(total);
            total = total
                .checked_add(width)
                .filter(|t| *t <= MAX_CUBES)
                .ok_or(DyadicError::TooLarge { depth, branching })?;
            width = width.saturating_mul(branching);
        }
        level_offsets.push(total);
        let mut levels = Vec::with_capacity(total);
        for level in 0..=depth {
            let count = level_offsets[level + 1] - level_offsets[level];
            levels.extend(std::iter::repeat_n(level, count));
        }
        Ok(DyadicSystem {
            depth,
            branching,
            active: vec![true; total],
            level_offsets,
            levels,
        })
    }

    /// A system whose operators only see the listed cubes.
    pub fn with_active(
        depth: usize,
        branching: usize,
        active: &[CubeId],
    ) -> Result<Self, DyadicError> {
        let mut sys = DyadicSystem::new(depth, branching)?;
        if active.is_empty() {
            return Err(DyadicError::EmptyActiveSet);
        }
        sys.active.iter_mut().for_each(|a| *a = false);
        for cube in active {
            let pos = sys.position(*cube)?;
            sys.active[pos] = true;
        }
        Ok(sys)
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn branching(&self) -> usize {
        self.branching
    }

    pub fn num_cubes(&self) -> usize {
        self.active.len()
    }

    pub fn num_leaves(&self) -> usize {
        self.level_offsets[self.depth + 1] - self.level_offsets[self.depth]
    }

    /// Number of cubes on a level.
    pub fn level_width(&self, level: usize) -> usize {
        self.level_offsets[level + 1] - self.level_offsets[level]
    }

    pub fn all_active(&self) -> bool {
        self.active.iter().all(|&a| a)
    }

    pub fn active_mask(&self) -> &[bool] {
        &self.active
    }

    /// Active cubes in canonical order, or `None` when every cube is active.
    pub fn active_list(&self) -> Option<Vec<CubeId>> {
        if self.all_active() {
            None
        } else {
            Some(
                (0..self.num_cubes())
                    .filter(|&i| self.active[i])
                    .map(|i| self.cube(i))
                    .collect(),
            )
        }
    }

    /// Flat positions of the active cubes in canonical order.
    pub fn active_list_positions(&self) -> Vec<usize> {
        (0..self.num_cubes()).filter(|&i| self.active[i]).collect()
    }

    pub fn contains_cube(&self, cube: CubeId) -> bool {
        cube.level <= self.depth && cube.index < self.level_width(cube.level)
    }

    /// Flat position of a cube in canonical order.
    pub fn position(&self, cube: CubeId) -> Result<usize, DyadicError> {
        if self.contains_cube(cube) {
            Ok(self.level_offsets[cube.level] + cube.index)
        } else {
            Err(DyadicError::UnknownCube(cube))
        }
    }

    pub(crate) fn pos(&self, cube: CubeId) -> usize {
        self.level_offsets[cube.level] + cube.index
    }

    /// The cube at a flat position.
    pub fn cube(&self, pos: usize) -> CubeId {
        let level = self.levels[pos];
        CubeId {
            level,
            index: pos - self.level_offsets[level],
        }
    }

    pub fn level_of(&self, pos: usize) -> usize {
        self.levels[pos]
    }

    pub fn is_active(&self, pos: usize) -> bool {
        self.active[pos]
    }

    pub fn parent(&self, pos: usize) -> Option<usize> {
        let cube = self.cube(pos);
        (cube.level > 0).then(|| self.pos(CubeId::new(cube.level - 1, cube.index / self.branching)))
    }

    /// Flat positions of the dyadic children.
    pub fn children(&self, pos: usize) -> std::ops::Range<usize> {
        let cube = self.cube(pos);
        if cube.level == self.depth {
            return 0..0;
        }
        let first = self.level_offsets[cube.level + 1] + cube.index * self.branching;
        first..first + self.branching
    }

    /// Leaf indices (0-based within the bottom level) covered by a cube.
    pub fn leaf_range(&self, pos: usize) -> std::ops::Range<usize> {
        let cube = self.cube(pos);
        let span = self.branching.pow((self.depth - cube.level) as u32);
        cube.index * span..(cube.index + 1) * span
    }

    /// Flat position of the leaf cube with the given leaf index.
    pub fn leaf_position(&self, leaf: usize) -> usize {
        self.level_offsets[self.depth] + leaf
    }

    /// The ancestor of a leaf on a given level.
    pub fn leaf_ancestor(&self, leaf: usize, level: usize) -> usize {
        let span = self.branching.pow((self.depth - level) as u32);
        self.level_offsets[level] + leaf / span
    }

    /// True when cube `inner` is contained in cube `outer`.
    pub fn is_subcube(&self, inner: usize, outer: usize) -> bool {
        let (a, b) = (self.cube(inner), self.cube(outer));
        if a.level < b.level {
            return false;
        }
        let span = self.branching.pow((a.level - b.level) as u32);
        a.index / span == b.index
    }

    /// Active cubes containing no other active cube.
    pub fn minimal_active(&self) -> Vec<usize> {
        let n = self.num_cubes();
        let mut has_active_below = vec![false; n];
        for pos in (0..n).rev() {
            let below = self
                .children(pos)
                .any(|c| self.active[c] || has_active_below[c]);
            has_active_below[pos] = below;
        }
        (0..n)
            .filter(|&p| self.active[p] && !has_active_below[p])
            .collect()
    }

    /// Active cubes contained in no other active cube.
    pub fn maximal_active(&self) -> Vec<usize> {
        let n = self.num_cubes();
        let mut covered = vec![false; n];
        let mut out = Vec::new();
        for pos in 0..n {
            let above = self
                .parent(pos)
                .is_some_and(|par| self.active[par] || covered[par]);
            covered[pos] = above;
            if self.active[pos] && !above {
                out.push(pos);
            }
        }
        out
    }

    /// Active cubes contained in `outer`, in canonical order.
    pub fn active_subcubes(&self, outer: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let start = self.cube(outer);
        for level in start.level..=self.depth {
            let span = self.branching.pow((level - start.level) as u32);
            let first = self.level_offsets[level] + start.index * span;
            out.extend((first..first + span).filter(|&p| self.active[p]));
        }
        out
    }
}

/// A measure on the leaves of a dyadic system.
#[derive(Clone, Debug, PartialEq)]
pub struct Weight {
    leaf_masses: Vec<f64>,
    cube_masses: Vec<f64>,
}

impl Weight {
    pub fn new(sys: &DyadicSystem, leaf_masses: Vec<f64>) -> Result<Self, DyadicError> {
        if leaf_masses.len() != sys.num_leaves() {
            return Err(DyadicError::LeafCount {
                expected: sys.num_leaves(),
                got: leaf_masses.len(),
            });
        }
        if leaf_masses.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(DyadicError::InvalidMass);
        }
        let mut cube_masses = vec![0.0; sys.num_cubes()];
        let first_leaf = sys.leaf_position(0);
        cube_masses[first_leaf..].copy_from_slice(&leaf_masses);
        for pos in (0..first_leaf).rev() {
            cube_masses[pos] = sys.children(pos).map(|c| cube_masses[c]).sum();
        }
        Ok(Weight {
            leaf_masses,
            cube_masses,
        })
    }

    /// Lebesgue measure normalized so that the root has mass one.
    pub fn uniform(sys: &DyadicSystem) -> Self {
        let n = sys.num_leaves();
        Weight::new(sys, vec![1.0 / n as f64; n]).expect("uniform masses are valid")
    }

    pub fn leaf_masses(&self) -> &[f64] {
        &self.leaf_masses
    }

    pub fn cube_masses(&self) -> &[f64] {
        &self.cube_masses
    }

    /// Mass of the cube at a flat position.
    pub fn mass(&self, pos: usize) -> f64 {
        self.cube_masses[pos]
    }

    pub fn measure(&self, sys: &DyadicSystem, cube: CubeId) -> Result<f64, DyadicError> {
        Ok(self.cube_masses[sys.position(cube)?])
    }

    pub fn total(&self) -> f64 {
        self.cube_masses[0]
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Weight {
            leaf_masses: self.leaf_masses.iter().map(|m| m * factor).collect(),
            cube_masses: self.cube_masses.iter().map(|m| m * factor).collect(),
        }
    }
}

/// A lattice-valued function constant on each leaf.
#[derive(Clone, Debug, PartialEq)]
pub struct CubeFunction {
    space: LatticeSpace,
    values: Vec<f64>,
}

impl CubeFunction {
    /// Builds a function from leaf-major values (`dim` entries per leaf).
    pub fn new(space: LatticeSpace, values: Vec<f64>) -> Result<Self, DyadicError> {
        if !values.len().is_multiple_of(space.dim()) {
            return Err(DyadicError::ValueCount {
                expected: space.dim() * (values.len() / space.dim() + 1),
                got: values.len(),
            });
        }
        Ok(CubeFunction { space, values })
    }

    pub fn for_system(
        sys: &DyadicSystem,
        space: LatticeSpace,
        values: Vec<f64>,
    ) -> Result<Self, DyadicError> {
        let expected = sys.num_leaves() * space.dim();
        if values.len() != expected {
            return Err(DyadicError::ValueCount {
                expected,
                got: values.len(),
            });
        }
        Ok(CubeFunction { space, values })
    }

    pub fn zeros(sys: &DyadicSystem, space: LatticeSpace) -> Self {
        let n = sys.num_leaves() * space.dim();
        CubeFunction {
            space,
            values: vec![0.0; n],
        }
    }

    /// A real-valued function.
    pub fn scalar(values: Vec<f64>) -> Self {
        CubeFunction {
            space: LatticeSpace::scalar(),
            values,
        }
    }

    /// The same vector on every leaf.
    pub fn constant(sys: &DyadicSystem, space: LatticeSpace, value: &[f64]) -> Self {
        let values = value
            .iter()
            .copied()
            .cycle()
            .take(sys.num_leaves() * space.dim())
            .collect();
        CubeFunction { space, values }
    }

    pub fn space(&self) -> &LatticeSpace {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn num_leaves(&self) -> usize {
        self.values.len() / self.space.dim()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn leaf(&self, leaf: usize) -> &[f64] {
        let d = self.dim();
        &self.values[leaf * d..(leaf + 1) * d]
    }

    pub fn leaf_mut(&mut self, leaf: usize) -> &mut [f64] {
        let d = self.dim();
        &mut self.values[leaf * d..(leaf + 1) * d]
    }

    /// Pointwise lattice norms `|f(x)|`.
    pub fn pointwise_norms(&self) -> Vec<f64> {
        (0..self.num_leaves())
            .map(|l| self.space.norm(self.leaf(l)))
            .collect()
    }

    pub fn is_positive(&self) -> bool {
        self.values.iter().all(|&v| v >= 0.0)
    }

    /// `f · 1_R`.
    pub fn restricted(&self, sys: &DyadicSystem, pos: usize) -> Self {
        let mut out = CubeFunction {
            space: self.space.clone(),
            values: vec![0.0; self.values.len()],
        };
        let d = self.dim();
        let range = sys.leaf_range(pos);
        out.values[range.start * d..range.end * d]
            .copy_from_slice(&self.values[range.start * d..range.end * d]);
        out
    }

    pub fn with_space(mut self, space: LatticeSpace) -> Self {
        debug_assert_eq!(space.dim(), self.space.dim());
        self.space = space;
        self
    }

    fn check(&self, sys: &DyadicSystem) {
        debug_assert_eq!(self.num_leaves(), sys.num_leaves());
    }

    /// `∫_Q f dμ` for every cube, cube-major with `dim` entries per cube.
    pub fn cube_integrals(&self, sys: &DyadicSystem, w: &Weight) -> Vec<f64> {
        self.check(sys);
        let d = self.dim();
        let mut out = vec![0.0; sys.num_cubes() * d];
        let first = sys.leaf_position(0);
        for leaf in 0..sys.num_leaves() {
            let m = w.leaf_masses()[leaf];
            let dst = &mut out[(first + leaf) * d..(first + leaf + 1) * d];
            for (o, v) in dst.iter_mut().zip(self.leaf(leaf)) {
                *o = m * v;
            }
        }
        for pos in (0..first).rev() {
            for c in sys.children(pos) {
                for k in 0..d {
                    out[pos * d + k] += out[c * d + k];
                }
            }
        }
        out
    }

    /// Averages `⟨f⟩_Q` for every cube; zero on null cubes.
    pub fn averages(&self, sys: &DyadicSystem, w: &Weight) -> Vec<f64> {
        let d = self.dim();
        let mut out = self.cube_integrals(sys, w);
        for pos in 0..sys.num_cubes() {
            let m = w.mass(pos);
            for v in &mut out[pos * d..(pos + 1) * d] {
                *v = if m > 0.0 { *v / m } else { 0.0 };
            }
        }
        out
    }

    pub fn average(&self, sys: &DyadicSystem, w: &Weight, cube: CubeId) -> Result<Vec<f64>, DyadicError> {
        let pos = sys.position(cube)?;
        let m = w.mass(pos);
        let d = self.dim();
        if m == 0.0 {
            return Ok(vec![0.0; d]);
        }
        let mut acc = vec![0.0; d];
        for leaf in sys.leaf_range(pos) {
            let lm = w.leaf_masses()[leaf];
            for (a, v) in acc.iter_mut().zip(self.leaf(leaf)) {
                *a += lm * v;
            }
        }
        acc.iter_mut().for_each(|a| *a /= m);
        Ok(acc)
    }

    /// `‖f‖_{L^p_E(μ)}`.
    pub fn lp_norm(&self, p: Exponent, w: &Weight) -> f64 {
        let norms = self.pointwise_norms();
        weighted_lp(&norms, w.leaf_masses(), p)
    }
}

/// `(Σ m_x h_x^p)^{1/p}`, or the max of `h_x` over leaves of positive mass for `p = ∞`.
pub fn weighted_lp(values: &[f64], masses: &[f64], p: Exponent) -> f64 {
    if p.is_infinite() {
        return values
            .iter()
            .zip(masses)
            .filter(|(_, m)| **m > 0.0)
            .fold(0.0, |acc, (v, _)| acc.max(v.abs()));
    }
    let p = p.value();
    let scale = values
        .iter()
        .zip(masses)
        .filter(|(_, m)| **m > 0.0)
        .fold(0.0f64, |acc, (v, _)| acc.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    let sum: f64 = values
        .iter()
        .zip(masses)
        .map(|(v, m)| m * (v.abs() / scale).powf(p))
        .sum();
    scale * sum.powf(1.0 / p)
}

/// Which cubes a maximal supremum ranges over.
#[derive(Clone, Copy, Debug)]
enum Scope {
    All,
    Within(usize),
}

fn maximal_with(f: &CubeFunction, w: &Weight, sys: &DyadicSystem, scope: Scope) -> CubeFunction {
    let d = f.dim();
    let avgs = f.averages(sys, w);
    let mut out = CubeFunction::zeros(sys, f.space().clone());
    let (root_level, leaves) = match scope {
        Scope::All => (0, 0..sys.num_leaves()),
        Scope::Within(r) => (sys.level_of(r), sys.leaf_range(r)),
    };
    for leaf in leaves {
        let mut best: Option<Vec<f64>> = None;
        for level in root_level..=sys.depth() {
            let pos = sys.leaf_ancestor(leaf, level);
            if !sys.is_active(pos) || w.mass(pos) <= 0.0 {
                continue;
            }
            let avg = &avgs[pos * d..(pos + 1) * d];
            match best.as_mut() {
                None => best = Some(avg.to_vec()),
                Some(b) => b.iter_mut().zip(avg).for_each(|(x, y)| *x = x.max(*y)),
            }
        }
        if let Some(b) = best {
            out.leaf_mut(leaf).copy_from_slice(&b);
        }
    }
    out
}

/// The lattice maximal function `M̄f = sup_Q ⟨f⟩_Q 1_Q` over active non-null cubes.
pub fn lattice_maximal(f: &CubeFunction, w: &Weight, sys: &DyadicSystem) -> CubeFunction {
    maximal_with(f, w, sys, Scope::All)
}

/// `sup_{Q ⊆ R} ⟨f⟩_Q 1_Q`, supported on `R`.
pub fn localized_maximal(f: &CubeFunction, w: &Weight, sys: &DyadicSystem, r: usize) -> CubeFunction {
    maximal_with(f, w, sys, Scope::Within(r))
}

/// The real maximal function `sup_Q ⟨|h|⟩_Q 1_Q`.
pub fn scalar_maximal(h: &[f64], w: &Weight, sys: &DyadicSystem) -> Vec<f64> {
    let abs = CubeFunction::scalar(h.iter().map(|v| v.abs()).collect());
    lattice_maximal(&abs, w, sys).into_values()
}

/// `M^ω_R(σ) = sup_{Q ⊆ R, ω(Q) > 0} σ(Q)/ω(Q) 1_Q` as leaf values.
pub fn ratio_maximal(sigma: &Weight, omega: &Weight, sys: &DyadicSystem, r: usize) -> Vec<f64> {
    let mut out = vec![0.0; sys.num_leaves()];
    let root_level = sys.level_of(r);
    for leaf in sys.leaf_range(r) {
        let mut best = 0.0f64;
        for level in root_level..=sys.depth() {
            let pos = sys.leaf_ancestor(leaf, level);
            let om = omega.mass(pos);
            if sys.is_active(pos) && om > 0.0 {
                best = best.max(sigma.mass(pos) / om);
            }
        }
        out[leaf] = best;
    }
    out
}

/// `E_{𝒟*} f = Σ_{Q ∈ 𝒟*} ⟨f⟩_Q 1_Q` over the minimal active cubes.
pub fn finest_averaging(f: &CubeFunction, w: &Weight, sys: &DyadicSystem) -> CubeFunction {
    let d = f.dim();
    let avgs = f.averages(sys, w);
    let mut out = CubeFunction::zeros(sys, f.space().clone());
    for pos in sys.minimal_active() {
        let avg = &avgs[pos * d..(pos + 1) * d];
        for leaf in sys.leaf_range(pos) {
            out.leaf_mut(leaf).copy_from_slice(avg);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary(depth: usize) -> DyadicSystem {
        DyadicSystem::new(depth, 2).unwrap()
    }

    #[test]
    fn cube_count_and_navigation() {
        let sys = DyadicSystem::new(3, 3).unwrap();
        assert_eq!(sys.num_cubes(), (3usize.pow(4) - 1) / 2);
        assert_eq!(sys.num_leaves(), 27);
        for pos in 1..sys.num_cubes() {
            let parent = sys.parent(pos).unwrap();
            assert!(sys.children(parent).contains(&pos));
            assert!(sys.is_subcube(pos, parent));
        }
        assert_eq!(sys.leaf_range(sys.position(CubeId::new(1, 2)).unwrap()), 18..27);
        assert_eq!("2:3".parse::<CubeId>().unwrap(), CubeId::new(2, 3));
        assert!("2-3".parse::<CubeId>().is_err());
    }

    #[test]
    fn measure_is_additive() {
        let sys = binary(2);
        let w = Weight::uniform(&sys);
        assert!((w.total() - 1.0).abs() < 1e-15);
        assert_eq!(w.mass(sys.leaf_position(2)), 0.25);
        let w = Weight::new(&sys, vec![0.4, 0.4, 0.1, 0.1]).unwrap();
        assert!((w.measure(&sys, CubeId::new(1, 1)).unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn averages_examples() {
        let sys = binary(1);
        let w = Weight::new(&sys, vec![0.5, 0.5]).unwrap();
        let f = CubeFunction::scalar(vec![4.0, 2.0]);
        assert_eq!(f.average(&sys, &w, CubeId::ROOT).unwrap(), vec![3.0]);

        let sys = binary(2);
        let w = Weight::new(&sys, vec![0.4, 0.4, 0.1, 0.1]).unwrap();
        let f = CubeFunction::scalar(vec![0.0, 0.0, 0.0, 1.0]);
        let avg = f.average(&sys, &w, CubeId::ROOT).unwrap()[0];
        assert!((avg - 0.1).abs() < 1e-15);
    }

    #[test]
    fn null_cube_average_is_zero() {
        let sys = binary(1);
        let w = Weight::new(&sys, vec![0.0, 1.0]).unwrap();
        let f = CubeFunction::scalar(vec![5.0, 1.0]);
        assert_eq!(f.average(&sys, &w, CubeId::new(1, 0)).unwrap(), vec![0.0]);
    }

    #[test]
    fn maximal_examples() {
        let sys = binary(1);
        let w = Weight::uniform(&sys);
        let f = CubeFunction::scalar(vec![4.0, 2.0]);
        assert_eq!(lattice_maximal(&f, &w, &sys).values(), &[4.0, 3.0]);

        let sys0 = binary(0);
        let w0 = Weight::new(&sys0, vec![2.0]).unwrap();
        let g = CubeFunction::scalar(vec![7.0]);
        assert_eq!(lattice_maximal(&g, &w0, &sys0).values(), &[7.0]);
    }

    #[test]
    fn lattice_maximal_is_componentwise() {
        let sys = binary(1);
        let w = Weight::uniform(&sys);
        let space = LatticeSpace::euclidean(2).unwrap();
        let f = CubeFunction::for_system(&sys, space, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(lattice_maximal(&f, &w, &sys).values(), &[1.0, 0.5, 0.5, 1.0]);
    }

    #[test]
    fn ratio_maximal_examples() {
        let sys = binary(2);
        let w = Weight::new(&sys, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!(ratio_maximal(&w, &w, &sys, 0).iter().all(|&v| v == 1.0));
        let sigma = Weight::new(&sys, vec![0.2, 0.2, 0.3, 0.4]).unwrap();
        let m = ratio_maximal(&sigma, &w, &sys, 0);
        assert_eq!(m[0], 2.0);
        assert!(m[1] < 2.0 && m[1] > 1.0);
    }

    #[test]
    fn localized_maximal_on_leaf() {
        let sys = binary(2);
        let w = Weight::new(&sys, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let f = CubeFunction::scalar(vec![1.0, 2.0, 3.0, 4.0]);
        let leaf = sys.leaf_position(2);
        assert_eq!(localized_maximal(&f, &w, &sys, leaf).values(), &[0.0, 0.0, 3.0, 0.0]);
    }

    #[test]
    fn finest_averaging_examples() {
        let sys = binary(2);
        let w = Weight::new(&sys, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let f = CubeFunction::scalar(vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(finest_averaging(&f, &w, &sys), f);
        let root_only = DyadicSystem::with_active(2, 2, &[CubeId::ROOT]).unwrap();
        let avg = f.average(&sys, &w, CubeId::ROOT).unwrap()[0];
        assert!(finest_averaging(&f, &w, &root_only)
            .values()
            .iter()
            .all(|v| (v - avg).abs() < 1e-15));
    }

    #[test]
    fn lp_norm_examples() {
        let sys = binary(2);
        let w = Weight::new(&sys, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let space = LatticeSpace::euclidean(2).unwrap();
        let f = CubeFunction::constant(&sys, space.clone(), &[3.0, 4.0]);
        assert!((f.lp_norm(Exponent::new(3.0).unwrap(), &w) - 5.0).abs() < 1e-12);
        let mut g = CubeFunction::zeros(&sys, space);
        g.leaf_mut(1).copy_from_slice(&[0.6, 0.8]);
        assert!((g.lp_norm(Exponent::TWO, &w) - 0.2f64.sqrt()).abs() < 1e-15);
        assert_eq!(g.lp_norm(Exponent::INFINITY, &w), 1.0);
    }

    #[test]
    fn minimal_and_maximal_active() {
        let active = [CubeId::new(1, 0), CubeId::new(2, 1), CubeId::new(2, 3)];
        let sys = DyadicSystem::with_active(2, 2, &active).unwrap();
        let minimal: Vec<CubeId> = sys.minimal_active().into_iter().map(|p| sys.cube(p)).collect();
        assert_eq!(minimal, vec![CubeId::new(2, 1), CubeId::new(2, 3)]);
        let maximal: Vec<CubeId> = sys.maximal_active().into_iter().map(|p| sys.cube(p)).collect();
        assert_eq!(maximal, vec![CubeId::new(1, 0), CubeId::new(2, 3)]);
    }
}
