//! Grid dynamic programming for the scalar Bellman function `B_N(f, F, L)` of the
//! dyadic maximal operator, checks of its properties and the bound it induces.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constants::k4;
use crate::dyadic::{DyadicSystem, Weight};
use crate::generate::rng_for;
use crate::lattice::Exponent;

/// Relative slack for interpolated inequalities.
pub const INTERPOLATION_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BellmanError {
    #[error("grid needs at least 3 nodes per axis and 2 split points, got {nodes} and {split}")]
    GridTooSmall { nodes: usize, split: usize },
    #[error("grid range must satisfy 0 < min_ratio < 1 and l_max > 0")]
    BadRange,
    #[error("function values must be finite and nonnegative")]
    NegativeFunction,
    #[error("function has {got} values, the system has {expected} leaves")]
    Length { expected: usize, got: usize },
    #[error("table exponents differ")]
    ExponentMismatch,
}

/// Discretization of `{(f, F, L) : f^p ≤ F ≤ F_max, 0 ≤ L ≤ L_max}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BellmanGrid {
    /// Nodes per axis, including the node at zero.
    pub nodes: usize,
    /// Points per axis of the split search.
    pub split: usize,
    /// `L_max`; also the largest `f`, so that `F_max = L_max^p`.
    pub l_max: f64,
    /// Ratio of the smallest positive node to the largest one.
    pub min_ratio: f64,
}

impl BellmanGrid {
    pub const DEFAULT_NODES: usize = 64;
    pub const DEFAULT_SPLIT: usize = 33;
    pub const DEFAULT_F_MAX: f64 = 16.0;

    /// The default grid for exponent `p`, with `F_max = 16`.
    pub fn for_exponent(p: Exponent) -> Self {
        Self::with_nodes(p, Self::DEFAULT_NODES, Self::DEFAULT_SPLIT)
    }

    pub fn with_nodes(p: Exponent, nodes: usize, split: usize) -> Self {
        BellmanGrid {
            nodes,
            split,
            l_max: Self::DEFAULT_F_MAX.powf(p.reciprocal()),
            min_ratio: 1e-3,
        }
    }

    fn validate(&self) -> Result<(), BellmanError> {
        if self.nodes < 3 || self.split < 2 {
            return Err(BellmanError::GridTooSmall {
                nodes: self.nodes,
                split: self.split,
            });
        }
        if !(self.min_ratio > 0.0 && self.min_ratio < 1.0 && self.l_max > 0.0) {
            return Err(BellmanError::BadRange);
        }
        Ok(())
    }
}

/// Weights `λ` of the smaller half in the split search; `½` gives the dyadic midpoint split.
pub const SPLIT_WEIGHTS: [f64; 4] = [0.5, 0.25, 0.0625, 0.015625];

/// Offsets, in node spacings, of the local midpoint splits.
const LOCAL_STEPS: [f64; 7] = [-4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0];

/// Increasing nodes.
#[derive(Clone, Debug, PartialEq)]
struct Axis {
    nodes: Vec<f64>,
}

impl Axis {
    /// Zero and `n − 1` log-uniform nodes from `max · min_ratio` to `max`.
    fn spanning(n: usize, max: f64, min_ratio: f64) -> Axis {
        let mut nodes = vec![0.0];
        nodes.extend(log_nodes(max * min_ratio, max, n - 1));
        Axis { nodes }
    }

    fn last(&self) -> f64 {
        *self.nodes.last().expect("nonempty axis")
    }

    fn cell(&self, x: f64) -> usize {
        let n = self.nodes.len();
        self.nodes.partition_point(|&a| a <= x).clamp(1, n - 1) - 1
    }

    /// Cell and weight of the upper node for linear interpolation in `x`.
    fn locate(&self, x: f64) -> (usize, f64) {
        if x <= 0.0 {
            return (0, 0.0);
        }
        let i = self.cell(x);
        let (lo, hi) = (self.nodes[i], self.nodes[i + 1]);
        (i, ((x - lo) / (hi - lo)).clamp(0.0, 1.0))
    }
}

/// `count` log-uniform nodes from `lo` to `hi`, both included.
fn log_nodes(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let step = (hi / lo).ln() / (count - 1) as f64;
    let mut out: Vec<f64> = (0..count).map(|i| lo * (i as f64 * step).exp()).collect();
    out[count - 1] = hi;
    out
}

/// `g(u, v) = B(u, v, 1)` on `0 ≤ u ≤ 1`, `v ≥ u^p`, so that by homogeneity and
/// invariance `B(f, F, L) = m^p g(f/m, F/m^p)` with `m = max(f, L)`.
///
/// Nodes sit at `(u_i, u_i^p + w_j)`. Between them `g` is linear on triangles of the
/// `(u, v)` plane, so an interpolated value is a convex combination of node values and,
/// `B` being concave in `(f, F)`, never exceeds the true value when the nodes do not.
#[derive(Clone, Debug, PartialEq)]
struct Slice {
    p: f64,
    /// From `min_ratio` to 1.
    u: Axis,
    /// From 0; the row `w = 0` holds the constant functions.
    w: Axis,
    /// `values[i * nw + j] = g(u_i, u_i^p + w_j)`.
    values: Vec<f64>,
}

/// Halvings of the last `u` step towards 1.
const EDGE_REFINEMENT: usize = 8;

/// Up to three weighted node values plus a constant.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Form {
    terms: [(usize, f64); 3],
    constant: f64,
}

impl Form {
    const ONE: Form = Form {
        terms: [(0, 0.0); 3],
        constant: 1.0,
    };

    fn eval(&self, values: &[f64]) -> f64 {
        self.terms.iter().map(|&(k, w)| w * values[k]).sum::<f64>() + self.constant
    }

    fn scaled(mut self, factor: f64) -> Form {
        for t in &mut self.terms {
            t.1 *= factor;
        }
        self.constant *= factor;
        self
    }
}

impl Slice {
    /// `u` nodes are uniform, refined log-uniformly below the first step and geometrically
    /// towards 1, where `g` rises like `√(v − u^p)` off the boundary; `w` nodes are log-uniform
    /// from `min_ratio²` to `64 min_ratio^{-p}`, covering `F / max(f, L)^p` over the table.
    fn initial(p: Exponent, grid: &BellmanGrid) -> Slice {
        let n = grid.nodes;
        let pv = p.value();
        let nu = (n / 2).max(4);
        let lower = (nu / 6).max(2);
        let upper = nu - lower;
        let h = 1.0 / upper as f64;
        let mut u = log_nodes(grid.min_ratio, h, lower + 1);
        u.extend((2..upper).map(|k| k as f64 * h));
        u.extend((1..=EDGE_REFINEMENT).map(|k| 1.0 - h * 0.5f64.powi(k as i32 - 1)));
        u.push(1.0);
        let mut w = vec![0.0];
        w.extend(log_nodes(grid.min_ratio.powi(2), 64.0 * grid.min_ratio.powf(-pv), n - 1));
        let values = vec![1.0; u.len() * w.len()];
        Slice {
            p: pv,
            u: Axis { nodes: u },
            w: Axis { nodes: w },
            values,
        }
    }

    fn nw(&self) -> usize {
        self.w.nodes.len()
    }

    fn node_point(&self, i: usize, j: usize) -> (f64, f64) {
        let u = self.u.nodes[i];
        (u, u.powf(self.p) + self.w.nodes[j])
    }

    /// `g(u, v)` as a form in the node values. Below the first `u` node the point is split
    /// along the ray to the origin, where `g(0, 0) = 1`; between the boundary curve and
    /// its chords, and on the boundary, the value is the constant-function value 1;
    /// beyond the last `w` node the value at that node is kept, `g` being nondecreasing in `v`.
    fn g_form(&self, u: f64, v: f64) -> Form {
        let u_min = self.u.nodes[0];
        if u <= 0.0 {
            return Form::ONE;
        }
        if u < u_min {
            let theta = u / u_min;
            let mut form = self.g_form(u_min, v / theta).scaled(theta);
            form.constant += 1.0 - theta;
            return form;
        }
        let (i, t) = self.u.locate(u.min(1.0));
        let (lo, hi) = (self.u.nodes[i], self.u.nodes[i + 1]);
        let chord = (1.0 - t) * lo.powf(self.p) + t * hi.powf(self.p);
        let excess = v - chord;
        if excess <= 0.0 {
            return Form::ONE;
        }
        let (j, s) = self.w.locate(excess.min(self.w.last()));
        let nw = self.nw();
        let (a, b, c, d) = (i * nw + j, (i + 1) * nw + j, i * nw + j + 1, (i + 1) * nw + j + 1);
        let first = if s <= t {
            [(a, 1.0 - t), (b, t - s), (d, s)]
        } else {
            [(a, 1.0 - s), (c, s - t), (d, t)]
        };
        let second = if t + s <= 1.0 {
            [(a, 1.0 - t - s), (b, t), (c, s)]
        } else {
            [(b, 1.0 - s), (c, 1.0 - t), (d, t + s - 1.0)]
        };
        let first = Form {
            terms: first,
            constant: 0.0,
        };
        let second = Form {
            terms: second,
            constant: 0.0,
        };
        if first.eval(&self.values) >= second.eval(&self.values) {
            first
        } else {
            second
        }
    }

    /// `B(f, F, L)` as a form. Data with `f = L = 0` is attained only by `F = 0`, where `B = 0`.
    fn value_form(&self, f: f64, big_f: f64, l: f64) -> Form {
        let m = f.max(l);
        if m <= 0.0 {
            return Form {
                terms: [(0, 0.0); 3],
                constant: 0.0,
            };
        }
        let scale = m.powf(self.p);
        self.g_form(f / m, big_f / scale).scaled(scale)
    }

    /// Same value as [`Self::value_form`], evaluated so that it is nondecreasing in the
    /// node values under rounding as well.
    fn value(&self, f: f64, big_f: f64, l: f64) -> f64 {
        let m = f.max(l);
        if m <= 0.0 {
            return 0.0;
        }
        let scale = m.powf(self.p);
        scale * self.g_value(f / m, big_f / scale)
    }

    fn g_value(&self, u: f64, v: f64) -> f64 {
        let u_min = self.u.nodes[0];
        if u > 0.0 && u < u_min {
            let theta = u / u_min;
            return theta * self.g_value(u_min, v / theta) + (1.0 - theta);
        }
        self.g_form(u, v).eval(&self.values)
    }

    /// Whether `(f, F, L)` is reached by interpolation alone.
    fn covers(&self, f: f64, big_f: f64, l: f64) -> bool {
        let m = f.max(l);
        if m <= 0.0 {
            return true;
        }
        let u = f / m;
        u >= self.u.nodes[0] && big_f / m.powf(self.p) - u.powf(self.p) <= self.w.last()
    }

    /// Splits `(u, v) = λ (f_a, F_a) + (1 − λ)(f_b, F_b)` searched at a node.
    fn candidates(&self, u: f64, v: f64, split: usize) -> Vec<Split> {
        let p = self.p;
        let steps = (split - 1) as f64;
        let mut out = Vec::new();
        for &lambda in &SPLIT_WEIGHTS {
            let fa_max = (u / lambda).min((v / lambda).powf(1.0 / p));
            for k in 0..split {
                let fa = fa_max * k as f64 / steps;
                let fb = ((u - lambda * fa) / (1.0 - lambda)).max(0.0);
                let lo = fa.powf(p);
                let hi = (v - (1.0 - lambda) * fb.powf(p)) / lambda;
                if lo > hi {
                    continue;
                }
                for m in 0..split {
                    let ga = lo + (hi - lo) * m as f64 / steps;
                    let gb = ((v - lambda * ga) / (1.0 - lambda)).max(0.0);
                    out.push(Split { lambda, fa, ga, fb, gb });
                }
            }
        }
        out
    }

    /// Midpoint splits `(u, v) ± (du, dv)` at multiples of the node spacing around node `(i, j)`.
    fn local_candidates(&self, i: usize, j: usize) -> Vec<Split> {
        let (u, v) = self.node_point(i, j);
        let last = self.u.nodes.len() - 1;
        let du = self.u.nodes[i.max(1).min(last)] - self.u.nodes[i.max(1).min(last) - 1];
        let nw = self.nw();
        let dw = self.w.nodes[j.min(nw - 1)] - self.w.nodes[j.min(nw - 1) - 1];
        let mut out = Vec::new();
        for a in LOCAL_STEPS {
            for b in LOCAL_STEPS {
                if a == 0.0 && b == 0.0 {
                    continue;
                }
                for side in [1.0, -1.0] {
                    let (fa, ga) = (u + side * a * du, v + side * b * dw);
                    let (fb, gb) = (2.0 * u - fa, 2.0 * v - ga);
                    if fa >= 0.0 && fb >= 0.0 && ga >= fa.powf(self.p) && gb >= fb.powf(self.p) {
                        out.push(Split {
                            lambda: 0.5,
                            fa,
                            ga,
                            fb,
                            gb,
                        });
                    }
                }
            }
        }
        out
    }

    /// One recursion step: at each node the supremum of `λ B(a) + (1 − λ) B(b)` over the
    /// searched splits, with `L = 1` passed to both parts. Also returns the best split per
    /// node as a form in the current values, or `None` where no split improves the node.
    fn step(&self, split: usize) -> (Slice, Vec<Option<[(f64, Form); 2]>>) {
        let nw = self.nw();
        let mut next = self.values.clone();
        let mut policy = vec![None; next.len()];
        for i in 0..self.u.nodes.len() {
            for j in 1..nw {
                let (u, v) = self.node_point(i, j);
                let k = i * nw + j;
                let mut best = self.values[k];
                let mut candidates = self.candidates(u, v, split);
                candidates.extend(self.local_candidates(i, j));
                for c in candidates {
                    let fa = self.value_form(c.fa, c.ga, 1.0);
                    let fb = self.value_form(c.fb, c.gb, 1.0);
                    let val = c.lambda * fa.eval(&self.values) + (1.0 - c.lambda) * fb.eval(&self.values);
                    if val > best {
                        best = val;
                        policy[k] = Some([(c.lambda, fa), (1.0 - c.lambda, fb)]);
                    }
                }
                next[k] = best;
            }
        }
        (
            Slice {
                values: next,
                ..self.clone()
            },
            policy,
        )
    }

    /// Gauss–Seidel sweeps of `g ← max(g, λ form_a(g) + (1 − λ) form_b(g))` under fixed
    /// splits, until the largest relative increase drops to `tolerance`.
    fn settle(&mut self, policy: &[Option<[(f64, Form); 2]>], max_sweeps: usize, tolerance: f64) {
        for _ in 0..max_sweeps {
            let mut change = 0.0f64;
            for (k, rule) in policy.iter().enumerate() {
                if let Some([(la, fa), (lb, fb)]) = rule {
                    let v = la * fa.eval(&self.values) + lb * fb.eval(&self.values);
                    let old = self.values[k];
                    if v > old {
                        change = change.max((v - old) / old);
                        self.values[k] = v;
                    }
                }
            }
            if change <= tolerance {
                break;
            }
        }
    }

    /// Largest relative increase from `self` to `next`.
    fn change_to(&self, next: &Slice) -> f64 {
        self.values
            .iter()
            .zip(&next.values)
            .map(|(old, new)| (new - old) / old)
            .fold(0.0, f64::max)
    }
}

/// A split of the data at one node.
#[derive(Clone, Copy, Debug)]
struct Split {
    lambda: f64,
    fa: f64,
    ga: f64,
    fb: f64,
    gb: f64,
}

/// `B_N`, or its limit, through its slice `L = 1`, sampled on the grid
/// `{(f, F, L)} ⊂ [0, L_max] × [0, L_max^p] × [0, L_max]` for export and node checks.
#[derive(Clone, Debug, PartialEq)]
pub struct BellmanTable {
    p: Exponent,
    /// `None` for the limit over all depths.
    depth: Option<usize>,
    /// Step after which the grid recursion stopped changing.
    stationary_at: Option<usize>,
    grid: BellmanGrid,
    slice: Slice,
    axis: Axis,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TableExport {
    p: f64,
    /// `null` for the limit table.
    depth: Option<usize>,
    axes: ExportAxes,
    /// `values[i][j][k] = B(f_i, F_j, L_k)`.
    values: Vec<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
struct ExportAxes {
    f: Vec<f64>,
    #[serde(rename = "F")]
    big_f: Vec<f64>,
    #[serde(rename = "L")]
    l: Vec<f64>,
}

impl BellmanTable {
    fn from_slice(p: Exponent, depth: Option<usize>, stationary_at: Option<usize>, grid: BellmanGrid, slice: Slice) -> Self {
        let n = grid.nodes;
        let axis = Axis::spanning(n, grid.l_max, grid.min_ratio);
        let pv = p.value();
        let mut values = vec![0.0; n * n * n];
        for i in 0..n {
            let f = axis.nodes[i];
            for j in 0..n {
                let big_f = axis.nodes[j.max(i)].powf(pv);
                for k in 0..n {
                    values[(i * n + j) * n + k] = slice.value(f, big_f, axis.nodes[k]);
                }
            }
        }
        BellmanTable {
            p,
            depth,
            stationary_at,
            grid,
            slice,
            axis,
            values,
        }
    }

    pub fn p(&self) -> Exponent {
        self.p
    }

    /// Recursion depth `N`, or `None` for the limit.
    pub fn depth(&self) -> Option<usize> {
        self.depth
    }

    /// The step from which on further recursion leaves every node unchanged.
    pub fn stationary_at(&self) -> Option<usize> {
        self.stationary_at
    }

    pub fn grid(&self) -> &BellmanGrid {
        &self.grid
    }

    /// Node values, indexed `(i * n + j) * n + k` for `(f_i, F_j, L_k)`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Nodes of the `f` and `L` axes.
    pub fn axis(&self) -> &[f64] {
        &self.axis.nodes
    }

    /// Nodes of the `F` axis.
    pub fn big_f_axis(&self) -> Vec<f64> {
        self.axis.nodes.iter().map(|a| a.powf(self.p.value())).collect()
    }

    pub fn f_max(&self) -> f64 {
        self.grid.l_max.powf(self.p.value())
    }

    fn n(&self) -> usize {
        self.grid.nodes
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> f64 {
        let n = self.n();
        self.values[(i * n + j) * n + k]
    }

    /// `B(f, F, L)` from the slice; defined for all data by homogeneity.
    pub fn value(&self, f: f64, big_f: f64, l: f64) -> f64 {
        self.slice.value(f, big_f, l)
    }

    /// Whether `B(f, F, L)` is interpolated between slice nodes, without the bounds
    /// used below the first `u` node or beyond the last `w` node.
    pub fn covers(&self, f: f64, big_f: f64, l: f64) -> bool {
        self.slice.covers(f, big_f, l)
    }

    /// Whether `(f, F, L)` lies in the grid range.
    pub fn in_range(&self, f: f64, big_f: f64, l: f64) -> bool {
        let tol = 1.0 + 1e-12;
        f <= self.grid.l_max * tol && l <= self.grid.l_max * tol && big_f <= self.f_max() * tol
    }

    pub fn to_json(&self) -> serde_json::Value {
        let n = self.n();
        let values = (0..n)
            .map(|i| (0..n).map(|j| (0..n).map(|k| self.node(i, j, k)).collect()).collect())
            .collect();
        serde_json::to_value(TableExport {
            p: self.p.value(),
            depth: self.depth,
            axes: ExportAxes {
                f: self.axis.nodes.clone(),
                big_f: self.big_f_axis(),
                l: self.axis.nodes.clone(),
            },
            values,
        })
        .expect("finite table")
    }
}

/// Relative change below which the limit recursion counts as stationary.
pub const LIMIT_TOLERANCE: f64 = 1e-7;
const LIMIT_ROUNDS: usize = 400;
const SETTLE_SWEEPS: usize = 50_000;

/// `B_0, …, B_N`; `B_{k+1}` is the supremum of `λ B_k(x_a) + (1 − λ) B_k(x_b)` over grid
/// splits of `(f, F)` with both parts admissible and `L` replaced by `max(L, f)`.
pub fn bellman_sequence(p: Exponent, depth: usize, grid: BellmanGrid) -> Result<Vec<BellmanTable>, BellmanError> {
    grid.validate()?;
    let mut slices = vec![Slice::initial(p, &grid)];
    let mut stationary = None;
    for k in 0..depth {
        let (next, _) = slices[k].step(grid.split);
        if stationary.is_none() && next.values == slices[k].values {
            stationary = Some(k);
        }
        slices.push(next);
    }
    Ok(slices
        .into_iter()
        .enumerate()
        .map(|(k, slice)| BellmanTable::from_slice(p, Some(k), stationary.filter(|&s| s <= k), grid, slice))
        .collect())
}

/// `B_N`; the recursion stops early once a step leaves every node unchanged.
pub fn bellman_dp(p: Exponent, depth: usize, grid: BellmanGrid) -> Result<BellmanTable, BellmanError> {
    grid.validate()?;
    let mut slice = Slice::initial(p, &grid);
    let mut stationary = None;
    for k in 0..depth {
        let (next, _) = slice.step(grid.split);
        if next.values == slice.values {
            stationary = Some(k);
            break;
        }
        slice = next;
    }
    Ok(BellmanTable::from_slice(p, Some(depth), stationary, grid, slice))
}

/// `B = sup_N B_N` on the grid. Each round takes one recursion step, then keeps the best
/// splits fixed and iterates them to their own fixed point, which is again a supremum
/// over finite split trees; rounds stop when a step changes no node by more than
/// [`LIMIT_TOLERANCE`] relative.
pub fn bellman_limit(p: Exponent, grid: BellmanGrid) -> Result<BellmanTable, BellmanError> {
    grid.validate()?;
    let mut slice = Slice::initial(p, &grid);
    let mut stationary = None;
    for round in 0..LIMIT_ROUNDS {
        let (next, policy) = slice.step(grid.split);
        let change = slice.change_to(&next);
        slice = next;
        if change <= LIMIT_TOLERANCE {
            stationary = Some(round);
            break;
        }
        slice.settle(&policy, SETTLE_SWEEPS, LIMIT_TOLERANCE * 1e-2);
    }
    Ok(BellmanTable::from_slice(p, None, stationary, grid, slice))
}

/// Outcome of the property checks on one table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub depth: Option<usize>,
    pub admissible_nodes: usize,
    /// Nodes with `B < max(f, L)^p`.
    pub lower_violations: usize,
    /// Largest `B / (K₄ 𝔅^p (F + L^p))`.
    pub upper_ratio: f64,
    pub upper_holds: bool,
    /// Nodes where `B(f, F, L) ≠ B(f, F, max(L, f))`.
    pub invariance_violations: usize,
    pub concavity_samples: usize,
    /// Largest `(½(B(x₋) + B(x₊)) − B(x)) / B(x)` over midpoints `x` at recursion nodes.
    pub concavity_defect: f64,
    /// The midpoint with the largest defect.
    pub worst_concavity: Option<ConcavitySample>,
    pub concavity_holds: bool,
    /// The same defect over midpoints anywhere in the grid range, where `x` itself is
    /// interpolated; reported, not checked.
    pub off_node_concavity_defect: f64,
}

/// A midpoint `(f, F)` with its two halves at a fixed `L`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcavitySample {
    pub f: f64,
    pub big_f: f64,
    pub l: f64,
    pub minus: (f64, f64),
    pub plus: (f64, f64),
    pub defect: f64,
}

impl ConcavitySample {
    fn measure(table: &BellmanTable, f: f64, big_f: f64, l: f64, df: f64, dg: f64) -> Option<Self> {
        let p = table.p.value();
        let (minus, plus) = ((f - df, big_f - dg), (f + df, big_f + dg));
        if minus.0 < 0.0 || plus.0 < 0.0 || minus.1 < minus.0.powf(p) || plus.1 < plus.0.powf(p) {
            return None;
        }
        let mid = table.value(f, big_f, l);
        let avg = 0.5 * (table.value(minus.0, minus.1, l) + table.value(plus.0, plus.1, l));
        (mid > 0.0).then(|| ConcavitySample {
            f,
            big_f,
            l,
            minus,
            plus,
            defect: (avg - mid) / mid,
        })
    }
}

impl PropertyReport {
    pub fn passed(&self) -> bool {
        self.lower_violations == 0 && self.upper_holds && self.invariance_violations == 0 && self.concavity_holds
    }
}

/// Checks boundedness from below and above and invariance at every table node, and
/// midpoint concavity in `(f, F)` at fixed `L` on `samples` random triples centred at
/// recursion nodes, with `bound` the maximal norm bound `𝔅`.
pub fn verify_bellman_properties(table: &BellmanTable, bound: f64, samples: usize, seed: u64) -> PropertyReport {
    let n = table.n();
    let p = table.p.value();
    let a = table.axis();
    let k4 = k4().value;
    let mut admissible = 0;
    let mut lower_violations = 0;
    let mut upper_ratio = 0.0f64;
    let mut invariance_violations = 0;
    for i in 0..n {
        for j in i..n {
            for k in 0..n {
                let b = table.node(i, j, k);
                if b != table.node(i, j, k.max(i)) {
                    invariance_violations += 1;
                }
                admissible += 1;
                if b < a[i].max(a[k]).powf(p) {
                    lower_violations += 1;
                }
                let scale = k4 * bound.powf(p) * (a[j].powf(p) + a[k].powf(p));
                if scale > 0.0 {
                    upper_ratio = upper_ratio.max(b / scale);
                } else if b > 0.0 {
                    upper_ratio = f64::INFINITY;
                }
            }
        }
    }

    let mut rng = rng_for(seed, 0);
    let slice = &table.slice;
    let mut worst: Option<ConcavitySample> = None;
    let mut count = 0;
    while count < samples {
        let i = rng.random_range(0..slice.u.nodes.len());
        let j = rng.random_range(1..slice.nw());
        let (u, v) = slice.node_point(i, j);
        let l = a[rng.random_range(1..n)];
        let reach: f64 = rng.random_range(0.0..1.0f64).powi(3);
        let du = rng.random_range(-1.0..1.0) * reach * u;
        let dv = rng.random_range(-1.0..1.0) * reach * v;
        let lp = l.powf(p);
        if let Some(sample) = ConcavitySample::measure(table, l * u, lp * v, l, l * du, lp * dv) {
            count += 1;
            if worst.as_ref().is_none_or(|w| sample.defect > w.defect) {
                worst = Some(sample);
            }
        }
    }
    let defect = worst.as_ref().map_or(0.0, |w| w.defect.max(0.0));

    let l_max = table.grid.l_max;
    let f_max = table.f_max();
    let mut off_node = 0.0f64;
    let mut count = 0;
    while count < samples {
        let f = rng.random_range(0.0..l_max);
        let big_f = rng.random_range(f.powf(p)..=f_max);
        let l = a[rng.random_range(0..n)];
        let df = rng.random_range(-1.0..1.0) * f.min(l_max - f);
        let dg = rng.random_range(-1.0..1.0) * big_f.min(f_max - big_f);
        if let Some(sample) = ConcavitySample::measure(table, f, big_f, l, df, dg) {
            count += 1;
            off_node = off_node.max(sample.defect);
        }
    }

    PropertyReport {
        depth: table.depth,
        admissible_nodes: admissible,
        lower_violations,
        upper_ratio,
        upper_holds: upper_ratio <= 1.0,
        invariance_violations,
        concavity_samples: samples,
        concavity_defect: defect,
        worst_concavity: worst,
        concavity_holds: defect <= INTERPOLATION_TOLERANCE,
        off_node_concavity_defect: off_node,
    }
}

/// Number of nodes where `next < previous`.
pub fn monotonicity_violations(previous: &BellmanTable, next: &BellmanTable) -> Result<usize, BellmanError> {
    if previous.p != next.p {
        return Err(BellmanError::ExponentMismatch);
    }
    Ok(previous
        .values
        .iter()
        .zip(&next.values)
        .filter(|(a, b)| b < a)
        .count())
}

/// The telescoping chain `∫ (sup_R ⟨f⟩_R 1_R)^p dμ ≤ S_depth ≤ … ≤ S_0 = μ(Q₀) B(⟨f⟩, ⟨f^p⟩, ⟨f⟩)`,
/// with `S_k = Σ_{ℓ(Q) = k} μ(Q) B(⟨f⟩_Q, ⟨f^p⟩_Q, sup_{R ⊇ Q} ⟨f⟩_R)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaximalBoundReport {
    pub lhs: f64,
    /// `S_k` for `k = 0, …, depth`.
    pub level_sums: Vec<f64>,
    pub bound: f64,
    /// `lhs / (μ(Q₀)(⟨f^p⟩ + ⟨f⟩^p))`.
    pub universal_ratio: f64,
    /// Largest `S_{k+1} / S_k − 1`.
    pub worst_step_excess: f64,
    /// Whether some value was not interpolated between slice nodes.
    pub extrapolated: bool,
    pub holds: bool,
}

/// Runs the Bellman iteration bottom-up on the tree with weight `w` for the scalar `f ≥ 0`.
pub fn bellman_maximal_bound(
    table: &BellmanTable,
    sys: &DyadicSystem,
    w: &Weight,
    f: &[f64],
) -> Result<MaximalBoundReport, BellmanError> {
    if f.len() != sys.num_leaves() {
        return Err(BellmanError::Length {
            expected: sys.num_leaves(),
            got: f.len(),
        });
    }
    if f.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(BellmanError::NegativeFunction);
    }
    let p = table.p.value();
    let gp: Vec<f64> = f.iter().map(|v| v.powf(p)).collect();
    let masses = w.cube_masses();
    let integrate = |h: &[f64]| {
        let mut out = vec![0.0; sys.num_cubes()];
        let first = sys.leaf_position(0);
        for (l, v) in h.iter().enumerate() {
            out[first + l] = v * w.leaf_masses()[l];
        }
        for pos in (0..first).rev() {
            out[pos] = sys.children(pos).map(|c| out[c]).sum();
        }
        out
    };
    let avg = |ints: Vec<f64>| -> Vec<f64> {
        ints.iter()
            .zip(masses)
            .map(|(i, m)| if *m > 0.0 { i / m } else { 0.0 })
            .collect()
    };
    let avg_f = avg(integrate(f));
    let avg_fp = avg(integrate(&gp));
    let mut running = vec![0.0f64; sys.num_cubes()];
    for pos in 0..sys.num_cubes() {
        let above = sys.parent(pos).map_or(0.0, |q| running[q]);
        running[pos] = if masses[pos] > 0.0 { above.max(avg_f[pos]) } else { above };
    }
    let mut extrapolated = false;
    let mut level_sums = Vec::with_capacity(sys.depth() + 1);
    for level in 0..=sys.depth() {
        let start = sys.position(crate::dyadic::CubeId::new(level, 0)).expect("level exists");
        let mut sum = 0.0;
        for pos in start..start + sys.level_width(level) {
            if masses[pos] <= 0.0 {
                continue;
            }
            let (f0, big_f, l) = (avg_f[pos], avg_fp[pos], running[pos]);
            extrapolated |= !table.covers(f0, big_f, l);
            sum += masses[pos] * table.value(f0, big_f, l);
        }
        level_sums.push(sum);
    }
    let first = sys.leaf_position(0);
    let lhs: f64 = (0..sys.num_leaves())
        .map(|l| w.leaf_masses()[l] * running[first + l].powf(p))
        .sum();
    let bound = level_sums[0];
    let worst_step_excess = level_sums
        .windows(2)
        .map(|pair| if pair[0] > 0.0 { pair[1] / pair[0] - 1.0 } else { 0.0 })
        .fold(f64::NEG_INFINITY, f64::max);
    let root_mass = masses[0];
    let denominator = root_mass * (avg_fp[0] + avg_f[0].powf(p));
    let universal_ratio = if denominator > 0.0 { lhs / denominator } else { 0.0 };
    Ok(MaximalBoundReport {
        lhs,
        level_sums,
        bound,
        universal_ratio,
        worst_step_excess,
        extrapolated,
        holds: lhs <= bound * (1.0 + INTERPOLATION_TOLERANCE),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(p: f64) -> (Exponent, BellmanGrid) {
        let p = Exponent::new(p).unwrap();
        (p, BellmanGrid::with_nodes(p, 12, 7))
    }

    #[test]
    fn initial_table_is_max_power() {
        let (p, grid) = small(2.0);
        let t = bellman_dp(p, 0, grid).unwrap();
        let a = t.axis().to_vec();
        for (i, j, k) in [(3, 5, 7), (7, 9, 3), (0, 4, 0), (11, 11, 2)] {
            let m = a[i].max(a[k]);
            assert!((t.node(i, j, k) - m * m).abs() <= 1e-12 * m * m, "{i} {j} {k}");
        }
    }

    #[test]
    fn zero_data_keeps_l_to_the_p() {
        let (p, grid) = small(3.0);
        let t = bellman_dp(p, 3, grid).unwrap();
        for k in 0..grid.nodes {
            assert_eq!(t.node(0, 0, k), t.axis()[k].powf(3.0));
        }
    }

    #[test]
    fn axis_locate_hits_nodes() {
        let axis = Axis::spanning(10, 4.0, 1e-3);
        for (i, &x) in axis.nodes.iter().enumerate() {
            let (c, t) = axis.locate(x);
            assert!((c == i && t.abs() < 1e-12) || (c + 1 == i && (t - 1.0).abs() < 1e-12), "{i} {c} {t}");
        }
    }

    #[test]
    fn slice_forms_reproduce_node_values() {
        let (p, grid) = small(2.0);
        let (slice, _) = Slice::initial(p, &grid).step(grid.split);
        let nw = slice.nw();
        for i in 0..slice.u.nodes.len() {
            for j in 0..nw {
                let (u, v) = slice.node_point(i, j);
                let g = slice.value(u, v, 1.0);
                assert!((g - slice.values[i * nw + j]).abs() <= 1e-9 * g, "{i} {j}");
            }
        }
    }

    #[test]
    fn interpolation_stays_below_a_concave_function() {
        let (p, grid) = small(2.0);
        let mut slice = Slice::initial(p, &grid);
        let exact = |u: f64, v: f64| 1.0 + (v - u * u).max(0.0).sqrt() + 0.5 * v;
        let nw = slice.nw();
        for i in 0..slice.u.nodes.len() {
            for j in 0..nw {
                let (u, v) = slice.node_point(i, j);
                slice.values[i * nw + j] = exact(u, v);
            }
        }
        let mut rng = rng_for(4, 0);
        for _ in 0..2000 {
            let u: f64 = rng.random_range(0.0..1.0);
            let v = u * u + rng.random_range(0.0..3.0f64).powi(2);
            assert!(slice.value(u, v, 1.0) <= exact(u, v) * (1.0 + 1e-12), "{u} {v}");
        }
    }

    #[test]
    fn constant_function_bound_is_tight_from_below() {
        let (p, grid) = small(2.0);
        let t = bellman_dp(p, 2, grid).unwrap();
        let sys = DyadicSystem::new(2, 2).unwrap();
        let w = Weight::uniform(&sys);
        let r = bellman_maximal_bound(&t, &sys, &w, &[0.7; 4]).unwrap();
        assert!((r.lhs - 0.49).abs() < 1e-12);
        assert!(r.holds);
        let zero = bellman_maximal_bound(&t, &sys, &w, &[0.0; 4]).unwrap();
        assert_eq!(zero.lhs, 0.0);
        assert_eq!(zero.bound, 0.0);
    }
}
