//! Positive dyadic operators `T_λ(fσ) = Σ_Q λ_Q ∫_Q f dσ 1_Q` and their adjoints.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dyadic::{CubeFunction, CubeId, DyadicError, DyadicSystem, Weight};
use crate::lattice::{Exponent, LatticeError, LatticeSpace};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error("block for cube {cube} has {got} entries, expected {expected}")]
    BlockShape {
        cube: CubeId,
        expected: usize,
        got: usize,
    },
    #[error("block for cube {0} has a negative or non-finite entry")]
    NegativeEntry(CubeId),
    #[error("cube {0} is not an active cube of the system")]
    InactiveCube(CubeId),
    #[error("function dimension {got} does not match operator dimension {expected}")]
    FunctionDimension { expected: usize, got: usize },
    #[error("exact assembly needs Euclidean lattice norms")]
    NotEuclidean,
    #[error(transparent)]
    Dyadic(#[from] DyadicError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

/// A row-major nonnegative `rows × cols` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl Block {
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Option<Self> {
        (entries.len() == rows * cols).then_some(Block {
            rows,
            cols,
            entries,
        })
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.entries[r * self.cols + c]
    }

    /// `out += self · x`.
    fn mul_add(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.entries[r * self.cols..(r + 1) * self.cols];
            *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// `out += selfᵀ · y`.
    fn mul_transpose_add(&self, y: &[f64], out: &mut [f64]) {
        for (r, yr) in y.iter().enumerate() {
            if *yr == 0.0 {
                continue;
            }
            let row = &self.entries[r * self.cols..(r + 1) * self.cols];
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * yr;
            }
        }
    }

    fn to_rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.cols).map(|r| r.to_vec()).collect()
    }
}

/// Nonnegative coefficient blocks `λ_Q : C → D`, one per cube.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelRepr", into = "KernelRepr")]
pub struct PositiveKernel {
    domain: LatticeSpace,
    range: LatticeSpace,
    blocks: BTreeMap<CubeId, Block>,
}

#[derive(Serialize, Deserialize)]
struct KernelRepr {
    cubes: Vec<CubeEntry>,
    domain: LatticeSpace,
    range: LatticeSpace,
}

#[derive(Serialize, Deserialize)]
struct CubeEntry {
    id: CubeId,
    block: Vec<Vec<f64>>,
}

impl TryFrom<KernelRepr> for PositiveKernel {
    type Error = OperatorError;

    fn try_from(repr: KernelRepr) -> Result<Self, Self::Error> {
        let mut kernel = PositiveKernel::zero(repr.domain, repr.range);
        for entry in repr.cubes {
            let flat: Vec<f64> = entry.block.into_iter().flatten().collect();
            kernel.insert(entry.id, flat)?;
        }
        Ok(kernel)
    }
}

impl From<PositiveKernel> for KernelRepr {
    fn from(kernel: PositiveKernel) -> Self {
        KernelRepr {
            cubes: kernel
                .blocks
                .iter()
                .map(|(id, b)| CubeEntry {
                    id: *id,
                    block: b.to_rows(),
                })
                .collect(),
            domain: kernel.domain,
            range: kernel.range,
        }
    }
}

/// Which cubes of the kernel take part in an application.
#[derive(Clone, Copy, Debug)]
pub enum CubeFilter {
    All,
    /// Only cubes contained in the given cube (flat position).
    Within(usize),
}

impl PositiveKernel {
    pub fn zero(domain: LatticeSpace, range: LatticeSpace) -> Self {
        PositiveKernel {
            domain,
            range,
            blocks: BTreeMap::new(),
        }
    }

    /// Sets the block of a cube from row-major entries (`dim D × dim C`).
    pub fn insert(&mut self, cube: CubeId, entries: Vec<f64>) -> Result<(), OperatorError> {
        let (rows, cols) = (self.range.dim(), self.domain.dim());
        if entries.len() != rows * cols {
            return Err(OperatorError::BlockShape {
                cube,
                expected: rows * cols,
                got: entries.len(),
            });
        }
        if entries.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(OperatorError::NegativeEntry(cube));
        }
        self.blocks
            .insert(cube, Block::new(rows, cols, entries).expect("shape checked"));
        Ok(())
    }

    pub fn domain(&self) -> &LatticeSpace {
        &self.domain
    }

    pub fn range(&self) -> &LatticeSpace {
        &self.range
    }

    pub fn blocks(&self) -> &BTreeMap<CubeId, Block> {
        &self.blocks
    }

    pub fn block(&self, cube: CubeId) -> Option<&Block> {
        self.blocks.get(&cube)
    }

    pub fn is_zero(&self) -> bool {
        self.blocks.values().all(|b| b.entries.iter().all(|&v| v == 0.0))
    }

    /// Checks that every block sits on an active cube of `sys`.
    pub fn validate(&self, sys: &DyadicSystem) -> Result<(), OperatorError> {
        for cube in self.blocks.keys() {
            let pos = sys.position(*cube)?;
            if !sys.is_active(pos) {
                return Err(OperatorError::InactiveCube(*cube));
            }
        }
        Ok(())
    }

    /// `c · λ` for a nonnegative scalar.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        for b in out.blocks.values_mut() {
            b.entries.iter_mut().for_each(|v| *v *= c);
        }
        out
    }

    /// The kernel of the adjoint: blocks transposed, spaces swapped to the duals.
    pub fn transposed(&self) -> Self {
        let mut blocks = BTreeMap::new();
        for (cube, b) in &self.blocks {
            let mut entries = vec![0.0; b.entries.len()];
            for r in 0..b.rows {
                for c in 0..b.cols {
                    entries[c * b.rows + r] = b.get(r, c);
                }
            }
            blocks.insert(*cube, Block::new(b.cols, b.rows, entries).expect("transpose"));
        }
        PositiveKernel {
            domain: self.range.dual(),
            range: self.domain.dual(),
            blocks,
        }
    }

    /// Per-cube blocks indexed by flat position, restricted by the filter.
    fn blocks_by_position<'a>(
        &'a self,
        sys: &DyadicSystem,
        filter: CubeFilter,
    ) -> Vec<(usize, &'a Block)> {
        self.blocks
            .iter()
            .filter_map(|(cube, b)| {
                let pos = sys.position(*cube).ok()?;
                if !sys.is_active(pos) {
                    return None;
                }
                match filter {
                    CubeFilter::All => Some((pos, b)),
                    CubeFilter::Within(r) => sys.is_subcube(pos, r).then_some((pos, b)),
                }
            })
            .collect()
    }

    /// Raw application to leaf-major values with leaf masses:
    /// `x ↦ Σ_Q λ_Q (Σ_{y∈Q} m_y v_y) 1_Q`, or with `λ_Qᵀ` when `transpose` is set.
    pub fn apply_raw(
        &self,
        sys: &DyadicSystem,
        values: &[f64],
        masses: &[f64],
        transpose: bool,
        filter: CubeFilter,
    ) -> Vec<f64> {
        let (din, dout) = if transpose {
            (self.range.dim(), self.domain.dim())
        } else {
            (self.domain.dim(), self.range.dim())
        };
        debug_assert_eq!(values.len(), sys.num_leaves() * din);
        let n = sys.num_cubes();
        let first_leaf = sys.leaf_position(0);
        let mut integrals = vec![0.0; n * din];
        for leaf in 0..sys.num_leaves() {
            let m = masses[leaf];
            let pos = first_leaf + leaf;
            for k in 0..din {
                integrals[pos * din + k] = m * values[leaf * din + k];
            }
        }
        for pos in (0..first_leaf).rev() {
            for c in sys.children(pos) {
                for k in 0..din {
                    integrals[pos * din + k] += integrals[c * din + k];
                }
            }
        }
        let mut cube_out = vec![0.0; n * dout];
        for (pos, b) in self.blocks_by_position(sys, filter) {
            let src = &integrals[pos * din..(pos + 1) * din];
            let dst = &mut cube_out[pos * dout..(pos + 1) * dout];
            if transpose {
                b.mul_transpose_add(src, dst);
            } else {
                b.mul_add(src, dst);
            }
        }
        for pos in 1..n {
            let parent = sys.parent(pos).expect("non-root");
            for k in 0..dout {
                cube_out[pos * dout + k] += cube_out[parent * dout + k];
            }
        }
        cube_out[first_leaf * dout..].to_vec()
    }

    fn check_input(&self, f: &CubeFunction, expected: usize) -> Result<(), OperatorError> {
        if f.dim() != expected {
            return Err(OperatorError::FunctionDimension {
                expected,
                got: f.dim(),
            });
        }
        Ok(())
    }

    /// `T_λ(fσ)`.
    pub fn apply(
        &self,
        sys: &DyadicSystem,
        f: &CubeFunction,
        sigma: &Weight,
    ) -> Result<CubeFunction, OperatorError> {
        self.apply_filtered(sys, f, sigma, CubeFilter::All)
    }

    /// `T_{λ,R}(fσ)`, summing only over cubes inside `R`.
    pub fn apply_localized(
        &self,
        sys: &DyadicSystem,
        f: &CubeFunction,
        sigma: &Weight,
        r: CubeId,
    ) -> Result<CubeFunction, OperatorError> {
        let pos = sys.position(r)?;
        self.apply_filtered(sys, f, sigma, CubeFilter::Within(pos))
    }

    pub fn apply_filtered(
        &self,
        sys: &DyadicSystem,
        f: &CubeFunction,
        sigma: &Weight,
        filter: CubeFilter,
    ) -> Result<CubeFunction, OperatorError> {
        self.check_input(f, self.domain.dim())?;
        let values = self.apply_raw(sys, f.values(), sigma.leaf_masses(), false, filter);
        Ok(CubeFunction::for_system(sys, self.range.clone(), values)?)
    }

    /// `T*_λ(gω) = Σ_Q λ_Qᵀ ∫_Q g dω 1_Q`, a `C*`-valued function.
    pub fn apply_adjoint(
        &self,
        sys: &DyadicSystem,
        g: &CubeFunction,
        omega: &Weight,
    ) -> Result<CubeFunction, OperatorError> {
        self.apply_adjoint_filtered(sys, g, omega, CubeFilter::All)
    }

    pub fn apply_adjoint_localized(
        &self,
        sys: &DyadicSystem,
        g: &CubeFunction,
        omega: &Weight,
        r: CubeId,
    ) -> Result<CubeFunction, OperatorError> {
        let pos = sys.position(r)?;
        self.apply_adjoint_filtered(sys, g, omega, CubeFilter::Within(pos))
    }

    pub fn apply_adjoint_filtered(
        &self,
        sys: &DyadicSystem,
        g: &CubeFunction,
        omega: &Weight,
        filter: CubeFilter,
    ) -> Result<CubeFunction, OperatorError> {
        self.check_input(g, self.range.dim())?;
        let values = self.apply_raw(sys, g.values(), omega.leaf_masses(), true, filter);
        Ok(CubeFunction::for_system(sys, self.domain.dual(), values)?)
    }

    /// The dense matrix of `f ↦ T(fσ)` in unweighted leaf coordinates:
    /// entry `[(x,d),(y,c)] = σ_y Σ_{Q ∋ x,y} λ_Q[d,c]`.
    pub fn assemble_dense(&self, sys: &DyadicSystem, sigma: &Weight, filter: CubeFilter) -> DMatrix<f64> {
        let (dc, dd) = (self.domain.dim(), self.range.dim());
        let n = sys.num_leaves();
        let mut m = DMatrix::zeros(n * dd, n * dc);
        for (pos, b) in self.blocks_by_position(sys, filter) {
            let leaves = sys.leaf_range(pos);
            for x in leaves.clone() {
                for y in leaves.clone() {
                    let s = sigma.leaf_masses()[y];
                    if s == 0.0 {
                        continue;
                    }
                    for d in 0..dd {
                        for c in 0..dc {
                            m[(x * dd + d, y * dc + c)] += s * b.get(d, c);
                        }
                    }
                }
            }
        }
        m
    }

    /// The matrix of `T(·σ) : L²_C(σ) → L²_D(ω)` after the isometries `f ↦ √σ f`
    /// and `h ↦ √ω h`; its top singular value is the operator norm.
    pub fn assemble_linear_map(
        &self,
        sys: &DyadicSystem,
        sigma: &Weight,
        omega: &Weight,
        filter: CubeFilter,
    ) -> Result<DMatrix<f64>, OperatorError> {
        if !self.domain.is_euclidean() || !self.range.is_euclidean() {
            return Err(OperatorError::NotEuclidean);
        }
        let (dc, dd) = (self.domain.dim(), self.range.dim());
        let n = sys.num_leaves();
        let mut m = DMatrix::zeros(n * dd, n * dc);
        for (pos, b) in self.blocks_by_position(sys, filter) {
            let leaves = sys.leaf_range(pos);
            for x in leaves.clone() {
                let wx = omega.leaf_masses()[x].sqrt();
                if wx == 0.0 {
                    continue;
                }
                for y in leaves.clone() {
                    let sy = sigma.leaf_masses()[y].sqrt();
                    if sy == 0.0 {
                        continue;
                    }
                    let scale = wx * sy;
                    for d in 0..dd {
                        for c in 0..dc {
                            m[(x * dd + d, y * dc + c)] += scale * b.get(d, c);
                        }
                    }
                }
            }
        }
        Ok(m)
    }
}

/// Largest singular value of a matrix (zero for empty matrices).
pub fn top_singular_value(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.singular_values().iter().fold(0.0f64, |a, &b| a.max(b))
}

/// A top right singular vector with nonnegative entries (valid for entrywise-nonnegative matrices).
pub fn top_right_singular_vector(m: &DMatrix<f64>) -> (f64, Vec<f64>) {
    if m.nrows() == 0 || m.ncols() == 0 {
        return (0.0, vec![0.0; m.ncols()]);
    }
    let gram = m.transpose() * m;
    let eig = gram.symmetric_eigen();
    let (idx, &lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty");
    // For a nonnegative matrix |v| is again a top singular vector.
    let v: Vec<f64> = eig.eigenvectors.column(idx).iter().map(|x| x.abs()).collect();
    (lambda.max(0.0).sqrt(), v)
}

/// Nonnegative coefficients `β_Q` of a sequence-valued operator.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SequenceKernelSpec {
    pub betas: BTreeMap<CubeId, f64>,
}

/// `T(fσ) = {β_Q ∫_Q f dσ 1_Q}_Q` from scalars into `ℓ^s` indexed by active cubes
/// in canonical order.
pub fn build_sequence_operator(
    sys: &DyadicSystem,
    spec: &SequenceKernelSpec,
    s: Exponent,
) -> Result<PositiveKernel, OperatorError> {
    let coords: Vec<usize> = (0..sys.num_cubes()).filter(|&p| sys.is_active(p)).collect();
    let range = LatticeSpace::ell(coords.len(), s)?;
    let mut kernel = PositiveKernel::zero(LatticeSpace::scalar(), range);
    for (coordinate, &pos) in coords.iter().enumerate() {
        let cube = sys.cube(pos);
        let beta = spec.betas.get(&cube).copied().unwrap_or(0.0);
        if beta == 0.0 {
            continue;
        }
        let mut entries = vec![0.0; coords.len()];
        entries[coordinate] = beta;
        kernel.insert(cube, entries)?;
    }
    Ok(kernel)
}

/// `∫ ⟨g, h⟩ dμ` for leaf-major functions of equal dimension.
pub fn integral_pairing(g: &CubeFunction, h: &CubeFunction, w: &Weight) -> f64 {
    (0..g.num_leaves())
        .map(|l| {
            let m = w.leaf_masses()[l];
            if m == 0.0 {
                return 0.0;
            }
            let dot: f64 = g.leaf(l).iter().zip(h.leaf(l)).map(|(a, b)| a * b).sum();
            m * dot
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_kernel(entries: &[(CubeId, f64)]) -> PositiveKernel {
        let mut k = PositiveKernel::zero(LatticeSpace::scalar(), LatticeSpace::scalar());
        for (cube, v) in entries {
            k.insert(*cube, vec![*v]).unwrap();
        }
        k
    }

    #[test]
    fn single_cube_identity() {
        let sys = DyadicSystem::new(0, 2).unwrap();
        let w = Weight::new(&sys, vec![1.0]).unwrap();
        let k = scalar_kernel(&[(CubeId::ROOT, 1.0)]);
        let f = CubeFunction::scalar(vec![2.5]);
        assert_eq!(k.apply(&sys, &f, &w).unwrap().values(), &[2.5]);
        let m = k.assemble_linear_map(&sys, &w, &w, CubeFilter::All).unwrap();
        assert!((top_singular_value(&m) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_kernel_gives_zero() {
        let sys = DyadicSystem::new(2, 2).unwrap();
        let w = Weight::uniform(&sys);
        let k = scalar_kernel(&[]);
        let f = CubeFunction::scalar(vec![1.0, 2.0, 3.0, 4.0]);
        assert!(k.apply(&sys, &f, &w).unwrap().values().iter().all(|&v| v == 0.0));
        let m = k.assemble_linear_map(&sys, &w, &w, CubeFilter::All).unwrap();
        assert_eq!(top_singular_value(&m), 0.0);
    }

    #[test]
    fn sequence_operator_example() {
        let sys = DyadicSystem::new(1, 2).unwrap();
        let w = Weight::uniform(&sys);
        let spec = SequenceKernelSpec {
            betas: (0..3).map(|p| (sys.cube(p), 1.0)).collect(),
        };
        let k = build_sequence_operator(&sys, &spec, Exponent::TWO).unwrap();
        assert_eq!(k.range().dim(), 3);
        let one = CubeFunction::scalar(vec![1.0, 1.0]);
        let out = k.apply(&sys, &one, &w).unwrap();
        let expected = (1.0f64 + 0.25).sqrt();
        assert!((k.range().norm(out.leaf(0)) - expected).abs() < 1e-15);
    }

    #[test]
    fn dense_assembly_matches_apply() {
        let sys = DyadicSystem::new(2, 2).unwrap();
        let w = Weight::new(&sys, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let k = scalar_kernel(&[(CubeId::ROOT, 0.5), (CubeId::new(1, 1), 2.0), (CubeId::new(2, 0), 1.0)]);
        let f = CubeFunction::scalar(vec![1.0, -2.0, 0.5, 3.0]);
        let direct = k.apply(&sys, &f, &w).unwrap();
        let dense = k.assemble_dense(&sys, &w, CubeFilter::All);
        let via = &dense * nalgebra::DVector::from_column_slice(f.values());
        for (a, b) in direct.values().iter().zip(via.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn json_roundtrip() {
        let mut k = PositiveKernel::zero(
            LatticeSpace::euclidean(2).unwrap(),
            LatticeSpace::ell(1, Exponent::INFINITY).unwrap(),
        );
        k.insert(CubeId::new(1, 0), vec![1.0, 2.0]).unwrap();
        let text = serde_json::to_string(&k).unwrap();
        assert!(text.contains(r#""id":"1:0""#));
        let back: PositiveKernel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, k);
        let bad = text.replace("2.0", "-2.0");
        assert!(serde_json::from_str::<PositiveKernel>(&bad).is_err());
    }
}
