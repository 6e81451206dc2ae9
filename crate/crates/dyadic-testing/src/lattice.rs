//! Finite-dimensional Banach lattices.
//!
//! A [`LatticeSpace`] is ℝⁿ with the componentwise order and a (possibly
//! weighted) ℓ^s norm. Weighted norms are `(Σ wᵢ|xᵢ|^s)^{1/s}` for finite `s`
//! and `maxᵢ wᵢ|xᵢ|` for `s = ∞`.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("exponent must lie in [1, inf], got {0}")]
    InvalidExponent(f64),
    #[error("lattice dimension must be positive")]
    EmptySpace,
    #[error("norm weights must be finite and positive, {0} given")]
    InvalidWeights(String),
    #[error("unsupported norm kind `{0}`")]
    UnsupportedNormKind(String),
}

/// An exponent in `[1, ∞]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Exponent(f64);

impl Exponent {
    pub const ONE: Exponent = Exponent(1.0);
    pub const TWO: Exponent = Exponent(2.0);
    pub const INFINITY: Exponent = Exponent(f64::INFINITY);

    pub fn new(value: f64) -> Result<Self, LatticeError> {
        if value.is_nan() || value < 1.0 {
            return Err(LatticeError::InvalidExponent(value));
        }
        Ok(Exponent(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }

    /// The Hölder conjugate `s' = s/(s-1)`.
    pub fn conjugate(self) -> Exponent {
        if self.0 == 1.0 {
            Exponent::INFINITY
        } else if self.0.is_infinite() {
            Exponent::ONE
        } else {
            Exponent(self.0 / (self.0 - 1.0))
        }
    }

    /// `1/s`, with `1/∞ = 0`.
    pub fn reciprocal(self) -> f64 {
        if self.0.is_infinite() {
            0.0
        } else {
            1.0 / self.0
        }
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            write!(f, "inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl std::str::FromStr for Exponent {
    type Err = LatticeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "inf" | "infinity" | "∞" => Ok(Exponent::INFINITY),
            other => {
                let v: f64 = other
                    .parse()
                    .map_err(|_| LatticeError::InvalidExponent(f64::NAN))?;
                Exponent::new(v)
            }
        }
    }
}

impl Serialize for Exponent {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        if self.is_infinite() {
            serializer.serialize_str("inf")
        } else {
            serializer.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Exponent {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Number(f64),
            Text(String),
        }
        let parsed = match Repr::deserialize(deserializer)? {
            Repr::Number(v) => Exponent::new(v),
            Repr::Text(s) => s.parse(),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

/// ℝⁿ with the componentwise order and an ℓ^s-type norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpaceRepr", into = "SpaceRepr")]
pub struct LatticeSpace {
    dim: usize,
    exponent: Exponent,
    weights: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct SpaceRepr {
    dim: usize,
    norm: NormRepr,
}

#[derive(Serialize, Deserialize)]
struct NormRepr {
    kind: String,
    s: Exponent,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<f64>>,
}

impl TryFrom<SpaceRepr> for LatticeSpace {
    type Error = LatticeError;

    fn try_from(repr: SpaceRepr) -> Result<Self, Self::Error> {
        if repr.norm.kind != "ell_s" {
            return Err(LatticeError::UnsupportedNormKind(repr.norm.kind));
        }
        match repr.norm.weights {
            Some(w) => LatticeSpace::weighted(repr.dim, repr.norm.s, w),
            None => LatticeSpace::ell(repr.dim, repr.norm.s),
        }
    }
}

impl From<LatticeSpace> for SpaceRepr {
    fn from(space: LatticeSpace) -> Self {
        SpaceRepr {
            dim: space.dim,
            norm: NormRepr {
                kind: "ell_s".to_string(),
                s: space.exponent,
                weights: space.weights,
            },
        }
    }
}

impl LatticeSpace {
    pub fn ell(dim: usize, s: Exponent) -> Result<Self, LatticeError> {
        if dim == 0 {
            return Err(LatticeError::EmptySpace);
        }
        Ok(LatticeSpace {
            dim,
            exponent: s,
            weights: None,
        })
    }

    pub fn weighted(dim: usize, s: Exponent, weights: Vec<f64>) -> Result<Self, LatticeError> {
        if dim == 0 {
            return Err(LatticeError::EmptySpace);
        }
        if weights.len() != dim {
            return Err(LatticeError::DimensionMismatch {
                left: dim,
                right: weights.len(),
            });
        }
        if let Some(bad) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(LatticeError::InvalidWeights(bad.to_string()));
        }
        Ok(LatticeSpace {
            dim,
            exponent: s,
            weights: Some(weights),
        })
    }

    /// The real line.
    pub fn scalar() -> Self {
        LatticeSpace {
            dim: 1,
            exponent: Exponent::TWO,
            weights: None,
        }
    }

    /// Unweighted ℓ² of the given dimension.
    pub fn euclidean(dim: usize) -> Result<Self, LatticeError> {
        LatticeSpace::ell(dim, Exponent::TWO)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn exponent(&self) -> Exponent {
        self.exponent
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }

    /// True when the norm is the plain Euclidean norm.
    pub fn is_euclidean(&self) -> bool {
        let unweighted = self
            .weights
            .as_ref()
            .is_none_or(|w| w.iter().all(|&x| x == 1.0));
        unweighted && (self.dim == 1 || self.exponent == Exponent::TWO)
    }

    /// True when all norms on this space agree with the absolute value.
    pub fn is_scalar(&self) -> bool {
        self.dim == 1 && self.weight(0) == 1.0
    }

    pub fn check_dim(&self, len: usize) -> Result<(), LatticeError> {
        if len == self.dim {
            Ok(())
        } else {
            Err(LatticeError::DimensionMismatch {
                left: self.dim,
                right: len,
            })
        }
    }

    /// The lattice norm of `x`.
    pub fn norm(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        let s = self.exponent.value();
        if s.is_infinite() {
            return x
                .iter()
                .enumerate()
                .map(|(i, v)| self.weight(i) * v.abs())
                .fold(0.0, f64::max);
        }
        if s == 1.0 {
            return x
                .iter()
                .enumerate()
                .map(|(i, v)| self.weight(i) * v.abs())
                .sum();
        }
        let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 || !scale.is_finite() {
            return scale;
        }
        let sum: f64 = x
            .iter()
            .enumerate()
            .map(|(i, v)| self.weight(i) * (v.abs() / scale).powf(s))
            .sum();
        scale * sum.powf(1.0 / s)
    }

    /// The dual space under the pairing `Σ xᵢyᵢ`.
    pub fn dual(&self) -> LatticeSpace {
        let s = self.exponent;
        let weights = self.weights.as_ref().map(|w| {
            if s.is_infinite() || s == Exponent::ONE {
                w.iter().map(|x| 1.0 / x).collect()
            } else {
                let exp = 1.0 - s.conjugate().value();
                w.iter().map(|x| x.powf(exp)).collect()
            }
        });
        LatticeSpace {
            dim: self.dim,
            exponent: s.conjugate(),
            weights,
        }
    }

    /// The positive vector with all components equal and unit norm.
    pub fn unit_positive(&self) -> Vec<f64> {
        let ones = vec![1.0; self.dim];
        let n = self.norm(&ones);
        ones.into_iter().map(|v| v / n).collect()
    }

    /// The largest element of the positive unit ball, which exists for `s = ∞`
    /// and in dimension one.
    pub fn top_element(&self) -> Option<Vec<f64>> {
        if self.exponent.is_infinite() {
            Some((0..self.dim).map(|i| 1.0 / self.weight(i)).collect())
        } else if self.dim == 1 {
            Some(vec![self.weight(0).powf(-1.0 / self.exponent.value())])
        } else {
            None
        }
    }

    /// A positive unit vector `x` maximizing `Σ xᵢ yᵢ⁺`; the maximum is the dual norm of `y⁺`.
    pub fn dual_maximizer(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.dim);
        let pos: Vec<f64> = y.iter().map(|v| v.max(0.0)).collect();
        if pos.iter().all(|&v| v == 0.0) {
            return self.unit_positive();
        }
        let s = self.exponent.value();
        if let Some(top) = self.top_element() {
            return top;
        }
        if s == 1.0 {
            let mut best = 0;
            let mut best_ratio = f64::NEG_INFINITY;
            for (i, v) in pos.iter().enumerate() {
                let r = v / self.weight(i);
                if r > best_ratio {
                    best_ratio = r;
                    best = i;
                }
            }
            let mut x = vec![0.0; self.dim];
            x[best] = 1.0 / self.weight(best);
            return x;
        }
        let power = 1.0 / (s - 1.0);
        let scale = pos
            .iter()
            .enumerate()
            .fold(0.0f64, |m, (i, v)| m.max(v / self.weight(i)));
        let mut x: Vec<f64> = pos
            .iter()
            .enumerate()
            .map(|(i, v)| (v / self.weight(i) / scale).powf(power))
            .collect();
        let n = self.norm(&x);
        x.iter_mut().for_each(|v| *v /= n);
        x
    }

    /// A subgradient of the norm at `x`, written into `out`.
    pub fn norm_gradient(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let s = self.exponent.value();
        if s.is_infinite() {
            let mut best = None;
            let mut best_val = 0.0;
            for (i, v) in x.iter().enumerate() {
                let val = self.weight(i) * v.abs();
                if val > best_val {
                    best_val = val;
                    best = Some(i);
                }
            }
            if let Some(i) = best {
                out[i] = self.weight(i) * x[i].signum();
            }
            return;
        }
        if s == 1.0 {
            for (i, v) in x.iter().enumerate() {
                if *v != 0.0 {
                    out[i] = self.weight(i) * v.signum();
                }
            }
            return;
        }
        let n = self.norm(x);
        if n == 0.0 {
            return;
        }
        for (i, v) in x.iter().enumerate() {
            out[i] = self.weight(i) * (v.abs() / n).powf(s - 1.0) * v.signum();
        }
    }

    /// Clips `x` to the positive cone and rescales it to unit norm.
    pub fn normalize_positive(&self, x: &mut [f64]) {
        x.iter_mut().for_each(|v| *v = v.max(0.0));
        let n = self.norm(x);
        if n > 0.0 && n.is_finite() {
            x.iter_mut().for_each(|v| *v /= n);
        } else {
            x.copy_from_slice(&self.unit_positive());
        }
    }
}

/// An element of a finite-dimensional lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatticeVector(pub Vec<f64>);

/// Absolute value together with the positive and negative parts.
#[derive(Clone, Debug, PartialEq)]
pub struct AbsParts {
    pub abs: LatticeVector,
    pub pos: LatticeVector,
    pub neg: LatticeVector,
}

impl LatticeVector {
    pub fn zeros(dim: usize) -> Self {
        LatticeVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    fn zip_with(&self, other: &Self, op: impl Fn(f64, f64) -> f64) -> Result<Self, LatticeError> {
        if self.dim() != other.dim() {
            return Err(LatticeError::DimensionMismatch {
                left: self.dim(),
                right: other.dim(),
            });
        }
        Ok(LatticeVector(
            self.0.iter().zip(&other.0).map(|(a, b)| op(*a, *b)).collect(),
        ))
    }

    /// Least upper bound in the componentwise order.
    pub fn sup(&self, other: &Self) -> Result<Self, LatticeError> {
        self.zip_with(other, f64::max)
    }

    /// Greatest lower bound in the componentwise order.
    pub fn inf(&self, other: &Self) -> Result<Self, LatticeError> {
        self.zip_with(other, f64::min)
    }

    pub fn abs_parts(&self) -> AbsParts {
        AbsParts {
            abs: LatticeVector(self.0.iter().map(|v| v.abs()).collect()),
            pos: LatticeVector(self.0.iter().map(|v| v.max(0.0)).collect()),
            neg: LatticeVector(self.0.iter().map(|v| (-v).max(0.0)).collect()),
        }
    }

    /// The pairing `Σ xᵢyᵢ` between a space and its dual.
    pub fn pairing(&self, other: &Self) -> Result<f64, LatticeError> {
        if self.dim() != other.dim() {
            return Err(LatticeError::DimensionMismatch {
                left: self.dim(),
                right: other.dim(),
            });
        }
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn is_positive(&self) -> bool {
        self.0.iter().all(|&v| v >= 0.0)
    }
}

impl From<Vec<f64>> for LatticeVector {
    fn from(v: Vec<f64>) -> Self {
        LatticeVector(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> LatticeVector {
        LatticeVector(x.to_vec())
    }

    #[test]
    fn sup_is_componentwise() {
        assert_eq!(v(&[1.0, 0.0]).sup(&v(&[0.0, 1.0])).unwrap(), v(&[1.0, 1.0]));
        assert_eq!(v(&[2.0, -1.0]).sup(&v(&[1.0, 3.0])).unwrap(), v(&[2.0, 3.0]));
        let x = v(&[0.3, -2.0]);
        assert_eq!(x.sup(&x).unwrap(), x);
        assert!(v(&[1.0]).sup(&v(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn abs_parts_examples() {
        let p = v(&[3.0, -2.0]).abs_parts();
        assert_eq!(p.abs, v(&[3.0, 2.0]));
        assert_eq!(p.pos, v(&[3.0, 0.0]));
        assert_eq!(p.neg, v(&[0.0, 2.0]));
        let p = v(&[-1.0, -1.0]).abs_parts();
        assert_eq!(p.pos, v(&[0.0, 0.0]));
        assert_eq!(p.neg, v(&[1.0, 1.0]));
    }

    #[test]
    fn norm_examples() {
        let l2 = LatticeSpace::euclidean(2).unwrap();
        assert!((l2.norm(&[3.0, 4.0]) - 5.0).abs() < 1e-15);
        let linf = LatticeSpace::ell(2, Exponent::INFINITY).unwrap();
        assert_eq!(linf.norm(&[3.0, -4.0]), 4.0);
        let l1 = LatticeSpace::ell(3, Exponent::ONE).unwrap();
        assert_eq!(l1.norm(&[1.0, 1.0, 1.0]), 3.0);
    }

    #[test]
    fn pairing_example() {
        assert_eq!(v(&[1.0, 2.0]).pairing(&v(&[3.0, 4.0])).unwrap(), 11.0);
        assert_eq!(v(&[1.0, 2.0]).pairing(&v(&[0.0, 0.0])).unwrap(), 0.0);
    }

    #[test]
    fn conjugate_exponents() {
        assert_eq!(Exponent::TWO.conjugate(), Exponent::TWO);
        assert_eq!(Exponent::ONE.conjugate(), Exponent::INFINITY);
        assert_eq!(Exponent::INFINITY.conjugate(), Exponent::ONE);
        assert!((Exponent::new(3.0).unwrap().conjugate().value() - 1.5).abs() < 1e-15);
        assert!(Exponent::new(0.5).is_err());
    }

    #[test]
    fn dual_maximizer_attains_dual_norm() {
        let spaces = [
            LatticeSpace::ell(3, Exponent::new(3.0).unwrap()).unwrap(),
            LatticeSpace::weighted(3, Exponent::new(1.5).unwrap(), vec![0.5, 2.0, 1.0]).unwrap(),
            LatticeSpace::weighted(3, Exponent::ONE, vec![0.5, 2.0, 1.0]).unwrap(),
            LatticeSpace::weighted(3, Exponent::INFINITY, vec![0.5, 2.0, 1.0]).unwrap(),
        ];
        let y = [0.7, 1.3, 0.2];
        for space in &spaces {
            let x = space.dual_maximizer(&y);
            assert!((space.norm(&x) - 1.0).abs() < 1e-12);
            let value: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
            assert!((value - space.dual().norm(&y)).abs() < 1e-12, "{space:?}");
        }
    }

    #[test]
    fn json_shape() {
        let s = LatticeSpace::weighted(2, Exponent::INFINITY, vec![1.0, 2.0]).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(
            text,
            r#"{"dim":2,"norm":{"kind":"ell_s","s":"inf","weights":[1.0,2.0]}}"#
        );
        let back: LatticeSpace = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
        let plain: LatticeSpace =
            serde_json::from_str(r#"{"dim":3,"norm":{"kind":"ell_s","s":2}}"#).unwrap();
        assert!(plain.is_euclidean());
    }

    #[test]
    fn dual_of_dual_is_identity() {
        let s = LatticeSpace::weighted(2, Exponent::new(4.0).unwrap(), vec![0.25, 3.0]).unwrap();
        let dd = s.dual().dual();
        for (a, b) in s.weights().unwrap().iter().zip(dd.weights().unwrap()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((dd.exponent().value() - 4.0).abs() < 1e-12);
    }
}
