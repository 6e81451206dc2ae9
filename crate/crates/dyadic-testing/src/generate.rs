//! Seeded random instances, weights, kernels and test functions.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::dyadic::{CubeId, DyadicSystem, Weight};
use crate::instance::{InstanceError, ProblemInstance};
use crate::lattice::{Exponent, LatticeSpace};
use crate::operators::{build_sequence_operator, PositiveKernel, SequenceKernelSpec};

/// Mass left off the heavy leaf chain by [`WeightMode::Adversarial`].
pub const ADVERSARIAL_EPSILON: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    Uniform,
    Lognormal,
    /// Mass `1 − ε` on one leaf, so one child per level carries almost everything.
    Adversarial,
}

impl std::str::FromStr for WeightMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(WeightMode::Uniform),
            "lognormal" => Ok(WeightMode::Lognormal),
            "adversarial" => Ok(WeightMode::Adversarial),
            other => Err(format!("unknown weight mode `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelMode {
    Scalar,
    Diagonal,
    DenseNonneg,
    /// Scalars into `ℓ^s` over the active cubes, one coordinate per cube.
    Sequence,
}

impl std::str::FromStr for KernelMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scalar" => Ok(KernelMode::Scalar),
            "diagonal" => Ok(KernelMode::Diagonal),
            "dense-nonneg" | "dense_nonneg" => Ok(KernelMode::DenseNonneg),
            "sequence" => Ok(KernelMode::Sequence),
            other => Err(format!("unknown kernel mode `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceConfig {
    pub depth: usize,
    pub branching: usize,
    pub dim: usize,
    pub p: Exponent,
    pub q: Exponent,
    pub t: Exponent,
    /// Exponent of the lattice norms of both `C` and `D`.
    pub s: Exponent,
    pub weights: WeightMode,
    pub kernel: KernelMode,
    /// Use a single draw for `σ` and `ω`.
    pub equal_weights: bool,
    /// Probability that a non-root cube is active.
    pub active_fraction: f64,
    /// Probability that an active cube carries a nonzero block.
    pub kernel_density: f64,
}

impl Default for InstanceConfig {
    fn default() -> Self {
        InstanceConfig {
            depth: 3,
            branching: 2,
            dim: 1,
            p: Exponent::TWO,
            q: Exponent::TWO,
            t: Exponent::INFINITY,
            s: Exponent::TWO,
            weights: WeightMode::Lognormal,
            kernel: KernelMode::Scalar,
            equal_weights: false,
            active_fraction: 1.0,
            kernel_density: 0.8,
        }
    }
}

pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn random_system(depth: usize, branching: usize, active_fraction: f64, rng: &mut ChaCha8Rng) -> DyadicSystem {
    let full = DyadicSystem::new(depth, branching).expect("valid system size");
    if active_fraction >= 1.0 {
        return full;
    }
    let active: Vec<_> = (0..full.num_cubes())
        .filter(|&pos| pos == 0 || rng.random_bool(active_fraction.max(0.0)))
        .map(|pos| full.cube(pos))
        .collect();
    DyadicSystem::with_active(depth, branching, &active).expect("root is active")
}

pub fn random_weight(sys: &DyadicSystem, mode: WeightMode, rng: &mut ChaCha8Rng) -> Weight {
    let n = sys.num_leaves();
    let masses = match mode {
        WeightMode::Uniform => return Weight::uniform(sys),
        WeightMode::Lognormal => {
            let dist = LogNormal::new(0.0, 1.0).expect("valid parameters");
            let raw: Vec<f64> = (0..n).map(|_| dist.sample(rng)).collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|m| m / total).collect()
        }
        WeightMode::Adversarial => {
            if n == 1 {
                vec![1.0]
            } else {
                let heavy = rng.random_range(0..n);
                let light = ADVERSARIAL_EPSILON / (n - 1) as f64;
                (0..n)
                    .map(|l| if l == heavy { 1.0 - ADVERSARIAL_EPSILON } else { light })
                    .collect()
            }
        }
    };
    Weight::new(sys, masses).expect("positive finite masses")
}

fn block_entry(rng: &mut ChaCha8Rng) -> f64 {
    let dist = LogNormal::new(0.0, 0.75).expect("valid parameters");
    dist.sample(rng)
}

pub fn random_kernel(
    sys: &DyadicSystem,
    mode: KernelMode,
    dim: usize,
    s: Exponent,
    density: f64,
    rng: &mut ChaCha8Rng,
) -> PositiveKernel {
    let active = sys.active_list_positions();
    if mode == KernelMode::Sequence {
        let mut betas = BTreeMap::new();
        for pos in active {
            if rng.random_bool(density) {
                betas.insert(sys.cube(pos), block_entry(rng));
            }
        }
        return build_sequence_operator(sys, &SequenceKernelSpec { betas }, s)
            .expect("sequence kernel on active cubes");
    }
    let dim = if mode == KernelMode::Scalar { 1 } else { dim.max(1) };
    let space = LatticeSpace::ell(dim, s).expect("positive dimension");
    let mut kernel = PositiveKernel::zero(space.clone(), space);
    for pos in active {
        if !rng.random_bool(density) {
            continue;
        }
        let entries: Vec<f64> = match mode {
            KernelMode::Scalar => vec![block_entry(rng)],
            KernelMode::Diagonal => {
                let mut e = vec![0.0; dim * dim];
                for i in 0..dim {
                    e[i * dim + i] = block_entry(rng);
                }
                e
            }
            KernelMode::DenseNonneg => (0..dim * dim)
                .map(|_| if rng.random_bool(0.25) { 0.0 } else { block_entry(rng) })
                .collect(),
            KernelMode::Sequence => unreachable!("handled above"),
        };
        kernel
            .insert(sys.cube(pos), entries)
            .expect("nonnegative block on an active cube");
    }
    kernel
}

pub fn random_instance(config: &InstanceConfig, rng: &mut ChaCha8Rng) -> Result<ProblemInstance, InstanceError> {
    let sys = random_system(config.depth, config.branching, config.active_fraction, rng);
    let sigma = random_weight(&sys, config.weights, rng);
    let omega = if config.equal_weights {
        sigma.clone()
    } else {
        random_weight(&sys, config.weights, rng)
    };
    let kernel = random_kernel(&sys, config.kernel, config.dim, config.s, config.kernel_density, rng);
    ProblemInstance::new(sys, sigma, omega, kernel, config.p, config.q, config.t)
}

/// Lognormal coefficients on active cubes, each present with probability `density`;
/// the root always carries one.
pub fn random_coefficients(sys: &DyadicSystem, density: f64, rng: &mut ChaCha8Rng) -> BTreeMap<CubeId, f64> {
    let mut out = BTreeMap::new();
    for pos in sys.active_list_positions() {
        if pos == 0 || rng.random_bool(density) {
            out.insert(sys.cube(pos), block_entry(rng));
        }
    }
    out
}

/// Symmetric row-major `dim × dim` blocks with nonnegative entries, placed like
/// [`random_coefficients`].
pub fn random_symmetric_blocks(
    sys: &DyadicSystem,
    dim: usize,
    density: f64,
    rng: &mut ChaCha8Rng,
) -> BTreeMap<CubeId, Vec<f64>> {
    let mut out = BTreeMap::new();
    for pos in sys.active_list_positions() {
        if pos != 0 && !rng.random_bool(density) {
            continue;
        }
        let mut e = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in i..dim {
                let v = if i != j && rng.random_bool(0.25) { 0.0 } else { block_entry(rng) };
                e[i * dim + j] = v;
                e[j * dim + i] = v;
            }
        }
        out.insert(sys.cube(pos), e);
    }
    out
}

/// A nonnegative leaf-major function with occasional zeros and spikes.
pub fn random_function(num_leaves: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dist = LogNormal::new(0.0, 1.0).expect("valid parameters");
    (0..num_leaves * dim)
        .map(|_| {
            let u: f64 = rng.random();
            if u < 0.2 {
                0.0
            } else if u < 0.3 {
                10.0 * dist.sample(rng)
            } else {
                dist.sample(rng)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_instance() {
        let cfg = InstanceConfig {
            kernel: KernelMode::DenseNonneg,
            dim: 3,
            active_fraction: 0.6,
            ..Default::default()
        };
        let a = random_instance(&cfg, &mut rng_for(7, 0)).unwrap();
        let b = random_instance(&cfg, &mut rng_for(7, 0)).unwrap();
        assert_eq!(a, b);
        let c = random_instance(&cfg, &mut rng_for(7, 1)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn adversarial_weights_concentrate() {
        let sys = DyadicSystem::new(4, 2).unwrap();
        let w = random_weight(&sys, WeightMode::Adversarial, &mut rng_for(1, 0));
        let max = w.leaf_masses().iter().cloned().fold(0.0, f64::max);
        assert!((max - (1.0 - ADVERSARIAL_EPSILON)).abs() < 1e-15);
        assert!((w.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sequence_kernel_is_scalar_to_sequence() {
        let cfg = InstanceConfig {
            kernel: KernelMode::Sequence,
            depth: 2,
            ..Default::default()
        };
        let inst = random_instance(&cfg, &mut rng_for(3, 0)).unwrap();
        assert!(inst.kernel.domain().is_scalar());
        assert_eq!(inst.kernel.range().dim(), inst.system.num_cubes());
    }
}
