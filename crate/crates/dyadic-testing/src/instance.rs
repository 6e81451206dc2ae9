//! Problem instances and their JSON form.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dyadic::{CubeId, DyadicError, DyadicSystem, Weight};
use crate::lattice::Exponent;
use crate::operators::{OperatorError, PositiveKernel};

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("exponents must satisfy 1 < p <= q < inf, got p = {p}, q = {q}")]
    Exponents { p: Exponent, q: Exponent },
    #[error("t must exceed p, got t = {t}, p = {p}")]
    TBelowP { t: Exponent, p: Exponent },
    #[error(transparent)]
    Dyadic(#[from] DyadicError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error("malformed instance JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// A dyadic system with two measures, a kernel and exponents `p ≤ q`, `t > p`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemInstance {
    pub system: DyadicSystem,
    pub sigma: Weight,
    pub omega: Weight,
    pub kernel: PositiveKernel,
    pub p: Exponent,
    pub q: Exponent,
    pub t: Exponent,
}

impl ProblemInstance {
    pub fn new(
        system: DyadicSystem,
        sigma: Weight,
        omega: Weight,
        kernel: PositiveKernel,
        p: Exponent,
        q: Exponent,
        t: Exponent,
    ) -> Result<Self, InstanceError> {
        if !(p.value() > 1.0 && p <= q && !q.is_infinite()) {
            return Err(InstanceError::Exponents { p, q });
        }
        if t <= p {
            return Err(InstanceError::TBelowP { t, p });
        }
        kernel.validate(&system)?;
        Ok(ProblemInstance {
            system,
            sigma,
            omega,
            kernel,
            p,
            q,
            t,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, InstanceError> {
        let file: InstanceFile = serde_json::from_str(text)?;
        file.into_instance()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&InstanceFile::from_instance(self)).expect("serializable")
    }

    /// One instance or a JSON array of instances.
    pub fn list_from_json(text: &str) -> Result<Vec<Self>, InstanceError> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let files: Vec<InstanceFile> = if value.is_array() {
            serde_json::from_value(value)?
        } else {
            vec![serde_json::from_value(value)?]
        };
        files.into_iter().map(InstanceFile::into_instance).collect()
    }

    pub fn list_to_json(instances: &[Self]) -> String {
        let files: Vec<InstanceFile> = instances.iter().map(InstanceFile::from_instance).collect();
        serde_json::to_string_pretty(&files).expect("serializable")
    }

    /// Same instance with a different kernel.
    pub fn with_kernel(&self, kernel: PositiveKernel) -> Self {
        ProblemInstance {
            kernel,
            ..self.clone()
        }
    }

    /// Same instance with different exponents.
    pub fn with_exponents(&self, p: Exponent, q: Exponent, t: Exponent) -> Result<Self, InstanceError> {
        ProblemInstance::new(
            self.system.clone(),
            self.sigma.clone(),
            self.omega.clone(),
            self.kernel.clone(),
            p,
            q,
            t,
        )
    }
}

#[derive(Serialize, Deserialize)]
pub struct WeightsFile {
    pub sigma: Vec<f64>,
    pub omega: Vec<f64>,
}

/// The serialized shape of a [`ProblemInstance`].
#[derive(Serialize, Deserialize)]
pub struct InstanceFile {
    pub depth: usize,
    pub branching: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active: Option<Vec<CubeId>>,
    pub weights: WeightsFile,
    pub kernel: PositiveKernel,
    pub p: Exponent,
    pub q: Exponent,
    #[serde(default = "default_t")]
    pub t: Exponent,
}

fn default_t() -> Exponent {
    Exponent::INFINITY
}

impl InstanceFile {
    pub fn into_instance(self) -> Result<ProblemInstance, InstanceError> {
        let system = match &self.active {
            Some(active) => DyadicSystem::with_active(self.depth, self.branching, active)?,
            None => DyadicSystem::new(self.depth, self.branching)?,
        };
        let sigma = Weight::new(&system, self.weights.sigma)?;
        let omega = Weight::new(&system, self.weights.omega)?;
        ProblemInstance::new(system, sigma, omega, self.kernel, self.p, self.q, self.t)
    }

    pub fn from_instance(inst: &ProblemInstance) -> Self {
        InstanceFile {
            depth: inst.system.depth(),
            branching: inst.system.branching(),
            active: inst.system.active_list(),
            weights: WeightsFile {
                sigma: inst.sigma.leaf_masses().to_vec(),
                omega: inst.omega.leaf_masses().to_vec(),
            },
            kernel: inst.kernel.clone(),
            p: inst.p,
            q: inst.q,
            t: inst.t,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeSpace;

    #[test]
    fn roundtrip_and_validation() {
        let text = r#"{
            "depth": 1, "branching": 2, "active": ["0:0", "1:1"],
            "weights": {"sigma": [0.5, 0.5], "omega": [0.25, 0.75]},
            "kernel": {"cubes": [{"id": "1:1", "block": [[2.0]]}],
                       "domain": {"dim": 1, "norm": {"kind": "ell_s", "s": 2}},
                       "range": {"dim": 1, "norm": {"kind": "ell_s", "s": 2}}},
            "p": 2, "q": 3, "t": "inf"
        }"#;
        let inst = ProblemInstance::from_json(text).unwrap();
        assert!(!inst.system.is_active(1));
        let again = ProblemInstance::from_json(&inst.to_json()).unwrap();
        assert_eq!(again, inst);

        let inactive = text.replace(r#""id": "1:1""#, r#""id": "1:0""#);
        assert!(ProblemInstance::from_json(&inactive).is_err());
        let bad_p = text.replace(r#""p": 2"#, r#""p": 4"#);
        assert!(ProblemInstance::from_json(&bad_p).is_err());
    }

    #[test]
    fn t_must_exceed_p() {
        let sys = DyadicSystem::new(0, 2).unwrap();
        let w = Weight::uniform(&sys);
        let k = PositiveKernel::zero(LatticeSpace::scalar(), LatticeSpace::scalar());
        let two = Exponent::TWO;
        assert!(ProblemInstance::new(sys, w.clone(), w, k, two, two, two).is_err());
    }
}
