//! Browser bindings. Every export returns a JSON string; failures come back as
//! `{"error": "..."}` so the same functions run natively.

use serde_json::{json, Value};
use wasm_bindgen::prelude::wasm_bindgen;

use dyadic_testing::constants::testing_constants as compute_constants;
use dyadic_testing::dyadic::scalar_maximal;
use dyadic_testing::generate::{random_instance, rng_for, InstanceConfig, KernelMode};
use dyadic_testing::optimize::AscentOptions;
use dyadic_testing::stopping::{build_family, StoppingInput, StoppingTag};
use dyadic_testing::{CubeFunction, DyadicSystem, ProblemInstance, Weight};

fn respond(result: Result<Value, String>) -> String {
    result.unwrap_or_else(|e| json!({ "error": e })).to_string()
}

fn system_and_weight(depth: usize, branching: usize, masses: Vec<f64>) -> Result<(DyadicSystem, Weight), String> {
    let sys = DyadicSystem::new(depth, branching).map_err(|e| e.to_string())?;
    let w = if masses.is_empty() {
        Weight::uniform(&sys)
    } else {
        Weight::new(&sys, masses).map_err(|e| e.to_string())?
    };
    Ok((sys, w))
}

fn leaf_values(sys: &DyadicSystem, values: Vec<f64>) -> Result<Vec<f64>, String> {
    if values.len() != sys.num_leaves() {
        return Err(format!("expected {} leaf values, got {}", sys.num_leaves(), values.len()));
    }
    Ok(values)
}

/// The dyadic maximal function of leaf values; empty `masses` means uniform.
#[wasm_bindgen]
pub fn maximal_function(depth: usize, branching: usize, values: Vec<f64>, masses: Vec<f64>) -> String {
    respond((|| {
        let (sys, w) = system_and_weight(depth, branching, masses)?;
        let h = leaf_values(&sys, values)?;
        Ok(json!({ "maximal": scalar_maximal(&h, &w, &sys) }))
    })())
}

/// A random scalar instance in the instance-file format.
#[wasm_bindgen]
pub fn sample_instance(seed: u64, depth: usize) -> String {
    let cfg = InstanceConfig {
        depth,
        kernel: KernelMode::Scalar,
        ..Default::default()
    };
    respond(
        random_instance(&cfg, &mut rng_for(seed, 0))
            .map_err(|e| e.to_string())
            .and_then(|inst| serde_json::from_str(&inst.to_json()).map_err(|e| e.to_string())),
    )
}

/// Norm and testing constants of an instance file.
#[wasm_bindgen]
pub fn testing_constants(instance: &str, starts: usize, seed: u64) -> String {
    respond((|| {
        let inst = ProblemInstance::from_json(instance).map_err(|e| e.to_string())?;
        let opts = AscentOptions {
            starts: starts.max(1),
            max_iterations: 1000,
            ..AscentOptions::with_seed(seed)
        };
        let c = compute_constants(&inst, &opts);
        let rows: Vec<_> = [&c.norm, &c.direct, &c.dual, &c.pairing, &c.lt, &c.endpoint_direct, &c.endpoint_lt, &c.constant_function]
            .into_iter()
            .map(|r| json!({ "name": r.name, "value": r.value, "method": r.method }))
            .collect();
        Ok(Value::Array(rows))
    })())
}

/// The stopping tree selected by `tag` from positive leaf values.
#[wasm_bindgen]
pub fn stopping_family(tag: &str, depth: usize, branching: usize, values: Vec<f64>, masses: Vec<f64>) -> String {
    respond((|| {
        let tag: StoppingTag = tag.parse()?;
        let (sys, w) = system_and_weight(depth, branching, masses)?;
        let f = CubeFunction::scalar(leaf_values(&sys, values)?);
        let input = StoppingInput {
            sys: &sys,
            w: &w,
            f: &f,
            kernel: None,
        };
        let family = build_family(tag, &input).map_err(|e| e.to_string())?;
        serde_json::to_value(family.dump(&sys, &w)).map_err(|e| e.to_string())
    })())
}
