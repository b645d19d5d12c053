//! Instance files: a finite filtered space and optionally a process on it, as JSON.
//!
//! ```json
//! {
//!   "atoms": ["u", "d"],
//!   "probs": [0.5, 0.5],
//!   "depth": 1,
//!   "partitions": { "0": [[0, 1]], "1/2": [[0], [1]] },
//!   "process": { "level": 1, "values": { "0": [0, 0], "1/2": [1, -1], "1": [1, -1] } }
//! }
//! ```
//!
//! Partition keys are master grid times; a master time without a key inherits
//! the partition of the latest earlier key, and time 0 is required. Process
//! values are required at every grid time of the process level.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::{json, Map, Value};

use crate::dyadic::{DyadicGrid, DyadicTime};
use crate::error::{Error, Result};
use crate::filtered_space::{FiniteFilteredSpace, RandomVariable};
use crate::processes::AdaptedProcess;

#[derive(Debug, Clone)]
pub struct Instance {
    pub space: FiniteFilteredSpace,
    pub process: Option<AdaptedProcess>,
}

fn schema(location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema { location: location.into(), message: message.into() }
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str, at: &str) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| schema(at, format!("missing field \"{key}\"")))
}

fn as_array<'a>(v: &'a Value, at: &str) -> Result<&'a Vec<Value>> {
    v.as_array().ok_or_else(|| schema(at, "expected an array"))
}

fn as_object<'a>(v: &'a Value, at: &str) -> Result<&'a Map<String, Value>> {
    v.as_object().ok_or_else(|| schema(at, "expected an object"))
}

fn as_f64(v: &Value, at: &str) -> Result<f64> {
    v.as_f64().ok_or_else(|| schema(at, "expected a number"))
}

fn as_index(v: &Value, at: &str) -> Result<usize> {
    v.as_u64().map(|u| u as usize).ok_or_else(|| schema(at, "expected a nonnegative integer"))
}

fn as_level(v: &Value, at: &str) -> Result<u32> {
    v.as_u64().and_then(|u| u32::try_from(u).ok()).ok_or_else(|| schema(at, "expected a nonnegative integer"))
}

fn time_key(key: &str, level: u32, at: &str) -> Result<usize> {
    let t: DyadicTime = key.parse().map_err(|_| schema(at, format!("\"{key}\" is not a dyadic time")))?;
    t.index_at(level)
        .map(|j| j as usize)
        .ok_or_else(|| schema(at, format!("time {t} is not on the level-{level} grid")))
}

/// Parses an instance, reporting the location of the first schema violation.
pub fn parse_instance(text: &str) -> Result<Instance> {
    let root: Value = serde_json::from_str(text)
        .map_err(|e| schema(format!("line {}, column {}", e.line(), e.column()), format!("malformed JSON: {e}")))?;
    let obj = as_object(&root, "$")?;

    let atoms_v = as_array(field(obj, "atoms", "$")?, "$.atoms")?;
    let atoms = atoms_v
        .iter()
        .enumerate()
        .map(|(i, v)| {
            v.as_str().map(str::to_string).ok_or_else(|| schema(format!("$.atoms[{i}]"), "expected a string"))
        })
        .collect::<Result<Vec<_>>>()?;
    let probs = as_array(field(obj, "probs", "$")?, "$.probs")?
        .iter()
        .enumerate()
        .map(|(i, v)| as_f64(v, &format!("$.probs[{i}]")))
        .collect::<Result<Vec<_>>>()?;
    if probs.len() != atoms.len() {
        return Err(schema("$.probs", format!("{} probabilities for {} atoms", probs.len(), atoms.len())));
    }
    let depth = as_level(field(obj, "depth", "$")?, "$.depth")?;
    if depth == 0 || depth > crate::dyadic::MAX_LEVEL {
        return Err(schema("$.depth", format!("depth must be in 1..={}", crate::dyadic::MAX_LEVEL)));
    }

    let parts_v = as_object(field(obj, "partitions", "$")?, "$.partitions")?;
    let grid = DyadicGrid::new(depth);
    let mut given: BTreeMap<usize, Vec<Vec<usize>>> = BTreeMap::new();
    for (key, blocks_v) in parts_v {
        let at = format!("$.partitions[\"{key}\"]");
        let j = time_key(key, depth, &at)?;
        let blocks = as_array(blocks_v, &at)?
            .iter()
            .enumerate()
            .map(|(b, block)| {
                let at_b = format!("{at}[{b}]");
                as_array(block, &at_b)?
                    .iter()
                    .enumerate()
                    .map(|(i, a)| {
                        let at_i = format!("{at_b}[{i}]");
                        let idx = as_index(a, &at_i)?;
                        if idx >= atoms.len() {
                            return Err(schema(at_i, format!("atom index {idx} out of range")));
                        }
                        Ok(idx)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        if given.insert(j, blocks).is_some() {
            return Err(schema(at, "duplicate time"));
        }
    }
    if !given.contains_key(&0) {
        return Err(schema("$.partitions", "missing partition at time 0"));
    }
    let mut partitions = Vec::with_capacity(grid.len());
    for j in 0..grid.len() {
        let p = given.get(&j).cloned().unwrap_or_else(|| partitions.last().cloned().expect("time 0 present"));
        partitions.push(p);
    }
    let space =
        FiniteFilteredSpace::new(atoms, probs, depth, partitions).map_err(|e| schema("$.partitions", e.to_string()))?;

    let process = match obj.get("process") {
        None | Some(Value::Null) => None,
        Some(p) => Some(parse_process(&space, p)?),
    };
    Ok(Instance { space, process })
}

fn parse_process(space: &FiniteFilteredSpace, v: &Value) -> Result<AdaptedProcess> {
    let obj = as_object(v, "$.process")?;
    let level = as_level(field(obj, "level", "$.process")?, "$.process.level")?;
    if level > space.depth() {
        return Err(schema("$.process.level", format!("level {level} exceeds depth {}", space.depth())));
    }
    let values_v = as_object(field(obj, "values", "$.process")?, "$.process.values")?;
    let grid = DyadicGrid::new(level);
    let mut values: Vec<Option<RandomVariable>> = vec![None; grid.len()];
    for (key, vals) in values_v {
        let at = format!("$.process.values[\"{key}\"]");
        let j = time_key(key, level, &at)?;
        let arr = as_array(vals, &at)?;
        if arr.len() != space.num_atoms() {
            return Err(schema(at, format!("{} values for {} atoms", arr.len(), space.num_atoms())));
        }
        let nums = arr.iter().enumerate().map(|(i, x)| as_f64(x, &format!("{at}[{i}]"))).collect::<Result<Vec<_>>>()?;
        values[j] = Some(RandomVariable::new(nums).map_err(|e| schema(&at, e.to_string()))?);
    }
    let values = values
        .into_iter()
        .enumerate()
        .map(|(j, v)| v.ok_or_else(|| schema("$.process.values", format!("missing values at {}", grid.time(j)))))
        .collect::<Result<Vec<_>>>()?;
    AdaptedProcess::new(space, level, values).map_err(|e| schema("$.process", e.to_string()))
}

pub fn load_instance(path: &Path) -> Result<Instance> {
    parse_instance(&std::fs::read_to_string(path)?)
}

/// Serializes a space (every distinct partition at its first time) and an optional process.
pub fn instance_to_json(space: &FiniteFilteredSpace, process: Option<&AdaptedProcess>) -> Value {
    let mut partitions = Map::new();
    let mut last = None;
    for t in space.master_grid().times() {
        let part = space.partition_at(t).expect("master grid time");
        if last != Some(part) {
            partitions.insert(t.to_string(), json!(part.blocks()));
            last = Some(part);
        }
    }
    let mut root = json!({
        "atoms": space.atoms(),
        "probs": space.probs(),
        "depth": space.depth(),
        "partitions": partitions,
    });
    if let Some(p) = process {
        let values: Map<String, Value> =
            p.grid().times().zip(p.values()).map(|(t, v)| (t.to_string(), json!(v.values()))).collect();
        root["process"] = json!({ "level": p.level(), "values": values });
    }
    root
}
