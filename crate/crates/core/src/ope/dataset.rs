//! Logged trajectories and their JSON-lines format.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde_json::{Map, Value as Json};

use crate::error::{Error, Result};
use crate::graph::{NodeId, ScmGraph};
use crate::simulate::map_worlds;
use crate::world::{Values, World};

use super::Policy;

/// One logged world: observed node values plus the behavior probability of
/// each logged action instance.
#[derive(Debug, Clone, PartialEq)]
pub struct LoggedRecord {
    pub world_id: u64,
    pub nodes: BTreeMap<NodeId, Vec<f64>>,
    pub behavior_prob: BTreeMap<NodeId, Vec<f64>>,
}

impl Values for LoggedRecord {
    fn instances(&self, id: &str) -> Option<&[f64]> {
        self.nodes.get(id).map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoggedDataset {
    pub records: Vec<LoggedRecord>,
}

fn to_json(v: &[f64]) -> Json {
    let num = |x: f64| serde_json::Number::from_f64(x).map_or(Json::Null, Json::Number);
    if v.len() == 1 {
        num(v[0])
    } else {
        Json::Array(v.iter().map(|&x| num(x)).collect())
    }
}

fn from_json(v: &Json, what: &str) -> Result<Vec<f64>> {
    let one = |x: &Json| match x {
        Json::Null => Ok(f64::NAN),
        Json::Number(n) => n.as_f64().ok_or_else(|| Error::ModelFormat(format!("{what}: bad number"))),
        _ => Err(Error::ModelFormat(format!("{what}: expected a number or null"))),
    };
    match v {
        Json::Array(xs) => xs.iter().map(one).collect(),
        x => Ok(vec![one(x)?]),
    }
}

fn map_to_json(m: &BTreeMap<NodeId, Vec<f64>>) -> Json {
    Json::Object(m.iter().map(|(k, v)| (k.clone(), to_json(v))).collect::<Map<_, _>>())
}

fn map_from_json(v: Option<&Json>, field: &str, line: usize) -> Result<BTreeMap<NodeId, Vec<f64>>> {
    match v {
        None => Ok(BTreeMap::new()),
        Some(Json::Object(m)) => m
            .iter()
            .map(|(k, x)| Ok((k.clone(), from_json(x, &format!("line {line}: {field}.{k}"))?)))
            .collect(),
        Some(_) => Err(Error::ModelFormat(format!("line {line}: `{field}` must be an object"))),
    }
}

impl LoggedDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Sample mean of `f` over records, skipping nothing.
    pub fn mean_of(&self, f: impl Fn(&LoggedRecord) -> f64) -> f64 {
        self.records.iter().map(f).sum::<f64>() / self.records.len() as f64
    }

    /// `{world_id, nodes: {id: value | [values]}, behavior_prob: {...}}`
    /// per line; NaN is written as null.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            let mut obj = Map::new();
            obj.insert("world_id".into(), Json::from(r.world_id));
            obj.insert("nodes".into(), map_to_json(&r.nodes));
            obj.insert("behavior_prob".into(), map_to_json(&r.behavior_prob));
            serde_json::to_writer(&mut out, &Json::Object(obj)).map_err(|e| Error::Io(e.to_string()))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut records = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let lineno = n + 1;
            let v: Json = serde_json::from_str(&line)
                .map_err(|e| Error::ModelFormat(format!("line {lineno}: {e}")))?;
            let world_id = v
                .get("world_id")
                .and_then(Json::as_u64)
                .ok_or_else(|| Error::ModelFormat(format!("line {lineno}: missing integer `world_id`")))?;
            let record = LoggedRecord {
                world_id,
                nodes: map_from_json(v.get("nodes"), "nodes", lineno)?,
                behavior_prob: map_from_json(v.get("behavior_prob"), "behavior_prob", lineno)?,
            };
            validate_record(&record)?;
            records.push(record);
        }
        Ok(LoggedDataset { records })
    }

    pub fn validate(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        self.records.iter().try_for_each(validate_record)
    }
}

fn validate_record(r: &LoggedRecord) -> Result<()> {
    for (node, ps) in &r.behavior_prob {
        if let Some(&p) = ps.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::InvalidBehaviorProbability {
                node: node.clone(),
                world: r.world_id,
                p,
            });
        }
    }
    Ok(())
}

/// Samples `n` worlds from `graph` (which must already carry the behavior
/// policy) and logs the nodes in `observed` (all nodes when `None`) with
/// the behavior probability of every action instance.
pub fn generate_logs(
    graph: &ScmGraph,
    behavior: &Policy,
    observed: Option<&[NodeId]>,
    n: usize,
    seed: u64,
) -> Result<LoggedDataset> {
    let log = |w: World| -> Result<LoggedRecord> {
        let ids: Vec<&str> = match observed {
            Some(list) => list.iter().map(String::as_str).collect(),
            None => w.layout().ids.iter().map(String::as_str).collect(),
        };
        let mut nodes = BTreeMap::new();
        for id in ids {
            let v = w.get(id).ok_or_else(|| Error::UnknownNode(id.to_string()))?;
            nodes.insert(id.to_string(), v.to_vec());
        }
        let actions = w
            .get(&behavior.node)
            .ok_or_else(|| Error::UnknownNode(behavior.node.clone()))?;
        let probs = actions
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                behavior.probability.prob(&w, a, i).ok_or_else(|| Error::UnsupportedAction {
                    node: behavior.node.clone(),
                    detail: format!("behavior policy `{}` has no probability for world {}", behavior.name, w.index()),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        let record = LoggedRecord {
            world_id: w.index(),
            nodes,
            behavior_prob: BTreeMap::from([(behavior.node.clone(), probs)]),
        };
        validate_record(&record)?;
        Ok(record)
    };
    let records = map_worlds(graph, n, seed, log)?
        .into_par_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(LoggedDataset { records })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> LoggedRecord {
        LoggedRecord {
            world_id: 3,
            nodes: BTreeMap::from([("A".to_string(), vec![1.0]), ("X".to_string(), vec![0.5, f64::NAN])]),
            behavior_prob: BTreeMap::from([("A".to_string(), vec![0.25])]),
        }
    }

    #[test]
    fn jsonl_roundtrip() {
        let ds = LoggedDataset { records: vec![record()] };
        let mut buf = Vec::new();
        ds.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text.trim(),
            r#"{"behavior_prob":{"A":0.25},"nodes":{"A":1.0,"X":[0.5,null]},"world_id":3}"#
        );
        let back = LoggedDataset::read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back.records[0].nodes["A"], vec![1.0]);
        assert!(back.records[0].nodes["X"][1].is_nan());
    }

    #[test]
    fn zero_behavior_probability_is_a_data_error() {
        let line = r#"{"world_id":0,"nodes":{"A":1},"behavior_prob":{"A":0}}"#;
        assert!(matches!(
            LoggedDataset::read_jsonl(line.as_bytes()),
            Err(Error::InvalidBehaviorProbability { .. })
        ));
    }
}
