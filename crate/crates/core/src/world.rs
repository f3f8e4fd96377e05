//! Complete assignments of values to node instances.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use crate::error::Result;
use crate::graph::{Layout, NodeId, ScmGraph};

/// Read access to node values by id, shared by simulated worlds and logged
/// records.
pub trait Values {
    fn instances(&self, id: &str) -> Option<&[f64]>;

    fn scalar(&self, id: &str) -> Option<f64> {
        self.instances(id).and_then(|v| v.first().copied())
    }
}

/// Values of every exogenous node instance for one world.
#[derive(Debug, Clone, PartialEq)]
pub struct Exogenous {
    pub seed: u64,
    pub world: u64,
    pub values: BTreeMap<NodeId, Vec<f64>>,
}

impl Values for Exogenous {
    fn instances(&self, id: &str) -> Option<&[f64]> {
        self.values.get(id).map(Vec::as_slice)
    }
}

/// One simulation run: a value for every node instance.
#[derive(Debug, Clone)]
pub struct World {
    pub(crate) layout: Arc<Layout>,
    pub(crate) values: Vec<Vec<f64>>,
    pub(crate) seed: u64,
    pub(crate) index: u64,
    pub(crate) fingerprint: String,
}

/// Bitwise equality, so undefined (NaN) estimands compare equal to
/// themselves.
impl PartialEq for World {
    fn eq(&self, other: &Self) -> bool {
        self.layout.ids == other.layout.ids
            && self.seed == other.seed
            && self.index == other.index
            && self.fingerprint == other.fingerprint
            && self.values.len() == other.values.len()
            && self.values.iter().zip(&other.values).all(|(a, b)| {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

impl Values for World {
    fn instances(&self, id: &str) -> Option<&[f64]> {
        self.layout.index_of(id).map(|i| self.values[i].as_slice())
    }
}

impl World {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn graph_fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.instances(id)
    }

    /// Values by node position in the generating graph.
    pub fn by_index(&self, node: usize) -> &[f64] {
        &self.values[node]
    }

    /// Exogenous part of the world, keyed by node id.
    pub fn exogenous(&self, graph: &ScmGraph) -> Exogenous {
        let values = graph
            .exogenous()
            .filter_map(|(_, n)| self.get(&n.id).map(|v| (n.id.clone(), v.to_vec())))
            .collect();
        Exogenous {
            seed: self.seed,
            world: self.index,
            values,
        }
    }

    /// Same values under another world index, used when a world is
    /// re-identified (e.g. a counterfactual of a logged world).
    pub(crate) fn with_identity(mut self, seed: u64, index: u64) -> Self {
        self.seed = seed;
        self.index = index;
        self
    }
}

fn fmt_value(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

/// Writes worlds as long-format CSV:
/// `world_id,step,plate_index,node_id,value`. Unplated nodes and nodes
/// without a step leave those columns empty; undefined values are empty.
pub fn write_worlds_csv<W: Write>(worlds: &[World], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["world_id", "step", "plate_index", "node_id", "value"])?;
    for world in worlds {
        let layout = &world.layout;
        for (node, id) in layout.ids.iter().enumerate() {
            let step = layout.steps[node].map_or(String::new(), |s| s.to_string());
            let plated = layout.plates[node].is_some();
            for (i, &v) in world.values[node].iter().enumerate() {
                w.write_record([
                    world.index.to_string(),
                    step.clone(),
                    if plated { i.to_string() } else { String::new() },
                    id.clone(),
                    fmt_value(v),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
