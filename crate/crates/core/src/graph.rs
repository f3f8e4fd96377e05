//! Graph representation of structural causal models.
//!
//! A [`GraphSpec`] is an unchecked list of nodes and plates. Validating it
//! produces an immutable [`ScmGraph`] with a resolved evaluation order.
//! Plates are unrolled into indexed instances: a node in a plate of size `N`
//! stores `N` values, an unplated node stores one.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mechanism::{Equation, Input};
use crate::prior::NoisePrior;
use crate::value::ValueKind;

pub type NodeId = String;

#[derive(Debug, Clone)]
pub enum NodeKind {
    Exogenous(NoisePrior),
    Endogenous(Equation),
}

#[derive(Debug, Clone)]
pub struct NodeSpec {
    pub id: NodeId,
    pub kind: NodeKind,
    pub plate: Option<String>,
    pub step: Option<u32>,
}

impl NodeSpec {
    pub fn exogenous(id: impl Into<NodeId>, prior: NoisePrior) -> Self {
        NodeSpec {
            id: id.into(),
            kind: NodeKind::Exogenous(prior),
            plate: None,
            step: None,
        }
    }

    pub fn endogenous(id: impl Into<NodeId>, equation: Equation) -> Self {
        NodeSpec {
            id: id.into(),
            kind: NodeKind::Endogenous(equation),
            plate: None,
            step: None,
        }
    }

    pub fn in_plate(mut self, plate: impl Into<String>) -> Self {
        self.plate = Some(plate.into());
        self
    }

    pub fn at_step(mut self, step: u32) -> Self {
        self.step = Some(step);
        self
    }

    pub fn is_exogenous(&self) -> bool {
        matches!(self.kind, NodeKind::Exogenous(_))
    }

    pub fn prior(&self) -> Option<&NoisePrior> {
        match &self.kind {
            NodeKind::Exogenous(p) => Some(p),
            NodeKind::Endogenous(_) => None,
        }
    }

    pub fn equation(&self) -> Option<&Equation> {
        match &self.kind {
            NodeKind::Endogenous(e) => Some(e),
            NodeKind::Exogenous(_) => None,
        }
    }

    pub fn value_kind(&self) -> ValueKind {
        match &self.kind {
            NodeKind::Exogenous(p) => p.kind(),
            NodeKind::Endogenous(e) => e.mechanism.output_kind(),
        }
    }

    pub fn inputs(&self) -> &[Input] {
        match &self.kind {
            NodeKind::Exogenous(_) => &[],
            NodeKind::Endogenous(e) => &e.inputs,
        }
    }

    fn signature(&self) -> String {
        let kind = match &self.kind {
            NodeKind::Exogenous(p) => {
                format!("exo:{}", serde_json::to_string(p).expect("prior serializes"))
            }
            NodeKind::Endogenous(e) => format!("endo:{}", e.signature()),
        };
        format!(
            "{}|{}|{}|{}",
            self.id,
            self.plate.as_deref().unwrap_or("-"),
            self.step.map_or("-".to_string(), |s| s.to_string()),
            kind
        )
    }
}

/// Unvalidated model description.
#[derive(Debug, Clone, Default)]
pub struct GraphSpec {
    pub nodes: Vec<NodeSpec>,
    pub plates: BTreeMap<String, usize>,
}

impl GraphSpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn plate(mut self, name: impl Into<String>, size: usize) -> Self {
        self.plates.insert(name.into(), size);
        self
    }

    pub fn node(mut self, node: NodeSpec) -> Self {
        self.nodes.push(node);
        self
    }

    pub fn push(&mut self, node: NodeSpec) {
        self.nodes.push(node);
    }

    pub fn build(self) -> Result<ScmGraph> {
        ScmGraph::new(self)
    }
}

/// How an input is delivered to a structural equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum InputMode {
    /// Parent shares the child's plate: same instance index.
    Elementwise,
    /// Parent is unplated: its single value for every instance.
    Broadcast,
    /// Every instance of the parent.
    Reduce,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ResolvedInput {
    pub node: usize,
    pub mode: InputMode,
}

/// Names and shapes of node instances, shared by a graph and its worlds.
#[derive(Debug, PartialEq)]
pub struct Layout {
    pub ids: Vec<NodeId>,
    pub sizes: Vec<usize>,
    pub steps: Vec<Option<u32>>,
    pub plates: Vec<Option<String>>,
    index: HashMap<NodeId, usize>,
}

impl Layout {
    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

struct GraphInner {
    spec: GraphSpec,
    order: Vec<usize>,
    inputs: Vec<Vec<ResolvedInput>>,
    consumers: Vec<Vec<usize>>,
    layout: Arc<Layout>,
    fingerprint: String,
    warnings: Vec<String>,
}

/// A validated, immutable structural causal model. Cloning is cheap.
#[derive(Clone)]
pub struct ScmGraph(Arc<GraphInner>);

impl fmt::Debug for ScmGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScmGraph")
            .field("nodes", &self.0.layout.ids)
            .field("fingerprint", &self.0.fingerprint)
            .finish()
    }
}

/// Structural equality: same nodes, priors, equations, plates.
impl PartialEq for ScmGraph {
    fn eq(&self, other: &Self) -> bool {
        self.0.fingerprint == other.0.fingerprint
    }
}

impl ScmGraph {
    pub fn new(spec: GraphSpec) -> Result<Self> {
        let order_ids = validate_and_order(&spec)?;
        let index: HashMap<NodeId, usize> = spec
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.clone(), i))
            .collect();
        let order = order_ids.iter().map(|id| index[id]).collect();

        let mut inputs = Vec::with_capacity(spec.nodes.len());
        let mut consumers = vec![Vec::new(); spec.nodes.len()];
        for (child, node) in spec.nodes.iter().enumerate() {
            let resolved: Vec<ResolvedInput> = node
                .inputs()
                .iter()
                .map(|inp| {
                    let parent = index[inp.node()];
                    let mode = if inp.is_reduction() {
                        InputMode::Reduce
                    } else if spec.nodes[parent].plate.is_none() {
                        InputMode::Broadcast
                    } else {
                        InputMode::Elementwise
                    };
                    ResolvedInput { node: parent, mode }
                })
                .collect();
            for r in &resolved {
                if !consumers[r.node].contains(&child) {
                    consumers[r.node].push(child);
                }
            }
            inputs.push(resolved);
        }

        let warnings = spec
            .nodes
            .iter()
            .enumerate()
            .filter(|(i, n)| n.is_exogenous() && consumers[*i].is_empty())
            .map(|(_, n)| format!("exogenous node `{}` has no consumers", n.id))
            .collect::<Vec<_>>();
        for w in &warnings {
            log::debug!("{w}");
        }

        let layout = Arc::new(Layout {
            ids: spec.nodes.iter().map(|n| n.id.clone()).collect(),
            sizes: spec
                .nodes
                .iter()
                .map(|n| n.plate.as_ref().map_or(1, |p| spec.plates[p]))
                .collect(),
            steps: spec.nodes.iter().map(|n| n.step).collect(),
            plates: spec.nodes.iter().map(|n| n.plate.clone()).collect(),
            index,
        });
        let fingerprint = fingerprint(&spec);

        Ok(ScmGraph(Arc::new(GraphInner {
            spec,
            order,
            inputs,
            consumers,
            layout,
            fingerprint,
            warnings,
        })))
    }

    pub fn spec(&self) -> &GraphSpec {
        &self.0.spec
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.0.spec.nodes
    }

    pub fn plates(&self) -> &BTreeMap<String, usize> {
        &self.0.spec.plates
    }

    pub fn node(&self, id: &str) -> Option<&NodeSpec> {
        self.index_of(id).map(|i| &self.0.spec.nodes[i])
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.0.layout.index_of(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index_of(id).is_some()
    }

    /// Node indices in evaluation order.
    pub fn order(&self) -> &[usize] {
        &self.0.order
    }

    pub fn ordered_ids(&self) -> Vec<&str> {
        self.0.order.iter().map(|&i| self.0.layout.ids[i].as_str()).collect()
    }

    pub(crate) fn resolved_inputs(&self, node: usize) -> &[ResolvedInput] {
        &self.0.inputs[node]
    }

    /// Children of a node (endogenous consumers).
    pub fn consumers(&self, node: usize) -> &[usize] {
        &self.0.consumers[node]
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.0.layout
    }

    pub fn size_of(&self, node: usize) -> usize {
        self.0.layout.sizes[node]
    }

    pub fn fingerprint(&self) -> &str {
        &self.0.fingerprint
    }

    pub fn warnings(&self) -> &[String] {
        &self.0.warnings
    }

    pub fn exogenous(&self) -> impl Iterator<Item = (usize, &NodeSpec)> {
        self.nodes().iter().enumerate().filter(|(_, n)| n.is_exogenous())
    }

    /// Parent ids of a node.
    pub fn parents(&self, id: &str) -> Option<Vec<&str>> {
        self.node(id)
            .map(|n| n.inputs().iter().map(Input::node).collect())
    }
}

fn fingerprint(spec: &GraphSpec) -> String {
    let mut h = Sha256::new();
    for (name, size) in &spec.plates {
        h.update(format!("plate:{name}={size};").as_bytes());
    }
    let mut sigs: Vec<String> = spec.nodes.iter().map(NodeSpec::signature).collect();
    sigs.sort();
    for s in sigs {
        h.update(s.as_bytes());
        h.update(b"\n");
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Checks the structural invariants and returns a deterministic topological
/// order. Exogenous nodes come first (sorted by id); endogenous nodes follow
/// layer by layer (longest path from an exogenous node), by id within a
/// layer.
pub fn validate_and_order(spec: &GraphSpec) -> Result<Vec<NodeId>> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, node) in spec.nodes.iter().enumerate() {
        if index.insert(node.id.as_str(), i).is_some() {
            return Err(Error::DuplicateNode(node.id.clone()));
        }
    }
    for (name, &size) in &spec.plates {
        if size == 0 {
            return Err(Error::InvalidParams(format!("plate `{name}` has size 0")));
        }
    }

    for node in &spec.nodes {
        if let Some(plate) = &node.plate {
            if !spec.plates.contains_key(plate) {
                return Err(Error::UnknownPlate {
                    node: node.id.clone(),
                    plate: plate.clone(),
                });
            }
        }
        match &node.kind {
            NodeKind::Exogenous(prior) => {
                prior.validate().map_err(|detail| Error::InvalidPrior {
                    node: node.id.clone(),
                    detail,
                })?;
            }
            NodeKind::Endogenous(eq) => {
                for input in &eq.inputs {
                    let Some(&p) = index.get(input.node()) else {
                        return Err(Error::DanglingParent {
                            node: node.id.clone(),
                            parent: input.node().to_string(),
                        });
                    };
                    let parent = &spec.nodes[p];
                    if !input.is_reduction()
                        && parent.plate.is_some()
                        && parent.plate != node.plate
                    {
                        return Err(Error::PlateMismatch {
                            node: node.id.clone(),
                            detail: format!(
                                "direct input `{}` lives in plate `{}` but `{}` is in {}; declare a reduction",
                                parent.id,
                                parent.plate.as_deref().unwrap_or_default(),
                                node.id,
                                node.plate
                                    .as_ref()
                                    .map_or("no plate".to_string(), |p| format!("plate `{p}`"))
                            ),
                        });
                    }
                }
                eq.check_shape(&node.id)?;
            }
        }
    }

    // Kahn's algorithm over parent -> child edges.
    let n = spec.nodes.len();
    let mut indegree = vec![0usize; n];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, node) in spec.nodes.iter().enumerate() {
        let mut seen = BTreeSet::new();
        for input in node.inputs() {
            let p = index[input.node()];
            if seen.insert(p) {
                indegree[i] += 1;
                children[p].push(i);
            }
        }
    }

    let mut order = Vec::with_capacity(n);
    let mut depth = vec![0usize; n];
    let mut exo: Vec<&str> = spec
        .nodes
        .iter()
        .filter(|n| n.is_exogenous())
        .map(|n| n.id.as_str())
        .collect();
    exo.sort_unstable();
    let mut ready: BTreeSet<(usize, &str)> = spec
        .nodes
        .iter()
        .enumerate()
        .filter(|(i, n)| !n.is_exogenous() && indegree[*i] == 0)
        .map(|(_, n)| (1, n.id.as_str()))
        .collect();
    for (i, node) in spec.nodes.iter().enumerate() {
        if !node.is_exogenous() && indegree[i] == 0 {
            depth[i] = 1;
        }
    }

    for id in exo {
        order.push(id.to_string());
        release(index[id], &children, spec, &mut indegree, &mut depth, &mut ready);
    }
    while let Some((_, id)) = ready.pop_first() {
        order.push(id.to_string());
        release(index[id], &children, spec, &mut indegree, &mut depth, &mut ready);
    }

    if order.len() < n {
        let remaining: BTreeSet<usize> = (0..n).filter(|&i| indegree[i] > 0).collect();
        return Err(Error::Cycle {
            cycle: find_cycle(spec, &index, &remaining),
        });
    }
    Ok(order)
}

fn release<'a>(
    node: usize,
    children: &[Vec<usize>],
    spec: &'a GraphSpec,
    indegree: &mut [usize],
    depth: &mut [usize],
    ready: &mut BTreeSet<(usize, &'a str)>,
) {
    for &c in &children[node] {
        indegree[c] -= 1;
        depth[c] = depth[c].max(depth[node] + 1);
        if indegree[c] == 0 {
            ready.insert((depth[c], spec.nodes[c].id.as_str()));
        }
    }
}

/// Follows parent links inside the unresolved set until a node repeats.
fn find_cycle(spec: &GraphSpec, index: &HashMap<&str, usize>, remaining: &BTreeSet<usize>) -> Vec<NodeId> {
    let start = *remaining.iter().next().expect("nonempty remainder");
    let mut path = vec![start];
    let mut pos: HashMap<usize, usize> = HashMap::from([(start, 0)]);
    let mut cur = start;
    loop {
        let parent = spec.nodes[cur]
            .inputs()
            .iter()
            .map(|i| index[i.node()])
            .filter(|p| remaining.contains(p))
            .min()
            .expect("every unresolved node has an unresolved parent");
        if let Some(&at) = pos.get(&parent) {
            // path runs child -> parent; reverse it to read along the edges.
            let mut cycle: Vec<NodeId> = path[at..]
                .iter()
                .rev()
                .map(|&i| spec.nodes[i].id.clone())
                .collect();
            let first = cycle[0].clone();
            cycle.push(first);
            return cycle;
        }
        pos.insert(parent, path.len());
        path.push(parent);
        cur = parent;
    }
}
