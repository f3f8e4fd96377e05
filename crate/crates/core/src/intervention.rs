//! Atomic and policy interventions.
//!
//! Interventions never modify a graph in place; applying one builds and
//! validates a new [`ScmGraph`].

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::{NodeId, NodeKind, ScmGraph};
use crate::mechanism::Equation;
use crate::prior::NoisePrior;
use crate::simulate::{estimate, Estimate};
use crate::world::World;

/// Builds a replacement equation from the one currently in the graph,
/// e.g. `f̂_Y(·) = f_Y(·) + b`.
pub trait EquationRewrite: Send + Sync + fmt::Debug {
    fn describe(&self) -> String;
    fn rewrite(&self, node: &str, current: &Equation) -> Result<Equation>;
}

#[derive(Debug, Clone)]
pub enum Replacement {
    Equation(Equation),
    /// New prior for an exogenous node.
    Prior(NoisePrior),
    Rewrite(Arc<dyn EquationRewrite>),
}

#[derive(Debug, Clone)]
pub enum Intervention {
    /// `do(node = value)`: constant mechanism, no parents.
    Atomic { node: NodeId, value: f64 },
    /// `do(f_node -> replacement)`.
    Policy {
        node: NodeId,
        replacement: Replacement,
    },
    /// Simultaneous interventions on distinct nodes.
    Composite(Vec<Intervention>),
}

impl Intervention {
    pub fn atomic(node: impl Into<NodeId>, value: f64) -> Self {
        Intervention::Atomic {
            node: node.into(),
            value,
        }
    }

    pub fn policy(node: impl Into<NodeId>, equation: Equation) -> Self {
        Intervention::Policy {
            node: node.into(),
            replacement: Replacement::Equation(equation),
        }
    }

    pub fn prior(node: impl Into<NodeId>, prior: NoisePrior) -> Self {
        Intervention::Policy {
            node: node.into(),
            replacement: Replacement::Prior(prior),
        }
    }

    pub fn rewrite(node: impl Into<NodeId>, rewrite: Arc<dyn EquationRewrite>) -> Self {
        Intervention::Policy {
            node: node.into(),
            replacement: Replacement::Rewrite(rewrite),
        }
    }

    pub fn identity() -> Self {
        Intervention::Composite(Vec::new())
    }

    /// Target nodes in application order, flattened.
    pub fn targets(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_targets(&mut out);
        out
    }

    fn collect_targets<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Intervention::Atomic { node, .. } | Intervention::Policy { node, .. } => {
                out.push(node)
            }
            Intervention::Composite(items) => {
                for i in items {
                    i.collect_targets(out);
                }
            }
        }
    }

    pub fn is_identity(&self) -> bool {
        self.targets().is_empty()
    }

    /// Human-readable form recorded in reports.
    pub fn describe(&self) -> String {
        match self {
            Intervention::Atomic { node, value } => format!("do({node}={value})"),
            Intervention::Policy { node, replacement } => {
                let what = match replacement {
                    Replacement::Equation(eq) => eq.signature(),
                    Replacement::Prior(p) => {
                        format!("prior {}", serde_json::to_string(p).expect("prior serializes"))
                    }
                    Replacement::Rewrite(r) => r.describe(),
                };
                format!("do(f_{node} -> {what})")
            }
            Intervention::Composite(items) if items.is_empty() => "identity".to_string(),
            Intervention::Composite(items) => items
                .iter()
                .map(Intervention::describe)
                .collect::<Vec<_>>()
                .join(", "),
        }
    }

    fn check_distinct(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for t in self.targets() {
            if !seen.insert(t) {
                return Err(Error::Conflict {
                    node: t.to_string(),
                });
            }
        }
        Ok(())
    }

    /// Returns the intervened graph; `graph` is left untouched.
    pub fn apply(&self, graph: &ScmGraph) -> Result<ScmGraph> {
        self.check_distinct()?;
        if self.is_identity() {
            return Ok(graph.clone());
        }
        let mut spec = graph.spec().clone();
        self.apply_to(graph, &mut spec)?;
        ScmGraph::new(spec)
    }

    fn apply_to(&self, graph: &ScmGraph, spec: &mut crate::graph::GraphSpec) -> Result<()> {
        match self {
            Intervention::Composite(items) => {
                for i in items {
                    i.apply_to(graph, spec)?;
                }
                Ok(())
            }
            Intervention::Atomic { node, value } => {
                let idx = graph
                    .index_of(node)
                    .ok_or_else(|| Error::UnknownNode(node.clone()))?;
                let target = &graph.nodes()[idx];
                if target.is_exogenous() {
                    return Err(Error::KindMismatch {
                        node: node.clone(),
                        detail: "atomic interventions target endogenous nodes; replace the prior instead"
                            .into(),
                    });
                }
                let kind = target.value_kind();
                if !kind.admits(*value) {
                    return Err(Error::KindMismatch {
                        node: node.clone(),
                        detail: format!("{value} is not a {} value", kind.as_str()),
                    });
                }
                spec.nodes[idx].kind = NodeKind::Endogenous(Equation::constant(*value, kind));
                Ok(())
            }
            Intervention::Policy { node, replacement } => {
                let idx = graph
                    .index_of(node)
                    .ok_or_else(|| Error::UnknownNode(node.clone()))?;
                let target = &graph.nodes()[idx];
                let new_kind = match (replacement, &target.kind) {
                    (Replacement::Prior(p), NodeKind::Exogenous(_)) => NodeKind::Exogenous(*p),
                    (Replacement::Equation(eq), NodeKind::Endogenous(_)) => {
                        NodeKind::Endogenous(eq.clone())
                    }
                    (Replacement::Rewrite(r), NodeKind::Endogenous(cur)) => {
                        NodeKind::Endogenous(r.rewrite(node, cur)?)
                    }
                    (Replacement::Prior(_), NodeKind::Endogenous(_)) => {
                        return Err(Error::KindMismatch {
                            node: node.clone(),
                            detail: "prior replacement on an endogenous node".into(),
                        })
                    }
                    (_, NodeKind::Exogenous(_)) => {
                        return Err(Error::KindMismatch {
                            node: node.clone(),
                            detail: "equation replacement on an exogenous node".into(),
                        })
                    }
                };
                if let NodeKind::Endogenous(eq) = &new_kind {
                    for input in &eq.inputs {
                        if !graph.contains(input.node()) {
                            return Err(Error::UnknownNode(input.node().to_string()));
                        }
                    }
                }
                spec.nodes[idx].kind = new_kind;
                Ok(())
            }
        }
    }
}

/// `do(node = value)`.
pub fn do_atomic(graph: &ScmGraph, node: &str, value: f64) -> Result<ScmGraph> {
    Intervention::atomic(node, value).apply(graph)
}

/// `do(f_node -> replacement)`.
pub fn do_policy(graph: &ScmGraph, node: &str, replacement: Equation) -> Result<ScmGraph> {
    Intervention::policy(node, replacement).apply(graph)
}

/// Combines interventions on pairwise distinct nodes.
pub fn compose(interventions: Vec<Intervention>) -> Result<Intervention> {
    let composite = Intervention::Composite(interventions);
    composite.check_distinct()?;
    Ok(composite)
}

/// `estimate` on the intervened graph.
pub fn interventional_estimate<Q>(
    graph: &ScmGraph,
    intervention: &Intervention,
    query: Q,
    n: usize,
    seed: u64,
) -> Result<Estimate>
where
    Q: Fn(&World) -> f64 + Sync,
{
    let intervened = intervention.apply(graph)?;
    estimate(&intervened, query, n, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphSpec, NodeSpec};
    use crate::mechanism::{Gate, Identity};
    use crate::simulate::sample_worlds;
    use crate::world::Values;

    fn graph() -> ScmGraph {
        GraphSpec::new()
            .node(NodeSpec::exogenous("U_X", NoisePrior::Bernoulli { p: 0.3 }))
            .node(NodeSpec::exogenous("U_Y", NoisePrior::Bernoulli { p: 0.6 }))
            .node(NodeSpec::endogenous("X", Equation::new(["U_X"], Identity { kind: crate::ValueKind::Binary })))
            .node(NodeSpec::endogenous("Y", Equation::new(["X", "U_Y"], Gate::Xor)))
            .build()
            .unwrap()
    }

    #[test]
    fn atomic_cuts_parents_and_fixes_value() {
        let g = graph();
        let before = g.fingerprint().to_string();
        let h = do_atomic(&g, "X", 1.0).unwrap();
        assert_eq!(g.fingerprint(), before);
        assert!(h.parents("X").unwrap().is_empty());
        for w in sample_worlds(&h, 200, 1).unwrap() {
            assert_eq!(w.scalar("X"), Some(1.0));
        }
    }

    #[test]
    fn atomic_errors() {
        let g = graph();
        assert!(matches!(do_atomic(&g, "Z", 1.0), Err(Error::UnknownNode(_))));
        assert!(matches!(do_atomic(&g, "X", 0.5), Err(Error::KindMismatch { .. })));
        assert!(matches!(do_atomic(&g, "U_X", 1.0), Err(Error::KindMismatch { .. })));
    }

    #[test]
    fn duplicate_targets_conflict() {
        let err = compose(vec![Intervention::atomic("X", 1.0), Intervention::atomic("X", 0.0)]);
        assert!(matches!(err, Err(Error::Conflict { .. })));
    }

    #[test]
    fn empty_composite_is_identity() {
        let g = graph();
        assert_eq!(compose(vec![]).unwrap().apply(&g).unwrap(), g);
    }

    #[test]
    fn policy_cycle_rejected() {
        let g = graph();
        let err = do_policy(&g, "X", Equation::new(["Y"], Identity::default()));
        assert!(matches!(err, Err(Error::Cycle { .. })));
    }

    #[test]
    fn prior_replacement_on_exogenous() {
        let g = graph();
        let h = Intervention::prior("U_X", NoisePrior::Bernoulli { p: 1.0 }).apply(&g).unwrap();
        for w in sample_worlds(&h, 50, 2).unwrap() {
            assert_eq!(w.scalar("X"), Some(1.0));
        }
    }
}
