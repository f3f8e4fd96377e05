//! Declarative JSON model descriptions.
//!
//! ```json
//! {
//!   "plates": {"units": 100},
//!   "nodes": [
//!     {"id": "U", "prior": {"uniform": {"lo": 0.0, "hi": 1.0}}, "plate": "units"},
//!     {"id": "X", "mechanism": "indicator", "params": {"threshold": 0.5},
//!      "inputs": ["U"], "plate": "units"},
//!     {"id": "S", "mechanism": "reduce_sum", "inputs": [{"reduce": "X"}]}
//!   ]
//! }
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::error::{Error, Result};
use crate::graph::{GraphSpec, NodeId, NodeKind, NodeSpec, ScmGraph};
use crate::mechanism::{build_mechanism, Equation, Input};
use crate::prior::NoisePrior;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDescription {
    #[serde(default)]
    pub plates: BTreeMap<String, usize>,
    pub nodes: Vec<NodeDescription>,
}

/// Exactly one of `prior` (exogenous) or `mechanism` (endogenous).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDescription {
    pub id: NodeId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<NoisePrior>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mechanism: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<Json>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<Input>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plate: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<u32>,
}

impl ModelDescription {
    pub fn from_graph(graph: &ScmGraph) -> Self {
        let nodes = graph
            .nodes()
            .iter()
            .map(|n| {
                let mut d = NodeDescription {
                    id: n.id.clone(),
                    prior: None,
                    mechanism: None,
                    params: None,
                    inputs: Vec::new(),
                    plate: n.plate.clone(),
                    step: n.step,
                };
                match &n.kind {
                    NodeKind::Exogenous(p) => d.prior = Some(*p),
                    NodeKind::Endogenous(eq) => {
                        d.mechanism = Some(eq.mechanism.name().to_string());
                        let params = eq.mechanism.params();
                        if params.as_object().is_none_or(|o| !o.is_empty()) {
                            d.params = Some(params);
                        }
                        d.inputs = eq.inputs.clone();
                    }
                }
                d
            })
            .collect();
        ModelDescription {
            plates: graph.plates().clone(),
            nodes,
        }
    }

    pub fn to_spec(&self) -> Result<GraphSpec> {
        let mut spec = GraphSpec::new();
        spec.plates = self.plates.clone();
        for d in &self.nodes {
            let node = match (&d.prior, &d.mechanism) {
                (Some(prior), None) => {
                    if !d.inputs.is_empty() || d.params.is_some() {
                        return Err(Error::ModelFormat(format!(
                            "exogenous node `{}` cannot have inputs or params",
                            d.id
                        )));
                    }
                    NodeSpec::exogenous(d.id.clone(), *prior)
                }
                (None, Some(name)) => {
                    let mech = build_mechanism(name, d.params.as_ref().unwrap_or(&Json::Null))?;
                    NodeSpec::endogenous(d.id.clone(), Equation::from_arc(d.inputs.clone(), mech))
                }
                _ => {
                    return Err(Error::ModelFormat(format!(
                        "node `{}` needs exactly one of `prior` or `mechanism`",
                        d.id
                    )))
                }
            };
            spec.push(NodeSpec {
                plate: d.plate.clone(),
                step: d.step,
                ..node
            });
        }
        Ok(spec)
    }

    pub fn build(&self) -> Result<ScmGraph> {
        ScmGraph::new(self.to_spec()?)
    }
}

pub fn read_model<R: Read>(input: R) -> Result<ScmGraph> {
    let desc: ModelDescription =
        serde_json::from_reader(input).map_err(|e| Error::ModelFormat(e.to_string()))?;
    desc.build()
}

pub fn write_model<W: Write>(graph: &ScmGraph, out: W) -> Result<()> {
    serde_json::to_writer_pretty(out, &ModelDescription::from_graph(graph)).map_err(|e| Error::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lending::{build_lending_scm, GroupModel, LendingParams};
    use crate::mechanism::{Cpt, Linear};
    use proptest::prelude::*;

    const DOC: &str = r#"{
      "plates": {"units": 4},
      "nodes": [
        {"id": "U", "prior": {"uniform": {"lo": 0.0, "hi": 1.0}}, "plate": "units"},
        {"id": "X", "mechanism": "indicator", "params": {"threshold": 0.5}, "inputs": ["U"], "plate": "units"},
        {"id": "S", "mechanism": "reduce_sum", "inputs": [{"reduce": "X"}]}
      ]
    }"#;

    #[test]
    fn reads_the_documented_example() {
        let g = read_model(DOC.as_bytes()).unwrap();
        assert_eq!(g.ordered_ids(), ["U", "X", "S"]);
        let w = &crate::simulate::sample_worlds(&g, 1, 0).unwrap()[0];
        let xs = w.get("X").unwrap();
        assert_eq!(w.get("S").unwrap()[0], xs.iter().sum::<f64>());
    }

    #[test]
    fn malformed_documents_are_rejected() {
        let both = DOC.replace(r#""plate": "units"},"#, r#""plate": "units", "mechanism": "sum"},"#);
        assert!(matches!(read_model(both.as_bytes()), Err(Error::ModelFormat(_))));
        let dangling = DOC.replace(r#"["U"]"#, r#"["V"]"#);
        assert!(matches!(read_model(dangling.as_bytes()), Err(Error::DanglingParent { .. })));
        let unknown = DOC.replace("indicator", "nope");
        assert!(matches!(read_model(unknown.as_bytes()), Err(Error::UnknownMechanism(_))));
        let field = DOC.replace(r#""plate": "units"}"#, r#""plate": "units", "colour": 1}"#);
        assert!(matches!(read_model(field.as_bytes()), Err(Error::ModelFormat(_))));
    }

    #[test]
    fn lending_graph_roundtrips() {
        let params = LendingParams {
            n_units: 5,
            steps: 2,
            ..LendingParams::default()
        };
        let g = build_lending_scm(&GroupModel::default(), &params).unwrap();
        let mut buf = Vec::new();
        write_model(&g, &mut buf).unwrap();
        let back = read_model(buf.as_slice()).unwrap();
        assert_eq!(back.fingerprint(), g.fingerprint());
        assert_eq!(
            crate::simulate::sample_worlds(&back, 2, 9).unwrap(),
            crate::simulate::sample_worlds(&g, 2, 9).unwrap()
        );
    }

    fn random_graph(n: usize, edges: Vec<bool>, tables: Vec<f64>, plated: bool) -> ScmGraph {
        let mut spec = GraphSpec::new();
        if plated {
            spec = spec.plate("p", 3);
        }
        let mut k = 0;
        for i in 0..n {
            let parents: Vec<String> = (0..i)
                .filter(|_| {
                    let e = edges[k % edges.len()];
                    k += 1;
                    e
                })
                .map(|j| format!("V{j}"))
                .collect();
            let u = format!("U{i}");
            let mut exo = NodeSpec::exogenous(u.clone(), NoisePrior::unit_uniform());
            let node = if i % 2 == 0 {
                let mut inputs = parents.clone();
                inputs.push(u);
                let table = (0..1usize << parents.len()).map(|t| tables[(t + i) % tables.len()]).collect();
                NodeSpec::endogenous(format!("V{i}"), Equation::new(inputs, Cpt { table }))
            } else {
                let mut inputs = parents.clone();
                inputs.push(u);
                let weights = (0..inputs.len()).map(|t| tables[(t + i) % tables.len()]).collect();
                NodeSpec::endogenous(format!("V{i}"), Equation::new(inputs, Linear { weights, bias: 0.5 }))
            };
            let node = if plated {
                exo = exo.in_plate("p");
                node.in_plate("p")
            } else {
                node
            };
            spec.push(exo);
            spec.push(node);
        }
        spec.build().unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn description_roundtrip(
            n in 1usize..6,
            edges in prop::collection::vec(any::<bool>(), 1..16),
            tables in prop::collection::vec(0.0f64..1.0, 1..8),
            plated in any::<bool>(),
        ) {
            let g = random_graph(n, edges, tables, plated);
            let desc = ModelDescription::from_graph(&g);
            let json = serde_json::to_string(&desc).unwrap();
            let parsed: ModelDescription = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(&parsed, &desc);
            let back = parsed.build().unwrap();
            prop_assert_eq!(back.fingerprint(), g.fingerprint());
            prop_assert_eq!(ModelDescription::from_graph(&back), desc);
        }
    }
}
