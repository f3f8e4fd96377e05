//! Abduction of exogenous noise from observations and counterfactual worlds.
//!
//! Abduction is exact: every in-scope mechanism maps an observed output to a
//! point or an interval of one noise input given its other inputs. The
//! posterior factorizes over noise instances, each a point mass, a
//! truncated uniform or the untouched prior.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{InputMode, NodeId, ScmGraph};
use crate::intervention::Intervention;
use crate::mechanism::{next_down, next_up, Arg, EvalCtx, Mechanism, NoiseConstraint};
use crate::prior::NoisePrior;
use crate::rng::{derive_seed, NoiseStream, StreamDomain, StreamKey};
use crate::simulate::evaluate;
use crate::world::{Exogenous, Values, World};

/// What to do when an abducted point lies outside a continuous prior's
/// support, which happens under model mismatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "snake_case")]
pub enum SupportPolicy {
    /// Reject the world as inconsistent with the model.
    Strict,
    /// Keep the point; counted in [`NoisePosterior::extrapolated`].
    #[default]
    Extrapolate,
}

/// Posterior of one exogenous node instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseRegion {
    PointMass(f64),
    /// Uniform on `[lo, hi]`, a sub-interval of a uniform prior.
    TruncatedUniform { lo: f64, hi: f64 },
    Unconstrained(NoisePrior),
}

impl NoiseRegion {
    pub fn sample(&self, u1: f64, u2: f64) -> f64 {
        match *self {
            NoiseRegion::PointMass(v) => v,
            NoiseRegion::TruncatedUniform { lo, hi } => lo + (hi - lo) * u1,
            NoiseRegion::Unconstrained(prior) => prior.sample(u1, u2),
        }
    }

    pub fn is_point(&self) -> bool {
        matches!(self, NoiseRegion::PointMass(_))
    }
}

/// `p(U | observations)` for every exogenous node instance.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePosterior {
    pub regions: BTreeMap<NodeId, Vec<NoiseRegion>>,
    /// Points accepted outside their prior's support.
    pub extrapolated: usize,
}

impl NoisePosterior {
    pub fn region(&self, node: &str, index: usize) -> Option<&NoiseRegion> {
        self.regions.get(node).and_then(|r| r.get(index))
    }

    /// Whether every instance of `node` is a point mass.
    pub fn is_point_identified(&self, node: &str) -> bool {
        self.regions
            .get(node)
            .is_some_and(|r| r.iter().all(NoiseRegion::is_point))
    }

    /// Posterior draw `draw` for factual world `world`.
    pub fn sample(&self, graph: &ScmGraph, seed: u64, world: u64, draw: u64) -> Exogenous {
        let draw_seed = derive_seed(seed, "posterior_draw", &[draw]);
        let mut values = BTreeMap::new();
        for (_, node) in graph.exogenous() {
            let Some(regions) = self.regions.get(&node.id) else {
                continue;
            };
            let key = StreamKey::new(StreamDomain::Posterior, draw_seed, world, &node.id, node.step);
            let mut stream = NoiseStream::new(key);
            let draws = regions
                .iter()
                .enumerate()
                .map(|(i, r)| match r {
                    NoiseRegion::PointMass(v) => *v,
                    _ => {
                        let (a, b) = stream.uniforms(i as u64);
                        r.sample(a, b)
                    }
                })
                .collect();
            values.insert(node.id.clone(), draws);
        }
        Exogenous {
            seed: draw_seed,
            world,
            values,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Work {
    Free,
    Interval { lo: f64, hi: f64 },
    Point(f64),
}

enum Refusal {
    Inconsistent(String),
    Unsupported(String),
}

fn resolve_interval(prior: &NoisePrior, lo: f64, hi: f64) -> std::result::Result<Work, Refusal> {
    match *prior {
        NoisePrior::Bernoulli { .. } => {
            let ok: Vec<f64> = [0.0, 1.0]
                .into_iter()
                .filter(|&v| v >= lo && v <= hi && prior.in_support(v))
                .collect();
            match ok.as_slice() {
                [] => Err(Refusal::Inconsistent(format!(
                    "no binary noise value in [{lo}, {hi}]"
                ))),
                [v] => Ok(Work::Point(*v)),
                _ => Ok(Work::Free),
            }
        }
        NoisePrior::Uniform { lo: a, hi: b } => {
            let (l, h) = (lo.max(a), hi.min(b));
            if l > h {
                Err(Refusal::Inconsistent(format!(
                    "region [{lo}, {hi}] misses the prior support [{a}, {b}]"
                )))
            } else if l == h {
                Ok(Work::Point(l))
            } else if l <= a && h >= b {
                Ok(Work::Free)
            } else {
                Ok(Work::Interval { lo: l, hi: h })
            }
        }
        NoisePrior::Gaussian { .. } => {
            if lo == f64::NEG_INFINITY && hi == f64::INFINITY {
                Ok(Work::Free)
            } else {
                Err(Refusal::Unsupported(
                    "interval constraint on a gaussian noise".into(),
                ))
            }
        }
    }
}

fn constrain(
    prior: &NoisePrior,
    current: Work,
    c: NoiseConstraint,
    support: SupportPolicy,
    extrapolated: &mut usize,
) -> std::result::Result<Work, Refusal> {
    match c {
        NoiseConstraint::Unconstrained => Ok(current),
        NoiseConstraint::Inconsistent(msg) => Err(Refusal::Inconsistent(msg)),
        NoiseConstraint::Point(x) => {
            match current {
                Work::Point(y) if y != x => {
                    return Err(Refusal::Inconsistent(format!(
                        "noise already identified as {y}, observation needs {x}"
                    )))
                }
                Work::Interval { lo, hi } if !(x >= lo && x <= hi) => {
                    return Err(Refusal::Inconsistent(format!(
                        "noise value {x} outside the region [{lo}, {hi}]"
                    )))
                }
                _ => {}
            }
            if prior.in_support(x) {
                Ok(Work::Point(x))
            } else if support == SupportPolicy::Extrapolate
                && !matches!(prior, NoisePrior::Bernoulli { .. })
                && x.is_finite()
            {
                *extrapolated += 1;
                Ok(Work::Point(x))
            } else {
                Err(Refusal::Inconsistent(format!(
                    "noise value {x} outside the prior support"
                )))
            }
        }
        NoiseConstraint::Interval { lo, hi } => match current {
            Work::Point(y) if y >= lo && y <= hi => Ok(current),
            Work::Point(y) => Err(Refusal::Inconsistent(format!(
                "noise already identified as {y}, outside [{lo}, {hi}]"
            ))),
            Work::Interval { lo: l0, hi: h0 } => resolve_interval(prior, lo.max(l0), hi.min(h0)),
            Work::Free => resolve_interval(prior, lo, hi),
        },
    }
}

fn eval_with(mech: &dyn Mechanism, args: &[Option<f64>], slot: usize, x: f64, index: usize) -> Option<f64> {
    let full: Vec<Arg<'_>> = args
        .iter()
        .enumerate()
        .map(|(k, a)| Arg::Scalar(if k == slot { x } else { a.unwrap_or(f64::NAN) }))
        .collect();
    mech.eval(&full, EvalCtx { index }).ok()
}

/// Nudges an analytically inverted noise value by a few ulps until the
/// mechanism reproduces the observation bit-exactly.
fn refine(mech: &dyn Mechanism, args: &[Option<f64>], slot: usize, x: f64, observed: f64, index: usize) -> f64 {
    const MAX_ULPS: usize = 64;
    let hits = |v: f64| eval_with(mech, args, slot, v, index).is_some_and(|o| o.to_bits() == observed.to_bits());
    if !x.is_finite() || hits(x) {
        return x;
    }
    let (mut up, mut down) = (x, x);
    for _ in 0..MAX_ULPS {
        up = next_up(up);
        if hits(up) {
            return up;
        }
        down = next_down(down);
        if hits(down) {
            return down;
        }
    }
    x
}

fn observed_of<'a>(graph: &ScmGraph, obs: &'a dyn Values, idx: usize) -> Result<Option<&'a [f64]>> {
    let node = &graph.nodes()[idx];
    match obs.instances(&node.id) {
        None => Ok(None),
        Some(v) if v.len() == graph.size_of(idx) => Ok(Some(v)),
        Some(v) => Err(Error::InconsistentObservation {
            node: node.id.clone(),
            index: 0,
            detail: format!("{} observed instances, the graph has {}", v.len(), graph.size_of(idx)),
        }),
    }
}

/// Posterior over exogenous noise given the observed endogenous values in
/// `observed`; unobserved nodes, NaN values and exogenous entries carry no
/// evidence.
pub fn abduct(graph: &ScmGraph, observed: &dyn Values) -> Result<NoisePosterior> {
    abduct_with(graph, observed, SupportPolicy::default())
}

pub fn abduct_with(graph: &ScmGraph, observed: &dyn Values, support: SupportPolicy) -> Result<NoisePosterior> {
    let nodes = graph.nodes();
    let n = nodes.len();
    let mut vals: Vec<Vec<Option<f64>>> = (0..n).map(|i| vec![None; graph.size_of(i)]).collect();
    let mut obs: Vec<Option<&[f64]>> = vec![None; n];
    let mut work: Vec<Vec<Work>> = vec![Vec::new(); n];
    for i in 0..n {
        if nodes[i].is_exogenous() {
            work[i] = vec![Work::Free; graph.size_of(i)];
        } else if let Some(v) = observed_of(graph, observed, i)? {
            for (slot, &x) in vals[i].iter_mut().zip(v) {
                if !x.is_nan() {
                    *slot = Some(x);
                }
            }
            obs[i] = Some(v);
        }
    }
    let mut done: Vec<Vec<bool>> = (0..n).map(|i| vec![nodes[i].is_exogenous(); graph.size_of(i)]).collect();
    let mut extrapolated = 0usize;

    let endogenous: Vec<usize> = graph.order().iter().copied().filter(|&i| !nodes[i].is_exogenous()).collect();
    let mut changed = true;
    while changed {
        changed = false;
        for &idx in &endogenous {
            let node = &nodes[idx];
            let eq = node.equation().expect("endogenous");
            let mech = eq.mechanism.as_ref();
            let inputs = graph.resolved_inputs(idx);
            let reduces = inputs.iter().any(|r| r.mode == InputMode::Reduce);
            for i in 0..graph.size_of(idx) {
                if done[idx][i] {
                    continue;
                }
                let o = obs[idx].map(|v| v[i]).filter(|x| !x.is_nan());
                if reduces {
                    let gathered: Option<Vec<Vec<f64>>> = inputs
                        .iter()
                        .map(|r| vals[r.node].iter().copied().collect::<Option<Vec<f64>>>())
                        .collect();
                    let Some(gathered) = gathered else { continue };
                    let args: Vec<Arg<'_>> = gathered.iter().map(|v| Arg::Slice(v)).collect();
                    let v = mech.eval(&args, EvalCtx { index: i }).map_err(|detail| Error::EquationDomain {
                        node: node.id.clone(),
                        detail,
                    })?;
                    settle(node.id.as_str(), i, v, o, &mut vals[idx][i])?;
                    done[idx][i] = true;
                    changed = true;
                    continue;
                }
                let args: Vec<Option<f64>> = inputs
                    .iter()
                    .map(|r| match r.mode {
                        InputMode::Broadcast => vals[r.node][0],
                        _ => vals[r.node][i],
                    })
                    .collect();
                let unknown: Vec<usize> = (0..args.len()).filter(|&k| args[k].is_none()).collect();
                if unknown.is_empty() {
                    let full: Vec<Arg<'_>> = args.iter().map(|a| Arg::Scalar(a.expect("known"))).collect();
                    let v = mech.eval(&full, EvalCtx { index: i }).map_err(|detail| Error::EquationDomain {
                        node: node.id.clone(),
                        detail,
                    })?;
                    settle(node.id.as_str(), i, v, o, &mut vals[idx][i])?;
                    done[idx][i] = true;
                    changed = true;
                    continue;
                }
                let (Some(o), [slot]) = (o, unknown.as_slice()) else {
                    continue;
                };
                let src = inputs[*slot];
                if !nodes[src.node].is_exogenous() {
                    continue;
                }
                let Some(c) = mech.abduct(&args, *slot, o) else {
                    continue;
                };
                let c = match c {
                    NoiseConstraint::Point(x) => NoiseConstraint::Point(refine(mech, &args, *slot, x, o, i)),
                    other => other,
                };
                let j = if src.mode == InputMode::Broadcast { 0 } else { i };
                let prior = nodes[src.node].prior().expect("exogenous");
                let w = constrain(prior, work[src.node][j], c, support, &mut extrapolated).map_err(|r| match r {
                    Refusal::Inconsistent(detail) => Error::InconsistentObservation {
                        node: node.id.clone(),
                        index: i,
                        detail,
                    },
                    Refusal::Unsupported(detail) => Error::AbductionUnsupported {
                        node: nodes[src.node].id.clone(),
                        detail,
                    },
                })?;
                work[src.node][j] = w;
                if let Work::Point(x) = w {
                    vals[src.node][j] = Some(x);
                }
                done[idx][i] = true;
                changed = true;
            }
        }
    }

    let mut regions = BTreeMap::new();
    for (idx, node) in graph.exogenous() {
        let prior = *node.prior().expect("exogenous");
        let r = work[idx]
            .iter()
            .map(|w| match *w {
                Work::Free => NoiseRegion::Unconstrained(prior),
                Work::Interval { lo, hi } => NoiseRegion::TruncatedUniform { lo, hi },
                Work::Point(x) => NoiseRegion::PointMass(x),
            })
            .collect();
        regions.insert(node.id.clone(), r);
    }
    let posterior = NoisePosterior { regions, extrapolated };
    check_posterior(graph, &posterior, &obs, &done)?;
    Ok(posterior)
}

fn settle(node: &str, index: usize, v: f64, observed: Option<f64>, slot: &mut Option<f64>) -> Result<()> {
    match observed {
        Some(o) if o.to_bits() != v.to_bits() => Err(Error::InconsistentObservation {
            node: node.to_string(),
            index,
            detail: format!("the model produces {v}, observed {o}"),
        }),
        _ => {
            *slot = Some(v);
            Ok(())
        }
    }
}

/// Re-evaluates one posterior draw and compares it with the observations.
fn check_posterior(
    graph: &ScmGraph,
    posterior: &NoisePosterior,
    obs: &[Option<&[f64]>],
    done: &[Vec<bool>],
) -> Result<()> {
    let exo = posterior.sample(graph, 0, 0, 0);
    let world = evaluate(graph, &exo)?;
    for (idx, node) in graph.nodes().iter().enumerate() {
        let Some(o) = obs[idx] else { continue };
        let got = world.by_index(idx);
        for (i, (&x, &y)) in o.iter().zip(got).enumerate() {
            if x.is_nan() || x.to_bits() == y.to_bits() {
                continue;
            }
            return Err(if done[idx][i] {
                Error::InconsistentObservation {
                    node: node.id.clone(),
                    index: i,
                    detail: format!("posterior draw produces {y}, observed {x}"),
                }
            } else {
                Error::AbductionUnsupported {
                    node: node.id.clone(),
                    detail: format!(
                        "instance {i} depends on several unidentified noises; observe more nodes"
                    ),
                }
            });
        }
    }
    Ok(())
}

/// Counterfactual worlds `0..m` under `intervened`, from an existing
/// posterior. Every world keeps the factual world id.
pub fn posterior_worlds(
    intervened: &ScmGraph,
    posterior: &NoisePosterior,
    m: usize,
    seed: u64,
    world: u64,
) -> Result<Vec<World>> {
    (0..m as u64)
        .into_par_iter()
        .map(|d| {
            let exo = posterior.sample(intervened, seed, world, d);
            evaluate(intervened, &exo).map(|w| w.with_identity(seed, world))
        })
        .collect()
}

/// Abducts the noise behind `factual` under `graph`, then evaluates `m`
/// posterior draws under the intervened graph.
pub fn counterfactual_worlds(
    graph: &ScmGraph,
    factual: &World,
    intervention: &Intervention,
    m: usize,
    seed: u64,
) -> Result<Vec<World>> {
    let posterior = abduct(graph, factual)?;
    let intervened = intervention.apply(graph)?;
    posterior_worlds(&intervened, &posterior, m, seed, factual.index())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphSpec, NodeSpec};
    use crate::mechanism::{Cpt, Equation, Gate, Identity, Linear};
    use crate::simulate::sample_worlds;
    use std::collections::BTreeMap as Map;

    struct Obs(Map<String, Vec<f64>>);
    impl Values for Obs {
        fn instances(&self, id: &str) -> Option<&[f64]> {
            self.0.get(id).map(Vec::as_slice)
        }
    }
    fn obs(pairs: &[(&str, f64)]) -> Obs {
        Obs(pairs.iter().map(|(k, v)| (k.to_string(), vec![*v])).collect())
    }

    fn cpt_graph(p: f64) -> ScmGraph {
        GraphSpec::new()
            .node(NodeSpec::exogenous("U_Y", NoisePrior::unit_uniform()))
            .node(NodeSpec::exogenous("U_X", NoisePrior::Bernoulli { p: 0.5 }))
            .node(NodeSpec::endogenous("X", Equation::new(["U_X"], Identity { kind: crate::ValueKind::Binary })))
            .node(NodeSpec::endogenous("Y", Equation::new(["X", "U_Y"], Cpt { table: vec![0.2, p] })))
            .build()
            .unwrap()
    }

    #[test]
    fn cpt_outcome_truncates_noise() {
        let g = cpt_graph(0.7);
        let post = abduct(&g, &obs(&[("X", 1.0), ("Y", 1.0)])).unwrap();
        assert_eq!(post.region("U_X", 0), Some(&NoiseRegion::PointMass(1.0)));
        assert_eq!(
            post.region("U_Y", 0),
            Some(&NoiseRegion::TruncatedUniform { lo: 0.0, hi: next_down(0.7) })
        );
    }

    #[test]
    fn partial_observation_leaves_prior() {
        let g = cpt_graph(0.7);
        let post = abduct(&g, &obs(&[("X", 0.0)])).unwrap();
        assert_eq!(
            post.region("U_Y", 0),
            Some(&NoiseRegion::Unconstrained(NoisePrior::unit_uniform()))
        );
    }

    #[test]
    fn impossible_observation_rejected() {
        let g = cpt_graph(0.0);
        assert!(matches!(
            abduct(&g, &obs(&[("X", 1.0), ("Y", 1.0)])),
            Err(Error::InconsistentObservation { .. })
        ));
    }

    #[test]
    fn support_policy_governs_out_of_support_points() {
        let g = GraphSpec::new()
            .node(NodeSpec::exogenous("U", NoisePrior::unit_uniform()))
            .node(NodeSpec::endogenous("X", Equation::new(["U"], Linear { weights: vec![1.0], bias: 0.0 })))
            .build()
            .unwrap();
        let o = obs(&[("X", 1.5)]);
        assert!(matches!(
            abduct_with(&g, &o, SupportPolicy::Strict),
            Err(Error::InconsistentObservation { .. })
        ));
        let post = abduct_with(&g, &o, SupportPolicy::Extrapolate).unwrap();
        assert_eq!(post.extrapolated, 1);
        assert_eq!(post.region("U", 0), Some(&NoiseRegion::PointMass(1.5)));
    }

    #[test]
    fn gaussian_interval_unsupported() {
        let g = GraphSpec::new()
            .node(NodeSpec::exogenous("U", NoisePrior::Gaussian { mean: 0.0, stddev: 1.0 }))
            .node(NodeSpec::endogenous("X", Equation::new(["U"], crate::mechanism::Indicator { threshold: 0.0 })))
            .build()
            .unwrap();
        assert!(matches!(
            abduct(&g, &obs(&[("X", 1.0)])),
            Err(Error::AbductionUnsupported { .. })
        ));
    }

    #[test]
    fn null_intervention_replays_the_world() {
        let g = GraphSpec::new()
            .node(NodeSpec::exogenous("U_A", NoisePrior::Bernoulli { p: 0.4 }))
            .node(NodeSpec::exogenous("U_B", NoisePrior::unit_uniform()))
            .node(NodeSpec::endogenous("A", Equation::new(["U_A"], Identity { kind: crate::ValueKind::Binary })))
            .node(NodeSpec::endogenous("B", Equation::new(["A", "U_B"], Cpt { table: vec![0.3, 0.8] })))
            .node(NodeSpec::endogenous("C", Equation::new(["A", "B"], Gate::Xor)))
            .build()
            .unwrap();
        for w in sample_worlds(&g, 100, 4).unwrap() {
            let cf = counterfactual_worlds(&g, &w, &Intervention::identity(), 5, 1).unwrap();
            for c in cf {
                for id in ["A", "B", "C", "U_A"] {
                    assert_eq!(c.get(id), w.get(id));
                }
            }
        }
    }
}
