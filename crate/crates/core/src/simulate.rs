//! Exogenous sampling, forward evaluation and Monte Carlo estimation.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{InputMode, ScmGraph};
use crate::mechanism::{Arg, EvalCtx};
use crate::rng::{NoiseStream, StreamDomain, StreamKey};
use crate::value::ValueKind;
use crate::world::{Exogenous, World};

/// Mean and Monte Carlo standard error of a scalar query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

impl Estimate {
    /// Sample mean and `sd / sqrt(n)`; accumulates in index order.
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(Error::InsufficientSamples { n });
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let ss = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
        let sd = (ss / (n as f64 - 1.0)).sqrt();
        Ok(Estimate {
            mean,
            std_error: sd / (n as f64).sqrt(),
            n,
        })
    }
}

/// Exogenous draws for world `world` under master seed `seed`.
pub fn exogenous_for_world(graph: &ScmGraph, seed: u64, world: u64) -> Result<Exogenous> {
    let mut values = BTreeMap::new();
    for (idx, node) in graph.exogenous() {
        let prior = node.prior().expect("exogenous node has a prior");
        prior.validate().map_err(|detail| Error::InvalidPrior {
            node: node.id.clone(),
            detail,
        })?;
        let key = StreamKey::new(StreamDomain::Prior, seed, world, &node.id, node.step);
        let mut stream = NoiseStream::new(key);
        let draws = (0..graph.size_of(idx) as u64)
            .map(|i| {
                let (a, b) = stream.uniforms(i);
                prior.sample(a, b)
            })
            .collect();
        values.insert(node.id.clone(), draws);
    }
    Ok(Exogenous {
        seed,
        world,
        values,
    })
}

/// Independent exogenous assignments for worlds `0..n`.
pub fn sample_exogenous(graph: &ScmGraph, n_worlds: usize, seed: u64) -> Result<Vec<Exogenous>> {
    (0..n_worlds as u64)
        .into_par_iter()
        .map(|w| exogenous_for_world(graph, seed, w))
        .collect()
}

/// Computes every endogenous value from an exogenous assignment.
pub fn evaluate(graph: &ScmGraph, exogenous: &Exogenous) -> Result<World> {
    let nodes = graph.nodes();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); nodes.len()];
    for &idx in graph.order() {
        let node = &nodes[idx];
        let size = graph.size_of(idx);
        match node.equation() {
            None => {
                let v = exogenous
                    .values
                    .get(&node.id)
                    .filter(|v| v.len() == size)
                    .ok_or_else(|| Error::IncompleteExogenous {
                        node: node.id.clone(),
                    })?;
                let kind = node.value_kind();
                if let Some(bad) = v.iter().find(|&&x| !kind.admits(x)) {
                    return Err(Error::KindMismatch {
                        node: node.id.clone(),
                        detail: format!("{bad} is not a {} value", kind.as_str()),
                    });
                }
                values[idx] = v.clone();
            }
            Some(eq) => {
                let inputs = graph.resolved_inputs(idx);
                let kind = eq.mechanism.output_kind();
                let mut out = Vec::with_capacity(size);
                let mut args: Vec<Arg<'_>> = Vec::with_capacity(inputs.len());
                for i in 0..size {
                    args.clear();
                    for r in inputs {
                        let src = &values[r.node];
                        args.push(match r.mode {
                            InputMode::Elementwise => Arg::Scalar(src[i]),
                            InputMode::Broadcast => Arg::Scalar(src[0]),
                            InputMode::Reduce => Arg::Slice(src),
                        });
                    }
                    let v = eq
                        .mechanism
                        .eval(&args, EvalCtx { index: i })
                        .map_err(|detail| Error::EquationDomain {
                            node: node.id.clone(),
                            detail,
                        })?;
                    if kind != ValueKind::Real && !kind.admits(v) {
                        return Err(Error::EquationDomain {
                            node: node.id.clone(),
                            detail: format!("produced {v}, not a {} value", kind.as_str()),
                        });
                    }
                    out.push(v);
                }
                values[idx] = out;
            }
        }
    }
    Ok(World {
        layout: graph.layout().clone(),
        values,
        seed: exogenous.seed,
        index: exogenous.world,
        fingerprint: graph.fingerprint().to_string(),
    })
}

/// `evaluate` applied to each of `sample_exogenous(graph, n, seed)`.
pub fn sample_worlds(graph: &ScmGraph, n: usize, seed: u64) -> Result<Vec<World>> {
    map_worlds(graph, n, seed, |w| w)
}

/// Samples worlds `0..n` in parallel and maps each through `f` without
/// keeping the worlds; results are in world order.
pub fn map_worlds<T, F>(graph: &ScmGraph, n: usize, seed: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(World) -> T + Sync,
{
    (0..n as u64)
        .into_par_iter()
        .map(|w| {
            let exo = exogenous_for_world(graph, seed, w)?;
            evaluate(graph, &exo).map(&f)
        })
        .collect()
}

/// Monte Carlo estimate of `E[query(World)]` over `n` worlds.
pub fn estimate<Q>(graph: &ScmGraph, query: Q, n: usize, seed: u64) -> Result<Estimate>
where
    Q: Fn(&World) -> f64 + Sync,
{
    if n < 2 {
        return Err(Error::InsufficientSamples { n });
    }
    let samples = map_worlds(graph, n, seed, |w| query(&w))?;
    Estimate::from_samples(&samples)
}
