//! Off-policy evaluation: model-based, importance sampling and
//! counterfactual estimators, and the model-mismatch sweep.

mod dataset;
mod sweep;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use dataset::{generate_logs, LoggedDataset, LoggedRecord};
pub use sweep::{mae_by_method, mismatch_sweep, write_error_csv, SweepModel, SweepRow, SweepSpec};

use crate::counterfactual::{abduct_with, posterior_worlds, SupportPolicy};
use crate::error::{Error, Result};
use crate::graph::{NodeId, ScmGraph};
use crate::intervention::Intervention;
use crate::mechanism::Equation;
use crate::simulate::map_worlds;
use crate::world::Values;

/// A named scalar function of a world or logged record. `None` means the
/// query is undefined on those values.
#[derive(Clone)]
pub struct Query {
    pub label: String,
    f: Arc<dyn Fn(&dyn Values) -> Option<f64> + Send + Sync>,
}

impl fmt::Debug for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Query({})", self.label)
    }
}

impl Query {
    pub fn new(label: impl Into<String>, f: impl Fn(&dyn Values) -> Option<f64> + Send + Sync + 'static) -> Self {
        Query {
            label: label.into(),
            f: Arc::new(f),
        }
    }

    /// First instance of a node.
    pub fn node(id: impl Into<String>) -> Self {
        let id = id.into();
        let key = id.clone();
        Query::new(id, move |v| v.scalar(&key).filter(|x| !x.is_nan()))
    }

    pub fn eval(&self, values: &dyn Values) -> Option<f64> {
        (self.f)(values)
    }

    fn eval_or_err(&self, values: &dyn Values) -> Result<f64> {
        self.eval(values).ok_or_else(|| Error::UndefinedQuery {
            query: self.label.clone(),
        })
    }
}

/// `π(a | context)` for one action instance, read from a world or record.
pub trait ActionProbability: Send + Sync + fmt::Debug {
    fn prob(&self, values: &dyn Values, action: f64, index: usize) -> Option<f64>;
}

/// A decision rule for one action node: its structural equation and its
/// action probabilities.
#[derive(Debug, Clone)]
pub struct Policy {
    pub name: String,
    pub node: NodeId,
    pub equation: Equation,
    pub probability: Arc<dyn ActionProbability>,
}

impl Policy {
    pub fn intervention(&self) -> Intervention {
        Intervention::policy(self.node.clone(), self.equation.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub enum Method {
    #[serde(rename = "IS")]
    Is,
    #[serde(rename = "MB")]
    Mb,
    #[serde(rename = "CF")]
    Cf,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Is, Method::Mb, Method::Cf];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Is => "IS",
            Method::Mb => "MB",
            Method::Cf => "CF",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub method: Method,
    pub estimand: String,
    pub mean: f64,
    pub std_error: f64,
    pub n_used: usize,
    /// Logged worlds dropped as inconsistent with the model (CF only).
    pub n_excluded: usize,
    pub metadata: BTreeMap<String, String>,
    /// Secondary statistics, e.g. the unnormalized IS variant.
    pub extras: BTreeMap<String, f64>,
}

impl EvaluationReport {
    pub(crate) fn new(method: Method, estimand: String, mean: f64, std_error: f64, n_used: usize) -> Self {
        EvaluationReport {
            method,
            estimand,
            mean,
            std_error,
            n_used,
            n_excluded: 0,
            metadata: BTreeMap::new(),
            extras: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.insert(key.to_string(), value.to_string());
        self
    }
}

/// Writes reports as CSV: `method,estimand,mean,std_error,n_used,n_excluded`
/// followed by one column per metadata key (union over reports, sorted).
pub fn write_reports_csv<W: Write>(reports: &[EvaluationReport], out: W) -> Result<()> {
    let keys: std::collections::BTreeSet<&str> = reports
        .iter()
        .flat_map(|r| r.metadata.keys().map(String::as_str))
        .collect();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["method", "estimand", "mean", "std_error", "n_used", "n_excluded"];
    header.extend(keys.iter());
    w.write_record(&header)?;
    for r in reports {
        let mut row = vec![
            r.method.to_string(),
            r.estimand.clone(),
            r.mean.to_string(),
            r.std_error.to_string(),
            r.n_used.to_string(),
            r.n_excluded.to_string(),
        ];
        row.extend(keys.iter().map(|k| r.metadata.get(*k).cloned().unwrap_or_default()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Model-based estimate: simulate `n` worlds from the intervened model.
pub fn value_model_based(
    graph: &ScmGraph,
    target: &Intervention,
    query: &Query,
    n: usize,
    seed: u64,
) -> Result<EvaluationReport> {
    if n < 2 {
        return Err(Error::InsufficientSamples { n });
    }
    let intervened = target.apply(graph)?;
    let samples = map_worlds(&intervened, n, seed, |w| query.eval_or_err(&w))?
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
    let (mean, se) = mean_and_se(&samples);
    Ok(EvaluationReport::new(Method::Mb, query.label.clone(), mean, se, n)
        .with_meta("seed", seed)
        .with_meta("graph_fingerprint", graph.fingerprint())
        .with_meta("intervention", target.describe()))
}

/// Importance-sampling estimate from logs. The reported mean is
/// self-normalized with a delta-method standard error; the unnormalized
/// estimate is in `extras` (`unnormalized_mean`, `unnormalized_std_error`).
pub fn value_importance_sampling(dataset: &LoggedDataset, target: &Policy, query: &Query) -> Result<EvaluationReport> {
    dataset.validate()?;
    let mut weights = Vec::with_capacity(dataset.len());
    let mut values = Vec::with_capacity(dataset.len());
    for r in &dataset.records {
        let actions = r.instances(&target.node).ok_or_else(|| Error::UnsupportedAction {
            node: target.node.clone(),
            detail: format!("world {} does not log the action", r.world_id),
        })?;
        let behavior = r.behavior_prob.get(&target.node).ok_or_else(|| Error::UnsupportedAction {
            node: target.node.clone(),
            detail: format!("world {} has no behavior probability", r.world_id),
        })?;
        if behavior.len() != actions.len() {
            return Err(Error::UnsupportedAction {
                node: target.node.clone(),
                detail: format!("world {} logs {} actions but {} probabilities", r.world_id, actions.len(), behavior.len()),
            });
        }
        let mut w = 1.0;
        for (i, (&a, &b)) in actions.iter().zip(behavior).enumerate() {
            let p = target.probability.prob(r, a, i).ok_or_else(|| Error::UnsupportedAction {
                node: target.node.clone(),
                detail: format!("target `{}` has no probability for world {}", target.name, r.world_id),
            })?;
            w *= if p == b { 1.0 } else { p / b };
        }
        weights.push(w);
        values.push(query.eval_or_err(r)?);
    }
    let n = weights.len() as f64;
    let wsum: f64 = weights.iter().sum();
    if wsum == 0.0 {
        return Err(Error::UnsupportedAction {
            node: target.node.clone(),
            detail: "every importance weight is zero; the target never takes a logged action".into(),
        });
    }
    let snis = weights.iter().zip(&values).map(|(w, q)| w * q).sum::<f64>() / wsum;
    let snis_var = weights
        .iter()
        .zip(&values)
        .map(|(w, q)| (w * (q - snis)).powi(2))
        .sum::<f64>()
        / (wsum * wsum);
    let products: Vec<f64> = weights.iter().zip(&values).map(|(w, q)| w * q).collect();
    let (unnorm, unnorm_se) = mean_and_se(&products);
    let mut report = EvaluationReport::new(Method::Is, query.label.clone(), snis, snis_var.sqrt(), weights.len())
        .with_meta("target", &target.name)
        .with_meta("variant", "self_normalized");
    report.extras.insert("unnormalized_mean".into(), unnorm);
    report.extras.insert("unnormalized_std_error".into(), unnorm_se);
    report.extras.insert("mean_weight".into(), wsum / n);
    Ok(report)
}

/// Counterfactual estimate: for each logged world, abduct the noise under
/// `graph` (the model with the behavior policy installed) and average
/// `query` over `m` posterior draws under the target intervention.
/// Inconsistent worlds are excluded and counted.
pub fn value_counterfactual(
    graph: &ScmGraph,
    dataset: &LoggedDataset,
    target: &Intervention,
    query: &Query,
    m: usize,
    seed: u64,
) -> Result<EvaluationReport> {
    value_counterfactual_with(graph, dataset, target, query, m, seed, SupportPolicy::default())
}

pub fn value_counterfactual_with(
    graph: &ScmGraph,
    dataset: &LoggedDataset,
    target: &Intervention,
    query: &Query,
    m: usize,
    seed: u64,
    support: SupportPolicy,
) -> Result<EvaluationReport> {
    dataset.validate()?;
    if m == 0 {
        return Err(Error::InsufficientSamples { n: 0 });
    }
    let intervened = target.apply(graph)?;
    let per_world: Vec<Option<(f64, usize)>> = dataset
        .records
        .par_iter()
        .map(|r| {
            let posterior = match abduct_with(graph, r, support) {
                Ok(p) => p,
                Err(Error::InconsistentObservation { .. }) => return Ok(None),
                Err(e) => return Err(e),
            };
            let worlds = posterior_worlds(&intervened, &posterior, m, seed, r.world_id)?;
            let mut total = 0.0;
            for w in &worlds {
                total += query.eval_or_err(w)?;
            }
            Ok(Some((total / m as f64, posterior.extrapolated)))
        })
        .collect::<Result<_>>()?;
    let means: Vec<f64> = per_world.iter().flatten().map(|(v, _)| *v).collect();
    let extrapolated: usize = per_world.iter().flatten().map(|(_, e)| *e).sum();
    let excluded = per_world.len() - means.len();
    if means.is_empty() {
        return Err(Error::AllWorldsInconsistent { n: per_world.len() });
    }
    let (mean, se) = mean_and_se(&means);
    let mut report = EvaluationReport::new(Method::Cf, query.label.clone(), mean, se, means.len())
        .with_meta("seed", seed)
        .with_meta("graph_fingerprint", graph.fingerprint())
        .with_meta("intervention", target.describe())
        .with_meta("posterior_draws", m);
    report.n_excluded = excluded;
    report.extras.insert("extrapolated_noise".into(), extrapolated as f64);
    Ok(report)
}
