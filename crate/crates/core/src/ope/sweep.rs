//! Evaluation under model mismatch: logs come from a true graph, estimates
//! from (possibly misspecified) model graphs.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{NodeId, ScmGraph};
use crate::rng::derive_seed;

use super::{
    generate_logs, value_counterfactual, value_importance_sampling, value_model_based, EvaluationReport, LoggedDataset,
    Method, Policy, Query,
};

/// One evaluation model with its own versions of the policies, aligned by
/// index with [`SweepSpec::truth_policies`].
#[derive(Debug, Clone)]
pub struct SweepModel {
    pub prior_family: String,
    pub sigma: f64,
    pub graph: ScmGraph,
    pub policies: Vec<Policy>,
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    /// Data-generating graph with the action node still unbound.
    pub truth: ScmGraph,
    pub truth_policies: Vec<Policy>,
    pub models: Vec<SweepModel>,
    /// Ordered `(behavior, target)` policy index pairs.
    pub pairs: Vec<(usize, usize)>,
    pub methods: Vec<Method>,
    pub query: Query,
    pub n_logs: usize,
    pub n_eval: usize,
    /// Ground truth uses `truth_factor * n_eval` worlds.
    pub truth_factor: usize,
    pub m_posterior: usize,
    /// Nodes written to the logs; all nodes when `None`.
    pub observed: Option<Vec<NodeId>>,
    pub seed: u64,
}

impl SweepSpec {
    /// Every ordered pair of `k` policies, including a policy with itself.
    pub fn all_pairs(k: usize) -> Vec<(usize, usize)> {
        (0..k).flat_map(|b| (0..k).map(move |t| (b, t))).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub prior_family: String,
    pub sigma: f64,
    pub behavior: String,
    pub target: String,
    pub truth: f64,
    pub report: EvaluationReport,
    pub abs_error: f64,
}

impl SweepRow {
    pub fn method(&self) -> Method {
        self.report.method
    }
}

/// Runs every model × pair × method cell; rows are ordered model-major,
/// then by pair, then by method. Each cell draws from its own derived seed.
pub fn mismatch_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    let k = spec.truth_policies.len();
    if k < 2 {
        return Err(Error::InvalidParams(format!("a sweep needs at least 2 policies, got {k}")));
    }
    for m in &spec.models {
        if m.policies.len() != k {
            return Err(Error::InvalidParams(format!(
                "model `{}` sigma {} has {} policies, the truth has {k}",
                m.prior_family,
                m.sigma,
                m.policies.len()
            )));
        }
    }
    if let Some(&(b, t)) = spec.pairs.iter().find(|(b, t)| *b >= k || *t >= k) {
        return Err(Error::InvalidParams(format!("policy pair ({b}, {t}) out of range")));
    }

    let truths: Vec<f64> = (0..k)
        .into_par_iter()
        .map(|t| {
            let p = &spec.truth_policies[t];
            value_model_based(
                &spec.truth,
                &p.intervention(),
                &spec.query,
                spec.n_eval * spec.truth_factor.max(1),
                derive_seed(spec.seed, "truth", &[t as u64]),
            )
            .map(|r| r.mean)
        })
        .collect::<Result<_>>()?;

    let logs: Vec<LoggedDataset> = spec
        .pairs
        .par_iter()
        .map(|&(b, t)| {
            let behavior = &spec.truth_policies[b];
            let graph = behavior.intervention().apply(&spec.truth)?;
            generate_logs(
                &graph,
                behavior,
                spec.observed.as_deref(),
                spec.n_logs,
                derive_seed(spec.seed, "logs", &[b as u64, t as u64]),
            )
        })
        .collect::<Result<_>>()?;

    let is_reports: Vec<Option<EvaluationReport>> = spec
        .pairs
        .par_iter()
        .zip(&logs)
        .map(|(&(_, t), ds)| {
            if spec.methods.contains(&Method::Is) {
                value_importance_sampling(ds, &spec.truth_policies[t], &spec.query).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<Result<_>>()?;

    let cells: Vec<(usize, usize, Method)> = (0..spec.models.len())
        .flat_map(|m| (0..spec.pairs.len()).flat_map(move |p| spec.methods.iter().map(move |&me| (m, p, me))))
        .collect();

    cells
        .par_iter()
        .map(|&(mi, pi, method)| {
            let model = &spec.models[mi];
            let (b, t) = spec.pairs[pi];
            let coords = [mi as u64, b as u64, t as u64];
            let report = match method {
                Method::Is => is_reports[pi].clone().expect("computed when requested"),
                Method::Mb => value_model_based(
                    &model.graph,
                    &model.policies[t].intervention(),
                    &spec.query,
                    spec.n_eval,
                    derive_seed(spec.seed, "mb", &coords),
                )?,
                Method::Cf => {
                    let factual = model.policies[b].intervention().apply(&model.graph)?;
                    value_counterfactual(
                        &factual,
                        &logs[pi],
                        &model.policies[t].intervention(),
                        &spec.query,
                        spec.m_posterior,
                        derive_seed(spec.seed, "cf", &coords),
                    )?
                }
            };
            Ok(SweepRow {
                prior_family: model.prior_family.clone(),
                sigma: model.sigma,
                behavior: spec.truth_policies[b].name.clone(),
                target: spec.truth_policies[t].name.clone(),
                truth: truths[t],
                abs_error: (report.mean - truths[t]).abs(),
                report,
            })
        })
        .collect()
}

/// Mean absolute error and its standard error per method.
pub fn mae_by_method(rows: &[SweepRow]) -> BTreeMap<Method, (f64, f64)> {
    let mut by: BTreeMap<Method, Vec<f64>> = BTreeMap::new();
    for r in rows {
        by.entry(r.method()).or_default().push(r.abs_error);
    }
    by.into_iter()
        .map(|(m, xs)| {
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let se = if xs.len() > 1 {
                (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
            } else {
                0.0
            };
            (m, (mean, se))
        })
        .collect()
}

/// `method,prior_family,sigma,behavior,target,abs_error,std_error`.
pub fn write_error_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "prior_family", "sigma", "behavior", "target", "abs_error", "std_error"])?;
    for r in rows {
        w.write_record([
            r.method().as_str().to_string(),
            r.prior_family.clone(),
            r.sigma.to_string(),
            r.behavior.clone(),
            r.target.clone(),
            r.abs_error.to_string(),
            r.report.std_error.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
