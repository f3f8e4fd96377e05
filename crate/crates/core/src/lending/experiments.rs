//! Policy evaluation and the two lending experiments.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ScmGraph;
use crate::intervention::{compose, Intervention};
use crate::ope::{mean_and_se, EvaluationReport, Method};
use crate::rng::derive_seed;
use crate::simulate::{evaluate, exogenous_for_world, map_worlds};
use crate::world::{Values, World};

use super::{
    build_lending_scm, credit_bureau_intervention, delta_node, lending_steps, loan_node, marginal_outcome_variant,
    score_node, threshold_search, Criterion, GroupModel, LendingParams, PlanningCurve, ScoreTransform, ScoreUpdate,
    ThresholdPolicy, ThresholdSearch, UTILITY,
};

/// Estimand labels in report order.
pub const ESTIMANDS: [&str; 3] = ["U", "Delta_0", "Delta_1"];

fn estimands(w: &World) -> [f64; 3] {
    let get = |id: &str| w.scalar(id).unwrap_or(f64::NAN);
    [get(UTILITY), get(&delta_node(0)), get(&delta_node(1))]
}

/// Loans whose score update was clamped at the bounds.
fn clamp_events(graph: &ScmGraph, w: &World) -> usize {
    let Ok(steps) = lending_steps(graph) else {
        return 0;
    };
    let Some(update) = graph
        .node(&score_node(1))
        .and_then(|n| n.equation())
        .and_then(|eq| eq.mechanism.as_any().downcast_ref::<ScoreUpdate>())
    else {
        return 0;
    };
    let y = |t: usize| w.get(&super::repay_node(t)).unwrap_or(&[]);
    (0..steps)
        .map(|t| {
            let (x, x1, tn, yt) = (
                w.get(&score_node(t)).unwrap_or(&[]),
                w.get(&score_node(t + 1)).unwrap_or(&[]),
                w.get(&loan_node(t)).unwrap_or(&[]),
                y(t),
            );
            (0..tn.len())
                .filter(|&i| tn[i] == 1.0 && update.unclamped(x[i], yt[i], 1.0) != x1[i])
                .count()
        })
        .sum()
}

fn summarize(samples: &[f64]) -> (f64, f64, usize) {
    let defined: Vec<f64> = samples.iter().copied().filter(|v| !v.is_nan()).collect();
    if defined.is_empty() {
        return (f64::NAN, f64::NAN, 0);
    }
    let (m, se) = mean_and_se(&defined);
    (m, se, defined.len())
}

/// Monte Carlo estimates of `Util` and `Delta_j` under one policy.
#[derive(Debug, Clone, PartialEq)]
pub struct LendingEvaluation {
    pub policy: ThresholdPolicy,
    /// One report per entry of [`ESTIMANDS`].
    pub reports: Vec<EvaluationReport>,
    /// Mean clamped score updates per world.
    pub clamp_events: f64,
}

impl LendingEvaluation {
    pub fn utility(&self) -> &EvaluationReport {
        &self.reports[0]
    }

    pub fn delta(&self, group: usize) -> &EvaluationReport {
        &self.reports[1 + group]
    }
}

/// Evaluates `do(f_T -> π_τ)` composed with `extra` over `n` worlds.
/// Worlds where a group is empty leave that group's `Delta` undefined and
/// are not counted for it.
pub fn evaluate_lending_policy(
    graph: &ScmGraph,
    policy: &ThresholdPolicy,
    extra: &Intervention,
    n: usize,
    seed: u64,
) -> Result<LendingEvaluation> {
    if n < 2 {
        return Err(Error::InsufficientSamples { n });
    }
    let intervention = compose(vec![policy.intervention(graph)?, extra.clone()])?;
    let g = intervention.apply(graph)?;
    let per_world = map_worlds(&g, n, seed, |w| (estimands(&w), clamp_events(&g, &w)))?;
    let clamps = per_world.iter().map(|(_, c)| *c as f64).sum::<f64>() / n as f64;
    let reports = (0..3)
        .map(|k| {
            let samples: Vec<f64> = per_world.iter().map(|(e, _)| e[k]).collect();
            let (mean, se, used) = summarize(&samples);
            let mut r = EvaluationReport::new(Method::Mb, ESTIMANDS[k].to_string(), mean, se, used)
                .with_meta("criterion", policy.criterion)
                .with_meta("tau_0", policy.tau[0])
                .with_meta("tau_1", policy.tau[1])
                .with_meta("intervention", intervention.describe())
                .with_meta("seed", seed)
                .with_meta("graph_fingerprint", graph.fingerprint());
            r.n_excluded = n - used;
            r
        })
        .collect();
    Ok(LendingEvaluation {
        policy: *policy,
        reports,
        clamp_events: clamps,
    })
}

/// `(mean, std_error)` per estimand for a baseline, a variant and their
/// per-world difference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairedDifference {
    pub baseline: [(f64, f64); 3],
    pub variant: [(f64, f64); 3],
    /// `variant - baseline`, paired by world.
    pub difference: [(f64, f64); 3],
}

/// Evaluates two interventions on the same exogenous draws and reports the
/// per-world differences.
pub fn paired_policy_difference(
    graph: &ScmGraph,
    baseline: &Intervention,
    variant: &Intervention,
    n: usize,
    seed: u64,
) -> Result<PairedDifference> {
    if n < 2 {
        return Err(Error::InsufficientSamples { n });
    }
    let (gb, gv) = (baseline.apply(graph)?, variant.apply(graph)?);
    let pairs: Vec<([f64; 3], [f64; 3])> = (0..n as u64)
        .into_par_iter()
        .map(|w| {
            let b = evaluate(&gb, &exogenous_for_world(&gb, seed, w)?)?;
            let v = evaluate(&gv, &exogenous_for_world(&gv, seed, w)?)?;
            Ok((estimands(&b), estimands(&v)))
        })
        .collect::<Result<_>>()?;
    let stat = |f: &dyn Fn(&([f64; 3], [f64; 3])) -> f64| {
        let xs: Vec<f64> = pairs.iter().map(f).collect();
        let (m, se, _) = summarize(&xs);
        (m, se)
    };
    Ok(PairedDifference {
        baseline: [0, 1, 2].map(|k| stat(&|p| p.0[k])),
        variant: [0, 1, 2].map(|k| stat(&|p| p.1[k])),
        difference: [0, 1, 2].map(|k| stat(&|p| p.1[k] - p.0[k])),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "snake_case")]
pub enum RobustnessVariant {
    /// The baseline itself.
    Null,
    /// EqOpp thresholds planned with `ρ̄`.
    MarginalThresholds,
    /// Outcomes sampled from `ρ̄` under the correct thresholds.
    MarginalSampling,
}

impl RobustnessVariant {
    pub const ALL: [RobustnessVariant; 3] = [
        RobustnessVariant::Null,
        RobustnessVariant::MarginalThresholds,
        RobustnessVariant::MarginalSampling,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RobustnessVariant::Null => "null",
            RobustnessVariant::MarginalThresholds => "marginal_thresholds",
            RobustnessVariant::MarginalSampling => "marginal_sampling",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessRow {
    pub steps: usize,
    pub variant: RobustnessVariant,
    pub estimand: String,
    /// `|E_q[·] - E[·]|` from paired worlds.
    pub sensitivity: f64,
    pub se: f64,
    /// Baseline `E[·]`.
    pub baseline: f64,
}

/// Sensitivity of `Util` and `Delta_j` to each variant relative to the
/// correct-model EqOpp policy, per step count. Worlds are paired within a
/// step count.
pub fn robustness_sweep(
    groups: &GroupModel,
    params: &LendingParams,
    steps_list: &[usize],
    variants: &[RobustnessVariant],
    search: &ThresholdSearch,
    n: usize,
    seed: u64,
) -> Result<Vec<RobustnessRow>> {
    let baseline = threshold_search(Criterion::EqOpp, groups, params, search, PlanningCurve::ByGroup)?.policy;
    let mut rows = Vec::new();
    for &steps in steps_list {
        let graph = build_lending_scm(groups, &params.with_steps(steps))?;
        let base = baseline.intervention(&graph)?;
        let marginal = marginal_outcome_variant(&graph, groups, params, search)?;
        let step_seed = derive_seed(seed, "robustness", &[steps as u64]);
        for &variant in variants {
            let q = match variant {
                RobustnessVariant::Null => base.clone(),
                RobustnessVariant::MarginalThresholds => marginal.thresholds.intervention(&graph)?,
                RobustnessVariant::MarginalSampling => compose(vec![base.clone(), marginal.sampling.clone()])?,
            };
            let d = paired_policy_difference(&graph, &base, &q, n, step_seed)?;
            for (k, label) in ESTIMANDS.iter().enumerate() {
                rows.push(RobustnessRow {
                    steps,
                    variant,
                    estimand: label.to_string(),
                    sensitivity: d.difference[k].0.abs(),
                    se: d.difference[k].1,
                    baseline: d.baseline[k].0,
                });
            }
        }
    }
    Ok(rows)
}

/// One evaluated threshold pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyRow {
    pub criterion: Criterion,
    pub tau: [f64; 2],
    pub utility: (f64, f64),
    pub delta: [(f64, f64); 2],
}

impl PolicyRow {
    fn from_stats(policy: &ThresholdPolicy, stats: &[(f64, f64); 3]) -> Self {
        PolicyRow {
            criterion: policy.criterion,
            tau: policy.tau,
            utility: stats[0],
            delta: [stats[1], stats[2]],
        }
    }
}

/// Profit change of one fairness criterion under the bureau transform.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionSensitivity {
    pub criterion: Criterion,
    pub baseline: PolicyRow,
    pub intervened: PolicyRow,
    /// `|profit(intervened) - profit(baseline)|`.
    pub profit_sensitivity: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(default, deny_unknown_fields)]
pub struct BureauSettings {
    pub transform: ScoreTransform,
    /// Group 0 thresholds of the surface.
    pub tau_black: Vec<f64>,
    /// Group 1 thresholds of the surface.
    pub tau_white: Vec<f64>,
    pub n_worlds: usize,
    pub search: ThresholdSearch,
}

impl Default for BureauSettings {
    fn default() -> Self {
        BureauSettings {
            transform: ScoreTransform::Floor { at: 600.0 },
            tau_black: (0..9).map(|k| 500.0 + 25.0 * k as f64).collect(),
            tau_white: (0..9).map(|k| 550.0 + 25.0 * k as f64).collect(),
            n_worlds: 20,
            search: ThresholdSearch::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BureauResults {
    /// Every `(tau_black, tau_white)` pair under the transform.
    pub surface: Vec<PolicyRow>,
    pub criteria: Vec<CriterionSensitivity>,
}

/// Threshold surface under the bureau transform, and each fairness
/// criterion's profit with and without it. All evaluations share `seed`.
pub fn bureau_experiment(
    groups: &GroupModel,
    params: &LendingParams,
    settings: &BureauSettings,
    seed: u64,
) -> Result<BureauResults> {
    let graph = build_lending_scm(groups, params)?;
    let bureau = credit_bureau_intervention(&graph, settings.transform)?;
    let n = settings.n_worlds;
    let mut surface = Vec::new();
    for &t0 in &settings.tau_black {
        for &t1 in &settings.tau_white {
            let policy = ThresholdPolicy::manual([t0, t1], params.gamma);
            let e = evaluate_lending_policy(&graph, &policy, &bureau, n, seed)?;
            let stat = |r: &EvaluationReport| (r.mean, r.std_error);
            surface.push(PolicyRow {
                criterion: policy.criterion,
                tau: policy.tau,
                utility: stat(e.utility()),
                delta: [stat(e.delta(0)), stat(e.delta(1))],
            });
        }
    }
    let mut criteria = Vec::new();
    for c in Criterion::SEARCHED {
        let policy = threshold_search(c, groups, params, &settings.search, PlanningCurve::ByGroup)?.policy;
        let base = policy.intervention(&graph)?;
        let with_bureau = compose(vec![base.clone(), bureau.clone()])?;
        let d = paired_policy_difference(&graph, &base, &with_bureau, n, seed)?;
        criteria.push(CriterionSensitivity {
            criterion: c,
            baseline: PolicyRow::from_stats(&policy, &d.baseline),
            intervened: PolicyRow::from_stats(&policy, &d.variant),
            profit_sensitivity: d.difference[0].0.abs(),
            se: d.difference[0].1,
        });
    }
    Ok(BureauResults { surface, criteria })
}

/// `criterion,tau_0,tau_1,E_U,se_U,E_delta_0,se_0,E_delta_1,se_1`.
pub fn write_policy_rows_csv<W: Write>(rows: &[PolicyRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["criterion", "tau_0", "tau_1", "E_U", "se_U", "E_delta_0", "se_0", "E_delta_1", "se_1"])?;
    for r in rows {
        w.write_record([
            r.criterion.to_string(),
            r.tau[0].to_string(),
            r.tau[1].to_string(),
            r.utility.0.to_string(),
            r.utility.1.to_string(),
            r.delta[0].0.to_string(),
            r.delta[0].1.to_string(),
            r.delta[1].0.to_string(),
            r.delta[1].1.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `criterion,tau_0,tau_1,profit_baseline,profit_intervened,sensitivity,se`.
pub fn write_bureau_sensitivity_csv<W: Write>(rows: &[CriterionSensitivity], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "criterion",
        "tau_0",
        "tau_1",
        "profit_baseline",
        "profit_intervened",
        "sensitivity",
        "se",
    ])?;
    for r in rows {
        w.write_record([
            r.criterion.to_string(),
            r.baseline.tau[0].to_string(),
            r.baseline.tau[1].to_string(),
            r.baseline.utility.0.to_string(),
            r.intervened.utility.0.to_string(),
            r.profit_sensitivity.to_string(),
            r.se.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `steps,variant,estimand,sensitivity,se`.
pub fn write_robustness_csv<W: Write>(rows: &[RobustnessRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["steps", "variant", "estimand", "sensitivity", "se"])?;
    for r in rows {
        w.write_record([
            r.steps.to_string(),
            r.variant.as_str().to_string(),
            r.estimand.clone(),
            r.sensitivity.to_string(),
            r.se.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
