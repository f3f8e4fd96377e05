//! Lending dynamics with group threshold policies.
//!
//! Each world holds `N` applicants in the plate `units`. Per step `t` the
//! graph carries `X̂@t` (score reported to the bank), `T@t` (loan),
//! `Y@t` (repayment), `u@t` (bank utility) and `X@t+1` (next score). `A`
//! and `X@0` are drawn once. `Util` is total utility per applicant and
//! `Delta_j` the mean score change of group `j` from `X@0` to the final
//! score.

mod curves;
mod experiments;
mod mechanisms;
mod thresholds;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use curves::{GroupModel, GroupModelSpec, GroupSpec, RepayCurve, ScoreCurve, TabulatedCdf};
pub use experiments::{
    bureau_experiment, evaluate_lending_policy, paired_policy_difference, robustness_sweep, write_bureau_sensitivity_csv,
    write_policy_rows_csv, write_robustness_csv, BureauResults, BureauSettings, CriterionSensitivity, LendingEvaluation,
    PairedDifference, PolicyRow, RobustnessRow, RobustnessVariant, ESTIMANDS,
};
pub use mechanisms::{
    BureauScore, GroupMeanChange, InverseCdfScore, LoanUtility, OutcomeCurve, OutcomeForm, RepaymentOutcome,
    ScoreTransform, ScoreUpdate, ThresholdTreatment, TotalPerUnit,
};
pub use thresholds::{
    compute_thresholds, threshold_search, Criterion, PlanningCurve, ThresholdPolicy, ThresholdSearch, ThresholdSolution,
};

use crate::error::{Error, Result};
use crate::graph::{GraphSpec, NodeKind, NodeSpec, ScmGraph};
use crate::intervention::{EquationRewrite, Intervention};
use crate::mechanism::{Equation, Identity, Input};
use crate::prior::NoisePrior;
use crate::value::ValueKind;

pub const UNITS: &str = "units";
pub const UTILITY: &str = "Util";

pub fn score_node(t: usize) -> String {
    format!("X@{t}")
}
pub fn reported_node(t: usize) -> String {
    format!("Xhat@{t}")
}
pub fn loan_node(t: usize) -> String {
    format!("T@{t}")
}
pub fn repay_node(t: usize) -> String {
    format!("Y@{t}")
}
pub fn utility_node(t: usize) -> String {
    format!("u@{t}")
}
pub fn tie_noise(t: usize) -> String {
    format!("U_T@{t}")
}
pub fn outcome_noise(t: usize) -> String {
    format!("U_Y@{t}")
}
pub fn delta_node(group: usize) -> String {
    format!("Delta_{group}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(default, deny_unknown_fields)]
pub struct LendingParams {
    pub u_plus: f64,
    pub u_minus: f64,
    pub c_plus: f64,
    pub c_minus: f64,
    /// Probability of lending at exactly the threshold.
    pub gamma: f64,
    pub score_bounds: [f64; 2],
    pub n_units: usize,
    pub steps: usize,
    /// Thresholds of the bank before any policy intervention.
    pub status_quo_tau: [f64; 2],
    pub outcome_form: OutcomeForm,
    /// Clamp updated scores to `score_bounds`.
    pub clamp_scores: bool,
}

impl Default for LendingParams {
    fn default() -> Self {
        LendingParams {
            u_plus: 1.0,
            u_minus: -4.0,
            c_plus: 75.0,
            c_minus: -150.0,
            gamma: 0.0,
            score_bounds: [300.0, 850.0],
            n_units: 10_000,
            steps: 1,
            status_quo_tau: [650.0, 650.0],
            outcome_form: OutcomeForm::Monotone,
            clamp_scores: true,
        }
    }
}

impl LendingParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(format!("lending: {m}")));
        if !(self.u_minus < 0.0 && 0.0 < self.u_plus) {
            return bad(format!("need u_minus < 0 < u_plus, got {} and {}", self.u_minus, self.u_plus));
        }
        if !(self.c_minus < 0.0 && 0.0 < self.c_plus) {
            return bad(format!("need c_minus < 0 < c_plus, got {} and {}", self.c_minus, self.c_plus));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1]", self.gamma));
        }
        let [lo, hi] = self.score_bounds;
        if !(lo < hi) {
            return bad(format!("score bounds [{lo}, {hi}]"));
        }
        if self.n_units == 0 || self.steps == 0 {
            return bad(format!("n_units and steps must be >= 1, got {} and {}", self.n_units, self.steps));
        }
        if self.status_quo_tau.iter().any(|t| !t.is_finite()) {
            return bad("status quo thresholds must be finite".into());
        }
        Ok(())
    }

    pub fn with_steps(&self, steps: usize) -> Self {
        LendingParams {
            steps,
            ..self.clone()
        }
    }
}

/// Builds the lending SCM unrolled over `params.steps` steps.
pub fn build_lending_scm(groups: &GroupModel, params: &LendingParams) -> Result<ScmGraph> {
    params.validate()?;
    if groups.score_bounds() != params.score_bounds {
        return Err(Error::InvalidParams(format!(
            "group model bounds {:?} differ from lending bounds {:?}",
            groups.score_bounds(),
            params.score_bounds
        )));
    }
    let mut spec = GraphSpec::new()
        .plate(UNITS, params.n_units)
        .node(NodeSpec::exogenous("U_A", NoisePrior::Bernoulli { p: groups.theta() }).in_plate(UNITS))
        .node(NodeSpec::exogenous("U_X", NoisePrior::unit_uniform()).in_plate(UNITS))
        .node(
            NodeSpec::endogenous("A", Equation::new(["U_A"], Identity { kind: ValueKind::Binary })).in_plate(UNITS),
        )
        .node(
            NodeSpec::endogenous(
                score_node(0),
                Equation::new(["U_X", "A"], InverseCdfScore { groups: groups.clone() }),
            )
            .in_plate(UNITS)
            .at_step(0),
        );
    let outcome = RepaymentOutcome::new(groups.clone(), params.outcome_form);
    let update = ScoreUpdate {
        c_plus: params.c_plus,
        c_minus: params.c_minus,
        bounds: params.clamp_scores.then_some(params.score_bounds),
    };
    for t in 0..params.steps {
        let step = t as u32;
        let (x, xhat, tn, y) = (score_node(t), reported_node(t), loan_node(t), repay_node(t));
        let nodes = [
            NodeSpec::exogenous(tie_noise(t), NoisePrior::Bernoulli { p: params.gamma }),
            NodeSpec::exogenous(outcome_noise(t), NoisePrior::unit_uniform()),
            NodeSpec::endogenous(
                xhat.clone(),
                Equation::new(
                    [x.clone()],
                    BureauScore {
                        transform: ScoreTransform::Identity,
                    },
                ),
            ),
            NodeSpec::endogenous(
                tn.clone(),
                Equation::new(
                    [tie_noise(t), xhat, "A".into()],
                    ThresholdTreatment {
                        tau: params.status_quo_tau,
                    },
                ),
            ),
            NodeSpec::endogenous(y.clone(), Equation::new([outcome_noise(t), x.clone(), "A".into()], outcome.clone())),
            NodeSpec::endogenous(
                utility_node(t),
                Equation::new(
                    [y.clone(), tn.clone()],
                    LoanUtility {
                        u_plus: params.u_plus,
                        u_minus: params.u_minus,
                    },
                ),
            ),
            NodeSpec::endogenous(score_node(t + 1), Equation::new([x, y, tn], update)),
        ];
        for n in nodes {
            spec.push(n.in_plate(UNITS).at_step(step));
        }
    }
    spec.push(NodeSpec::endogenous(
        UTILITY,
        Equation::new((0..params.steps).map(|t| Input::reduce(utility_node(t))), TotalPerUnit {}),
    ));
    for j in 0..2u8 {
        spec.push(NodeSpec::endogenous(
            delta_node(j as usize),
            Equation::new(
                [Input::reduce("A"), Input::reduce(score_node(0)), Input::reduce(score_node(params.steps))],
                GroupMeanChange { group: j },
            ),
        ));
    }
    spec.build()
}

/// Number of unrolled steps in a lending graph.
pub fn lending_steps(graph: &ScmGraph) -> Result<usize> {
    let steps = (0..).take_while(|&t| graph.contains(&loan_node(t))).count();
    if steps == 0 {
        return Err(Error::InvalidParams("graph has no lending steps".into()));
    }
    Ok(steps)
}

fn current_gamma(graph: &ScmGraph, t: usize) -> Option<f64> {
    match graph.node(&tie_noise(t))?.kind {
        NodeKind::Exogenous(NoisePrior::Bernoulli { p }) => Some(p),
        _ => None,
    }
}

impl ThresholdPolicy {
    /// `do(f_T@t -> π_τ)` for every step, plus a tie-break prior change
    /// when `gamma` differs from the graph's.
    pub fn intervention(&self, graph: &ScmGraph) -> Result<Intervention> {
        let steps = lending_steps(graph)?;
        let mut items = Vec::new();
        for t in 0..steps {
            items.push(Intervention::policy(
                loan_node(t),
                Equation::new(
                    [tie_noise(t), reported_node(t), "A".into()],
                    ThresholdTreatment { tau: self.tau },
                ),
            ));
            if current_gamma(graph, t) != Some(self.gamma) {
                items.push(Intervention::prior(tie_noise(t), NoisePrior::Bernoulli { p: self.gamma }));
            }
        }
        Ok(Intervention::Composite(items))
    }
}

/// `do(f_X̂ -> transform)` at every step: the bank sees the transformed
/// score, outcomes and score updates still use `X`.
pub fn credit_bureau_intervention(graph: &ScmGraph, transform: ScoreTransform) -> Result<Intervention> {
    if let ScoreTransform::Floor { at } | ScoreTransform::Cap { at } = transform {
        if !at.is_finite() {
            return Err(Error::InvalidParams(format!("bureau transform level {at}")));
        }
    }
    Ok(Intervention::Composite(
        (0..lending_steps(graph)?)
            .map(|t| Intervention::policy(reported_node(t), Equation::new([score_node(t)], BureauScore { transform })))
            .collect(),
    ))
}

fn outcome_of<'a>(node: &str, eq: &'a Equation) -> Result<&'a RepaymentOutcome> {
    eq.mechanism
        .as_any()
        .downcast_ref::<RepaymentOutcome>()
        .ok_or_else(|| Error::InvalidParams(format!("`{node}` is not a repayment outcome")))
}

#[derive(Debug)]
struct ShiftRepayment {
    shift: [f64; 2],
}

impl EquationRewrite for ShiftRepayment {
    fn describe(&self) -> String {
        format!("rho + {:?}", self.shift)
    }
    fn rewrite(&self, node: &str, current: &Equation) -> Result<Equation> {
        let mut m = outcome_of(node, current)?.clone();
        m.shift = [m.shift[0] + self.shift[0], m.shift[1] + self.shift[1]];
        Ok(Equation::from_arc(current.inputs.clone(), Arc::new(m)))
    }
}

#[derive(Debug)]
struct MarginalRepayment;

impl EquationRewrite for MarginalRepayment {
    fn describe(&self) -> String {
        "rho -> rho_bar".into()
    }
    fn rewrite(&self, node: &str, current: &Equation) -> Result<Equation> {
        let mut m = outcome_of(node, current)?.clone();
        m.curve = OutcomeCurve::Marginal;
        Ok(Equation::from_arc(current.inputs.clone(), Arc::new(m)))
    }
}

/// Share of each group's score mass where `ρ + b` leaves `[0, 1]` and is
/// clamped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClampReport {
    pub clamped_fraction: [f64; 2],
}

/// `f̂_Y = f_Y + b`: repayment probability `clamp(ρ(x, a) + b_a, 0, 1)` at
/// every step.
pub fn government_intervention(
    graph: &ScmGraph,
    groups: &GroupModel,
    shift: [f64; 2],
) -> Result<(Intervention, ClampReport)> {
    if shift.iter().any(|b| !b.is_finite()) {
        return Err(Error::InvalidParams(format!("government shift {shift:?}")));
    }
    let rewrite: Arc<dyn EquationRewrite> = Arc::new(ShiftRepayment { shift });
    let intervention = Intervention::Composite(
        (0..lending_steps(graph)?)
            .map(|t| Intervention::rewrite(repay_node(t), rewrite.clone()))
            .collect(),
    );
    let r = 10_000;
    let clamped_fraction = [0, 1].map(|j| {
        let cdf = groups.cdf(j);
        (0..r)
            .filter(|&i| {
                let p = groups.rho(cdf.inverse((i as f64 + 0.5) / r as f64), j) + shift[j];
                !(0.0..=1.0).contains(&p)
            })
            .count() as f64
            / r as f64
    });
    if clamped_fraction.iter().any(|&f| f > 0.0) {
        log::info!("government shift {shift:?} clamps repayment probability on {clamped_fraction:?} of each group");
    }
    Ok((intervention, ClampReport { clamped_fraction }))
}

/// The two marginal-outcome mismatches: (i) EqOpp thresholds planned with
/// `ρ̄` for both groups, (ii) outcomes sampled from `ρ̄`.
#[derive(Debug, Clone)]
pub struct MarginalVariant {
    pub thresholds: ThresholdPolicy,
    pub sampling: Intervention,
}

pub fn marginal_outcome_variant(
    graph: &ScmGraph,
    groups: &GroupModel,
    params: &LendingParams,
    search: &ThresholdSearch,
) -> Result<MarginalVariant> {
    let thresholds = threshold_search(Criterion::EqOpp, groups, params, search, PlanningCurve::Marginal)?.policy;
    let rewrite: Arc<dyn EquationRewrite> = Arc::new(MarginalRepayment);
    let sampling = Intervention::Composite(
        (0..lending_steps(graph)?)
            .map(|t| Intervention::rewrite(repay_node(t), rewrite.clone()))
            .collect(),
    );
    Ok(MarginalVariant { thresholds, sampling })
}
