//! Contextual-bandit SCMs, policies and policy-evaluation experiments.
//!
//! The outcome is `O = A (1 - c) + (1 - A) c` with context `c = U_c`, or
//! `c = U_c + U_h` in the confounded variant. The action node `A` is left
//! unbound; a policy intervention supplies its equation.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::error::{Error, Result};
use crate::graph::{GraphSpec, NodeId, NodeSpec, ScmGraph};
use crate::mechanism::{any_impl, next_down, Arg, Arity, EvalCtx, Mechanism, NoiseConstraint};
use crate::ope::{
    mae_by_method, mismatch_sweep, value_model_based, ActionProbability, EvaluationReport, Method, Policy, Query,
    SweepModel, SweepRow, SweepSpec,
};
use crate::prior::NoisePrior;
use crate::value::ValueKind;
use crate::world::Values;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "snake_case")]
pub enum PriorFamily {
    /// `U((1 - σ)/2, (1 + σ)/2)`.
    #[default]
    Uniform,
    /// `N(0, σ²)`.
    Gaussian,
}

impl PriorFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            PriorFamily::Uniform => "uniform",
            PriorFamily::Gaussian => "gaussian",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(default, deny_unknown_fields)]
pub struct BanditParams {
    pub sigma: f64,
    pub prior_family: PriorFamily,
    /// Adds the hidden context `U_h ~ U(-3, 3)`.
    pub confounded: bool,
    /// Adds `U_o ~ N(0, 1)` to the outcome.
    pub observation_noise: bool,
}

impl Default for BanditParams {
    fn default() -> Self {
        BanditParams {
            sigma: 5.0,
            prior_family: PriorFamily::Uniform,
            confounded: false,
            observation_noise: false,
        }
    }
}

impl BanditParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParams(format!("bandit sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }

    pub fn context_prior(&self) -> NoisePrior {
        match self.prior_family {
            PriorFamily::Uniform => NoisePrior::Uniform {
                lo: (1.0 - self.sigma) / 2.0,
                hi: (1.0 + self.sigma) / 2.0,
            },
            PriorFamily::Gaussian => NoisePrior::Gaussian {
                mean: 0.0,
                stddev: self.sigma,
            },
        }
    }

    /// Nodes summed into the effective context.
    pub fn context_nodes(&self) -> Vec<NodeId> {
        let mut v = vec!["U_c".to_string()];
        if self.confounded {
            v.push("U_h".to_string());
        }
        v
    }
}

fn binary(v: f64) -> std::result::Result<f64, String> {
    if v == 0.0 || v == 1.0 {
        Ok(v)
    } else {
        Err(format!("action must be 0 or 1, got {v}"))
    }
}

/// `O = A (1 - c) + (1 - A) c [+ U_o]` over inputs `(A, contexts..., [U_o])`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct BanditOutcome {
    pub observation_noise: bool,
}

impl BanditOutcome {
    fn context_range(&self, n: usize) -> std::ops::Range<usize> {
        1..n - usize::from(self.observation_noise)
    }
}

impl Mechanism for BanditOutcome {
    fn name(&self) -> &str {
        "bandit_outcome"
    }
    fn params(&self) -> Json {
        serde_json::to_value(self).expect("params serialize")
    }
    fn output_kind(&self) -> ValueKind {
        ValueKind::Real
    }
    fn arity(&self) -> Arity {
        Arity::AtLeast(2 + usize::from(self.observation_noise))
    }
    fn eval(&self, args: &[Arg<'_>], _ctx: EvalCtx) -> std::result::Result<f64, String> {
        let a = binary(args[0].value())?;
        let c: f64 = args[self.context_range(args.len())].iter().map(Arg::value).sum();
        let noise = if self.observation_noise { args[args.len() - 1].value() } else { 0.0 };
        Ok(a * (1.0 - c) + (1.0 - a) * c + noise)
    }
    fn abduct(&self, args: &[Option<f64>], slot: usize, observed: f64) -> Option<NoiseConstraint> {
        if slot == 0 {
            return None;
        }
        let a = binary(args[0]?).ok()?;
        let contexts = self.context_range(args.len());
        let noise_slot = args.len() - 1;
        if self.observation_noise && slot == noise_slot {
            let c: f64 = args[contexts].iter().map(|x| x.expect("known")).sum();
            return Some(NoiseConstraint::Point(observed - (a * (1.0 - c) + (1.0 - a) * c)));
        }
        let noise = if self.observation_noise { args[noise_slot]? } else { 0.0 };
        let rest: f64 = contexts
            .filter(|&k| k != slot)
            .map(|k| args[k])
            .sum::<Option<f64>>()?;
        let base = observed - noise;
        let c = if a == 1.0 { 1.0 - base } else { base };
        Some(NoiseConstraint::Point(c - rest))
    }
    any_impl!();
}

/// Decision rules over the effective context `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum PolicyRule {
    /// `P(A=1) = 0.25` if `c > 0.5`, else 0.75.
    P1,
    /// `P(A=1) = 0.1` if `c > 0.75`, 0.9 if `c < 0.25`, else 0.5.
    P2,
    /// `A = 1` iff `c <= 0.5`: the optimal action under the outcome equation.
    P3,
    /// `A = 1` iff `c > 0.5`; the worst deterministic rule.
    P3Literal,
    Constant { action: f64 },
}

impl PolicyRule {
    pub fn prob_one(self, c: f64) -> f64 {
        match self {
            PolicyRule::P1 => {
                if c > 0.5 {
                    0.25
                } else {
                    0.75
                }
            }
            PolicyRule::P2 => {
                if c > 0.75 {
                    0.1
                } else if c < 0.25 {
                    0.9
                } else {
                    0.5
                }
            }
            PolicyRule::P3 => f64::from(u8::from(c <= 0.5)),
            PolicyRule::P3Literal => f64::from(u8::from(c > 0.5)),
            PolicyRule::Constant { action } => action,
        }
    }

    pub fn label(self) -> String {
        match self {
            PolicyRule::P1 => "P1".into(),
            PolicyRule::P2 => "P2".into(),
            PolicyRule::P3 => "P3".into(),
            PolicyRule::P3Literal => "P3-literal".into(),
            PolicyRule::Constant { action } => format!("Constant({action})"),
        }
    }
}

/// `A = 1(U_a < π(1 | c))` over inputs `(contexts..., U_a)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BanditPolicy {
    #[serde(flatten)]
    pub rule: PolicyRule,
    /// Use `1 - π(1 | c)` instead.
    #[serde(default)]
    pub flip: bool,
}

impl BanditPolicy {
    pub fn prob_one(&self, c: f64) -> f64 {
        let p = self.rule.prob_one(c);
        if self.flip {
            1.0 - p
        } else {
            p
        }
    }
}

impl Mechanism for BanditPolicy {
    fn name(&self) -> &str {
        "bandit_policy"
    }
    fn params(&self) -> Json {
        serde_json::to_value(self).expect("params serialize")
    }
    fn output_kind(&self) -> ValueKind {
        ValueKind::Binary
    }
    fn arity(&self) -> Arity {
        Arity::AtLeast(2)
    }
    fn eval(&self, args: &[Arg<'_>], _ctx: EvalCtx) -> std::result::Result<f64, String> {
        let (u, ctx) = args.split_last().expect("arity checked");
        let c: f64 = ctx.iter().map(Arg::value).sum();
        Ok(f64::from(u8::from(u.value() < self.prob_one(c))))
    }
    fn abduct(&self, args: &[Option<f64>], slot: usize, observed: f64) -> Option<NoiseConstraint> {
        if slot != args.len() - 1 {
            return None;
        }
        let c: f64 = args[..slot].iter().copied().sum::<Option<f64>>()?;
        let p = self.prob_one(c);
        Some(if observed == 1.0 {
            if p <= 0.0 {
                NoiseConstraint::Inconsistent(format!("policy takes A=0 surely at context {c}"))
            } else {
                NoiseConstraint::Interval {
                    lo: f64::NEG_INFINITY,
                    hi: next_down(p),
                }
            }
        } else if p >= 1.0 {
            NoiseConstraint::Inconsistent(format!("policy takes A=1 surely at context {c}"))
        } else {
            NoiseConstraint::Interval { lo: p, hi: f64::INFINITY }
        })
    }
    any_impl!();
}

/// Placeholder for a decision node whose policy is supplied by intervention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Unbound {
    #[serde(default)]
    pub kind: ValueKind,
}

impl Mechanism for Unbound {
    fn name(&self) -> &str {
        "unbound"
    }
    fn params(&self) -> Json {
        serde_json::to_value(self).expect("params serialize")
    }
    fn output_kind(&self) -> ValueKind {
        self.kind
    }
    fn arity(&self) -> Arity {
        Arity::Exactly(0)
    }
    fn eval(&self, _args: &[Arg<'_>], _ctx: EvalCtx) -> std::result::Result<f64, String> {
        Err("no policy bound to this decision node; apply a policy intervention".into())
    }
    any_impl!();
}

/// `U_c, U_a, U_o, [U_h], A, O`.
pub fn build_bandit_scm(params: &BanditParams) -> Result<ScmGraph> {
    params.validate()?;
    let mut spec = GraphSpec::new()
        .node(NodeSpec::exogenous("U_c", params.context_prior()))
        .node(NodeSpec::exogenous("U_a", NoisePrior::unit_uniform()))
        .node(NodeSpec::exogenous("U_o", NoisePrior::Gaussian { mean: 0.0, stddev: 1.0 }));
    if params.confounded {
        spec.push(NodeSpec::exogenous("U_h", NoisePrior::Uniform { lo: -3.0, hi: 3.0 }));
    }
    spec.push(NodeSpec::endogenous(
        "A",
        crate::mechanism::Equation::new(Vec::<NodeId>::new(), Unbound { kind: ValueKind::Binary }),
    ));
    let mut inputs = vec!["A".to_string()];
    inputs.extend(params.context_nodes());
    if params.observation_noise {
        inputs.push("U_o".into());
    }
    spec.push(NodeSpec::endogenous(
        "O",
        crate::mechanism::Equation::new(
            inputs,
            BanditOutcome {
                observation_noise: params.observation_noise,
            },
        ),
    ));
    spec.build()
}

#[derive(Debug)]
struct BanditProbability {
    policy: BanditPolicy,
    contexts: Vec<NodeId>,
}

impl ActionProbability for BanditProbability {
    fn prob(&self, values: &dyn Values, action: f64, _index: usize) -> Option<f64> {
        let c = self.contexts.iter().map(|id| values.scalar(id)).sum::<Option<f64>>()?;
        let p = self.policy.prob_one(c);
        match action {
            a if a == 1.0 => Some(p),
            a if a == 0.0 => Some(1.0 - p),
            _ => None,
        }
    }
}

/// The policy as an equation over `(contexts..., U_a)` for the graph built
/// from `params`, plus its action probabilities.
pub fn make_policy(rule: PolicyRule, flip: bool, params: &BanditParams) -> Policy {
    let policy = BanditPolicy { rule, flip };
    let contexts = params.context_nodes();
    let mut inputs = contexts.clone();
    inputs.push("U_a".into());
    Policy {
        name: if flip { format!("{}-flipped", rule.label()) } else { rule.label() },
        node: "A".into(),
        equation: crate::mechanism::Equation::new(inputs, policy),
        probability: Arc::new(BanditProbability { policy, contexts }),
    }
}

/// Model-based value of each policy on `E[O]`, all with the same seed so
/// the comparisons use common random numbers.
pub fn compare_policies_model_based(
    params: &BanditParams,
    rules: &[PolicyRule],
    n: usize,
    seed: u64,
) -> Result<Vec<EvaluationReport>> {
    let graph = build_bandit_scm(params)?;
    rules
        .iter()
        .map(|&rule| {
            let policy = make_policy(rule, false, params);
            value_model_based(&graph, &policy.intervention(), &Query::node("O"), n, seed)
                .map(|r| r.with_meta("policy", &policy.name))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Truth σ = 5 uniform; models σ ∈ {1, 3, 7, 9} × {uniform, gaussian}.
    Mismatch,
    /// Truth has `U_h`, the model omits it.
    OmittedVariable,
    /// Model equals truth.
    Control,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(default, deny_unknown_fields)]
pub struct OpeSettings {
    pub n_logs: usize,
    pub n_eval: usize,
    pub truth_factor: usize,
    pub m_posterior: usize,
}

impl Default for OpeSettings {
    fn default() -> Self {
        OpeSettings {
            n_logs: 5000,
            n_eval: 5000,
            truth_factor: 10,
            m_posterior: 1,
        }
    }
}

/// Sweep rows and the mean absolute error (with its standard error) per
/// method.
#[derive(Debug, Clone)]
pub struct OpeComparison {
    pub rows: Vec<SweepRow>,
    pub mae: BTreeMap<Method, (f64, f64)>,
}

pub const MISMATCH_SIGMAS: [f64; 4] = [1.0, 3.0, 7.0, 9.0];

/// Truth and model parameters for a protocol.
pub fn protocol_params(protocol: Protocol) -> (BanditParams, Vec<BanditParams>) {
    match protocol {
        Protocol::Mismatch => {
            let truth = BanditParams::default();
            let models = [PriorFamily::Uniform, PriorFamily::Gaussian]
                .into_iter()
                .flat_map(|f| {
                    MISMATCH_SIGMAS.map(|sigma| BanditParams {
                        sigma,
                        prior_family: f,
                        ..truth
                    })
                })
                .collect();
            (truth, models)
        }
        Protocol::OmittedVariable => {
            let model = BanditParams {
                sigma: 1.0,
                ..BanditParams::default()
            };
            (BanditParams { confounded: true, ..model }, vec![model])
        }
        Protocol::Control => (BanditParams::default(), vec![BanditParams::default()]),
    }
}

/// Runs IS, MB and CF on every ordered pair of `{P1, P2, P3}` for every
/// model of the protocol.
pub fn compare_ope_methods(protocol: Protocol, settings: &OpeSettings, seed: u64) -> Result<OpeComparison> {
    let rules = [PolicyRule::P1, PolicyRule::P2, PolicyRule::P3];
    let (truth, models) = protocol_params(protocol);
    let policies = |p: &BanditParams| rules.iter().map(|&r| make_policy(r, false, p)).collect::<Vec<_>>();
    let models = models
        .iter()
        .map(|p| {
            Ok(SweepModel {
                prior_family: p.prior_family.as_str().into(),
                sigma: p.sigma,
                graph: build_bandit_scm(p)?,
                policies: policies(p),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let spec = SweepSpec {
        truth: build_bandit_scm(&truth)?,
        truth_policies: policies(&truth),
        models,
        pairs: SweepSpec::all_pairs(rules.len()),
        methods: Method::ALL.to_vec(),
        query: Query::node("O"),
        n_logs: settings.n_logs,
        n_eval: settings.n_eval,
        truth_factor: settings.truth_factor,
        m_posterior: settings.m_posterior,
        observed: None,
        seed,
    };
    let rows = mismatch_sweep(&spec)?;
    let mae = mae_by_method(&rows);
    Ok(OpeComparison { rows, mae })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::sample_worlds;

    fn eval_outcome(a: f64, c: f64) -> f64 {
        BanditOutcome::default()
            .eval(&[Arg::Scalar(a), Arg::Scalar(c)], EvalCtx::default())
            .unwrap()
    }

    #[test]
    fn zero_context_outcome_is_action() {
        assert_eq!(eval_outcome(1.0, 0.0), 1.0);
        assert_eq!(eval_outcome(0.0, 0.0), 0.0);
    }

    #[test]
    fn sigma_five_prior() {
        assert_eq!(BanditParams::default().context_prior(), NoisePrior::Uniform { lo: -2.0, hi: 3.0 });
    }

    #[test]
    fn invalid_sigma() {
        let p = BanditParams { sigma: 0.0, ..Default::default() };
        assert!(matches!(build_bandit_scm(&p), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn unbound_action_errors() {
        let g = build_bandit_scm(&BanditParams::default()).unwrap();
        assert!(matches!(sample_worlds(&g, 1, 0), Err(Error::EquationDomain { .. })));
    }

    #[test]
    fn policy_probabilities() {
        let p = BanditParams::default();
        let world = |c: f64| crate::ope::LoggedRecord {
            world_id: 0,
            nodes: [("U_c".to_string(), vec![c])].into(),
            behavior_prob: Default::default(),
        };
        let p1 = make_policy(PolicyRule::P1, false, &p);
        assert_eq!(p1.probability.prob(&world(1.0), 1.0, 0), Some(0.25));
        let p3 = make_policy(PolicyRule::P3, false, &p);
        assert_eq!(p3.probability.prob(&world(2.0), 0.0, 0), Some(1.0));
        for rule in [PolicyRule::P1, PolicyRule::P2, PolicyRule::P3, PolicyRule::P3Literal] {
            for c in [-1.5, 0.1, 0.25, 0.5, 0.6, 0.75, 2.0] {
                let pol = make_policy(rule, false, &p);
                let s = pol.probability.prob(&world(c), 0.0, 0).unwrap() + pol.probability.prob(&world(c), 1.0, 0).unwrap();
                assert_eq!(s, 1.0);
            }
        }
    }

    #[test]
    fn confounded_outcome_uses_effective_context() {
        let params = BanditParams { confounded: true, ..Default::default() };
        let g = make_policy(PolicyRule::P3, false, &params)
            .intervention()
            .apply(&build_bandit_scm(&params).unwrap())
            .unwrap();
        for w in sample_worlds(&g, 200, 5).unwrap() {
            let c = w.scalar("U_c").unwrap() + w.scalar("U_h").unwrap();
            assert_eq!(w.scalar("O"), Some(eval_outcome(w.scalar("A").unwrap(), c)));
        }
    }

    #[test]
    fn outcome_range() {
        let params = BanditParams::default();
        let g = make_policy(PolicyRule::P2, false, &params)
            .intervention()
            .apply(&build_bandit_scm(&params).unwrap())
            .unwrap();
        for w in sample_worlds(&g, 2000, 8).unwrap() {
            let o = w.scalar("O").unwrap();
            assert!((-2.0..=3.0).contains(&o), "{o}");
        }
    }

    #[test]
    fn serde_of_policy_params() {
        let p: BanditPolicy = serde_json::from_value(serde_json::json!({"rule": "p3_literal"})).unwrap();
        assert_eq!(p.rule, PolicyRule::P3Literal);
        let c: BanditPolicy = serde_json::from_value(serde_json::json!({"rule": "constant", "action": 1.0, "flip": true})).unwrap();
        assert_eq!(c.prob_one(0.0), 0.0);
    }
}
