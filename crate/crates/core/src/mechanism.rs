//! Structural equations.
//!
//! A [`Mechanism`] is the deterministic body of a structural equation. It is
//! identified by a registered name plus JSON parameters, which is also what
//! the graph fingerprint and the model description format record. An
//! [`Equation`] binds a mechanism to an ordered list of parent inputs.

use std::any::Any;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::value::ValueKind;

/// One evaluated input of a structural equation.
#[derive(Debug, Clone, Copy)]
pub enum Arg<'a> {
    Scalar(f64),
    /// Every instance of a parent that lives in another plate.
    Slice(&'a [f64]),
}

impl<'a> Arg<'a> {
    /// Scalar value; reductions are never passed to scalar mechanisms.
    pub fn value(&self) -> f64 {
        match *self {
            Arg::Scalar(v) => v,
            Arg::Slice(_) => f64::NAN,
        }
    }

    pub fn values(&self) -> &[f64] {
        match self {
            Arg::Scalar(v) => std::slice::from_ref(v),
            Arg::Slice(s) => s,
        }
    }
}

/// Position of the instance being evaluated.
#[derive(Debug, Clone, Copy, Default)]
pub struct EvalCtx {
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arity {
    Exactly(usize),
    AtLeast(usize),
}

impl Arity {
    fn check(self, n: usize) -> std::result::Result<(), String> {
        match self {
            Arity::Exactly(k) if n != k => Err(format!("expects {k} inputs, got {n}")),
            Arity::AtLeast(k) if n < k => Err(format!("expects at least {k} inputs, got {n}")),
            _ => Ok(()),
        }
    }
}

/// Whether a mechanism consumes per-instance scalars or whole-plate slices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputMode {
    Scalars,
    Reductions,
}

/// What an observed output says about one noise input of a mechanism.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseConstraint {
    Point(f64),
    /// Closed region `[lo, hi]`; endpoints may be infinite.
    Interval { lo: f64, hi: f64 },
    Unconstrained,
    Inconsistent(String),
}

pub trait Mechanism: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    fn params(&self) -> Json;

    fn output_kind(&self) -> ValueKind;

    fn arity(&self) -> Arity;

    fn input_mode(&self) -> InputMode {
        InputMode::Scalars
    }

    /// Returns a description of the domain violation on failure.
    fn eval(&self, args: &[Arg<'_>], ctx: EvalCtx) -> std::result::Result<f64, String>;

    /// Region of input `slot` consistent with `observed`, given every other
    /// input in `args`. `args[slot]` is `None`; other entries may be `None`
    /// only when the mechanism can answer without them. Returns `None` when
    /// the mechanism does not support abduction for that slot.
    fn abduct(&self, _args: &[Option<f64>], _slot: usize, _observed: f64) -> Option<NoiseConstraint> {
        None
    }

    fn as_any(&self) -> &dyn Any;
}

/// A parent reference of a structural equation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(untagged)]
pub enum Input {
    /// Same instance when the parent shares the plate, broadcast when the
    /// parent is unplated.
    Direct(NodeId),
    /// All instances of a parent in another plate.
    Reduce { reduce: NodeId },
}

impl Input {
    pub fn node(&self) -> &str {
        match self {
            Input::Direct(n) => n,
            Input::Reduce { reduce } => reduce,
        }
    }

    pub fn is_reduction(&self) -> bool {
        matches!(self, Input::Reduce { .. })
    }

    pub fn reduce(node: impl Into<NodeId>) -> Self {
        Input::Reduce {
            reduce: node.into(),
        }
    }
}

impl From<&str> for Input {
    fn from(s: &str) -> Self {
        Input::Direct(s.to_string())
    }
}

impl From<String> for Input {
    fn from(s: String) -> Self {
        Input::Direct(s)
    }
}

/// A mechanism bound to its inputs.
#[derive(Debug, Clone)]
pub struct Equation {
    pub inputs: Vec<Input>,
    pub mechanism: Arc<dyn Mechanism>,
}

impl Equation {
    pub fn new<I, M>(inputs: I, mechanism: M) -> Self
    where
        I: IntoIterator,
        I::Item: Into<Input>,
        M: Mechanism + 'static,
    {
        Equation {
            inputs: inputs.into_iter().map(Into::into).collect(),
            mechanism: Arc::new(mechanism),
        }
    }

    pub fn from_arc<I>(inputs: I, mechanism: Arc<dyn Mechanism>) -> Self
    where
        I: IntoIterator,
        I::Item: Into<Input>,
    {
        Equation {
            inputs: inputs.into_iter().map(Into::into).collect(),
            mechanism,
        }
    }

    pub fn constant(value: f64, kind: ValueKind) -> Self {
        Equation::new(Vec::<Input>::new(), Constant { value, kind })
    }

    /// Canonical text used for fingerprints and structural equality.
    pub fn signature(&self) -> String {
        let inputs: Vec<String> = self
            .inputs
            .iter()
            .map(|i| match i {
                Input::Direct(n) => n.clone(),
                Input::Reduce { reduce } => format!("reduce({reduce})"),
            })
            .collect();
        format!(
            "{}{}({})",
            self.mechanism.name(),
            self.mechanism.params(),
            inputs.join(",")
        )
    }

    pub(crate) fn check_shape(&self, node: &str) -> Result<()> {
        self.mechanism
            .arity()
            .check(self.inputs.len())
            .map_err(|detail| Error::Arity {
                node: node.to_string(),
                detail,
            })?;
        let want_reduce = self.mechanism.input_mode() == InputMode::Reductions;
        for input in &self.inputs {
            if input.is_reduction() != want_reduce {
                return Err(Error::Arity {
                    node: node.to_string(),
                    detail: format!(
                        "input `{}` must be {} for mechanism `{}`",
                        input.node(),
                        if want_reduce { "a reduction" } else { "direct" },
                        self.mechanism.name()
                    ),
                });
            }
        }
        Ok(())
    }
}

fn params_of<T: Serialize>(t: &T) -> Json {
    serde_json::to_value(t).expect("mechanism params serialize")
}

fn binary(v: f64) -> std::result::Result<bool, String> {
    if v == 0.0 {
        Ok(false)
    } else if v == 1.0 {
        Ok(true)
    } else {
        Err(format!("expected a binary input, got {v}"))
    }
}

fn b2f(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

macro_rules! any_impl {
    () => {
        fn as_any(&self) -> &dyn std::any::Any {
            self
        }
    };
}
pub(crate) use any_impl;

/// Constant value; the body of an atomic intervention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constant {
    pub value: f64,
    #[serde(default)]
    pub kind: ValueKind,
}

impl Mechanism for Constant {
    fn name(&self) -> &str {
        "constant"
    }
    fn params(&self) -> Json {
        params_of(self)
    }
    fn output_kind(&self) -> ValueKind {
        self.kind
    }
    fn arity(&self) -> Arity {
        Arity::Exactly(0)
    }
    fn eval(&self, _args: &[Arg<'_>], _ctx: EvalCtx) -> std::result::Result<f64, String> {
        Ok(self.value)
    }
    any_impl!();
}

/// Copies its single input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Identity {
    #[serde(default)]
    pub kind: ValueKind,
}

impl Mechanism for Identity {
    fn name(&self) -> &str {
        "identity"
    }
    fn params(&self) -> Json {
        params_of(self)
    }
    fn output_kind(&self) -> ValueKind {
        self.kind
    }
    fn arity(&self) -> Arity {
        Arity::Exactly(1)
    }
    fn eval(&self, args: &[Arg<'_>], _ctx: EvalCtx) -> std::result::Result<f64, String> {
        Ok(args[0].value())
    }
    fn abduct(&self, _args: &[Option<f64>], _slot: usize, observed: f64) -> Option<NoiseConstraint> {
        Some(NoiseConstraint::Point(observed))
    }
    any_impl!();
}

/// `bias + sum_k weights[k] * x_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weights: Vec<f64>,
    #[serde(default)]
    pub bias: f64,
}

impl Mechanism for Linear {
    fn name(&self) -> &str {
        "linear"
    }
    fn params(&self) -> Json {
        params_of(self)
    }
    fn output_kind(&self) -> ValueKind {
        ValueKind::Real
    }
    fn arity(&self) -> Arity {
        Arity::Exactly(self.weights.len())
    }
    fn eval(&self, args: &[Arg<'_>], _ctx: EvalCtx) -> std::result::Result<f64, String> {
        Ok(self
            .weights
            .iter()
            .zip(args)
            .fold(self.bias, |acc, (w, a)| acc + w * a.value()))
    }
    fn abduct(&self, args: &[Option<f64>], slot: usize, observed: f64) -> Option<NoiseConstraint> {
        let mut rest = self.bias;
        for (k, (w, a)) in self.weights.iter().zip(args).enumerate() {
            if k != slot {
                rest += w * (*a)?;
            }
        }
        let w = self.weights[slot];
        Some(if w != 0.0 {
            NoiseConstraint::Point((observed - rest) / w)
        } else if rest == observed {
            NoiseConstraint::Unconstrained
        } else {
            NoiseConstraint::Inconsistent(format!("linear output {rest} != {observed}"))
        })
    }
    any_impl!();
}

/// `1(x > threshold)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Indicator {
    pub threshold: f64,
}

impl Mechanism for Indicator {
    fn name(&self) -> &str {
        "indicator"
    }
    fn params(&self) -> Json {
        params_of(self)
    }
    fn output_kind(&self) -> ValueKind {
        ValueKind::Binary
    }
    fn arity(&self) -> Arity {
        Arity::Exactly(1)
    }
    fn eval(&self, args: &[Arg<'_>], _ctx: EvalCtx) -> std::result::Result<f64, String> {
        Ok(b2f(args[0].value() > self.threshold))
    }
    fn abduct(&self, _args: &[Option<f64>], _slot: usize, observed: f64) -> Option<NoiseConstraint> {
        Some(if observed == 1.0 {
            NoiseConstraint::Interval {
                lo: next_up(self.threshold),
                hi: f64::INFINITY,
            }
        } else {
            NoiseConstraint::Interval {
                lo: f64::NEG_INFINITY,
                hi: self.threshold,
            }
        })
    }
    any_impl!();
}

/// Binary node with a conditional probability table over binary parents,
/// reparameterized through a trailing unit-uniform noise input:
/// `out = 1(u < table[parent bits])`. Parent bit `k` has weight `2^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cpt {
    pub table: Vec<f64>,
}

impl Cpt {
    fn parents(&self) -> usize {
        self.table.len().trailing_zeros() as usize
    }

    fn prob(&self, bits: impl Iterator<Item = f64>) -> std::result::Result<f64, String> {
        let mut idx = 0usize;
        for (k, b) in bits.enumerate() {
            if binary(b)? {
                idx |= 1 << k;
            }
        }
        let p = self.table[idx];
        if (0.0..=1.0).contains(&p) {
            Ok(p)
        } else {
            Err(format!("table probability {p} outside [0, 1]"))
        }
    }
}

impl Mechanism for Cpt {
    fn name(&self) -> &str {
        "cpt"
    }
    fn params(&self) -> Json {
        params_of(self)
    }
    fn output_kind(&self) -> ValueKind {
        ValueKind::Binary
    }
    fn arity(&self) -> Arity {
        Arity::Exactly(self.parents() + 1)
    }
    fn eval(&self, args: &[Arg<'_>], _ctx: EvalCtx) -> std::result::Result<f64, String> {
        let k = self.parents();
        let p = self.prob(args[..k].iter().map(Arg::value))?;
        Ok(b2f(args[k].value() < p))
    }
    fn abduct(&self, args: &[Option<f64>], slot: usize, observed: f64) -> Option<NoiseConstraint> {
        let k = self.parents();
        if slot != k {
            return None;
        }
        let bits: Option<Vec<f64>> = args[..k].iter().copied().collect();
        let p = match self.prob(bits?.into_iter()) {
            Ok(p) => p,
            Err(e) => return Some(NoiseConstraint::Inconsistent(e)),
        };
        Some(if observed == 1.0 {
            if p == 0.0 {
                NoiseConstraint::Inconsistent("probability 0 but observed 1".into())
            } else {
                NoiseConstraint::Interval {
                    lo: f64::NEG_INFINITY,
                    hi: next_down(p),
                }
            }
        } else if p == 1.0 {
            NoiseConstraint::Inconsistent("probability 1 but observed 0".into())
        } else {
            NoiseConstraint::Interval {
                lo: p,
                hi: f64::INFINITY,
            }
        })
    }
    any_impl!();
}

/// Boolean gates over binary inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gate {
    And,
    Or,
    Xor,
    Not,
}

impl Mechanism for Gate {
    fn name(&self) -> &str {
        match self {
            Gate::And => "and",
            Gate::Or => "or",
            Gate::Xor => "xor",
            Gate::Not => "not",
        }
    }
    fn params(&self) -> Json {
        Json::Object(Default::default())
    }
    fn output_kind(&self) -> ValueKind {
        ValueKind::Binary
    }
    fn arity(&self) -> Arity {
        match self {
            Gate::Not => Arity::Exactly(1),
            _ => Arity::AtLeast(1),
        }
    }
    fn eval(&self, args: &[Arg<'_>], _ctx: EvalCtx) -> std::result::Result<f64, String> {
        let bits = args
            .iter()
            .map(|a| binary(a.value()))
            .collect::<std::result::Result<Vec<bool>, String>>()?;
        Ok(b2f(match self {
            Gate::And => bits.iter().all(|&b| b),
            Gate::Or => bits.iter().any(|&b| b),
            Gate::Xor => bits.iter().fold(false, |acc, &b| acc ^ b),
            Gate::Not => !bits[0],
        }))
    }
    fn abduct(&self, args: &[Option<f64>], slot: usize, observed: f64) -> Option<NoiseConstraint> {
        let mut others = Vec::new();
        for (k, a) in args.iter().enumerate() {
            if k != slot {
                others.push(binary((*a)?).ok()?);
            }
        }
        let obs = observed == 1.0;
        let point = |b: bool| NoiseConstraint::Point(b2f(b));
        Some(match self {
            Gate::Not => point(!obs),
            Gate::Xor => point(others.iter().fold(obs, |acc, &b| acc ^ b)),
            Gate::And => {
                if others.iter().all(|&b| b) {
                    point(obs)
                } else if obs {
                    NoiseConstraint::Inconsistent("and-gate observed 1 with a 0 input".into())
                } else {
                    NoiseConstraint::Unconstrained
                }
            }
            Gate::Or => {
                if !others.iter().any(|&b| b) {
                    point(obs)
                } else if !obs {
                    NoiseConstraint::Inconsistent("or-gate observed 0 with a 1 input".into())
                } else {
                    NoiseConstraint::Unconstrained
                }
            }
        })
    }
    any_impl!();
}

/// Reductions over whole plates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Sum,
    Mean,
}

impl Mechanism for Reduction {
    fn name(&self) -> &str {
        match self {
            Reduction::Sum => "reduce_sum",
            Reduction::Mean => "reduce_mean",
        }
    }
    fn params(&self) -> Json {
        Json::Object(Default::default())
    }
    fn output_kind(&self) -> ValueKind {
        ValueKind::Real
    }
    fn arity(&self) -> Arity {
        Arity::AtLeast(1)
    }
    fn input_mode(&self) -> InputMode {
        InputMode::Reductions
    }
    fn eval(&self, args: &[Arg<'_>], _ctx: EvalCtx) -> std::result::Result<f64, String> {
        let (sum, count) = args.iter().fold((0.0, 0usize), |(s, c), a| {
            (s + a.values().iter().sum::<f64>(), c + a.values().len())
        });
        Ok(match self {
            Reduction::Sum => sum,
            Reduction::Mean if count == 0 => f64::NAN,
            Reduction::Mean => sum / count as f64,
        })
    }
    any_impl!();
}

/// Sum of scalar inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Sum;

impl Mechanism for Sum {
    fn name(&self) -> &str {
        "sum"
    }
    fn params(&self) -> Json {
        Json::Object(Default::default())
    }
    fn output_kind(&self) -> ValueKind {
        ValueKind::Real
    }
    fn arity(&self) -> Arity {
        Arity::AtLeast(1)
    }
    fn eval(&self, args: &[Arg<'_>], _ctx: EvalCtx) -> std::result::Result<f64, String> {
        Ok(args.iter().map(Arg::value).sum())
    }
    fn abduct(&self, args: &[Option<f64>], slot: usize, observed: f64) -> Option<NoiseConstraint> {
        let mut rest = 0.0;
        for (k, a) in args.iter().enumerate() {
            if k != slot {
                rest += (*a)?;
            }
        }
        Some(NoiseConstraint::Point(observed - rest))
    }
    any_impl!();
}

pub(crate) fn next_up(x: f64) -> f64 {
    if x.is_nan() || x == f64::INFINITY {
        return x;
    }
    if x == 0.0 {
        return f64::from_bits(1);
    }
    let bits = x.to_bits();
    f64::from_bits(if x > 0.0 { bits + 1 } else { bits - 1 })
}

pub(crate) fn next_down(x: f64) -> f64 {
    -next_up(-x)
}

/// Builds a registered mechanism from its name and JSON parameters.
pub fn build_mechanism(name: &str, params: &Json) -> Result<Arc<dyn Mechanism>> {
    use crate::lending;
    fn parse<T: for<'de> Deserialize<'de>>(name: &str, params: &Json) -> Result<T> {
        serde_json::from_value(params.clone())
            .map_err(|e| Error::ModelFormat(format!("parameters of `{name}`: {e}")))
    }
    let params = if params.is_null() {
        &Json::Object(Default::default())
    } else {
        params
    };
    Ok(match name {
        "constant" => Arc::new(parse::<Constant>(name, params)?),
        "identity" => Arc::new(parse::<Identity>(name, params)?),
        "linear" => Arc::new(parse::<Linear>(name, params)?),
        "indicator" => Arc::new(parse::<Indicator>(name, params)?),
        "cpt" => {
            let cpt: Cpt = parse(name, params)?;
            if !cpt.table.len().is_power_of_two() {
                return Err(Error::ModelFormat(format!(
                    "cpt table length {} is not a power of two",
                    cpt.table.len()
                )));
            }
            Arc::new(cpt)
        }
        "and" => Arc::new(Gate::And),
        "or" => Arc::new(Gate::Or),
        "xor" => Arc::new(Gate::Xor),
        "not" => Arc::new(Gate::Not),
        "sum" => Arc::new(Sum),
        "reduce_sum" => Arc::new(Reduction::Sum),
        "reduce_mean" => Arc::new(Reduction::Mean),
        "bandit_outcome" => Arc::new(parse::<crate::bandit::BanditOutcome>(name, params)?),
        "bandit_policy" => Arc::new(parse::<crate::bandit::BanditPolicy>(name, params)?),
        "unbound" => Arc::new(parse::<crate::bandit::Unbound>(name, params)?),
        "lending_score" => Arc::new(parse::<lending::InverseCdfScore>(name, params)?),
        "bureau_score" => Arc::new(parse::<lending::BureauScore>(name, params)?),
        "threshold_treatment" => Arc::new(parse::<lending::ThresholdTreatment>(name, params)?),
        "repayment_outcome" => Arc::new(parse::<lending::RepaymentOutcome>(name, params)?),
        "loan_utility" => Arc::new(parse::<lending::LoanUtility>(name, params)?),
        "score_update" => Arc::new(parse::<lending::ScoreUpdate>(name, params)?),
        "reduce_total_per_unit" => Arc::new(parse::<lending::TotalPerUnit>(name, params)?),
        "group_mean_change" => Arc::new(parse::<lending::GroupMeanChange>(name, params)?),
        other => return Err(Error::UnknownMechanism(other.to_string())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(m: &dyn Mechanism, xs: &[f64]) -> f64 {
        let args: Vec<Arg> = xs.iter().map(|&x| Arg::Scalar(x)).collect();
        m.eval(&args, EvalCtx::default()).unwrap()
    }

    #[test]
    fn cpt_reparameterization() {
        let cpt = Cpt {
            table: vec![0.1, 0.9],
        };
        assert_eq!(eval(&cpt, &[1.0, 0.5]), 1.0);
        assert_eq!(eval(&cpt, &[0.0, 0.5]), 0.0);
        assert_eq!(
            cpt.abduct(&[Some(1.0), None], 1, 1.0),
            Some(NoiseConstraint::Interval {
                lo: f64::NEG_INFINITY,
                hi: next_down(0.9)
            })
        );
    }

    #[test]
    fn gates_abduct() {
        assert_eq!(
            Gate::Xor.abduct(&[Some(1.0), None], 1, 0.0),
            Some(NoiseConstraint::Point(1.0))
        );
        assert_eq!(
            Gate::And.abduct(&[Some(0.0), None], 1, 0.0),
            Some(NoiseConstraint::Unconstrained)
        );
        assert!(matches!(
            Gate::Or.abduct(&[Some(1.0), None], 1, 0.0),
            Some(NoiseConstraint::Inconsistent(_))
        ));
    }

    #[test]
    fn linear_inverts() {
        let m = Linear {
            weights: vec![2.0, -1.0],
            bias: 0.5,
        };
        assert_eq!(eval(&m, &[1.0, 3.0]), -0.5);
        assert_eq!(
            m.abduct(&[Some(1.0), None], 1, -0.5),
            Some(NoiseConstraint::Point(3.0))
        );
    }

    #[test]
    fn registry_roundtrip() {
        let m = build_mechanism("linear", &serde_json::json!({"weights": [1.0], "bias": 2.0})).unwrap();
        assert_eq!(m.name(), "linear");
        assert_eq!(m.params()["bias"], 2.0);
        assert!(matches!(
            build_mechanism("nope", &Json::Null),
            Err(Error::UnknownMechanism(_))
        ));
    }

    #[test]
    fn ulp_steps() {
        assert!(next_up(1.0) > 1.0);
        assert!(next_down(1.0) < 1.0);
        assert_eq!(next_down(next_up(0.3)), 0.3);
        assert!(next_up(-0.0) > 0.0);
    }
}
