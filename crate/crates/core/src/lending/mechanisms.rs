//! Structural equations of the lending model.

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::mechanism::{next_up, Arg, Arity, EvalCtx, InputMode, Mechanism, NoiseConstraint};
use crate::value::ValueKind;

use super::curves::GroupModel;

type EvalResult = std::result::Result<f64, String>;

fn group_of(a: f64) -> std::result::Result<usize, String> {
    match a {
        a if a == 0.0 => Ok(0),
        a if a == 1.0 => Ok(1),
        _ => Err(format!("group indicator {a} is not 0 or 1")),
    }
}

fn b2f(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

macro_rules! lending_params {
    () => {
        fn params(&self) -> Json {
            serde_json::to_value(self).expect("mechanism parameters serialize")
        }
        fn as_any(&self) -> &dyn std::any::Any {
            self
        }
    };
}

/// `X = CDF_A^{-1}(U_X)` over inputs `(U_X, A)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InverseCdfScore {
    pub groups: GroupModel,
}

impl Mechanism for InverseCdfScore {
    fn name(&self) -> &str {
        "lending_score"
    }
    fn output_kind(&self) -> ValueKind {
        ValueKind::Real
    }
    fn arity(&self) -> Arity {
        Arity::Exactly(2)
    }
    fn eval(&self, args: &[Arg<'_>], _ctx: EvalCtx) -> EvalResult {
        let u = args[0].value();
        if !(0.0..=1.0).contains(&u) {
            return Err(format!("quantile {u} outside [0, 1]"));
        }
        Ok(self.groups.cdf(group_of(args[1].value())?).inverse(u))
    }
    fn abduct(&self, args: &[Option<f64>], slot: usize, observed: f64) -> Option<NoiseConstraint> {
        if slot != 0 {
            return None;
        }
        let cdf = match group_of(args[1]?) {
            Ok(j) => self.groups.cdf(j),
            Err(e) => return Some(NoiseConstraint::Inconsistent(e)),
        };
        Some(if observed < cdf.lo() || observed > cdf.hi() {
            NoiseConstraint::Inconsistent(format!("score {observed} outside the group's support"))
        } else {
            NoiseConstraint::Point(cdf.cdf(observed))
        })
    }
    lending_params!();
}

/// Score reported to the bank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScoreTransform {
    #[default]
    Identity,
    /// `max(X, at)`: no applicant is reported below `at`.
    Floor { at: f64 },
    /// `min(X, at)`, the literal formula.
    Cap { at: f64 },
}

impl ScoreTransform {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            ScoreTransform::Identity => x,
            ScoreTransform::Floor { at } => x.max(at),
            ScoreTransform::Cap { at } => x.min(at),
        }
    }
}

/// `X̂ = f_X̂(X)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BureauScore {
    pub transform: ScoreTransform,
}

impl Mechanism for BureauScore {
    fn name(&self) -> &str {
        "bureau_score"
    }
    fn output_kind(&self) -> ValueKind {
        ValueKind::Real
    }
    fn arity(&self) -> Arity {
        Arity::Exactly(1)
    }
    fn eval(&self, args: &[Arg<'_>], _ctx: EvalCtx) -> EvalResult {
        Ok(self.transform.apply(args[0].value()))
    }
    lending_params!();
}

/// Group threshold policy over `(U_T, X̂, A)`: lend above `tau[A]`, and at
/// exactly `tau[A]` lend when the tie-break draw `U_T` is 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdTreatment {
    pub tau: [f64; 2],
}

impl ThresholdTreatment {
    fn decide(&self, u_t: f64, x: f64, a: f64) -> EvalResult {
        let tau = self.tau[group_of(a)?];
        Ok(if x > tau {
            1.0
        } else if x == tau {
            u_t
        } else {
            0.0
        })
    }
}

impl Mechanism for ThresholdTreatment {
    fn name(&self) -> &str {
        "threshold_treatment"
    }
    fn output_kind(&self) -> ValueKind {
        ValueKind::Binary
    }
    fn arity(&self) -> Arity {
        Arity::Exactly(3)
    }
    fn eval(&self, args: &[Arg<'_>], _ctx: EvalCtx) -> EvalResult {
        self.decide(args[0].value(), args[1].value(), args[2].value())
    }
    fn abduct(&self, args: &[Option<f64>], slot: usize, observed: f64) -> Option<NoiseConstraint> {
        if slot != 0 {
            return None;
        }
        let (x, a) = (args[1]?, args[2]?);
        let tau = match group_of(a) {
            Ok(j) => self.tau[j],
            Err(e) => return Some(NoiseConstraint::Inconsistent(e)),
        };
        Some(if x == tau {
            NoiseConstraint::Point(observed)
        } else if b2f(x > tau) == observed {
            NoiseConstraint::Unconstrained
        } else {
            NoiseConstraint::Inconsistent(format!("score {x} against threshold {tau} cannot give T = {observed}"))
        })
    }
    lending_params!();
}

/// Parameterization of the repayment indicator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "snake_case")]
pub enum OutcomeForm {
    /// `Y = 1(U_Y > 1 - ρ)`, so `P(Y = 1) = ρ`.
    #[default]
    Monotone,
    /// `Y = 1(logit ρ + logit U_Y > 0.5)`, which repays with probability
    /// below `ρ`.
    Literal,
}

/// Which repayment curve drives the outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeCurve {
    #[default]
    ByGroup,
    /// `ρ̄(x)` for both groups.
    Marginal,
}

/// Repayment `Y` over `(U_Y, X, A)` with success probability
/// `clamp(ρ(X, A) + shift[A], 0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepaymentOutcome {
    pub groups: GroupModel,
    #[serde(default)]
    pub form: OutcomeForm,
    #[serde(default)]
    pub curve: OutcomeCurve,
    #[serde(default)]
    pub shift: [f64; 2],
}

impl RepaymentOutcome {
    pub fn new(groups: GroupModel, form: OutcomeForm) -> Self {
        RepaymentOutcome {
            groups,
            form,
            curve: OutcomeCurve::ByGroup,
            shift: [0.0, 0.0],
        }
    }

    pub fn probability(&self, x: f64, group: usize) -> f64 {
        let rho = match self.curve {
            OutcomeCurve::ByGroup => self.groups.rho(x, group),
            OutcomeCurve::Marginal => self.groups.rho_bar(x),
        };
        (rho + self.shift[group]).clamp(0.0, 1.0)
    }

    /// `Y = 1` exactly when `U_Y` exceeds this cut.
    fn cut(&self, x: f64, group: usize) -> f64 {
        let rho = self.probability(x, group);
        match self.form {
            OutcomeForm::Monotone => 1.0 - rho,
            OutcomeForm::Literal => {
                let logit = (rho / (1.0 - rho)).ln();
                1.0 / (1.0 + (logit - 0.5).exp())
            }
        }
    }
}

impl Mechanism for RepaymentOutcome {
    fn name(&self) -> &str {
        "repayment_outcome"
    }
    fn output_kind(&self) -> ValueKind {
        ValueKind::Binary
    }
    fn arity(&self) -> Arity {
        Arity::Exactly(3)
    }
    fn eval(&self, args: &[Arg<'_>], _ctx: EvalCtx) -> EvalResult {
        let u = args[0].value();
        if !(0.0..=1.0).contains(&u) {
            return Err(format!("outcome noise {u} outside [0, 1]"));
        }
        let j = group_of(args[2].value())?;
        Ok(b2f(u > self.cut(args[1].value(), j)))
    }
    fn abduct(&self, args: &[Option<f64>], slot: usize, observed: f64) -> Option<NoiseConstraint> {
        if slot != 0 {
            return None;
        }
        let (x, a) = (args[1]?, args[2]?);
        let j = match group_of(a) {
            Ok(j) => j,
            Err(e) => return Some(NoiseConstraint::Inconsistent(e)),
        };
        let cut = self.cut(x, j);
        Some(if observed == 1.0 {
            if cut >= 1.0 {
                NoiseConstraint::Inconsistent("repayment probability 0 but Y = 1".into())
            } else {
                NoiseConstraint::Interval {
                    lo: next_up(cut),
                    hi: f64::INFINITY,
                }
            }
        } else if cut <= 0.0 {
            NoiseConstraint::Inconsistent("repayment probability 1 but Y = 0".into())
        } else {
            NoiseConstraint::Interval {
                lo: f64::NEG_INFINITY,
                hi: cut,
            }
        })
    }
    lending_params!();
}

/// Bank utility over `(Y, T)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoanUtility {
    pub u_plus: f64,
    pub u_minus: f64,
}

impl Mechanism for LoanUtility {
    fn name(&self) -> &str {
        "loan_utility"
    }
    fn output_kind(&self) -> ValueKind {
        ValueKind::Real
    }
    fn arity(&self) -> Arity {
        Arity::Exactly(2)
    }
    fn eval(&self, args: &[Arg<'_>], _ctx: EvalCtx) -> EvalResult {
        let (y, t) = (args[0].value(), args[1].value());
        Ok(match (t == 1.0, y == 1.0) {
            (false, _) => 0.0,
            (true, true) => self.u_plus,
            (true, false) => self.u_minus,
        })
    }
    lending_params!();
}

/// Next score over `(X, Y, T)`, clamped to `bounds` when set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreUpdate {
    pub c_plus: f64,
    pub c_minus: f64,
    #[serde(default)]
    pub bounds: Option<[f64; 2]>,
}

impl ScoreUpdate {
    pub fn unclamped(&self, x: f64, y: f64, t: f64) -> f64 {
        if t != 1.0 {
            x
        } else if y == 1.0 {
            x + self.c_plus
        } else {
            x + self.c_minus
        }
    }
}

impl Mechanism for ScoreUpdate {
    fn name(&self) -> &str {
        "score_update"
    }
    fn output_kind(&self) -> ValueKind {
        ValueKind::Real
    }
    fn arity(&self) -> Arity {
        Arity::Exactly(3)
    }
    fn eval(&self, args: &[Arg<'_>], _ctx: EvalCtx) -> EvalResult {
        let next = self.unclamped(args[0].value(), args[1].value(), args[2].value());
        Ok(match self.bounds {
            Some([lo, hi]) if args[2].value() == 1.0 => next.clamp(lo, hi),
            _ => next,
        })
    }
    lending_params!();
}

/// Sum over every reduced input divided by the size of the first one:
/// total utility per unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TotalPerUnit {}

impl Mechanism for TotalPerUnit {
    fn name(&self) -> &str {
        "reduce_total_per_unit"
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
    fn eval(&self, args: &[Arg<'_>], _ctx: EvalCtx) -> EvalResult {
        let n = args[0].values().len();
        if n == 0 {
            return Ok(f64::NAN);
        }
        let total: f64 = args.iter().map(|a| a.values().iter().sum::<f64>()).sum();
        Ok(total / n as f64)
    }
    lending_params!();
}

/// Mean of `X_final - X_0` over units of one group, from reduced inputs
/// `(A, X_0, X_final)`; NaN when the group is empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupMeanChange {
    pub group: u8,
}

impl Mechanism for GroupMeanChange {
    fn name(&self) -> &str {
        "group_mean_change"
    }
    fn output_kind(&self) -> ValueKind {
        ValueKind::Real
    }
    fn arity(&self) -> Arity {
        Arity::Exactly(3)
    }
    fn input_mode(&self) -> InputMode {
        InputMode::Reductions
    }
    fn eval(&self, args: &[Arg<'_>], _ctx: EvalCtx) -> EvalResult {
        let (a, x0, x1) = (args[0].values(), args[1].values(), args[2].values());
        if a.len() != x0.len() || a.len() != x1.len() {
            return Err("group, initial and final scores differ in length".into());
        }
        let g = f64::from(self.group);
        let (sum, n) = a
            .iter()
            .zip(x0.iter().zip(x1))
            .filter(|(&ai, _)| ai == g)
            .fold((0.0, 0usize), |(s, n), (_, (&s0, &s1))| (s + (s1 - s0), n + 1));
        Ok(if n == 0 { f64::NAN } else { sum / n as f64 })
    }
    lending_params!();
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(m: &dyn Mechanism, xs: &[f64]) -> f64 {
        let args: Vec<Arg> = xs.iter().map(|&x| Arg::Scalar(x)).collect();
        m.eval(&args, EvalCtx::default()).unwrap()
    }

    #[test]
    fn threshold_tie_uses_the_draw() {
        let t = ThresholdTreatment { tau: [600.0, 650.0] };
        assert_eq!(eval(&t, &[1.0, 600.0, 0.0]), 1.0);
        assert_eq!(eval(&t, &[0.0, 600.0, 0.0]), 0.0);
        assert_eq!(eval(&t, &[0.0, 620.0, 1.0]), 0.0);
        assert_eq!(eval(&t, &[0.0, 651.0, 1.0]), 1.0);
        assert_eq!(t.abduct(&[None, Some(600.0), Some(0.0)], 0, 1.0), Some(NoiseConstraint::Point(1.0)));
        assert!(matches!(
            t.abduct(&[None, Some(700.0), Some(0.0)], 0, 0.0),
            Some(NoiseConstraint::Inconsistent(_))
        ));
    }

    #[test]
    fn monotone_outcome_has_probability_rho() {
        let m = RepaymentOutcome::new(GroupModel::default(), OutcomeForm::Monotone);
        let rho = m.probability(600.0, 0);
        let k = 100_000;
        let ones = (0..k)
            .filter(|i| eval(&m, &[(*i as f64 + 0.5) / k as f64, 600.0, 0.0]) == 1.0)
            .count();
        assert!((ones as f64 / k as f64 - rho).abs() < 2e-5);
        let u = 1.0 - rho;
        assert_eq!(eval(&m, &[u, 600.0, 0.0]), 0.0);
        assert_eq!(eval(&m, &[next_up(u), 600.0, 0.0]), 1.0);
    }

    #[test]
    fn literal_form_underpays() {
        let m = RepaymentOutcome::new(GroupModel::default(), OutcomeForm::Literal);
        let rho = m.probability(650.0, 1);
        // P(Y = 1) = 1 - cut < rho
        assert!(1.0 - m.cut(650.0, 1) < rho);
    }

    #[test]
    fn shift_saturates() {
        let mut m = RepaymentOutcome::new(GroupModel::default(), OutcomeForm::Monotone);
        m.shift = [1.0, 1.0];
        assert_eq!(m.probability(300.0, 0), 1.0);
        assert!(matches!(
            m.abduct(&[None, Some(300.0), Some(0.0)], 0, 0.0),
            Some(NoiseConstraint::Inconsistent(_))
        ));
    }

    #[test]
    fn update_and_utility() {
        let up = ScoreUpdate {
            c_plus: 75.0,
            c_minus: -150.0,
            bounds: Some([300.0, 850.0]),
        };
        assert_eq!(eval(&up, &[600.0, 1.0, 1.0]), 675.0);
        assert_eq!(eval(&up, &[400.0, 0.0, 1.0]), 300.0);
        assert_eq!(eval(&up, &[400.0, 0.0, 0.0]), 400.0);
        let u = LoanUtility {
            u_plus: 1.0,
            u_minus: -4.0,
        };
        assert_eq!(eval(&u, &[0.0, 1.0]), -4.0);
        assert_eq!(eval(&u, &[1.0, 0.0]), 0.0);
    }

    #[test]
    fn group_change_is_undefined_for_empty_groups() {
        let m = GroupMeanChange { group: 1 };
        let a = [0.0, 0.0];
        let args = [Arg::Slice(&a), Arg::Slice(&[1.0, 2.0]), Arg::Slice(&[3.0, 4.0])];
        assert!(m.eval(&args, EvalCtx::default()).unwrap().is_nan());
        let m0 = GroupMeanChange { group: 0 };
        assert_eq!(m0.eval(&args, EvalCtx::default()).unwrap(), 2.0);
    }
}
