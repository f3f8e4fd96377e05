//! Group threshold policies and the fairness-constrained grid search.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::curves::GroupModel;
use super::LendingParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub enum Criterion {
    MaxProf,
    DemPar,
    EqOpp,
    Manual,
}

impl Criterion {
    pub const SEARCHED: [Criterion; 3] = [Criterion::MaxProf, Criterion::DemPar, Criterion::EqOpp];

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::MaxProf => "MaxProf",
            Criterion::DemPar => "DemPar",
            Criterion::EqOpp => "EqOpp",
            Criterion::Manual => "Manual",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Lend to group `j` when its reported score exceeds `tau[j]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdPolicy {
    pub tau: [f64; 2],
    pub gamma: f64,
    pub criterion: Criterion,
}

impl ThresholdPolicy {
    pub fn manual(tau: [f64; 2], gamma: f64) -> Self {
        ThresholdPolicy {
            tau,
            gamma,
            criterion: Criterion::Manual,
        }
    }

    /// Thresholds clamped into `bounds`, with a warning when they move.
    pub fn clamped(self, [lo, hi]: [f64; 2]) -> Self {
        let tau = self.tau.map(|t| t.clamp(lo, hi));
        if tau != self.tau {
            log::warn!("thresholds {:?} clamped to the score bounds [{lo}, {hi}]", self.tau);
        }
        ThresholdPolicy { tau, ..self }
    }
}

/// Which repayment curve the bank plans with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlanningCurve {
    #[default]
    ByGroup,
    /// `ρ̄` for both groups.
    Marginal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdSearch {
    /// Quantile grid points per group.
    pub resolution: usize,
    /// Allowed gap in selection rates (DemPar) or true-positive rates
    /// (EqOpp).
    pub tolerance: f64,
}

impl Default for ThresholdSearch {
    fn default() -> Self {
        ThresholdSearch {
            resolution: 10_000,
            tolerance: 2.5e-4,
        }
    }
}

/// A searched policy with the planning model's view of it.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSolution {
    pub policy: ThresholdPolicy,
    pub grid_index: [usize; 2],
    /// Expected utility per applicant.
    pub profit: f64,
    pub selection_rate: [f64; 2],
    pub true_positive_rate: [f64; 2],
}

/// Per-group quantile grid: `R` midpoint cells of equal mass and `R + 1`
/// candidate thresholds at the cell boundaries. Threshold `k` lends to cells
/// `k..R`.
struct GroupGrid {
    tau: Vec<f64>,
    /// `profit[k]`: expected utility per group member when lending above
    /// `tau[k]`.
    profit: Vec<f64>,
    /// `tpr[k] = P(T = 1 | Y = 1)`.
    tpr: Vec<f64>,
    /// Per-loan utility at each candidate threshold.
    marginal: Vec<f64>,
}

impl GroupGrid {
    fn new(groups: &GroupModel, j: usize, params: &LendingParams, r: usize, curve: PlanningCurve) -> Self {
        let cdf = groups.cdf(j);
        let rho = |x: f64| match curve {
            PlanningCurve::ByGroup => groups.rho(x, j),
            PlanningCurve::Marginal => groups.rho_bar(x),
        };
        let per_loan = |p: f64| params.u_plus * p + params.u_minus * (1.0 - p);
        let cells: Vec<f64> = (0..r).map(|i| rho(cdf.inverse((i as f64 + 0.5) / r as f64))).collect();
        let mut profit = vec![0.0; r + 1];
        let mut repay = vec![0.0; r + 1];
        for i in (0..r).rev() {
            profit[i] = profit[i + 1] + per_loan(cells[i]);
            repay[i] = repay[i + 1] + cells[i];
        }
        let total = repay[0];
        let tau: Vec<f64> = (0..=r).map(|k| cdf.inverse(k as f64 / r as f64)).collect();
        GroupGrid {
            marginal: tau.iter().map(|&t| per_loan(rho(t))).collect(),
            tau,
            profit: profit.into_iter().map(|p| p / r as f64).collect(),
            tpr: repay.into_iter().map(|s| s / total).collect(),
        }
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    value: f64,
    k: [usize; 2],
}

fn better(a: Candidate, b: Candidate) -> Candidate {
    if a.value > b.value || (a.value == b.value && a.k < b.k) {
        a
    } else {
        b
    }
}

/// Exhaustive grid search for `criterion`. Ties go to the lowest
/// thresholds.
pub fn threshold_search(
    criterion: Criterion,
    groups: &GroupModel,
    params: &LendingParams,
    search: &ThresholdSearch,
    curve: PlanningCurve,
) -> Result<ThresholdSolution> {
    params.validate()?;
    let r = search.resolution;
    if r < 2 {
        return Err(Error::InvalidParams(format!("grid resolution must be >= 2, got {r}")));
    }
    if !(search.tolerance >= 0.0) {
        return Err(Error::InvalidParams(format!("tolerance must be >= 0, got {}", search.tolerance)));
    }
    let grids = [
        GroupGrid::new(groups, 0, params, r, curve),
        GroupGrid::new(groups, 1, params, r, curve),
    ];
    let w = [groups.weight(0), groups.weight(1)];
    let value = |k: [usize; 2]| w[0] * grids[0].profit[k[0]] + w[1] * grids[1].profit[k[1]];
    let tol = search.tolerance;

    let k = match criterion {
        Criterion::Manual => {
            return Err(Error::InvalidParams("manual thresholds are not searched".into()));
        }
        Criterion::MaxProf => [0, 1].map(|j| grids[j].marginal.iter().position(|&m| m >= 0.0).unwrap_or(r)),
        Criterion::DemPar => {
            // Selection rates (r - k) / r differ by |k0 - k1| / r.
            let band = (tol * r as f64 + 1e-9).floor() as usize;
            (0..=r)
                .into_par_iter()
                .flat_map_iter(|k0| (k0.saturating_sub(band)..=(k0 + band).min(r)).map(move |k1| [k0, k1]))
                .map(|k| Candidate { value: value(k), k })
                .reduce_with(better)
                .expect("grid is nonempty")
                .k
        }
        Criterion::EqOpp => {
            let tpr1 = &grids[1].tpr;
            let best = (0..=r)
                .into_par_iter()
                .filter_map(|k0| {
                    let t = grids[0].tpr[k0];
                    // tpr1 is nonincreasing in k1.
                    let start = tpr1.partition_point(|&v| v > t + tol);
                    let end = tpr1.partition_point(|&v| v >= t - tol);
                    (start..end)
                        .map(|k1| Candidate {
                            value: value([k0, k1]),
                            k: [k0, k1],
                        })
                        .reduce(better)
                })
                .reduce_with(better);
            match best {
                Some(c) => c.k,
                None => {
                    let (gap, k) = (0..=r)
                        .flat_map(|k0| (0..=r).step_by((r / 200).max(1)).map(move |k1| [k0, k1]))
                        .map(|k| ((grids[0].tpr[k[0]] - tpr1[k[1]]).abs(), k))
                        .filter(|(g, _)| !g.is_nan())
                        .min_by(|a, b| a.0.total_cmp(&b.0))
                        .unwrap_or((f64::NAN, [0, 0]));
                    return Err(Error::InfeasibleConstraint {
                        criterion: criterion.to_string(),
                        tolerance: tol,
                        closest_gap: gap,
                        tau0: grids[0].tau[k[0]],
                        tau1: grids[1].tau[k[1]],
                    });
                }
            }
        }
    };
    Ok(ThresholdSolution {
        policy: ThresholdPolicy {
            tau: [grids[0].tau[k[0]], grids[1].tau[k[1]]],
            gamma: params.gamma,
            criterion,
        },
        grid_index: k,
        profit: value(k),
        selection_rate: [0, 1].map(|j| (r - k[j]) as f64 / r as f64),
        true_positive_rate: [0, 1].map(|j| grids[j].tpr[k[j]]),
    })
}

/// Thresholds satisfying `criterion` under the correct group curves.
pub fn compute_thresholds(
    criterion: Criterion,
    groups: &GroupModel,
    params: &LendingParams,
    search: &ThresholdSearch,
) -> Result<ThresholdPolicy> {
    threshold_search(criterion, groups, params, search, PlanningCurve::ByGroup).map(|s| s.policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lending::curves::{GroupModelSpec, RepayCurve};

    fn coarse() -> ThresholdSearch {
        ThresholdSearch {
            resolution: 2000,
            tolerance: 5e-4,
        }
    }

    #[test]
    fn identical_groups_share_thresholds() {
        let mut spec = GroupModelSpec::default();
        spec.groups[1] = spec.groups[0].clone();
        let g = GroupModel::try_from(spec).unwrap();
        let params = LendingParams::default();
        for c in Criterion::SEARCHED {
            let p = compute_thresholds(c, &g, &params, &coarse()).unwrap();
            assert_eq!(p.tau[0], p.tau[1], "{c}");
        }
    }

    #[test]
    fn maxprof_sits_at_break_even() {
        let g = GroupModel::default();
        let params = LendingParams::default();
        let p = compute_thresholds(Criterion::MaxProf, &g, &params, &ThresholdSearch::default()).unwrap();
        // logistic crosses 0.8 at x0 + s ln 4
        for (j, (x0, s)) in [(575.0, 30.0), (580.0, 40.0)].into_iter().enumerate() {
            let x_star = x0 + s * 4f64.ln();
            assert!(p.tau[j] >= x_star && p.tau[j] - x_star < 0.5, "{j}: {} vs {x_star}", p.tau[j]);
            assert!(g.rho(p.tau[j], j) >= 0.8);
        }
    }

    #[test]
    fn constraints_hold_on_the_grid() {
        let g = GroupModel::default();
        let params = LendingParams::default();
        let s = ThresholdSearch::default();
        let dp = threshold_search(Criterion::DemPar, &g, &params, &s, PlanningCurve::ByGroup).unwrap();
        assert!((dp.selection_rate[0] - dp.selection_rate[1]).abs() <= s.tolerance);
        let eo = threshold_search(Criterion::EqOpp, &g, &params, &s, PlanningCurve::ByGroup).unwrap();
        assert!((eo.true_positive_rate[0] - eo.true_positive_rate[1]).abs() <= s.tolerance);
        let mp = threshold_search(Criterion::MaxProf, &g, &params, &s, PlanningCurve::ByGroup).unwrap();
        assert!(mp.profit >= dp.profit && mp.profit >= eo.profit);
    }

    #[test]
    fn zero_repayment_makes_eqopp_infeasible() {
        let mut spec = GroupModelSpec::default();
        spec.groups[0].rho = RepayCurve::Constant { p: 0.0 };
        let g = GroupModel::try_from(spec).unwrap();
        let err = compute_thresholds(Criterion::EqOpp, &g, &LendingParams::default(), &coarse()).unwrap_err();
        assert!(matches!(err, Error::InfeasibleConstraint { .. }));
    }
}
