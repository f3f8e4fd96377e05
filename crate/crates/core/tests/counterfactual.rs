mod common;

use common::*;
use scmdyn_core::bandit::{build_bandit_scm, make_policy, BanditParams, PolicyRule};
use scmdyn_core::lending::{build_lending_scm, GroupModel, LendingParams, ThresholdPolicy};
use scmdyn_core::{abduct, counterfactual_worlds, sample_worlds, Intervention, NoiseRegion, ScmGraph, Values, World};

fn lending_graph(n: usize, steps: usize) -> (ScmGraph, Vec<World>) {
    let base = build_lending_scm(
        &GroupModel::default(),
        &LendingParams {
            n_units: n,
            steps,
            ..LendingParams::default()
        },
    )
    .unwrap();
    let g = ThresholdPolicy::manual([610.0, 640.0], 0.0)
        .intervention(&base)
        .unwrap()
        .apply(&base)
        .unwrap();
    let w = sample_worlds(&g, 3, 12).unwrap();
    (g, w)
}

#[test]
fn null_intervention_reproduces_bandit_worlds() {
    let params = BanditParams::default();
    let g = make_policy(PolicyRule::P2, false, &params)
        .intervention()
        .apply(&build_bandit_scm(&params).unwrap())
        .unwrap();
    let factual = sample_worlds(&g, 200, 5).unwrap();
    for w in &factual {
        let cf = counterfactual_worlds(&g, w, &Intervention::identity(), 4, 1).unwrap();
        assert!(cf.iter().all(|c| same_endogenous(&g, w, c)));
    }
}

#[test]
fn null_intervention_reproduces_lending_worlds() {
    let (g, factual) = lending_graph(500, 3);
    for w in &factual {
        let cf = counterfactual_worlds(&g, w, &Intervention::identity(), 3, 2).unwrap();
        assert!(cf.iter().all(|c| same_endogenous(&g, w, c)));
    }
}

#[test]
fn observed_score_pins_its_quantile() {
    let (g, factual) = lending_graph(500, 1);
    let groups = GroupModel::default();
    for w in &factual {
        let post = abduct(&g, w).unwrap();
        assert!(post.is_point_identified("U_X"));
        assert!(post.is_point_identified("U_A"));
        let (a, x) = (col(w, "A"), col(w, "X@0"));
        for i in 0..a.len() {
            let Some(NoiseRegion::PointMass(u)) = post.region("U_X", i) else {
                panic!("unit {i}");
            };
            let expect = groups.cdf(a[i] as usize).cdf(x[i]);
            assert!((u - expect).abs() < 1e-9, "unit {i}: {u} vs {expect}");
        }
    }
}

#[test]
fn repaid_loans_stay_repaid_under_a_new_threshold() {
    let (g, factual) = lending_graph(1000, 1);
    let lower = ThresholdPolicy::manual([560.0, 560.0], 0.0).intervention(&g).unwrap();
    let mut repaid = 0;
    for w in &factual {
        let cf = counterfactual_worlds(&g, w, &lower, 5, 7).unwrap();
        let (t, y) = (col(w, "T@0"), col(w, "Y@0"));
        for c in &cf {
            let (tc, yc) = (col(c, "T@0"), col(c, "Y@0"));
            for i in 0..t.len() {
                if t[i] == 1.0 && y[i] == 1.0 {
                    repaid += 1;
                    assert_eq!((tc[i], yc[i]), (1.0, 1.0), "unit {i}");
                }
                // the score never depends on the loan at step 0
                assert_eq!(col(c, "X@0")[i], col(w, "X@0")[i]);
            }
        }
    }
    assert!(repaid > 0);
}

/// Units refused in the factual world carry no outcome evidence beyond
/// their score; granting them a loan draws `Y` at the model's rate.
#[test]
fn newly_granted_outcomes_follow_the_repayment_curve() {
    let (g, factual) = lending_graph(5000, 1);
    let lower = ThresholdPolicy::manual([300.0, 300.0], 0.0).intervention(&g).unwrap();
    let (mut hits, mut expect, mut var) = (0.0, 0.0, 0.0);
    for w in &factual {
        let cf = counterfactual_worlds(&g, w, &lower, 1, 3).unwrap();
        let (a, x, t) = (col(w, "A"), col(w, "X@0"), col(w, "T@0"));
        let yc = col(&cf[0], "Y@0");
        for i in 0..a.len() {
            if t[i] == 0.0 {
                let p = rho_oracle(x[i], a[i] as usize);
                hits += yc[i];
                expect += p;
                var += p * (1.0 - p);
            }
        }
    }
    assert!((hits - expect).abs() <= 4.0 * f64::sqrt(var), "{hits} vs {expect}");
}

#[test]
fn counterfactuals_are_deterministic() {
    let (g, factual) = lending_graph(300, 2);
    let lower = ThresholdPolicy::manual([560.0, 560.0], 0.0).intervention(&g).unwrap();
    let a = counterfactual_worlds(&g, &factual[0], &lower, 4, 9).unwrap();
    let b = counterfactual_worlds(&g, &factual[0], &lower, 4, 9).unwrap();
    assert_eq!(a, b);
    assert_eq!(a[0].index(), factual[0].index());
    assert!(a.iter().all(|w| w.scalar("Util").is_some()));
}
