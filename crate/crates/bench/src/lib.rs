//! Fixtures for the benchmarks in `benches/`.

use scmdyn_core::bandit::{build_bandit_scm, make_policy, BanditParams, PolicyRule};
use scmdyn_core::lending::{build_lending_scm, GroupModel, LendingParams, ThresholdPolicy};
use scmdyn_core::ScmGraph;

/// Bandit graph with policy 2 bound to the action.
pub fn bandit_graph() -> ScmGraph {
    let params = BanditParams::default();
    let base = build_bandit_scm(&params).expect("default bandit builds");
    make_policy(PolicyRule::P2, false, &params)
        .intervention()
        .apply(&base)
        .expect("policy applies")
}

/// Lending graph under fixed thresholds.
pub fn lending_graph(n_units: usize, steps: usize) -> ScmGraph {
    let base = build_lending_scm(
        &GroupModel::default(),
        &LendingParams {
            n_units,
            steps,
            ..LendingParams::default()
        },
    )
    .expect("default lending builds");
    ThresholdPolicy::manual([610.0, 640.0], 0.0)
        .intervention(&base)
        .and_then(|i| i.apply(&base))
        .expect("policy applies")
}
