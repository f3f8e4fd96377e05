//! Lending invariant checks. Each returns a summary on success and the
//! first violation otherwise.

use scmdyn_core::lending::{
    build_lending_scm, compute_thresholds, delta_node, loan_node, repay_node, score_node, utility_node, Criterion,
    GroupModel, LendingParams, ThresholdPolicy, ThresholdSearch,
};
use scmdyn_core::{sample_worlds, Intervention, ScmGraph, Values, World};

pub type Check = Result<String, String>;

/// Default repayment curves, written out independently of the crate.
pub fn rho_oracle(x: f64, group: usize) -> f64 {
    let (x0, s) = if group == 0 { (575.0, 30.0) } else { (580.0, 40.0) };
    1.0 / (1.0 + (-(x - x0) / s).exp())
}

pub fn col<'a>(w: &'a World, id: &str) -> &'a [f64] {
    w.get(id).unwrap_or_else(|| panic!("missing node {id}"))
}

/// Whether two world lists hold identical values for every node of `a`.
pub fn same_values(a: &[World], b: &[World]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.layout().ids.iter().all(|id| {
                let (u, v) = (col(x, id), y.get(id).unwrap_or(&[]));
                u.len() == v.len() && u.iter().zip(v).all(|(p, q)| p.to_bits() == q.to_bits())
            })
        })
}

/// [`same_values`] restricted to the endogenous nodes of `graph`.
pub fn same_endogenous(graph: &ScmGraph, a: &World, b: &World) -> bool {
    graph
        .nodes()
        .iter()
        .filter(|n| !n.is_exogenous())
        .all(|n| col(a, &n.id).iter().zip(col(b, &n.id)).all(|(p, q)| p.to_bits() == q.to_bits()))
}

/// Worlds under `policy` composed with `extra`.
pub fn policy_worlds(
    graph: &ScmGraph,
    policy: &ThresholdPolicy,
    extra: Option<Intervention>,
    n: usize,
    seed: u64,
) -> Vec<World> {
    let mut items = vec![policy.intervention(graph).unwrap()];
    items.extend(extra);
    let g = Intervention::Composite(items).apply(graph).unwrap();
    sample_worlds(&g, n, seed).unwrap()
}

pub fn no_loan_invariance(worlds: &[World], steps: usize) -> Check {
    let mut checked = 0usize;
    for w in worlds {
        for t in 0..steps {
            let (tv, u, x, x1) = (col(w, &loan_node(t)), col(w, &utility_node(t)), col(w, &score_node(t)), col(w, &score_node(t + 1)));
            for i in 0..tv.len() {
                if tv[i] == 0.0 {
                    checked += 1;
                    if u[i] != 0.0 || x1[i] != x[i] {
                        return Err(format!("unit {i} step {t}: u={} X={} -> {}", u[i], x[i], x1[i]));
                    }
                }
            }
        }
    }
    if checked == 0 {
        return Err("no untreated units".into());
    }
    Ok(format!("{checked} untreated unit-steps"))
}

/// Needs unclamped scores.
pub fn score_change_bounds(worlds: &[World], params: &LendingParams) -> Check {
    let steps = params.steps;
    for w in worlds {
        for t in 0..steps {
            let (tv, x, x1) = (col(w, &loan_node(t)), col(w, &score_node(t)), col(w, &score_node(t + 1)));
            for i in 0..tv.len() {
                let d = x1[i] - x[i];
                let ok = tv[i] == 0.0
                    || (d - params.c_plus).abs() < 1e-9
                    || (d - params.c_minus).abs() < 1e-9;
                if !ok {
                    return Err(format!("unit {i} step {t}: change {d}"));
                }
            }
        }
        let lo = steps as f64 * params.c_minus;
        let hi = steps as f64 * params.c_plus;
        for j in 0..2 {
            let d = w.scalar(&delta_node(j)).unwrap();
            if !(lo - 1e-9..=hi + 1e-9).contains(&d) {
                return Err(format!("Delta_{j} = {d} outside [{lo}, {hi}]"));
            }
        }
    }
    Ok(format!("{} worlds", worlds.len()))
}

/// Outcomes at step 0 are the same units' outcomes whatever the lending
/// decision; the treatment columns must actually differ.
pub fn potential_outcome_independence(a: &[World], b: &[World]) -> Check {
    let mut flipped = 0usize;
    for (wa, wb) in a.iter().zip(b) {
        if col(wa, &repay_node(0)) != col(wb, &repay_node(0)) {
            return Err(format!("world {}: Y@0 differs", wa.index()));
        }
        flipped += col(wa, &loan_node(0))
            .iter()
            .zip(col(wb, &loan_node(0)))
            .filter(|(x, y)| x != y)
            .count();
    }
    if flipped == 0 {
        return Err("the two policies made identical decisions".into());
    }
    Ok(format!("{flipped} decisions flipped, Y@0 unchanged"))
}

/// Empirical repayment rate per score bin and group against the mean of
/// the oracle curve over the bin's members, within binomial 4σ.
pub fn marginal_calibration(worlds: &[World], bins: usize, [lo, hi]: [f64; 2]) -> Check {
    let mut hits = vec![[0.0f64; 2]; bins];
    let mut expected = vec![[0.0f64; 2]; bins];
    let mut var = vec![[0.0f64; 2]; bins];
    let mut count = vec![[0usize; 2]; bins];
    for w in worlds {
        let (a, x, y) = (col(w, "A"), col(w, &score_node(0)), col(w, &repay_node(0)));
        for i in 0..a.len() {
            let j = a[i] as usize;
            let b = (((x[i] - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1);
            let p = rho_oracle(x[i], j);
            hits[b][j] += y[i];
            expected[b][j] += p;
            var[b][j] += p * (1.0 - p);
            count[b][j] += 1;
        }
    }
    let mut worst = 0.0f64;
    for b in 0..bins {
        for j in 0..2 {
            if count[b][j] < 30 {
                continue;
            }
            let sd = var[b][j].sqrt().max(1e-9);
            let z = (hits[b][j] - expected[b][j]).abs() / sd;
            worst = worst.max(z);
            if z > 4.0 {
                let n = count[b][j] as f64;
                return Err(format!("bin {b} group {j}: rate {} vs {} (z={z:.2})", hits[b][j] / n, expected[b][j] / n));
            }
        }
    }
    Ok(format!("max |z| = {worst:.2}"))
}

/// `(selection rate, P(T=1 | Y=1))` per group at step 0, with binomial
/// standard errors.
pub fn rates(worlds: &[World]) -> [[(f64, f64); 2]; 2] {
    let mut n = [0.0; 2];
    let mut sel = [0.0; 2];
    let mut pos = [0.0; 2];
    let mut tp = [0.0; 2];
    for w in worlds {
        let (a, t, y) = (col(w, "A"), col(w, &loan_node(0)), col(w, &repay_node(0)));
        for i in 0..a.len() {
            let j = a[i] as usize;
            n[j] += 1.0;
            sel[j] += t[i];
            pos[j] += y[i];
            tp[j] += t[i] * y[i];
        }
    }
    let stat = |k: f64, m: f64| {
        let p = k / m;
        (p, (p * (1.0 - p) / m).sqrt())
    };
    [
        [stat(sel[0], n[0]), stat(sel[1], n[1])],
        [stat(tp[0], pos[0]), stat(tp[1], pos[1])],
    ]
}

/// DemPar equalizes selection rates and EqOpp true-positive rates. The
/// Monte Carlo gap may exceed the planning tolerance only by sampling
/// noise.
pub fn constraint_satisfaction(
    groups: &GroupModel,
    params: &LendingParams,
    search: &ThresholdSearch,
    n_worlds: usize,
    seed: u64,
) -> Check {
    let graph = build_lending_scm(groups, &params.with_steps(1)).unwrap();
    let mut out = Vec::new();
    for (c, k) in [(Criterion::DemPar, 0), (Criterion::EqOpp, 1)] {
        let policy = compute_thresholds(c, groups, params, search).map_err(|e| e.to_string())?;
        let r = rates(&policy_worlds(&graph, &policy, None, n_worlds, seed))[k];
        let gap = (r[0].0 - r[1].0).abs();
        let allowed = search.tolerance + 4.0 * (r[0].1.powi(2) + r[1].1.powi(2)).sqrt();
        if gap > allowed {
            return Err(format!("{c}: gap {gap:.5} > {allowed:.5}"));
        }
        out.push(format!("{c} gap {gap:.5} <= {allowed:.5}"));
    }
    Ok(out.join(", "))
}

/// Raising one group's threshold never grants a loan that the lower
/// threshold refused, unit by unit.
pub fn threshold_monotonicity(graph: &ScmGraph, taus: &[f64], n: usize, seed: u64) -> Check {
    for j in 0..2 {
        let mut prev: Option<Vec<World>> = None;
        for &t in taus {
            let mut tau = [600.0, 600.0];
            tau[j] = t;
            let worlds = policy_worlds(graph, &ThresholdPolicy::manual(tau, 0.0), None, n, seed);
            if let Some(p) = &prev {
                for (wp, w) in p.iter().zip(&worlds) {
                    let (a, tp, tn) = (col(w, "A"), col(wp, &loan_node(0)), col(w, &loan_node(0)));
                    for i in 0..a.len() {
                        if a[i] as usize == j && tn[i] > tp[i] {
                            return Err(format!("group {j} tau {t}: unit {i} newly granted"));
                        }
                    }
                }
            }
            prev = Some(worlds);
        }
    }
    Ok(format!("{} thresholds per group", taus.len()))
}
