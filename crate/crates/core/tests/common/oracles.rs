//! Independent oracles shared across test targets.

use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed};
use scmdyn_core::bandit::PolicyRule;
use scmdyn_core::mechanism::Cpt;
use scmdyn_core::{Equation, GraphSpec, NodeSpec, NoisePrior, ScmGraph};

/// Proptest configuration with a fixed seed, for statistical properties.
pub fn fixed(cases: u32) -> Config {
    Config {
        cases,
        rng_seed: RngSeed::Fixed(0x5eed),
        failure_persistence: None,
        ..Config::default()
    }
}

/// `E[O]` under `rule` for `U_c ~ U(lo, hi)` by composite Simpson
/// quadrature of `p(c)(1 - c) + (1 - p(c)) c`, split at the policy's
/// breakpoints so each piece is smooth.
pub fn quadrature(rule: PolicyRule, lo: f64, hi: f64) -> f64 {
    let mut cuts = vec![lo, hi];
    cuts.extend([0.25, 0.5, 0.75].into_iter().filter(|&c| c > lo && c < hi));
    cuts.sort_by(f64::total_cmp);
    let f = |c: f64| {
        let p = rule.prob_one(c);
        p * (1.0 - c) + (1.0 - p) * c
    };
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let k = 2000;
        let h = (b - a) / k as f64;
        // Midpoint-shifted endpoints keep every node inside one piece.
        let g = |x: f64| f(x.clamp(a + 1e-12, b - 1e-12));
        let mut s = g(a) + g(b);
        for i in 1..k {
            s += g(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        total += s * h / 3.0;
    }
    total / (hi - lo)
}

/// Binary graph: `V_i = 1(U_i < table_i[parent bits])` with parents among
/// earlier nodes.
#[derive(Debug)]
pub struct BinaryGraph {
    pub parents: Vec<Vec<usize>>,
    pub tables: Vec<Vec<f64>>,
}

impl BinaryGraph {
    pub fn scm(&self) -> ScmGraph {
        let mut spec = GraphSpec::new();
        for (i, ps) in self.parents.iter().enumerate() {
            spec.push(NodeSpec::exogenous(format!("U{i}"), NoisePrior::unit_uniform()));
            let mut inputs: Vec<String> = ps.iter().map(|p| format!("V{p}")).collect();
            inputs.push(format!("U{i}"));
            spec.push(NodeSpec::endogenous(
                format!("V{i}"),
                Equation::new(inputs, Cpt { table: self.tables[i].clone() }),
            ));
        }
        spec.build().unwrap()
    }

    /// `P(V_j = 1)` under `do(V_k = v)` by summing the truncated
    /// factorization over all assignments.
    pub fn marginals(&self, k: usize, v: f64) -> Vec<f64> {
        let n = self.parents.len();
        let mut out = vec![0.0; n];
        for bits in 0..1u32 << n {
            let val = |i: usize| (bits >> i) & 1;
            if val(k) as f64 != v {
                continue;
            }
            let mut p = 1.0;
            for i in (0..n).filter(|&i| i != k) {
                let idx = self.parents[i]
                    .iter()
                    .enumerate()
                    .fold(0usize, |acc, (b, &par)| acc | ((val(par) as usize) << b));
                let q = self.tables[i][idx];
                p *= if val(i) == 1 { q } else { 1.0 - q };
            }
            for (j, o) in out.iter_mut().enumerate() {
                if val(j) == 1 {
                    *o += p;
                }
            }
        }
        out
    }
}

pub fn binary_graph() -> impl Strategy<Value = BinaryGraph> {
    (2usize..=5)
        .prop_flat_map(|n| {
            (
                Just(n),
                prop::collection::vec(any::<bool>(), n * (n - 1) / 2),
                prop::collection::vec(0.05f64..0.95, n * 16),
            )
        })
        .prop_map(|(n, edges, probs)| {
            let mut parents = vec![Vec::new(); n];
            let mut e = edges.into_iter();
            for (c, ps) in parents.iter_mut().enumerate() {
                for p in 0..c {
                    if e.next().unwrap() {
                        ps.push(p);
                    }
                }
            }
            let tables = parents
                .iter()
                .enumerate()
                .map(|(i, ps)| (0..1usize << ps.len()).map(|t| probs[i * 16 + t]).collect())
                .collect();
            BinaryGraph { parents, tables }
        })
}

