use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;

use serde_json::{json, Value as Json};

use scmdyn_core::bandit::{build_bandit_scm, compare_ope_methods, make_policy, BanditParams, PolicyRule};
use scmdyn_core::lending::{
    build_lending_scm, bureau_experiment, compute_thresholds, credit_bureau_intervention, evaluate_lending_policy,
    government_intervention, robustness_sweep, write_bureau_sensitivity_csv, write_policy_rows_csv,
    write_robustness_csv, Criterion, GroupModel, LendingParams, PolicyRow, ThresholdPolicy,
};
use scmdyn_core::ope::{
    generate_logs, value_counterfactual, value_importance_sampling, value_model_based, write_error_csv,
    write_reports_csv,
};
use scmdyn_core::rng::derive_seed;
use scmdyn_core::world::write_worlds_csv;
use scmdyn_core::{
    build_mechanism, compose, read_model, sample_worlds, Equation, Error, EvaluationReport, Intervention, Method,
    Query, ScmGraph,
};

use crate::config::{EvaluateConfig, GroupsConfig, InterventionConfig, LoadedConfig, ModelConfig, SweepConfig};
use crate::error::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Evaluate,
    Sweep,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Evaluate => "evaluate",
            Command::Sweep => "sweep",
        }
    }
}

pub enum Model {
    Bandit(BanditParams),
    Lending(GroupModel, LendingParams),
    Custom,
}

/// A validated config: the model, and its graph with the configured
/// interventions applied.
pub struct Prepared {
    pub model: Model,
    pub graph: ScmGraph,
    pub interventions: Intervention,
}

/// Files of a finished run, keyed by name, plus notes for the manifest.
#[derive(Default)]
pub struct Outputs {
    pub files: BTreeMap<String, Vec<u8>>,
    pub notes: BTreeMap<String, Json>,
}

impl Outputs {
    fn add(&mut self, name: &str, write: impl FnOnce(&mut Vec<u8>) -> scmdyn_core::Result<()>) -> Result<(), Failure> {
        let mut buf = Vec::new();
        write(&mut buf).map_err(Failure::engine(format!("writing {name}")))?;
        self.files.insert(name.to_string(), buf);
        Ok(())
    }

    fn add_json(&mut self, name: &str, value: &impl serde::Serialize) {
        let mut buf = serde_json::to_vec_pretty(value).expect("results serialize");
        buf.push(b'\n');
        self.files.insert(name.to_string(), buf);
    }
}

fn invalid_params(field: &str) -> impl FnOnce(Error) -> Failure + '_ {
    move |e| match e {
        Error::InvalidParams(m) | Error::ModelFormat(m) => Failure::schema(field, m),
        other => Failure::schema(field, other.to_string()),
    }
}

pub fn prepare(loaded: &LoadedConfig) -> Result<Prepared, Failure> {
    let cfg = &loaded.config;
    let (model, base) = match &cfg.model {
        ModelConfig::Bandit { params } => {
            let g = build_bandit_scm(params).map_err(invalid_params("model.params"))?;
            (Model::Bandit(*params), g)
        }
        ModelConfig::Lending { groups, params } => {
            let groups = match groups {
                GroupsConfig::Spec(spec) => {
                    GroupModel::try_from(spec.clone()).map_err(invalid_params("model.groups.spec"))?
                }
                GroupsConfig::Csv { path, theta } => {
                    let p = loaded.resolve(path);
                    let file = File::open(&p)
                        .map_err(|e| Failure::schema("model.groups.csv.path", format!("{}: {e}", p.display())))?;
                    GroupModel::from_csv(BufReader::new(file), *theta).map_err(invalid_params("model.groups.csv"))?
                }
            };
            let g = build_lending_scm(&groups, params).map_err(invalid_params("model.params"))?;
            (Model::Lending(groups, params.clone()), g)
        }
        ModelConfig::Custom { file } => {
            let p = loaded.resolve(file);
            let f = File::open(&p).map_err(|e| Failure::schema("model.file", format!("{}: {e}", p.display())))?;
            let g = read_model(BufReader::new(f)).map_err(invalid_params("model.file"))?;
            (Model::Custom, g)
        }
    };

    let mut items = Vec::new();
    for (i, iv) in cfg.interventions.iter().enumerate() {
        items.push(resolve_intervention(&base, iv, i)?);
    }
    let interventions = compose(items).map_err(invalid_params("interventions"))?;
    let graph = interventions.apply(&base).map_err(invalid_params("interventions"))?;

    let prepared = Prepared {
        model,
        graph,
        interventions,
    };
    check_tasks(loaded, &prepared)?;
    Ok(prepared)
}

fn resolve_intervention(graph: &ScmGraph, iv: &InterventionConfig, i: usize) -> Result<Intervention, Failure> {
    let (tag, node) = match iv {
        InterventionConfig::Do { node, .. } => ("do", node),
        InterventionConfig::DoPolicy { node, .. } => ("do_policy", node),
        InterventionConfig::Prior { node, .. } => ("prior", node),
    };
    let at = |f: &str| format!("interventions[{i}].{tag}.{f}");
    let Some(spec) = graph.node(node) else {
        return Err(Failure::schema(at("node"), format!("unknown node `{node}`")));
    };
    Ok(match iv {
        InterventionConfig::Do { value, .. } => Intervention::atomic(node.clone(), *value),
        InterventionConfig::DoPolicy {
            equation, params, inputs, ..
        } => {
            let mechanism = build_mechanism(equation, params).map_err(|e| match e {
                Error::UnknownMechanism(_) => Failure::schema(at("equation"), e.to_string()),
                other => Failure::schema(at("params"), other.to_string()),
            })?;
            let inputs = inputs.clone().unwrap_or_else(|| spec.inputs().to_vec());
            if let Some(bad) = inputs.iter().find(|p| !graph.contains(p.node())) {
                return Err(Failure::schema(at("inputs"), format!("unknown node `{}`", bad.node())));
            }
            Intervention::policy(node.clone(), Equation::from_arc(inputs, mechanism))
        }
        InterventionConfig::Prior { prior, .. } => {
            if !spec.is_exogenous() {
                return Err(Failure::schema(at("node"), format!("`{node}` is not exogenous")));
            }
            Intervention::prior(node.clone(), *prior)
        }
    })
}

fn at_least_two(field: &str, n: usize) -> Result<(), Failure> {
    if n < 2 {
        return Err(Failure::schema(field, format!("at least 2 required, got {n}")));
    }
    Ok(())
}

fn check_tasks(loaded: &LoadedConfig, p: &Prepared) -> Result<(), Failure> {
    let cfg = &loaded.config;
    let kind = cfg.model.kind();
    if let Some(s) = &cfg.simulate {
        if s.n_worlds == 0 {
            return Err(Failure::schema("simulate.n_worlds", "at least 1 required"));
        }
    }
    if let Some(e) = &cfg.evaluate {
        let needs = |k: &str| {
            if kind != k {
                Err(Failure::schema("evaluate.task", format!("task needs a {k} model, got {kind}")))
            } else {
                Ok(())
            }
        };
        match e {
            EvaluateConfig::Query { node, n } => {
                if !p.graph.contains(node) {
                    return Err(Failure::schema("evaluate.node", format!("unknown node `{node}`")));
                }
                at_least_two("evaluate.n", *n)?;
            }
            EvaluateConfig::BanditPolicies {
                policies,
                method,
                behavior,
                n,
                m_posterior,
            } => {
                needs("bandit")?;
                if policies.is_empty() {
                    return Err(Failure::schema("evaluate.policies", "no policies"));
                }
                if *method != Method::Mb && behavior.is_none() {
                    return Err(Failure::schema("evaluate.behavior", format!("{method} needs a behavior policy")));
                }
                at_least_two("evaluate.n", *n)?;
                if *m_posterior == 0 {
                    return Err(Failure::schema("evaluate.m_posterior", "at least 1 required"));
                }
            }
            EvaluateConfig::LendingPolicies { policies, n_worlds, .. } => {
                needs("lending")?;
                if policies.is_empty() {
                    return Err(Failure::schema("evaluate.policies", "no policies"));
                }
                for (i, pc) in policies.iter().enumerate() {
                    match (pc.criterion, pc.tau) {
                        (Criterion::Manual, None) => {
                            return Err(Failure::schema(format!("evaluate.policies[{i}].tau"), "Manual needs tau"))
                        }
                        (c, Some(_)) if c != Criterion::Manual => {
                            return Err(Failure::schema(
                                format!("evaluate.policies[{i}].tau"),
                                format!("{c} thresholds are searched, tau is not accepted"),
                            ))
                        }
                        _ => {}
                    }
                }
                at_least_two("evaluate.n_worlds", *n_worlds)?;
            }
        }
    }
    if let Some(s) = &cfg.sweep {
        if s.model_kind() != kind {
            return Err(Failure::schema(
                "sweep.task",
                format!("task needs a {} model, got {kind}", s.model_kind()),
            ));
        }
        if !cfg.interventions.is_empty() {
            return Err(Failure::schema("interventions", "sweeps build their own interventions"));
        }
        match s {
            SweepConfig::BanditOpe { .. } => {}
            SweepConfig::LendingBureau { settings } => at_least_two("sweep.settings.n_worlds", settings.n_worlds)?,
            SweepConfig::LendingRobustness { steps, n_worlds, .. } => {
                if steps.is_empty() || steps.contains(&0) {
                    return Err(Failure::schema("sweep.steps", "need step counts >= 1"));
                }
                at_least_two("sweep.n_worlds", *n_worlds)?;
            }
        }
    }
    Ok(())
}

pub fn execute(command: Command, loaded: &LoadedConfig, p: &Prepared) -> Result<Outputs, Failure> {
    let cfg = &loaded.config;
    let missing = |s: &str| Failure::schema(s, format!("the {} command needs a `{s}` section", command.as_str()));
    let mut out = Outputs::default();
    match command {
        Command::Simulate => {
            let s = cfg.simulate.as_ref().ok_or_else(|| missing("simulate"))?;
            let worlds = sample_worlds(&p.graph, s.n_worlds, cfg.seed).map_err(Failure::engine("simulating"))?;
            out.add("worlds.csv", |b| write_worlds_csv(&worlds, b))?;
        }
        Command::Evaluate => {
            let e = cfg.evaluate.as_ref().ok_or_else(|| missing("evaluate"))?;
            evaluate(e, cfg.seed, p, &mut out)?;
        }
        Command::Sweep => {
            let s = cfg.sweep.as_ref().ok_or_else(|| missing("sweep"))?;
            sweep(s, cfg.seed, p, &mut out)?;
        }
    }
    Ok(out)
}

fn reports_out(out: &mut Outputs, reports: &[EvaluationReport]) -> Result<(), Failure> {
    out.add("reports.csv", |b| write_reports_csv(reports, b))?;
    out.add_json("reports.json", &reports);
    Ok(())
}

fn evaluate(e: &EvaluateConfig, seed: u64, p: &Prepared, out: &mut Outputs) -> Result<(), Failure> {
    match e {
        EvaluateConfig::Query { node, n } => {
            let r = value_model_based(&p.graph, &Intervention::identity(), &Query::node(node.clone()), *n, seed)
                .map_err(Failure::engine(format!("evaluating `{node}`")))?;
            reports_out(out, &[r.with_meta("seed", seed).with_meta("graph_fingerprint", p.graph.fingerprint())])
        }
        EvaluateConfig::BanditPolicies {
            policies,
            method,
            behavior,
            n,
            m_posterior,
        } => {
            let Model::Bandit(params) = &p.model else { unreachable!("checked") };
            let reports = bandit_policies(&p.graph, params, policies, *method, *behavior, *n, *m_posterior, seed, out)?;
            reports_out(out, &reports)
        }
        EvaluateConfig::LendingPolicies {
            policies,
            n_worlds,
            search,
            bureau,
            government,
        } => {
            let Model::Lending(groups, params) = &p.model else { unreachable!("checked") };
            let mut extra = Vec::new();
            if let Some(t) = bureau {
                extra.push(credit_bureau_intervention(&p.graph, *t).map_err(invalid_params("evaluate.bureau"))?);
            }
            if let Some(b) = government {
                let (iv, clamp) =
                    government_intervention(&p.graph, groups, *b).map_err(invalid_params("evaluate.government"))?;
                out.notes.insert("government_clamped_fraction".into(), json!(clamp.clamped_fraction));
                extra.push(iv);
            }
            let extra = Intervention::Composite(extra);
            let mut rows = Vec::new();
            let mut reports = Vec::new();
            for pc in policies {
                let policy = match pc.criterion {
                    Criterion::Manual => ThresholdPolicy::manual(pc.tau.expect("checked"), pc.gamma.unwrap_or(params.gamma))
                        .clamped(params.score_bounds),
                    c => {
                        let mut found = compute_thresholds(c, groups, params, search)
                            .map_err(Failure::engine(format!("{c} thresholds")))?;
                        if let Some(g) = pc.gamma {
                            found.gamma = g;
                        }
                        found
                    }
                };
                let ev = evaluate_lending_policy(&p.graph, &policy, &extra, *n_worlds, seed)
                    .map_err(Failure::engine(format!("evaluating {} policy", policy.criterion)))?;
                let stat = |r: &EvaluationReport| (r.mean, r.std_error);
                rows.push(PolicyRow {
                    criterion: policy.criterion,
                    tau: policy.tau,
                    utility: stat(ev.utility()),
                    delta: [stat(ev.delta(0)), stat(ev.delta(1))],
                });
                reports.extend(ev.reports);
            }
            out.add("policies.csv", |b| write_policy_rows_csv(&rows, b))?;
            reports_out(out, &reports)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn bandit_policies(
    graph: &ScmGraph,
    params: &BanditParams,
    rules: &[PolicyRule],
    method: Method,
    behavior: Option<PolicyRule>,
    n: usize,
    m_posterior: usize,
    seed: u64,
    out: &mut Outputs,
) -> Result<Vec<EvaluationReport>, Failure> {
    let q = Query::node("O");
    if method == Method::Mb {
        return rules
            .iter()
            .map(|&rule| {
                let policy = make_policy(rule, false, params);
                value_model_based(graph, &policy.intervention(), &q, n, seed)
                    .map(|r| r.with_meta("policy", &policy.name).with_meta("seed", seed))
                    .map_err(Failure::engine(format!("evaluating {}", policy.name)))
            })
            .collect();
    }
    let b = make_policy(behavior.expect("checked"), false, params);
    let factual = b.intervention().apply(graph).map_err(Failure::engine("applying the behavior policy"))?;
    let logs = generate_logs(&factual, &b, None, n, derive_seed(seed, "logs", &[]))
        .map_err(Failure::engine("generating logs"))?;
    out.add("logs.jsonl", |buf| logs.write_jsonl(buf))?;
    rules
        .iter()
        .enumerate()
        .map(|(k, &rule)| {
            let target = make_policy(rule, false, params);
            let r = match method {
                Method::Is => value_importance_sampling(&logs, &target, &q),
                _ => value_counterfactual(
                    &factual,
                    &logs,
                    &target.intervention(),
                    &q,
                    m_posterior,
                    derive_seed(seed, "cf", &[k as u64]),
                ),
            };
            r.map(|r| {
                r.with_meta("policy", &target.name)
                    .with_meta("behavior", &b.name)
                    .with_meta("seed", seed)
            })
            .map_err(Failure::engine(format!("evaluating {}", target.name)))
        })
        .collect()
}

fn sweep(s: &SweepConfig, seed: u64, p: &Prepared, out: &mut Outputs) -> Result<(), Failure> {
    match (s, &p.model) {
        (SweepConfig::BanditOpe { protocol, settings }, _) => {
            let cmp = compare_ope_methods(*protocol, settings, seed).map_err(Failure::engine("OPE comparison"))?;
            out.add("errors.csv", |b| write_error_csv(&cmp.rows, b))?;
            let mut mae = String::from("method,mae,se\n");
            for (m, (v, se)) in &cmp.mae {
                mae.push_str(&format!("{m},{v},{se}\n"));
            }
            out.files.insert("mae.csv".into(), mae.into_bytes());
        }
        (SweepConfig::LendingBureau { settings }, Model::Lending(groups, params)) => {
            let r = bureau_experiment(groups, params, settings, seed).map_err(Failure::engine("bureau experiment"))?;
            out.add("surface.csv", |b| write_policy_rows_csv(&r.surface, b))?;
            out.add("bureau_sensitivity.csv", |b| write_bureau_sensitivity_csv(&r.criteria, b))?;
        }
        (
            SweepConfig::LendingRobustness {
                steps,
                variants,
                n_worlds,
                search,
            },
            Model::Lending(groups, params),
        ) => {
            let rows = robustness_sweep(groups, params, steps, variants, search, *n_worlds, seed)
                .map_err(Failure::engine("robustness sweep"))?;
            out.add("robustness.csv", |b| write_robustness_csv(&rows, b))?;
        }
        _ => unreachable!("checked"),
    }
    Ok(())
}
