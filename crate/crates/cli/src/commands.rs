use std::collections::{BTreeMap, BTreeSet};

use log::info;
use serde_json::{json, Value};
use taxrewire_core::corpus::split_indices;
use taxrewire_core::learner::{fit, train_flat, train_topdown, CChoice};
use taxrewire_core::metrics::rare_improvement;
use taxrewire_core::rewire::{rewhier, RewireOptions};
use taxrewire_core::simgraph::curve_csv;
use taxrewire_core::synth::{gen_planted, sibling_groups, PlantConfig};
use taxrewire_core::{
    CostVector, Method, MetricsReport, ModelSet, NodeId, RewireLog, RewireOp, SimilarPairSet,
    Taxonomy, TrainOptions,
};

use crate::error::{CliError, CliResult};
use crate::pipeline::*;
use crate::provenance::Run;
use crate::{
    BenchArgs, EvalHierarchy, EvaluateArgs, MacroOver, PredictArgs, RewireArgs, SimilarityArgs,
    TrainArgs,
};

pub fn similarity(a: &SimilarityArgs) -> CliResult<()> {
    let mut run = Run::start("similarity", a, &a.out)?;
    let h = parse_taxonomy(&run.read("hierarchy", &a.hierarchy)?, &a.hierarchy)?;
    let d = parse_dataset(&run.read("data", &a.data)?, &a.data)?;
    let scores = pair_scores(&d, &h, !a.no_tfidf)?;
    let (s, knee) = select(&scores, &a.select)?;

    let prov = run.summary();
    run.write("similarity_curve.csv", &curve_csv(&scores))?;
    run.write("pairs.txt", &(comment_header(&prov) + &s.to_text()))?;
    let threshold = json!({
        "pairs_scored": scores.len(),
        "knee": knee_json(knee),
        "suggested_tau": knee.map(|k| k.score),
        "selection": selection_label(&a.select),
        "selected": s.len(),
        "provenance": serde_json::from_str::<Value>(&prov).expect("json"),
    });
    run.write("threshold.json", &pretty(&threshold))?;
    if let Some(k) = knee {
        println!("knee at rank {} (score {}); {} pairs selected", k.rank, k.score, s.len());
    }
    run.finish()
}

fn op_counts(log: &RewireLog) -> Value {
    json!({
        "node_create": log.count(|o| matches!(o, RewireOp::NodeCreate { .. })),
        "pc_rewire": log.count(|o| matches!(o, RewireOp::PcRewire { .. })),
        "node_delete": log.count(|o| matches!(o, RewireOp::NodeDelete { .. })),
        "collapse": log.count(|o| matches!(o, RewireOp::Collapse { .. })),
    })
}

pub fn rewire(a: &RewireArgs) -> CliResult<()> {
    let mut run = Run::start("rewire", a, &a.out)?;
    let h = parse_taxonomy(&run.read("hierarchy", &a.hierarchy)?, &a.hierarchy)?;
    let s = match (&a.pairs, &a.data) {
        (Some(p), _) => {
            if a.select.tau.is_some() || a.select.top_k.is_some() || a.select.auto_tau {
                return Err(CliError::usage("threshold flags do not apply to --pairs"));
            }
            SimilarPairSet::parse(&run.read("pairs", p)?).map_err(CliError::in_file(p))?
        }
        (None, Some(dp)) => {
            let d = parse_dataset(&run.read("data", dp)?, dp)?;
            let scores = pair_scores(&d, &h, !a.no_tfidf)?;
            let (s, knee) = select(&scores, &a.select)?;
            run.note("knee", knee_json(knee));
            s
        }
        (None, None) => return Err(CliError::usage("give --data or --pairs")),
    };
    let opts = RewireOptions {
        collapse_chains: a.collapse_chains,
    };
    let (hm, log) = rewhier(&h, &s, opts)?;

    let prov = comment_header(&run.summary());
    run.write("pairs.txt", &(prov.clone() + &s.to_text()))?;
    run.write("hierarchy_modified.txt", &(prov.clone() + &hm.to_edge_text()))?;
    run.write("rewire_log.jsonl", &(prov + &log.to_jsonl()))?;
    let counts = op_counts(&log);
    println!(
        "{} pairs, {} nodes -> {} nodes, operations {counts}",
        s.len(),
        h.len(),
        hm.len()
    );
    run.note("operations", counts);
    run.note("fingerprint", json!(hm.fingerprint()));
    run.finish()
}

fn train_options(a: &crate::TrainOpts) -> CliResult<(CChoice, TrainOptions)> {
    let opts = TrainOptions {
        c: a.c.c.unwrap_or(1.0),
        tol: a.tol,
        max_iter: a.max_iter,
        bias: a.bias,
    };
    let choice = match &a.c.grid {
        Some(g) => CChoice::Grid {
            grid: parse_grid(g)?,
            ratio: a.split,
            seed: a.seed,
            per_node: a.per_node_c,
        },
        None => CChoice::Fixed(opts.c),
    };
    Ok((choice, opts))
}

pub fn train(a: &TrainArgs) -> CliResult<()> {
    let mut run = Run::start("train", a, &a.out)?;
    let h = parse_taxonomy(&run.read("hierarchy", &a.hierarchy)?, &a.hierarchy)?;
    let d = parse_dataset(&run.read("data", &a.data)?, &a.data)?;
    let costs = match &a.train.cost_file {
        Some(p) => Some(CostVector::parse(&run.read("costs", p)?).map_err(CliError::in_file(p))?),
        None => None,
    };
    let (choice, opts) = train_options(&a.train)?;
    let method: Method = a.train.method.into();
    let (mut models, report) = fit(
        &h,
        method,
        &d,
        &choice,
        !a.train.no_tfidf,
        &opts,
        costs.as_ref(),
    )?;
    models.meta.insert("seed".into(), a.train.seed.to_string());
    models.meta.insert("provenance".into(), run.summary());
    run.write("model.txt", &models.to_text())?;

    let unconverged: Vec<NodeId> = models
        .models
        .values()
        .filter(|m| !m.converged)
        .map(|m| m.node)
        .collect();
    run.note("c", json!(report.c));
    if let Some(t) = &report.tuning {
        run.note("tuning", json!(t.scores));
    }
    if let Some(pn) = &report.per_node_c {
        run.note("per_node_c", json!(pn));
    }
    run.note("unconverged_nodes", json!(unconverged));
    run.note("models", json!(models.models.len()));
    match report.c {
        Some(c) => println!("{} models trained with C = {c}", models.models.len()),
        None => println!("{} models trained with per-node C", models.models.len()),
    }
    run.finish()
}

pub fn predict(a: &PredictArgs) -> CliResult<()> {
    let mut run = Run::start("predict", a, &a.out)?;
    let models = ModelSet::parse(&run.read("model", &a.model)?).map_err(CliError::in_file(&a.model))?;
    let h = match &a.hierarchy {
        Some(p) => Some(parse_taxonomy(&run.read("hierarchy", p)?, p)?),
        None => None,
    };
    let d = parse_dataset(&run.read("data", &a.data)?, &a.data)?;
    let labels = predict_all(&models, h.as_ref(), &d)?;
    run.write("predictions.txt", &predictions_text(&labels))?;
    info!("{} predictions written", labels.len());
    run.note("instances", json!(labels.len()));
    run.finish()
}

pub fn evaluate(a: &EvaluateArgs) -> CliResult<()> {
    let mut run = Run::start("evaluate", a, &a.out)?;
    let d = parse_dataset(&run.read("data", &a.data)?, &a.data)?;
    let preds = parse_predictions(&run.read("predictions", &a.predictions)?, &a.predictions, d.len())?;
    let original = parse_taxonomy(&run.read("hierarchy", &a.hierarchy)?, &a.hierarchy)?;
    let modified = match &a.modified {
        Some(p) => Some(parse_taxonomy(&run.read("modified", p)?, p)?),
        None => None,
    };
    let eval_h: &Taxonomy = match a.eval_hierarchy {
        EvalHierarchy::Original => &original,
        EvalHierarchy::Modified => modified
            .as_ref()
            .ok_or_else(|| CliError::usage("--eval-hierarchy modified needs --modified"))?,
    };
    let counts = match &a.train_data {
        Some(p) => parse_dataset(&run.read("train_data", p)?, p)?.label_counts(),
        None => BTreeMap::new(),
    };
    let macro_classes: Option<BTreeSet<NodeId>> = match a.macro_over {
        MacroOver::Test => None,
        MacroOver::Train => {
            if counts.is_empty() {
                return Err(CliError::usage("--macro-over train needs --train-data"));
            }
            Some(counts.keys().copied().collect())
        }
    };
    let pairs = eval_pairs(&d, &preds);
    let mut report = MetricsReport::compute(
        &pairs,
        eval_h,
        macro_classes.as_ref(),
        &counts,
        a.rare_threshold,
    )?;
    if let Some(b) = &a.baseline {
        let other = parse_predictions(&run.read("baseline", b)?, b, d.len())?;
        report.rare_improvement_pct = Some(rare_improvement(
            &pairs,
            &eval_pairs(&d, &other),
            &counts,
            a.rare_threshold,
        ));
    }

    let mut v = serde_json::to_value(&report).expect("report serializes");
    v["eval_hierarchy"] = json!(a.eval_hierarchy);
    v["provenance"] = serde_json::from_str(&run.summary()).expect("json");
    run.write("report.json", &pretty(&v))?;
    run.write("per_class.csv", &report.per_class_csv())?;
    println!(
        "micro-F1 {:.4}  macro-F1 {:.4}  hier-F1 {:.4}  (n = {})",
        report.micro_f1, report.macro_f1, report.hier_f1, report.n
    );
    run.finish()
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("json") + "\n"
}

fn metrics_json(r: &MetricsReport) -> Value {
    json!({ "micro_f1": r.micro_f1, "macro_f1": r.macro_f1, "hier_f1": r.hier_f1 })
}

/// Synthetic end-to-end run: generate, score pairs, rewire the corrupted
/// tree, then train and test top-down models on the corrupted, rewired and
/// true trees plus a flat baseline.
pub fn bench(a: &BenchArgs) -> CliResult<()> {
    let mut run = Run::start("bench", a, &a.out)?;
    let cfg = PlantConfig {
        n_internal: 0,
        n_leaves: a.leaves,
        fanout: a.fanout,
        dims: a.dims,
        instances_per_leaf: a.instances,
        instances_per_leaf_max: a.instances_max,
        n_misplaced: a.misplaced,
        noise: a.noise,
        seed: a.seed,
    };
    let p = gen_planted(&cfg)?;
    let (tr, te) = split_indices(p.data.len(), a.test_split, a.seed)?;
    let (train, test) = (p.data.subset(&tr), p.data.subset(&te));

    run.write("h_true.txt", &p.truth.to_edge_text())?;
    run.write("h_corrupted.txt", &p.corrupted.to_edge_text())?;
    run.write("train.svm", &train.to_svmlight())?;
    run.write("test.svm", &test.to_svmlight())?;
    run.write(
        "misplaced.json",
        &pretty(&serde_json::to_value(&p.misplaced).expect("json")),
    )?;

    let scores = pair_scores(&train, &p.corrupted, false)?;
    let (s, knee) = select(&scores, &a.select)?;
    let (hm, log) = rewhier(&p.corrupted, &s, RewireOptions::default())?;
    run.write("similarity_curve.csv", &curve_csv(&scores))?;
    run.write("pairs.txt", &s.to_text())?;
    run.write("hierarchy_modified.txt", &hm.to_edge_text())?;
    run.write("rewire_log.jsonl", &log.to_jsonl())?;

    let recovered = sibling_groups(&hm) == sibling_groups(&p.truth);
    let restored: Vec<bool> = p
        .misplaced
        .iter()
        .map(|m| {
            let now: BTreeSet<NodeId> = hm.leaf_siblings(m.leaf).unwrap_or_default().into_iter().collect();
            p.truth
                .leaf_siblings(m.leaf)
                .map(|t| t.iter().all(|x| now.contains(x)))
                .unwrap_or(false)
        })
        .collect();

    let opts = TrainOptions {
        c: a.c,
        ..Default::default()
    };
    let counts = train.label_counts();
    let mut systems = BTreeMap::new();
    let mut pairs_of = BTreeMap::new();
    for (name, tree) in [("corrupted", &p.corrupted), ("modified", &hm), ("true", &p.truth)] {
        let models = train_topdown(tree, &train, &opts, None)?;
        let preds = predict_all(&models, Some(tree), &test)?;
        run.write(&format!("predictions_{name}.txt"), &predictions_text(&preds))?;
        let pairs = eval_pairs(&test, &preds);
        let r = MetricsReport::compute(&pairs, &p.truth, None, &counts, a.rare_threshold)?;
        systems.insert(name, metrics_json(&r));
        pairs_of.insert(name, pairs);
    }
    let flat = train_flat(p.truth.leaves(), &train, &opts, None)?;
    let preds = predict_all(&flat, None, &test)?;
    run.write("predictions_flat.txt", &predictions_text(&preds))?;
    let flat_pairs = eval_pairs(&test, &preds);
    let r = MetricsReport::compute(&flat_pairs, &p.truth, None, &counts, a.rare_threshold)?;
    systems.insert("flat", metrics_json(&r));

    let summary = json!({
        "config": run.config(),
        "train_instances": train.len(),
        "test_instances": test.len(),
        "pairs_scored": scores.len(),
        "knee": knee_json(knee),
        "selection": selection_label(&a.select),
        "selected_pairs": s.len(),
        "operations": op_counts(&log),
        "sibling_groups_recovered": recovered,
        "misplaced_restored": restored,
        "hier_f1_hierarchy": "true",
        "systems": systems,
        "rare_improvement_pct": rare_improvement(
            &pairs_of["modified"],
            &pairs_of["corrupted"],
            &counts,
            a.rare_threshold,
        ),
    });
    run.write("summary.json", &pretty(&summary))?;
    println!(
        "recovered {recovered}; top-down micro-F1 corrupted {:.4} modified {:.4} true {:.4}",
        systems["corrupted"]["micro_f1"].as_f64().unwrap_or(f64::NAN),
        systems["modified"]["micro_f1"].as_f64().unwrap_or(f64::NAN),
        systems["true"]["micro_f1"].as_f64().unwrap_or(f64::NAN),
    );
    run.finish()
}
