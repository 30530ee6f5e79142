use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use poolrank::candidates::{
    identical_pool_fraction, load_dataset, merge_pools, save_dataset, score_native, unique_score_count, Dataset,
    LoadOptions,
};
use poolrank::evaluation::{
    check_methods, expert_utilization, first_candidate_scores, mean_selected_scores, metric_correlation_report,
    novelty_report, oracle_scores, order_by_sums, overlap_stats, recall_at_k, rerank_dataset, selected_pairs,
    significance_report, subsample_curve, RankingOutcome,
};
use poolrank::features::{FeatureMode, FeatureStore, LEXICAL_DIM};
use poolrank::metrics::{best_per_metric, mean_relative_gain, MetricRegistry};
use poolrank::moe::{load_model, save_model, write_model, RerankerModel};
use poolrank::report::{Report, Value};
use poolrank::training::{run_half_split_protocol, train, SplitManifest, TrainOutcome};
use poolrank::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Creates the output directory and snapshots the resolved configuration.
fn prepare_out_dir(cfg: &RunConfig) -> Result<()> {
    create_dir(&cfg.out_dir)?;
    write_file(&cfg.out_dir.join("resolved_config.toml"), cfg.to_toml())
}

fn required<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::InvalidArgument(format!("no {what} file given (flag or config)")))
}

fn build_features(cfg: &RunConfig, dataset: &Dataset, path: Option<&Path>) -> Result<FeatureStore> {
    FeatureStore::build(dataset, cfg.features.mode, &cfg.features.lexical, path)
}

fn input_dim(cfg: &RunConfig, store: &FeatureStore) -> usize {
    match cfg.features.mode {
        FeatureMode::Lexical => LEXICAL_DIM,
        _ => store.dim(),
    }
}

pub fn score(cfg: &RunConfig, input: &Path, requested: &[String], overwrite: bool, output: Option<&Path>) -> Result<()> {
    let registered = cfg.registry()?;
    let names: Vec<String> = if requested.is_empty() {
        registered.iter().filter(|m| m.native().is_some()).map(|m| m.to_string()).collect()
    } else {
        requested.to_vec()
    };
    for name in &names {
        let id = registered.resolve(name)?;
        if id.native().is_none() {
            return Err(Error::InvalidArgument(format!(
                "metric {name:?} is external; its scores must be supplied in the dataset"
            )));
        }
    }
    let registry = MetricRegistry::from_names(&names)?;
    let mut dataset = load_dataset(input, &LoadOptions::new(registry.clone()).strict(cfg.strict))?;
    if overwrite {
        score_native(&mut dataset, &registry, true);
    }
    prepare_out_dir(cfg)?;
    let out = output.map(Path::to_path_buf).unwrap_or_else(|| cfg.out_dir.join("scored.jsonl"));
    save_dataset(&out, &dataset)?;
    log::info!("scored {} examples into {}", dataset.len(), out.display());
    Ok(())
}

fn metric_row(metrics: &[String], values: &BTreeMap<String, f64>) -> Vec<Value> {
    metrics
        .iter()
        .map(|m| values.get(m).map_or(Value::Missing, |&v| Value::metric(m, v)))
        .collect()
}

pub fn stats(cfg: &RunConfig, input: &Path) -> Result<()> {
    let dataset = load_dataset(input, &cfg.load_options()?)?;
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let metrics = cfg.metric_ids();
    let names = &cfg.metrics.names;
    let methods = dataset.methods();

    let mut oracle = Report::new("oracle", names.iter().cloned());
    let mut unique = Report::new("unique_scores", names.iter().cloned());
    let mut identical = Report::new("identical_fraction", names.iter().cloned());
    let mut correlation = Report::new("correlation", names.iter().cloned());
    unique.note("mean number of distinct scores per pool");
    identical.note("fraction of pools whose candidates all share one score");
    for method in &methods {
        let subset = Dataset::new(
            dataset
                .examples
                .iter()
                .filter(|ex| ex.count_method(method) > 0)
                .cloned()
                .collect(),
        );
        oracle.row(method.as_str(), metric_row(names, &oracle_scores(&subset, &metrics, &[method])?));
        let mut uniq = Vec::new();
        let mut ident = Vec::new();
        for m in names {
            let mut total = 0usize;
            for ex in &subset.examples {
                total += unique_score_count(&merge_pools(ex, &[method])?.scores(m)?);
            }
            uniq.push(Value::Raw(total as f64 / subset.len() as f64));
            ident.push(Value::Raw(identical_pool_fraction(&dataset, m, method)?));
        }
        unique.row(method.as_str(), uniq);
        identical.row(method.as_str(), ident);
        match metric_correlation_report(&dataset, &metrics, method) {
            Ok(matrix) => {
                for (m, row) in names.iter().zip(matrix) {
                    correlation.row(format!("{method}/{m}"), row.into_iter().map(Value::Raw).collect());
                }
            }
            Err(e @ Error::UndefinedCorrelation) => {
                correlation.note(format!("{method}: {e}"));
            }
            Err(e) => return Err(e),
        }
    }
    if methods.len() > 1 {
        oracle.row("all methods", metric_row(names, &oracle_scores(&dataset, &metrics, &methods)?));
    }
    prepare_out_dir(cfg)?;
    for r in [&oracle, &unique, &identical, &correlation] {
        r.write(&cfg.out_dir)?;
    }
    Ok(())
}

pub fn split(cfg: &RunConfig, input: &Path) -> Result<()> {
    let dataset = load_dataset(input, &cfg.load_options()?)?;
    let (mut manifest, a, b) = SplitManifest::split(&dataset, cfg.seed)?;
    manifest.config_hash = Some(cfg.train_config().hash());
    prepare_out_dir(cfg)?;
    save_dataset(cfg.out_dir.join("half_a.jsonl"), &a)?;
    save_dataset(cfg.out_dir.join("half_b.jsonl"), &b)?;
    write_file(
        &cfg.out_dir.join("split_manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )
}

pub struct HalfSplitInputs<'a> {
    pub manifest: &'a Path,
    pub half_a: &'a Path,
    pub half_b: &'a Path,
}

#[derive(Serialize)]
struct CheckpointRecord {
    epoch: usize,
    validation_score: f64,
    mean_loss: Option<f64>,
    sha256: String,
}

#[derive(Serialize)]
struct TrainManifest {
    config_hash: String,
    selected_epoch: usize,
    checkpoints: Vec<CheckpointRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    split: Option<SplitManifest>,
}

pub fn train_cmd(cfg: &RunConfig, half_split: Option<HalfSplitInputs>) -> Result<()> {
    let options = cfg.load_options()?.with_methods(&cfg.methods.train);
    let val_path = required(&cfg.data.val, "validation")?;
    let val = load_dataset(val_path, &cfg.load_options()?)?;
    let train_config = cfg.train_config();
    let (outcome, split): (TrainOutcome, Option<SplitManifest>) = match half_split {
        Some(h) => {
            let text = fs::read_to_string(h.manifest).map_err(|e| Error::io(h.manifest, e))?;
            let manifest: SplitManifest = serde_json::from_str(&text)
                .map_err(|e| Error::Provenance(format!("{}: {e}", h.manifest.display())))?;
            let a = load_dataset(h.half_a, &options)?;
            let b = load_dataset(h.half_b, &options)?;
            if cfg.features.mode == FeatureMode::Precomputed {
                return Err(Error::InvalidArgument(
                    "the half-split protocol needs lexical or inline features".into(),
                ));
            }
            let featurize = |d: &Dataset| build_features(cfg, d, None);
            let dim = input_dim(cfg, &featurize(&val)?);
            let (_, outcome) =
                run_half_split_protocol(&manifest, &a, &b, &val, featurize, cfg.model_config(dim), &train_config)?;
            (outcome, Some(manifest))
        }
        None => {
            let train_path = required(&cfg.data.train, "training")?;
            let train_set = load_dataset(train_path, &options)?;
            let train_features = build_features(cfg, &train_set, cfg.features.train_path.as_deref())?;
            let val_features = build_features(cfg, &val, cfg.features.val_path.as_deref())?;
            let dim = input_dim(cfg, &train_features);
            let outcome = train(
                &train_set,
                &train_features,
                &val,
                &val_features,
                cfg.model_config(dim),
                &train_config,
            )?;
            (outcome, None)
        }
    };

    let mut records = Vec::new();
    for (i, c) in outcome.checkpoints.iter().enumerate() {
        let bytes = write_model(&c.model)?;
        records.push(CheckpointRecord {
            epoch: c.epoch,
            validation_score: c.validation_score,
            mean_loss: outcome.epoch_losses.get(i).copied(),
            sha256: hex(&Sha256::digest(&bytes)),
        });
    }
    let best = outcome.best_checkpoint();
    let manifest = TrainManifest {
        config_hash: train_config.hash(),
        selected_epoch: best.epoch,
        checkpoints: records,
        split,
    };
    prepare_out_dir(cfg)?;
    save_model(cfg.out_dir.join("model.bin"), &best.model)?;
    write_file(
        &cfg.out_dir.join("checkpoints.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    log::info!(
        "selected epoch {} with validation score {:.5}",
        best.epoch,
        best.validation_score
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SelectionHeader {
    kind: String,
    model_sha256: String,
    metrics: Vec<String>,
    methods: Vec<String>,
    examples: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SelectionRecord {
    kind: String,
    id: String,
    selected: usize,
    text: String,
    pool: Vec<usize>,
    prob_sums: Vec<f64>,
}

fn load_checked_model(cfg: &RunConfig, path: &Path, methods: &[String]) -> Result<RerankerModel> {
    let model = load_model(path)?;
    model.check_metrics(&cfg.metrics.names)?;
    check_methods(&model, methods)?;
    Ok(model)
}

pub fn rerank_cmd(
    cfg: &RunConfig,
    model_path: &Path,
    input: &Path,
    features: Option<&Path>,
    output: Option<&Path>,
) -> Result<()> {
    let methods = cfg.test_methods().to_vec();
    let model = load_checked_model(cfg, model_path, &methods)?;
    let dataset = load_dataset(input, &cfg.load_options()?)?;
    let store = build_features(cfg, &dataset, features.or(cfg.features.test_path.as_deref()))?;
    if !dataset.is_empty() {
        store.check_dim(model.config.input_dim)?;
    }
    let outcomes = rerank_dataset(&model, &dataset, &methods, &store)?;

    let mut body = Vec::new();
    let header = SelectionHeader {
        kind: "header".into(),
        model_sha256: hex(&Sha256::digest(write_model(&model)?)),
        metrics: model.metrics.clone(),
        methods: methods.clone(),
        examples: dataset.len(),
    };
    serde_json::to_writer(&mut body, &header)?;
    body.push(b'\n');
    for (o, ex) in outcomes.iter().zip(&dataset.examples) {
        let record = SelectionRecord {
            kind: "selection".into(),
            id: o.id.clone(),
            selected: o.selected,
            text: ex.candidates[o.selected].text.clone(),
            pool: o.pool.clone(),
            prob_sums: o.prob_sums.clone(),
        };
        serde_json::to_writer(&mut body, &record)?;
        body.push(b'\n');
    }
    prepare_out_dir(cfg)?;
    let out = output.map(Path::to_path_buf).unwrap_or_else(|| cfg.out_dir.join("selections.jsonl"));
    let mut f = fs::File::create(&out).map_err(|e| Error::io(&out, e))?;
    f.write_all(&body).map_err(|e| Error::io(&out, e))
}

fn read_selections(path: &Path, dataset: &Dataset) -> Result<(Vec<String>, Vec<RankingOutcome>)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let malformed = |line: usize, message: String| Error::MalformedLine {
        path: path.to_path_buf(),
        line,
        message,
    };
    let (_, first) = lines.next().ok_or_else(|| malformed(1, "missing header".into()))?;
    let first = first.map_err(|e| Error::io(path, e))?;
    let header: SelectionHeader = serde_json::from_str(&first).map_err(|e| malformed(1, e.to_string()))?;
    if header.kind != "header" {
        return Err(malformed(1, "first line is not a header".into()));
    }
    let mut by_id: HashMap<String, SelectionRecord> = HashMap::new();
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: SelectionRecord = serde_json::from_str(&line).map_err(|e| malformed(i + 1, e.to_string()))?;
        if r.pool.len() != r.prob_sums.len() || !r.pool.contains(&r.selected) {
            return Err(malformed(i + 1, "inconsistent selection record".into()));
        }
        if by_id.insert(r.id.clone(), r).is_some() {
            return Err(malformed(i + 1, "duplicate id".into()));
        }
    }
    if by_id.len() != dataset.len() {
        return Err(Error::LengthMismatch {
            left: by_id.len(),
            right: dataset.len(),
        });
    }
    let mut outcomes = Vec::with_capacity(dataset.len());
    for ex in &dataset.examples {
        let r = by_id
            .remove(&ex.id)
            .ok_or_else(|| Error::InvalidArgument(format!("no selection for example {:?}", ex.id)))?;
        if r.pool.iter().any(|&i| i >= ex.candidates.len()) {
            return Err(Error::InvalidArgument(format!("selection for {:?} points past its pool", ex.id)));
        }
        let ranking = order_by_sums(&r.prob_sums, &r.pool).into_iter().map(|p| r.pool[p]).collect();
        outcomes.push(RankingOutcome {
            id: r.id,
            ranking,
            selected: r.selected,
            scores: ex.candidates[r.selected].scores.clone(),
            pool: r.pool,
            prob_sums: r.prob_sums,
            gates: Vec::new(),
        });
    }
    Ok((header.methods, outcomes))
}

pub fn eval_cmd(
    cfg: &RunConfig,
    selections: &Path,
    input: &Path,
    model_path: Option<&Path>,
    features: Option<&Path>,
) -> Result<()> {
    let dataset = load_dataset(input, &cfg.load_options()?)?;
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let (methods, outcomes) = read_selections(selections, &dataset)?;
    let metrics = cfg.metric_ids();
    let names = &cfg.metrics.names;
    let model = model_path.map(|p| load_checked_model(cfg, p, &methods)).transpose()?;
    let mut reports = Vec::new();

    let system = mean_selected_scores(&outcomes, &metrics)?;
    let mut table = Report::new("metrics", names.iter().cloned());
    table.row("reranker", metric_row(names, &system));
    table.row("oracle", metric_row(names, &oracle_scores(&dataset, &metrics, &methods)?));
    let mut baseline_means = Vec::new();
    let mut baseline_scores: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for method in &cfg.methods.baselines {
        let mut means = BTreeMap::new();
        for m in names {
            let s = first_candidate_scores(&dataset, m, method)?;
            means.insert(m.clone(), s.iter().sum::<f64>() / s.len() as f64);
            baseline_scores.entry(m.clone()).or_default().insert(method.clone(), s);
        }
        table.row(format!("{method} (first candidate)"), metric_row(names, &means));
        baseline_means.push(means);
    }
    reports.push(table);

    let mut gain = Report::new("gain", ["gain_percent"]);
    let mut significance = Report::new(
        "significance",
        cfg.methods.baselines.iter().cloned().chain(["significant".to_string()]),
    );
    if cfg.methods.baselines.is_empty() {
        gain.note("no baselines configured; gain omitted");
        significance.note("no baselines configured; significance omitted");
    } else {
        let best = best_per_metric(&baseline_means);
        gain.row("reranker", vec![Value::Raw(mean_relative_gain(&system, &best)?)]);
        significance.note(format!("paired t-test, alpha = {}", cfg.eval.alpha));
        for m in names {
            let ours: Vec<f64> = outcomes
                .iter()
                .map(|o| o.scores.get(m).expect("loader guarantees every metric"))
                .collect();
            let sig = significance_report(&ours, &baseline_scores[m], cfg.eval.alpha)?;
            let mut row: Vec<Value> = sig.p_values.values().map(|&p| Value::PValue(p)).collect();
            row.push(Value::Text(if sig.significant { "yes" } else { "no" }.into()));
            significance.row(m.as_str(), row);
        }
    }
    reports.push(gain);
    reports.push(significance);

    let max_pool = outcomes.iter().map(|o| o.pool.len()).max().unwrap_or(1);
    let max_k = if cfg.eval.max_k == 0 { max_pool } else { cfg.eval.max_k };
    let curve = recall_at_k(&outcomes, &dataset, &metrics, &methods, max_k)?;
    let mut recall = Report::new("recall", ["model", "random", "base_order"]);
    for (i, k) in curve.ks.iter().enumerate() {
        recall.row(
            format!("k={k}"),
            vec![
                Value::Raw(curve.model[i]),
                Value::Raw(curve.random[i]),
                Value::Raw(curve.base_order[i]),
            ],
        );
    }
    reports.push(recall);

    let ns = &cfg.eval.novelty_ns;
    let mut novelty = Report::new("novelty", ns.iter().map(|n| format!("n{n}")));
    let mut add_novelty = |label: &str, pairs: Vec<(&str, &str)>| -> Result<()> {
        let entries = novelty_report(&pairs, ns)?;
        let skipped: Vec<String> = entries
            .iter()
            .filter(|e| e.skipped > 0)
            .map(|e| format!("n{}: {}", e.n, e.skipped))
            .collect();
        if !skipped.is_empty() {
            novelty.note(format!("{label}: skipped short summaries ({})", skipped.join(", ")));
        }
        novelty.row(label, entries.iter().map(|e| e.mean.map_or(Value::Missing, Value::Score)).collect());
        Ok(())
    };
    add_novelty("reranker", selected_pairs(&outcomes, &dataset))?;
    add_novelty(
        "reference",
        dataset.examples.iter().map(|e| (e.source.as_str(), e.reference.as_str())).collect(),
    )?;
    for method in &cfg.methods.baselines {
        let pairs = dataset
            .examples
            .iter()
            .map(|e| {
                let p = merge_pools(e, &[method])?;
                Ok((e.source.as_str(), p.entries[0].candidate.text.as_str()))
            })
            .collect::<Result<Vec<_>>>()?;
        add_novelty(method, pairs)?;
    }
    reports.push(novelty);

    let mut overlap = Report::new("overlap", ["picks_base", "picks_best"]);
    match cfg.methods.base.as_deref().or(methods.first().map(String::as_str)) {
        Some(base) => {
            let s = overlap_stats(&outcomes, &dataset, &metrics, &methods, base)?;
            overlap.note(format!("base candidate: first {base} candidate"));
            overlap.row("reranker", vec![Value::Raw(s.picks_base), Value::Raw(s.picks_best)]);
        }
        None => {
            overlap.note("no base method; overlap omitted");
        }
    }
    reports.push(overlap);

    match &model {
        Some(model) => {
            let store = build_features(cfg, &dataset, features.or(cfg.features.test_path.as_deref()))?;
            let util = expert_utilization(model, &dataset, &methods, &store)?;
            let mut r = Report::new("utilization", (0..model.num_experts()).map(|i| format!("expert{i}")));
            for (m, row) in model.metrics.iter().zip(util) {
                r.row(m.as_str(), row.into_iter().map(Value::Raw).collect());
            }
            reports.push(r);
            if !cfg.eval.subsample_ks.is_empty() {
                let points = subsample_curve(
                    model,
                    &dataset,
                    &methods,
                    &store,
                    &metrics,
                    &cfg.eval.subsample_ks,
                    cfg.eval.subsample_trials,
                    cfg.seed,
                )?;
                let mut r = Report::new("subsample", names.iter().cloned());
                r.note(format!("{} trials per k", cfg.eval.subsample_trials));
                for p in points {
                    r.row(format!("k={}", p.k), metric_row(names, &p.means));
                }
                reports.push(r);
            }
        }
        None => {
            let mut r = Report::new("utilization", Vec::<String>::new());
            r.note("no model given; utilization and subsampling omitted");
            reports.push(r);
        }
    }

    prepare_out_dir(cfg)?;
    for r in &reports {
        r.write(&cfg.out_dir)?;
    }
    Ok(())
}
