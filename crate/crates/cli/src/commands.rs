use std::path::{Path, PathBuf};
use std::time::Instant;

use glrtml::cplfpa::adapt;
use glrtml::dataset::{generate_synthetic, load_csv, save_csv, LabeledInstance};
use glrtml::retrieval::{cosine_score_matrix, metrics, roc_curve, score_matrix, AtK, RetrievalRun};
use glrtml::trainer::{train, EpochRecord, Stage, TrainObserver};
use serde::Serialize;
use serde_json::json;

use crate::config::{Domain, Metric, RunConfig};
use crate::error::CliError;
use crate::model_file::ModelFile;

pub const ROLES: [&str; 3] = ["train", "query", "gallery"];

/// Resolved configuration plus the output directory of one invocation.
pub struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
}

impl Context {
    fn output(&self, name: &str) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(&self.out).map_err(|e| CliError::io(&self.out, e))?;
        Ok(self.out.join(name))
    }

    fn split_file(&self, domain: Domain, role: &str) -> PathBuf {
        split_path(&self.cfg.io.data_dir, domain, role)
    }

    fn load_split(&self, domain: Domain, role: &str) -> Result<Vec<LabeledInstance>, CliError> {
        Ok(load_csv(&self.split_file(domain, role))?)
    }
}

pub fn split_path(dir: &Path, domain: Domain, role: &str) -> PathBuf {
    dir.join(format!("{}_{role}.csv", domain.name()))
}

fn emit(record: serde_json::Value) {
    println!("{record}");
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), CliError> {
    let csv_err = |e: csv::Error| CliError::io(path, e.into());
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn cmd_gen(ctx: &Context) -> Result<(), CliError> {
    let data = generate_synthetic(&ctx.cfg.synth)?;
    for (domain, split) in [(Domain::Source, &data.source), (Domain::Target, &data.target)] {
        for (role, set) in ROLES.iter().zip([&split.train, &split.query, &split.gallery]) {
            let path = ctx.output(&format!("{}_{role}.csv", domain.name()))?;
            save_csv(set, &path)?;
            emit(json!({"event": "wrote", "path": path, "instances": set.len()}));
        }
    }
    Ok(())
}

/// Training log entry without wall-clock time, so the log file is
/// reproducible.
#[derive(Serialize)]
struct LogEntry {
    epoch: usize,
    stage: Stage,
    pair_loss: f64,
    id_loss: f64,
    total_loss: f64,
}

struct StdoutLog;

impl TrainObserver for StdoutLog {
    fn epoch_end(&mut self, r: &EpochRecord) {
        emit(json!({"event": "epoch", "record": r}));
    }
}

pub fn cmd_train(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let data = ctx.load_split(Domain::Source, "train")?;
    let start = Instant::now();
    let report = train(&data, &cfg.train, &cfg.glrt, &cfg.loss, &mut StdoutLog)?;
    let model = ModelFile::new(report.params, cfg.glrt, report.model);
    let model_path = ctx.output("model.json")?;
    model.write(&model_path)?;
    let log: Vec<LogEntry> = report
        .epochs
        .iter()
        .map(|r| LogEntry {
            epoch: r.epoch,
            stage: r.stage,
            pair_loss: r.pair_loss,
            id_loss: r.id_loss,
            total_loss: r.total_loss,
        })
        .collect();
    write_json(&ctx.output("train_log.json")?, &log)?;
    emit(json!({
        "event": "trained",
        "model": model_path,
        "epochs": log.len(),
        "total_ms": start.elapsed().as_secs_f64() * 1e3,
    }));
    Ok(())
}

pub fn cmd_adapt(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let model = ModelFile::read(&cfg.io.model)?;
    let mut target = ctx.load_split(Domain::Target, "query")?;
    target.extend(ctx.load_split(Domain::Target, "gallery")?);
    let inputs: Vec<&[f64]> = target.iter().map(|i| i.features.as_slice()).collect();
    let result = adapt(&model.embedder, &inputs, &cfg.adapt, &cfg.glrt)?;

    let adapted = ModelFile::new(model.embedder, cfg.glrt, result.model);
    let model_path = ctx.output("adapted_model.json")?;
    adapted.write(&model_path)?;
    let rows = target
        .iter()
        .zip(&result.labeling.assignments)
        .map(|(inst, c)| vec![inst.id.clone(), c.to_string()]);
    write_rows(&ctx.output("pseudo_labels.csv")?, &["id", "cluster"], rows)?;
    emit(json!({
        "event": "adapted",
        "model": model_path,
        "instances": target.len(),
        "clusters": result.labeling.k(),
        "positives_used": result.positives_used,
        "negatives_used": result.negatives_used,
        "timing": result.timing,
    }));
    Ok(())
}

struct Scored {
    query: Vec<LabeledInstance>,
    gallery: Vec<LabeledInstance>,
    scores: Vec<Vec<f64>>,
}

fn score_domain(ctx: &Context, metric: Metric) -> Result<Scored, CliError> {
    let model = ModelFile::read(&ctx.cfg.io.model)?;
    let domain = ctx.cfg.retrieval.domain;
    let query = ctx.load_split(domain, "query")?;
    let gallery = ctx.load_split(domain, "gallery")?;
    let embed = |set: &[LabeledInstance]| -> Result<Vec<Vec<f64>>, CliError> {
        let inputs: Vec<&[f64]> = set.iter().map(|i| i.features.as_slice()).collect();
        Ok(model.embedder.embed_all(&inputs)?)
    };
    let (q, g) = (embed(&query)?, embed(&gallery)?);
    let scores = match metric {
        Metric::Glrt => score_matrix(&model.hypothesis.scorer()?, &q, &g)?,
        Metric::Cosine => cosine_score_matrix(&q, &g),
    };
    Ok(Scored { query, gallery, scores })
}

fn labels(set: &[LabeledInstance]) -> Vec<i64> {
    set.iter().map(|i| i.label).collect()
}

#[derive(Serialize)]
struct EvalReport<'a> {
    metric: Metric,
    domain: Domain,
    map: f64,
    unanswerable: usize,
    recall_at_k: &'a [AtK],
    precision_at_k: &'a [AtK],
    per_query_ap: Vec<(String, Option<f64>)>,
}

pub fn cmd_eval(ctx: &Context) -> Result<(), CliError> {
    let metric = ctx.cfg.retrieval.metric;
    let s = score_domain(ctx, metric)?;
    let run = RetrievalRun::from_labels(
        s.scores,
        &labels(&s.query),
        &labels(&s.gallery),
        ctx.cfg.retrieval.k_list.clone(),
    )?;
    let m = metrics(&run);
    let report = EvalReport {
        metric,
        domain: ctx.cfg.retrieval.domain,
        map: m.map,
        unanswerable: m.unanswerable,
        recall_at_k: &m.recall_at_k,
        precision_at_k: &m.precision_at_k,
        per_query_ap: s.query.iter().map(|i| i.id.clone()).zip(m.per_query_ap.iter().copied()).collect(),
    };
    let path = ctx.output(&format!("metrics_{}.json", metric.name()))?;
    write_json(&path, &report)?;
    emit(json!({
        "event": "evaluated",
        "metric": metric,
        "map": m.map,
        "recall_at_k": m.recall_at_k,
        "precision_at_k": m.precision_at_k,
        "unanswerable": m.unanswerable,
        "report": path,
    }));
    Ok(())
}

pub fn cmd_score(ctx: &Context) -> Result<(), CliError> {
    let metric = ctx.cfg.retrieval.metric;
    let s = score_domain(ctx, metric)?;
    let rows = s.query.iter().zip(&s.scores).flat_map(|(q, row)| {
        s.gallery
            .iter()
            .zip(row)
            .map(move |(g, v)| vec![q.id.clone(), g.id.clone(), v.to_string()])
    });
    let path = ctx.output(&format!("scores_{}.csv", metric.name()))?;
    write_rows(&path, &["query_id", "gallery_id", "score"], rows)?;
    emit(json!({"event": "scored", "metric": metric, "pairs": s.query.len() * s.gallery.len(), "path": path}));
    Ok(())
}

pub fn cmd_roc(ctx: &Context) -> Result<(), CliError> {
    let metric = ctx.cfg.retrieval.metric;
    let s = score_domain(ctx, metric)?;
    let run = RetrievalRun::from_labels(s.scores, &labels(&s.query), &labels(&s.gallery), vec![1])?;
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for (row, rel) in run.scores.iter().zip(&run.relevance) {
        for (&v, &r) in row.iter().zip(rel) {
            if r {
                pos.push(v);
            } else {
                neg.push(v);
            }
        }
    }
    let roc = roc_curve(&pos, &neg, ctx.cfg.retrieval.roc_grid)?;
    let rows = (0..roc.thresholds.len()).map(|i| {
        vec![
            roc.thresholds[i].to_string(),
            roc.p_fa[i].to_string(),
            roc.p_d[i].to_string(),
        ]
    });
    let path = ctx.output(&format!("roc_{}.csv", metric.name()))?;
    write_rows(&path, &["threshold", "p_fa", "p_d"], rows)?;
    emit(json!({
        "event": "roc",
        "metric": metric,
        "positives": pos.len(),
        "negatives": neg.len(),
        "auc": roc.auc(),
        "path": path,
    }));
    Ok(())
}
